//! Inexact augmented-Lagrangian solver alternating layer separation with
//! disparity refinement.
//!
//! The constrained objective couples a nuclear-norm prior on the warped
//! transmitted stack with sparse-gradient priors, a gradient-domain data
//! term, and an l1-TV prior on disparity. The solver introduces one
//! auxiliary per non-smooth term (`A = T`, `B = DT`, `C = DS`, `H = S`,
//! `E = d - omega`, `F = D omega`), sweeps the sub-problems in a fixed
//! order, and multiplies the penalty after every sweep. The warp is
//! re-linearized in an outer loop that applies the accumulated disparity
//! increment.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::lf_model::{DisparityMap, LightField};
use crate::prox;
use crate::warp::{linearize, Grad, Linearization};

/// All tunable parameters of the solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Weight of the gradient-coupling term `|DT .* DS|_1`.
    pub lambda1: f64,
    /// Weight of the gradient-domain data term `|DI - DT - DS|_F^2`.
    pub lambda2: f64,
    /// Weight of `|DT|_1`.
    pub lambda3: f64,
    /// Weight of `|DS|_1`.
    pub lambda4: f64,
    /// Weight of `|d - omega|_1`.
    pub lambda5: f64,
    /// Weight of `|D omega|_1`.
    pub lambda6: f64,
    /// Weight of the sparsity prior `|S|_1` that pins the secondary layer.
    ///
    /// The relaxed objective is degenerate without it: nothing penalizes a
    /// constant shift from T into S, so the smooth image content drains
    /// into the secondary layer. The magnitude prior restores the
    /// low-rank-plus-sparse split. Set to 0 to reproduce the unpinned
    /// behavior.
    pub lambda_s: f64,
    /// Largest per-sweep shrink the sparsity prior may apply to S.
    ///
    /// Early sweeps run at small mu, where the raw threshold
    /// `lambda_s / mu` exceeds the intensity range and would wipe the
    /// secondary layer out before its multiplier can defend real content.
    /// The cap bounds that transient; it is realized as a separate (larger)
    /// penalty on the S = H coupling, so steady-state optimality is
    /// unaffected.
    pub sparsity_cap: f64,
    /// Cross-view standard deviation at which the sparsity pin releases.
    ///
    /// The secondary layer is identifiable by pixel-wise incoherence: where
    /// the warped views agree, any secondary content is indistinguishable
    /// from transmitted content and the pin holds at full strength; where
    /// they disagree beyond this scale, the pin weakens quadratically so
    /// genuine secondary structure can stay in S.
    pub coherence_scale: f64,
    /// Lower bound on the adaptive pin weight. Keeps the degenerate
    /// T-into-S shift blocked even at fully incoherent pixels.
    pub pin_floor: f64,
    /// Cross-view spread beyond which the pin re-engages.
    ///
    /// Extreme incoherence means the secondary layer dominates the
    /// observation and no reliable split exists; re-pinning S makes the
    /// failure conservative (the blend stays in the transmitted layer)
    /// instead of draining T wholesale.
    pub repin_scale: f64,
    /// Initial penalty parameter.
    pub mu0: f64,
    /// Penalty growth factor per inner sweep (> 1).
    pub mu_growth: f64,
    /// Ceiling on the penalty. Unbounded growth freezes the prox steps
    /// (their thresholds decay like 1/mu) before the layer split settles;
    /// past the cap the multipliers carry convergence instead.
    pub mu_max: f64,
    /// Outer stop: absolute objective change between outer iterations.
    pub outer_tol: f64,
    /// Inner stop: feasibility `|G - T - S|_F` relative to `|I|_F`.
    pub inner_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Disparity search range, pixels per grid step.
    pub dmin: f64,
    pub dmax: f64,
    /// Conjugate-gradient relative residual tolerance.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Trust region on the per-outer-iteration disparity increment.
    pub trust_radius: f64,
}

impl SolverConfig {
    /// Defaults scaled to the stack dimensions and spectral norm.
    pub fn defaults_for(views: usize, pixels: usize, sigma1: f64) -> Self {
        let base = 1.0 / (views.max(pixels) as f64).sqrt();
        SolverConfig {
            lambda1: base,
            lambda2: 10.0 * base,
            lambda3: base,
            lambda4: base,
            lambda5: 0.1 * base,
            lambda6: 0.1 * base,
            lambda_s: base,
            sparsity_cap: 0.05,
            coherence_scale: 0.008,
            pin_floor: 0.3,
            repin_scale: 0.022,
            mu0: 1.25 / sigma1.max(1e-12),
            mu_growth: 1.5,
            mu_max: 125.0 / sigma1.max(1e-12),
            outer_tol: 0.1,
            inner_tol: 1e-4,
            max_inner: 200,
            max_outer: 20,
            dmin: -3.0,
            dmax: 3.0,
            cg_tol: 1e-8,
            cg_max_iter: 300,
            trust_radius: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.to_string()))
            }
        };
        check(self.mu0 > 0.0, "mu0 must be positive")?;
        check(self.mu_growth > 1.0, "mu_growth must exceed 1")?;
        check(self.mu_max >= self.mu0, "mu_max must be at least mu0")?;
        check(self.outer_tol > 0.0, "outer_tol must be positive")?;
        check(self.inner_tol > 0.0, "inner_tol must be positive")?;
        check(self.dmin < self.dmax, "dmin must be below dmax")?;
        check(self.trust_radius > 0.0, "trust_radius must be positive")?;
        check(self.sparsity_cap > 0.0, "sparsity_cap must be positive")?;
        check(self.coherence_scale > 0.0, "coherence_scale must be positive")?;
        check(
            (0.0..=1.0).contains(&self.pin_floor),
            "pin_floor must lie in [0, 1]",
        )?;
        check(
            self.repin_scale > self.coherence_scale,
            "repin_scale must exceed coherence_scale",
        )?;
        let lambdas = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda5,
            self.lambda6,
            self.lambda_s,
        ];
        check(
            lambdas.iter().all(|l| *l >= 0.0 && l.is_finite()),
            "lambdas must be finite and nonnegative",
        )
    }
}

/// Partial config as read from a JSON file; unset fields take defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub lambda4: Option<f64>,
    pub lambda5: Option<f64>,
    pub lambda6: Option<f64>,
    pub lambda_s: Option<f64>,
    pub sparsity_cap: Option<f64>,
    pub coherence_scale: Option<f64>,
    pub pin_floor: Option<f64>,
    pub repin_scale: Option<f64>,
    pub mu0: Option<f64>,
    pub mu_growth: Option<f64>,
    pub mu_max: Option<f64>,
    pub outer_tol: Option<f64>,
    pub inner_tol: Option<f64>,
    pub max_inner: Option<usize>,
    pub max_outer: Option<usize>,
    pub dmin: Option<f64>,
    pub dmax: Option<f64>,
    pub cg_tol: Option<f64>,
    pub cg_max_iter: Option<usize>,
    pub trust_radius: Option<f64>,
}

impl SolverOptions {
    pub fn resolve(&self, defaults: SolverConfig) -> SolverConfig {
        SolverConfig {
            lambda1: self.lambda1.unwrap_or(defaults.lambda1),
            lambda2: self.lambda2.unwrap_or(defaults.lambda2),
            lambda3: self.lambda3.unwrap_or(defaults.lambda3),
            lambda4: self.lambda4.unwrap_or(defaults.lambda4),
            lambda5: self.lambda5.unwrap_or(defaults.lambda5),
            lambda6: self.lambda6.unwrap_or(defaults.lambda6),
            lambda_s: self.lambda_s.unwrap_or(defaults.lambda_s),
            sparsity_cap: self.sparsity_cap.unwrap_or(defaults.sparsity_cap),
            coherence_scale: self.coherence_scale.unwrap_or(defaults.coherence_scale),
            pin_floor: self.pin_floor.unwrap_or(defaults.pin_floor),
            repin_scale: self.repin_scale.unwrap_or(defaults.repin_scale),
            mu0: self.mu0.unwrap_or(defaults.mu0),
            mu_growth: self.mu_growth.unwrap_or(defaults.mu_growth),
            mu_max: self.mu_max.unwrap_or(defaults.mu_max),
            outer_tol: self.outer_tol.unwrap_or(defaults.outer_tol),
            inner_tol: self.inner_tol.unwrap_or(defaults.inner_tol),
            max_inner: self.max_inner.unwrap_or(defaults.max_inner),
            max_outer: self.max_outer.unwrap_or(defaults.max_outer),
            dmin: self.dmin.unwrap_or(defaults.dmin),
            dmax: self.dmax.unwrap_or(defaults.dmax),
            cg_tol: self.cg_tol.unwrap_or(defaults.cg_tol),
            cg_max_iter: self.cg_max_iter.unwrap_or(defaults.cg_max_iter),
            trust_radius: self.trust_radius.unwrap_or(defaults.trust_radius),
        }
    }
}

/// Per-channel solver variables. Stacks are `K x hw`; gradient-domain
/// variables are `K x 2hw`.
#[derive(Debug, Clone)]
pub struct ChannelState {
    pub t: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub l1: DMatrix<f64>,
    pub l2: DMatrix<f64>,
    pub l3: DMatrix<f64>,
    pub l4: DMatrix<f64>,
    pub l7: DMatrix<f64>,
}

impl ChannelState {
    fn zeros(k: usize, wh: usize) -> Self {
        ChannelState {
            t: DMatrix::zeros(k, wh),
            s: DMatrix::zeros(k, wh),
            a: DMatrix::zeros(k, wh),
            h: DMatrix::zeros(k, wh),
            b: DMatrix::zeros(k, 2 * wh),
            c: DMatrix::zeros(k, 2 * wh),
            l1: DMatrix::zeros(k, wh),
            l2: DMatrix::zeros(k, wh),
            l3: DMatrix::zeros(k, 2 * wh),
            l4: DMatrix::zeros(k, 2 * wh),
            l7: DMatrix::zeros(k, wh),
        }
    }
}

/// Full solver state: per-channel stacks plus the shared disparity block.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub channels: Vec<ChannelState>,
    /// Auxiliary for `d - omega` (length hw).
    pub e: Vec<f64>,
    /// Auxiliary for `D omega` (length 2hw).
    pub f: Vec<f64>,
    /// Smoothed disparity companion (length hw).
    pub omega: Vec<f64>,
    /// Disparity increment relative to the current linearization point.
    pub delta_d: Vec<f64>,
    pub l5: Vec<f64>,
    pub l6: Vec<f64>,
    pub mu: f64,
}

impl SolverState {
    pub fn zeros(channels: usize, k: usize, wh: usize, mu0: f64) -> Self {
        SolverState {
            channels: (0..channels).map(|_| ChannelState::zeros(k, wh)).collect(),
            e: vec![0.0; wh],
            f: vec![0.0; 2 * wh],
            omega: vec![0.0; wh],
            delta_d: vec![0.0; wh],
            l5: vec![0.0; wh],
            l6: vec![0.0; 2 * wh],
            mu: mu0,
        }
    }
}

/// Everything derived from one linearization point: warped stacks,
/// jacobians, masks (pixel and gradient domain), and data gradients.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub lin: Linearization,
    pub grad: Grad,
    /// `D` of each warped stack, one `K x 2hw` matrix per channel.
    pub di: Vec<DMatrix<f64>>,
    /// Validity mask carried into the gradient domain, `K x 2hw`.
    pub grad_mask: DMatrix<f64>,
    /// Frobenius norm of the masked warped stacks (all channels).
    pub i_norm: f64,
    /// Largest spectral norm over channel stacks.
    pub sigma1: f64,
    /// Per-pixel cross-view standard deviation of the warped stack,
    /// averaged over channels (masked views excluded).
    pub view_spread: Vec<f64>,
}

impl Workspace {
    pub fn build(lf: &LightField, d: &DisparityMap) -> Result<Workspace> {
        let lin = linearize(lf, d)?;
        let grad = Grad::new(lf.width(), lf.height());
        let k = lf.num_views();
        let wh = lf.width() * lf.height();

        let mut grad_mask = DMatrix::zeros(k, 2 * wh);
        let mut mask_row = vec![0.0; wh];
        for i in 0..k {
            for (j, m) in mask_row.iter_mut().enumerate() {
                *m = lin.mask[(i, j)];
            }
            let gm = grad.mask_to_gradient(&mask_row);
            for (j, v) in gm.iter().enumerate() {
                grad_mask[(i, j)] = *v;
            }
        }

        let mut di = Vec::with_capacity(lin.stacks.len());
        let mut i_norm_sq = 0.0;
        let mut sigma1: f64 = 0.0;
        for stack in &lin.stacks {
            di.push(grad.apply_rows(&stack.data));
            i_norm_sq += stack
                .data
                .zip_map(&lin.mask, |v, m| v * m)
                .norm_squared();
            let s1 = stack.data.clone().svd(false, false).singular_values[0];
            sigma1 = sigma1.max(s1);
        }

        let mut view_spread = vec![0.0; wh];
        for (p, spread) in view_spread.iter_mut().enumerate() {
            let mut acc = 0.0;
            for stack in &lin.stacks {
                let mut sum = 0.0;
                let mut sum2 = 0.0;
                let mut count = 0.0;
                for i in 0..k {
                    if lin.mask[(i, p)] > 0.5 {
                        let v = stack.data[(i, p)];
                        sum += v;
                        sum2 += v * v;
                        count += 1.0;
                    }
                }
                if count > 1.0 {
                    let var = (sum2 - sum * sum / count) / (count - 1.0);
                    acc += var.max(0.0).sqrt();
                }
            }
            *spread = acc / lin.stacks.len() as f64;
        }

        Ok(Workspace {
            lin,
            grad,
            di,
            grad_mask,
            i_norm: i_norm_sq.sqrt(),
            sigma1,
            view_spread,
        })
    }

    /// Per-pixel weight of the secondary-layer sparsity pin: 1 where the
    /// views cohere, released (down to the floor) over the spread band
    /// where secondary content is separable, re-engaging beyond the
    /// re-pin scale.
    pub fn sparsity_pin_weights(
        &self,
        coherence_scale: f64,
        floor: f64,
        repin_scale: f64,
    ) -> Vec<f64> {
        self.view_spread
            .iter()
            .map(|s| {
                let release = 1.0 / (1.0 + (s / coherence_scale).powi(2));
                let x4 = (s / repin_scale).powi(4);
                let recapture = x4 / (1.0 + x4);
                release.max(recapture).max(floor)
            })
            .collect()
    }

    pub fn views(&self) -> usize {
        self.lin.mask.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.lin.mask.ncols()
    }

    pub fn channels(&self) -> usize {
        self.lin.stacks.len()
    }

    /// The linearized observation `G`: row i of `I` plus `delta_d .* J_i`.
    pub fn linearized_stack(&self, channel: usize, delta_d: &[f64]) -> DMatrix<f64> {
        let stack = &self.lin.stacks[channel].data;
        let jac = &self.lin.jacobians[channel].data;
        DMatrix::from_fn(stack.nrows(), stack.ncols(), |i, j| {
            stack[(i, j)] + delta_d[j] * jac[(i, j)]
        })
    }
}

fn row_to_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn set_row(m: &mut DMatrix<f64>, i: usize, values: &[f64]) {
    for (j, v) in values.iter().enumerate() {
        m[(i, j)] = *v;
    }
}

/// Evaluate the seven-term separation objective at the current iterate.
///
/// Masked (out-of-view) gradient samples are excluded from the data term.
pub fn objective(state: &SolverState, ws: &Workspace, cfg: &SolverConfig) -> Result<f64> {
    let grad = &ws.grad;
    let mut total = 0.0;
    let mut add = |term: &'static str, v: f64| -> Result<()> {
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective { term });
        }
        total += v;
        Ok(())
    };
    for (ch, cs) in state.channels.iter().enumerate() {
        // The SVD below does not terminate on non-finite input; gate first.
        if cs.t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObjective { term: "nuclear" });
        }
        let dt = grad.apply_rows(&cs.t);
        let ds = grad.apply_rows(&cs.s);
        add("nuclear", prox::nuclear_norm(&cs.t))?;
        let coupling: f64 = dt.zip_map(&ds, |a, b| (a * b).abs()).sum();
        add("gradient-coupling", cfg.lambda1 * coupling)?;
        let mut data = 0.0;
        for i in 0..dt.nrows() {
            for j in 0..dt.ncols() {
                let r = ws.di[ch][(i, j)] - dt[(i, j)] - ds[(i, j)];
                data += ws.grad_mask[(i, j)] * r * r;
            }
        }
        add("data", cfg.lambda2 * data)?;
        add("dt-sparsity", cfg.lambda3 * dt.iter().map(|v| v.abs()).sum::<f64>())?;
        add("ds-sparsity", cfg.lambda4 * ds.iter().map(|v| v.abs()).sum::<f64>())?;
    }
    let d_lin = ws.lin.d.data();
    let tv_data: f64 = (0..state.omega.len())
        .map(|p| (d_lin[p] + state.delta_d[p] - state.omega[p]).abs())
        .sum();
    add("disparity-fidelity", cfg.lambda5 * tv_data)?;
    let d_omega = grad.apply(&state.omega);
    add(
        "disparity-tv",
        cfg.lambda6 * d_omega.iter().map(|v| v.abs()).sum::<f64>(),
    )?;
    Ok(total)
}

/// Diagnostics from one inner sweep.
#[derive(Debug, Clone, Copy)]
pub struct InnerStepInfo {
    /// `|mask .* (G - T - S)|_F` over all channels, after the sweep.
    pub feasibility: f64,
    /// Penalty value the sweep ran with.
    pub mu: f64,
}

/// One full alternating sweep: update `A, B, C, E, F, omega, H, S, T,
/// delta_d` in order, then the multipliers, then grow `mu`.
pub fn inner_step(
    state: &mut SolverState,
    ws: &Workspace,
    cfg: &SolverConfig,
) -> Result<InnerStepInfo> {
    let mu = state.mu;
    if mu <= 0.0 {
        return Err(Error::NonPositiveMu(mu));
    }
    let grad = &ws.grad;
    let k = ws.views();
    let wh = ws.pixels();
    let d_lin = ws.lin.d.data();

    // --- per-channel gradient-domain auxiliaries ---
    for (ch, cs) in state.channels.iter_mut().enumerate() {
        // A = SVT(T - L2/mu, 1/mu)
        let a_in = cs.t.zip_map(&cs.l2, |t, l| t - l / mu);
        cs.a = prox::svt(&a_in, 1.0 / mu)?;

        let dt = grad.apply_rows(&cs.t);
        let ds = grad.apply_rows(&cs.s);
        for i in 0..k {
            let di_row = row_to_vec(&ws.di[ch], i);
            let gm_row = row_to_vec(&ws.grad_mask, i);
            // B: data quadratic + mu-coupling to DT, shrunk by lambda1|C| + lambda3
            let c_row = row_to_vec(&cs.c, i);
            let anchor: Vec<f64> = (0..2 * wh)
                .map(|j| dt[(i, j)] - cs.l3[(i, j)] / mu)
                .collect();
            let tau: Vec<f64> = c_row
                .iter()
                .map(|c| cfg.lambda1 * c.abs() + cfg.lambda3)
                .collect();
            let b_new = prox::solve_coupled_l1_quadratic(
                &di_row,
                &c_row,
                cfg.lambda2,
                mu,
                &anchor,
                &tau,
                Some(&gm_row),
            )?;
            set_row(&mut cs.b, i, &b_new);

            // C: symmetric in the just-updated B
            let anchor: Vec<f64> = (0..2 * wh)
                .map(|j| ds[(i, j)] - cs.l4[(i, j)] / mu)
                .collect();
            let tau: Vec<f64> = b_new
                .iter()
                .map(|b| cfg.lambda1 * b.abs() + cfg.lambda4)
                .collect();
            let c_new = prox::solve_coupled_l1_quadratic(
                &di_row,
                &b_new,
                cfg.lambda2,
                mu,
                &anchor,
                &tau,
                Some(&gm_row),
            )?;
            set_row(&mut cs.c, i, &c_new);
        }
    }

    // --- disparity auxiliaries (shared across channels) ---
    let d_cur: Vec<f64> = (0..wh).map(|p| d_lin[p] + state.delta_d[p]).collect();
    let e_in: Vec<f64> = (0..wh)
        .map(|p| d_cur[p] - state.omega[p] - state.l5[p] / mu)
        .collect();
    state.e = prox::soft_threshold(&e_in, cfg.lambda5 / mu);

    let d_omega = grad.apply(&state.omega);
    let f_in: Vec<f64> = (0..2 * wh)
        .map(|j| d_omega[j] - state.l6[j] / mu)
        .collect();
    state.f = prox::soft_threshold(&f_in, cfg.lambda6 / mu);

    // omega: (I + D^T D) omega = (d - E - L5/mu) + D^T (F + L6/mu)
    {
        let rhs_grad: Vec<f64> = (0..2 * wh)
            .map(|j| state.f[j] + state.l6[j] / mu)
            .collect();
        let dt_rhs = grad.apply_adjoint(&rhs_grad);
        let rhs: Vec<f64> = (0..wh)
            .map(|p| d_cur[p] - state.e[p] - state.l5[p] / mu + dt_rhs[p])
            .collect();
        let op = |v: &[f64]| -> Vec<f64> {
            let dtd = grad.apply_adjoint(&grad.apply(v));
            (0..wh).map(|p| v[p] + dtd[p]).collect()
        };
        prox::cg_solve(op, &rhs, &mut state.omega, cfg.cg_tol, cfg.cg_max_iter);
    }

    // --- per-channel layer updates ---
    let pin = ws.sparsity_pin_weights(cfg.coherence_scale, cfg.pin_floor, cfg.repin_scale);
    for (ch, cs) in state.channels.iter_mut().enumerate() {
        let g = ws.linearized_stack(ch, &state.delta_d);

        // H = weighted soft threshold of S - L7/mu7: the pin holds at
        // full lambda_s where views cohere and releases with cross-view
        // spread. mu7 >= mu keeps the per-sweep shrink under the cap.
        let mu7 = mu.max(cfg.lambda_s / cfg.sparsity_cap);
        let w7 = mu7 / mu;
        let h_in = cs.s.zip_map(&cs.l7, |s, l| s - l / mu7);
        cs.h = DMatrix::from_fn(k, wh, |i, j| {
            let v = h_in[(i, j)];
            v.signum() * (v.abs() - cfg.lambda_s * pin[j] / mu7).max(0.0)
        });

        // S rows: (diag(m) + w7 I + D^T D) s
        //   = m.(G - T + L1/mu) + w7 (H + L7/mu7) + D^T(C + L4/mu)
        for i in 0..k {
            let m_row = row_to_vec(&ws.lin.mask, i);
            let grad_rhs: Vec<f64> = (0..2 * wh)
                .map(|j| cs.c[(i, j)] + cs.l4[(i, j)] / mu)
                .collect();
            let dt_rhs = grad.apply_adjoint(&grad_rhs);
            let rhs: Vec<f64> = (0..wh)
                .map(|p| {
                    m_row[p] * (g[(i, p)] - cs.t[(i, p)] + cs.l1[(i, p)] / mu)
                        + w7 * (cs.h[(i, p)] + cs.l7[(i, p)] / mu7)
                        + dt_rhs[p]
                })
                .collect();
            let op = |v: &[f64]| -> Vec<f64> {
                let dtd = grad.apply_adjoint(&grad.apply(v));
                (0..wh).map(|p| (m_row[p] + w7) * v[p] + dtd[p]).collect()
            };
            let mut x = row_to_vec(&cs.s, i);
            prox::cg_solve(op, &rhs, &mut x, cfg.cg_tol, cfg.cg_max_iter);
            prox::project_nonneg_slice(&mut x);
            set_row(&mut cs.s, i, &x);
        }

        // T rows: (diag(m) + I + D^T D) t = m.(G - S + L1/mu) + (A + L2/mu) + D^T(B + L3/mu)
        for i in 0..k {
            let m_row = row_to_vec(&ws.lin.mask, i);
            let grad_rhs: Vec<f64> = (0..2 * wh)
                .map(|j| cs.b[(i, j)] + cs.l3[(i, j)] / mu)
                .collect();
            let dt_rhs = grad.apply_adjoint(&grad_rhs);
            let rhs: Vec<f64> = (0..wh)
                .map(|p| {
                    m_row[p] * (g[(i, p)] - cs.s[(i, p)] + cs.l1[(i, p)] / mu)
                        + (cs.a[(i, p)] + cs.l2[(i, p)] / mu)
                        + dt_rhs[p]
                })
                .collect();
            let op = |v: &[f64]| -> Vec<f64> {
                let dtd = grad.apply_adjoint(&grad.apply(v));
                (0..wh).map(|p| (m_row[p] + 1.0) * v[p] + dtd[p]).collect()
            };
            let mut x = row_to_vec(&cs.t, i);
            prox::cg_solve(op, &rhs, &mut x, cfg.cg_tol, cfg.cg_max_iter);
            prox::project_nonneg_slice(&mut x);
            set_row(&mut cs.t, i, &x);
        }
    }

    // --- disparity increment: per-pixel least squares over the linearized
    // residuals plus the coupling to E, clamped to the trust region ---
    {
        let mut num: Vec<f64> = (0..wh)
            .map(|p| state.e[p] - d_lin[p] + state.omega[p] + state.l5[p] / mu)
            .collect();
        let mut den = vec![1.0f64; wh];
        for (ch, cs) in state.channels.iter().enumerate() {
            let stack = &ws.lin.stacks[ch].data;
            let jac = &ws.lin.jacobians[ch].data;
            for i in 0..k {
                for p in 0..wh {
                    let m = ws.lin.mask[(i, p)];
                    if m == 0.0 {
                        continue;
                    }
                    let r = stack[(i, p)] - cs.t[(i, p)] - cs.s[(i, p)] + cs.l1[(i, p)] / mu;
                    num[p] -= jac[(i, p)] * r;
                    den[p] += jac[(i, p)] * jac[(i, p)];
                }
            }
        }
        for p in 0..wh {
            let lo = (-cfg.trust_radius).max(cfg.dmin - d_lin[p]);
            let hi = cfg.trust_radius.min(cfg.dmax - d_lin[p]);
            state.delta_d[p] = (num[p] / den[p]).clamp(lo, hi.max(lo));
        }
    }

    // --- multiplier updates (exact: increment = mu * residual) ---
    let mut feas_sq = 0.0;
    for (ch, cs) in state.channels.iter_mut().enumerate() {
        let g = ws.linearized_stack(ch, &state.delta_d);
        let r1 = DMatrix::from_fn(k, wh, |i, j| {
            ws.lin.mask[(i, j)] * (g[(i, j)] - cs.t[(i, j)] - cs.s[(i, j)])
        });
        feas_sq += r1.norm_squared();
        cs.l1.zip_apply(&r1, |l, r| *l += mu * r);
        let r2 = &cs.a - &cs.t;
        cs.l2.zip_apply(&r2, |l, r| *l += mu * r);
        let dt = grad.apply_rows(&cs.t);
        let r3 = &cs.b - &dt;
        cs.l3.zip_apply(&r3, |l, r| *l += mu * r);
        let ds = grad.apply_rows(&cs.s);
        let r4 = &cs.c - &ds;
        cs.l4.zip_apply(&r4, |l, r| *l += mu * r);
        let mu7 = mu.max(cfg.lambda_s / cfg.sparsity_cap);
        let r7 = &cs.h - &cs.s;
        cs.l7.zip_apply(&r7, |l, r| *l += mu7 * r);
    }
    for p in 0..wh {
        let r5 = state.e[p] - (d_lin[p] + state.delta_d[p]) + state.omega[p];
        state.l5[p] += mu * r5;
    }
    let d_omega = grad.apply(&state.omega);
    for j in 0..2 * wh {
        let r6 = state.f[j] - d_omega[j];
        state.l6[j] += mu * r6;
    }

    state.mu = (mu * cfg.mu_growth).min(cfg.mu_max);
    Ok(InnerStepInfo {
        feasibility: feas_sq.sqrt(),
        mu,
    })
}

/// How a separation run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Outer objective change dropped below `outer_tol`.
    Converged,
    /// Iteration budget exhausted; best iterate returned.
    MaxIterations,
    /// Inner feasibility grew for several consecutive sweeps.
    Diverged,
}

/// One line of the per-sweep diagnostics stream.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InnerRecord {
    pub outer: usize,
    pub inner: usize,
    pub objective: f64,
    pub feasibility: f64,
    /// Feasibility relative to the masked stack norm (the inner stop
    /// criterion compares this against `inner_tol`).
    pub feasibility_rel: f64,
    pub mu: f64,
}

/// Output of [`separate`]: reference-view layers, refined disparity, and
/// convergence diagnostics.
#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub t_ref: Image,
    pub s_ref: Image,
    pub disparity: DisparityMap,
    /// Reference-view pixels observed by every view at the final
    /// disparity. Outside this set the data terms were masked out, so the
    /// recovered layers carry no information there.
    pub valid_mask: Vec<bool>,
    /// Objective value at initialization followed by one entry per outer
    /// iteration (evaluated after the disparity step).
    pub objective_history: Vec<f64>,
    /// Relative feasibility `|G - T - S|_F / |I|_F` of the returned
    /// iterate, measured at its inner-loop exit.
    pub final_feasibility_rel: f64,
    pub inner_log: Vec<InnerRecord>,
    pub status: SolveStatus,
    pub outer_iterations: usize,
}

/// Run the full outer/inner scheme from an initial disparity estimate.
///
/// Each outer iteration runs inner sweeps to feasibility (or `max_inner`),
/// applies the accumulated disparity increment, re-warps, and re-linearizes.
/// The outer loop stops when the objective change falls below
/// `outer_tol`.
pub fn separate(
    lf: &LightField,
    d0: &DisparityMap,
    cfg: &SolverConfig,
) -> Result<SeparationResult> {
    cfg.validate()?;
    let mut d = d0.clone();
    d.clamp(cfg.dmin, cfg.dmax);
    let mut ws = Workspace::build(lf, &d)?;
    let k = ws.views();
    let wh = ws.pixels();
    let channels = ws.channels();

    let mut state = SolverState::zeros(channels, k, wh, cfg.mu0);
    let mut history = vec![objective(&state, &ws, cfg)?];
    let mut log = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut outer_done = 0;
    let mut prev_inner_met = false;
    let mut prev_feas_rel = f64::INFINITY;
    let mut final_feas_rel = f64::INFINITY;

    'outer: for outer in 0..cfg.max_outer {
        // Snapshot for the monotone acceptance test below.
        let state_snapshot = state.clone();
        let ws_snapshot = ws.clone();
        let d_snapshot = d.clone();

        state.mu = cfg.mu0;
        state.delta_d.iter_mut().for_each(|v| *v = 0.0);

        let mut prev_feas = f64::INFINITY;
        let mut min_feas = f64::INFINITY;
        let mut grow_streak = 0usize;
        let mut inner_met = false;
        let mut feas_rel = f64::INFINITY;
        for inner in 0..cfg.max_inner {
            let info = inner_step(&mut state, &ws, cfg)?;
            let obj = objective(&state, &ws, cfg)?;
            log.push(InnerRecord {
                outer,
                inner,
                objective: obj,
                feasibility: info.feasibility,
                feasibility_rel: info.feasibility / ws.i_norm.max(1e-300),
                mu: info.mu,
            });
            // Divergence guard. Fixed-penalty sweeps ripple and can climb
            // through a bounded hump before resuming their descent, so the
            // abort requires sustained growth AND a large departure from
            // the best feasibility seen in this inner loop.
            min_feas = min_feas.min(info.feasibility);
            if info.feasibility > prev_feas * 1.01 {
                grow_streak += 1;
                if grow_streak >= 5 && info.feasibility > 5.0 * min_feas {
                    status = SolveStatus::Diverged;
                    outer_done = outer + 1;
                    break 'outer;
                }
            } else {
                grow_streak = 0;
            }
            prev_feas = info.feasibility;
            feas_rel = info.feasibility / ws.i_norm.max(1e-300);
            if info.feasibility <= cfg.inner_tol * ws.i_norm {
                inner_met = true;
                break;
            }
        }
        final_feas_rel = feas_rel;

        // Apply the disparity increment with a backtracking acceptance
        // test: the re-warped objective must not rise above the pre-warp
        // value. Halving the step keeps the update inside the region where
        // the first-order warp model holds.
        let obj_before = objective(&state, &ws, cfg)?;
        let increment = state.delta_d.clone();
        state.delta_d.iter_mut().for_each(|v| *v = 0.0);
        let mut accepted_obj = obj_before;
        let mut step = 1.0;
        for _ in 0..4 {
            let mut d_cand = vec![0.0; wh];
            for p in 0..wh {
                d_cand[p] =
                    (ws.lin.d.data()[p] + step * increment[p]).clamp(cfg.dmin, cfg.dmax);
            }
            let d_cand = DisparityMap::from_vec(lf.width(), lf.height(), d_cand)?;
            let ws_cand = Workspace::build(lf, &d_cand)?;
            let obj_after = objective(&state, &ws_cand, cfg)?;
            if obj_after <= obj_before + 1e-6 * obj_before.abs().max(1.0) {
                d = d_cand;
                ws = ws_cand;
                accepted_obj = obj_after;
                break;
            }
            step *= 0.5;
            if step < 0.2 {
                // No acceptable step: keep the old linearization point.
                accepted_obj = objective(&state, &ws, cfg)?;
                break;
            }
        }

        // Monotone acceptance: an outer iteration that fails to lower the
        // objective has converged; keep the previous iterate as the result.
        // (The initial entry is the infeasible zero state, not a baseline.)
        let prev = *history.last().unwrap();
        if outer > 0 && accepted_obj > prev + 5e-4 {
            state = state_snapshot;
            ws = ws_snapshot;
            d = d_snapshot;
            // The returned iterate is the previous outer's; report
            // convergence only if that iterate's inner loop reached its
            // feasibility target.
            status = if prev_inner_met {
                SolveStatus::Converged
            } else {
                SolveStatus::MaxIterations
            };
            final_feas_rel = prev_feas_rel;
            outer_done = outer + 1;
            break;
        }

        history.push(accepted_obj);
        outer_done = outer + 1;
        if (prev - accepted_obj).abs() < cfg.outer_tol {
            status = if inner_met {
                SolveStatus::Converged
            } else {
                SolveStatus::MaxIterations
            };
            break;
        }
        prev_inner_met = inner_met;
        prev_feas_rel = feas_rel;
    }

    let ref_i = lf.ref_index();
    let t_planes: Vec<Vec<f64>> = state
        .channels
        .iter()
        .map(|cs| row_to_vec(&cs.t, ref_i))
        .collect();
    let s_planes: Vec<Vec<f64>> = state
        .channels
        .iter()
        .map(|cs| row_to_vec(&cs.s, ref_i))
        .collect();
    let t_ref = Image::from_planes(lf.width(), lf.height(), t_planes)?;
    let s_ref = Image::from_planes(lf.width(), lf.height(), s_planes)?;
    let valid_mask: Vec<bool> = (0..wh)
        .map(|j| (0..k).all(|i| ws.lin.mask[(i, j)] > 0.5))
        .collect();

    Ok(SeparationResult {
        t_ref,
        s_ref,
        disparity: d,
        valid_mask,
        objective_history: history,
        final_feasibility_rel: final_feas_rel,
        inner_log: log,
        status,
        outer_iterations: outer_done,
    })
}
