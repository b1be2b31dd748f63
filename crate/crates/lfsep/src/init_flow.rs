//! Initial disparity from dense per-view correspondences.
//!
//! The built-in matcher is a coarse-to-fine block matcher: normalized
//! cross-correlation over a 3-level pyramid with winner-take-all search,
//! parabola sub-pixel refinement, and a median filter. A small penalty on
//! deviating from the coarser-level prediction acts as the smoothness
//! prior, so featureless regions inherit the prediction (zero at the top
//! level) instead of matching noise. Externally computed flow fields can
//! be substituted through the `.flo` loader.

use std::path::Path;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::io;
use crate::lf_model::{DisparityMap, GridOffset, LightField};

/// Per-pixel flow of the reference view into another view: for reference
/// pixel `u`, the matching content sits at `u + w(u)` in the other view.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn load_flo(path: &Path) -> Result<Self> {
        let (dx, dy, width, height) = io::read_flo(path)?;
        Ok(FlowField {
            width,
            height,
            dx,
            dy,
        })
    }

    pub fn save_flo(&self, path: &Path) -> Result<()> {
        io::write_flo(&self.dx, &self.dy, self.width, self.height, path)
    }
}

const PATCH_HALF: i64 = 3;
const SMOOTHNESS: f64 = 0.01;
const VAR_EPS: f64 = 1e-12;

/// Degenerate-denominator cutoff for the disparity-from-flow formula.
pub const TAU_DEG: f64 = 0.25;

fn downsample_half(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = (w / 2, h / 2);
    let mut out = vec![0.0; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            let s = plane[2 * y * w + 2 * x]
                + plane[2 * y * w + 2 * x + 1]
                + plane[(2 * y + 1) * w + 2 * x]
                + plane[(2 * y + 1) * w + 2 * x + 1];
            out[y * w2 + x] = s * 0.25;
        }
    }
    (out, w2, h2)
}

fn clamp_px(v: i64, max: usize) -> usize {
    v.clamp(0, max as i64 - 1) as usize
}

/// Patch dissimilarity: `1 - NCC`, defined as 1.0 when either patch has
/// no variance (so the smoothness term alone decides).
fn patch_cost(
    reference: &[f64],
    src: &[f64],
    w: usize,
    h: usize,
    cx: i64,
    cy: i64,
    ox: i64,
    oy: i64,
) -> f64 {
    let n = ((2 * PATCH_HALF + 1) * (2 * PATCH_HALF + 1)) as f64;
    let (mut sum_r, mut sum_s, mut sum_rr, mut sum_ss, mut sum_rs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in -PATCH_HALF..=PATCH_HALF {
        for dx in -PATCH_HALF..=PATCH_HALF {
            let r = reference[clamp_px(cy + dy, h) * w + clamp_px(cx + dx, w)];
            let s = src[clamp_px(cy + oy + dy, h) * w + clamp_px(cx + ox + dx, w)];
            sum_r += r;
            sum_s += s;
            sum_rr += r * r;
            sum_ss += s * s;
            sum_rs += r * s;
        }
    }
    let var_r = sum_rr - sum_r * sum_r / n;
    let var_s = sum_ss - sum_s * sum_s / n;
    if var_r < VAR_EPS || var_s < VAR_EPS {
        return 1.0;
    }
    let cov = sum_rs - sum_r * sum_s / n;
    1.0 - cov / (var_r * var_s).sqrt()
}

/// Candidate offsets within `radius`, ordered by distance from the center
/// so that cost ties resolve toward the prediction.
fn candidate_offsets(radius: i64) -> Vec<(i64, i64)> {
    let mut cands = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            cands.push((dx, dy));
        }
    }
    cands.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    cands
}

/// 3x3 median filter with replicate borders.
pub fn median_filter_3x3(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut window = [0.0f64; 9];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    window[n] = data[clamp_px(y as i64 + dy, h) * w + clamp_px(x as i64 + dx, w)];
                    n += 1;
                }
            }
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out[y * w + x] = window[4];
        }
    }
    out
}

struct LevelMatch {
    dx: Vec<f64>,
    dy: Vec<f64>,
    cost0: Vec<f64>,
    cost_xm: Vec<f64>,
    cost_xp: Vec<f64>,
    cost_ym: Vec<f64>,
    cost_yp: Vec<f64>,
}

fn match_level(
    reference: &[f64],
    src: &[f64],
    w: usize,
    h: usize,
    pred_x: &[f64],
    pred_y: &[f64],
    radius: i64,
) -> LevelMatch {
    let wh = w * h;
    let cands = candidate_offsets(radius);
    let norm = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut out = LevelMatch {
        dx: vec![0.0; wh],
        dy: vec![0.0; wh],
        cost0: vec![0.0; wh],
        cost_xm: vec![0.0; wh],
        cost_xp: vec![0.0; wh],
        cost_ym: vec![0.0; wh],
        cost_yp: vec![0.0; wh],
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let px = pred_x[p].round() as i64;
            let py = pred_y[p].round() as i64;
            let mut best = (f64::INFINITY, 0i64, 0i64);
            for &(cdx, cdy) in &cands {
                let (ox, oy) = (px + cdx, py + cdy);
                let c = patch_cost(reference, src, w, h, x as i64, y as i64, ox, oy)
                    + SMOOTHNESS * (cdx * cdx + cdy * cdy) as f64 / norm;
                if c < best.0 {
                    best = (c, ox, oy);
                }
            }
            let (_, bx, by) = best;
            out.dx[p] = bx as f64;
            out.dy[p] = by as f64;
            let raw =
                |ox: i64, oy: i64| patch_cost(reference, src, w, h, x as i64, y as i64, ox, oy);
            out.cost0[p] = raw(bx, by);
            out.cost_xm[p] = raw(bx - 1, by);
            out.cost_xp[p] = raw(bx + 1, by);
            out.cost_ym[p] = raw(bx, by - 1);
            out.cost_yp[p] = raw(bx, by + 1);
        }
    }
    out
}

/// Parabola refinement of a winner-take-all offset from the costs at the
/// two integer neighbors; the correction stays within half a pixel.
///
/// A perfect match (zero cost) is already the exact minimum, so no
/// correction applies there.
fn parabola_delta(cm: f64, c0: f64, cp: f64) -> f64 {
    if c0 <= 1e-12 {
        return 0.0;
    }
    let denom = cm - 2.0 * c0 + cp;
    if denom <= 1e-12 {
        return 0.0;
    }
    (0.5 * (cm - cp) / denom).clamp(-0.5, 0.5)
}

/// Dense flow of `reference` into `src` by coarse-to-fine block matching.
///
/// Deterministic for fixed inputs. `radius` bounds the total displacement.
pub fn dense_correspondence(src: &Image, reference: &Image, radius: usize) -> Result<FlowField> {
    let (w, h) = (reference.width(), reference.height());
    if src.width() != w || src.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "flow inputs differ: {}x{} vs {}x{}",
            src.width(),
            src.height(),
            w,
            h
        )));
    }
    if radius == 0 || radius >= w.min(h) {
        return Err(Error::RadiusTooLarge {
            radius,
            width: w,
            height: h,
        });
    }
    let ref_l = reference.to_luma();
    let src_l = src.to_luma();

    // Pyramid: halve until 3 levels or the coarse level gets too small.
    let mut levels = vec![(ref_l.clone(), src_l.clone(), w, h)];
    for _ in 1..3 {
        let (rl, _, lw, lh) = levels.last().unwrap();
        if lw / 2 < 2 * PATCH_HALF as usize + 2 || lh / 2 < 2 * PATCH_HALF as usize + 2 {
            break;
        }
        let (r2, w2, h2) = downsample_half(rl, *lw, *lh);
        let (s2, _, _) = downsample_half(&levels.last().unwrap().1, *lw, *lh);
        levels.push((r2, s2, w2, h2));
    }

    let coarse_radius = (radius as i64 >> (levels.len() - 1)).max(1);
    let mut flow_x: Vec<f64> = Vec::new();
    let mut flow_y: Vec<f64> = Vec::new();
    for (li, (rl, sl, lw, lh)) in levels.iter().enumerate().rev() {
        let finest = li == 0;
        let (pred_x, pred_y) = if li == levels.len() - 1 {
            (vec![0.0; lw * lh], vec![0.0; lw * lh])
        } else {
            // Upsample the coarser flow: nearest neighbor, doubled.
            let (cw, ch) = (levels[li + 1].2, levels[li + 1].3);
            let mut px = vec![0.0; lw * lh];
            let mut py = vec![0.0; lw * lh];
            for y in 0..*lh {
                for x in 0..*lw {
                    let cxi = (x / 2).min(cw - 1);
                    let cyi = (y / 2).min(ch - 1);
                    px[y * lw + x] = 2.0 * flow_x[cyi * cw + cxi];
                    py[y * lw + x] = 2.0 * flow_y[cyi * cw + cxi];
                }
            }
            (px, py)
        };
        let r = if li == levels.len() - 1 {
            coarse_radius
        } else {
            2
        };
        let m = match_level(rl, sl, *lw, *lh, &pred_x, &pred_y, r);
        let mut fx = m.dx.clone();
        let mut fy = m.dy.clone();
        if finest {
            for p in 0..lw * lh {
                fx[p] += parabola_delta(m.cost_xm[p], m.cost0[p], m.cost_xp[p]);
                fy[p] += parabola_delta(m.cost_ym[p], m.cost0[p], m.cost_yp[p]);
            }
        }
        flow_x = median_filter_3x3(&fx, *lw, *lh);
        flow_y = median_filter_3x3(&fy, *lw, *lh);
    }

    // Bound by the requested search radius.
    let r = radius as f64;
    for v in flow_x.iter_mut().chain(flow_y.iter_mut()) {
        *v = v.clamp(-r, r);
    }
    Ok(FlowField {
        width: w,
        height: h,
        dx: flow_x,
        dy: flow_y,
    })
}

/// Average the per-view disparity estimates `-(w.w)/(w.phi)` over all
/// views with a non-degenerate denominator.
///
/// Sign convention: flows are measured from the reference into each view.
/// Under the warp model (reference content for pixel `p` sits at
/// `p - d(p) * phi` in view `i`), pure-disparity motion is `w = -d * phi`,
/// so the raw quotient `(w.w)/(w.phi)` equals `-d`; the estimate is
/// negated to return `+d`. Pixels with no contributing view are filled
/// with the median of valid neighbors; an all-degenerate input yields the
/// zero map.
pub fn initial_disparity(
    flows: &[FlowField],
    offsets: &[GridOffset],
    tau_deg: f64,
) -> Result<DisparityMap> {
    if flows.len() != offsets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} flows vs {} offsets",
            flows.len(),
            offsets.len()
        )));
    }
    if !offsets.iter().any(|o| o.norm() > 0.0) {
        return Err(Error::NoContributingViews);
    }
    let (w, h) = (flows[0].width, flows[0].height);
    for f in flows {
        if f.width != w || f.height != h {
            return Err(Error::DimensionMismatch(
                "flow fields differ in size".into(),
            ));
        }
    }
    let wh = w * h;
    let mut d = vec![0.0f64; wh];
    let mut valid = vec![false; wh];
    for p in 0..wh {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (f, o) in flows.iter().zip(offsets) {
            let (fx, fy) = (f.dx[p], f.dy[p]);
            let denom = fx * o.dx + fy * o.dy;
            if denom.abs() < tau_deg {
                continue;
            }
            sum += -(fx * fx + fy * fy) / denom;
            count += 1;
        }
        if count > 0 {
            d[p] = sum / count as f64;
            valid[p] = true;
        }
    }

    // Fill holes with the median of valid neighbors, growing outward.
    if valid.iter().any(|&v| v) {
        loop {
            let mut changed = false;
            let mut next_d = d.clone();
            let mut next_valid = valid.clone();
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    if valid[p] {
                        continue;
                    }
                    let mut neigh = Vec::with_capacity(8);
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let q = ny as usize * w + nx as usize;
                            if valid[q] {
                                neigh.push(d[q]);
                            }
                        }
                    }
                    if !neigh.is_empty() {
                        neigh.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        next_d[p] = neigh[neigh.len() / 2];
                        next_valid[p] = true;
                        changed = true;
                    }
                }
            }
            d = next_d;
            valid = next_valid;
            if !changed || valid.iter().all(|&v| v) {
                break;
            }
        }
    }
    DisparityMap::from_vec(w, h, d)
}

/// Flows of every view against the reference using the built-in matcher.
pub fn flows_for_lightfield(lf: &LightField, radius: usize) -> Result<Vec<FlowField>> {
    let mut flows = Vec::with_capacity(lf.num_views());
    for i in 0..lf.num_views() {
        if i == lf.ref_index() {
            flows.push(FlowField::zeros(lf.width(), lf.height()));
        } else {
            flows.push(dense_correspondence(lf.view(i), lf.reference(), radius)?);
        }
    }
    Ok(flows)
}

/// Load externally computed flows: `flow_{row}_{col}.flo` per view; a
/// missing file for the reference view falls back to zero flow.
pub fn flows_from_dir(dir: &Path, lf: &LightField) -> Result<Vec<FlowField>> {
    let n = lf.grid_size();
    let mut flows = Vec::with_capacity(lf.num_views());
    for row in 0..n {
        for col in 0..n {
            let i = row * n + col;
            let path = dir.join(format!("flow_{row}_{col}.flo"));
            if path.exists() {
                let f = FlowField::load_flo(&path)?;
                if f.width != lf.width() || f.height != lf.height() {
                    return Err(Error::DimensionMismatch(format!(
                        "flow {} is {}x{}, expected {}x{}",
                        path.display(),
                        f.width,
                        f.height,
                        lf.width(),
                        lf.height()
                    )));
                }
                flows.push(f);
            } else if i == lf.ref_index() {
                flows.push(FlowField::zeros(lf.width(), lf.height()));
            } else {
                return Err(Error::MissingView(path));
            }
        }
    }
    Ok(flows)
}

/// Full initializer: match (or accept) flows, average to a disparity map,
/// median filter, clamp to the search range.
pub fn prepare_initial_disparity(
    flows: &[FlowField],
    offsets: &[GridOffset],
    dmin: f64,
    dmax: f64,
) -> Result<DisparityMap> {
    let d0 = initial_disparity(flows, offsets, TAU_DEG)?;
    let filtered = median_filter_3x3(d0.data(), d0.width(), d0.height());
    let mut d = DisparityMap::from_vec(d0.width(), d0.height(), filtered)?;
    d.clamp(dmin, dmax);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lf_model::grid_offsets;

    fn noise_image(n: usize, seed: u64) -> Image {
        Image::from_fn(n, n, |x, y| {
            let mut v = (x as u64 + 1)
                .wrapping_mul(6364136223846793005)
                .wrapping_add((y as u64 + 1).wrapping_mul(1442695040888963407))
                .wrapping_add(seed);
            v ^= v >> 33;
            v = v.wrapping_mul(0xff51afd7ed558ccd);
            ((v >> 11) % 1000) as f64 / 1000.0
        })
    }

    fn smooth_noise(n: usize, seed: u64) -> Image {
        let raw = noise_image(n, seed);
        // Two box blur passes to make the texture matchable.
        let mut cur = raw.plane(0).to_vec();
        for _ in 0..2 {
            let mut next = vec![0.0; n * n];
            for y in 0..n {
                for x in 0..n {
                    let mut s = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            s += cur[clamp_px(y as i64 + dy, n) * n + clamp_px(x as i64 + dx, n)];
                        }
                    }
                    next[y * n + x] = s / 9.0;
                }
            }
            cur = next;
        }
        Image::from_planes(n, n, vec![cur]).unwrap()
    }

    #[test]
    fn identical_images_give_zero_flow() {
        let img = smooth_noise(32, 5);
        let f = dense_correspondence(&img, &img, 4).unwrap();
        assert!(f.dx.iter().all(|&v| v == 0.0));
        assert!(f.dy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_images_give_zero_flow() {
        let img = Image::from_fn(24, 24, |_, _| 0.42);
        let f = dense_correspondence(&img, &img, 3).unwrap();
        assert!(f.dx.iter().all(|&v| v == 0.0));
        assert!(f.dy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifted_copy_recovers_integer_shift() {
        let n = 48;
        let reference = smooth_noise(n, 11);
        // src(x) = reference(x - 2): content moved 2 px right.
        let src = Image::from_fn(n, n, |x, y| {
            let sx = (x as i64 - 2).clamp(0, n as i64 - 1) as usize;
            reference.get(0, sx, y)
        });
        let f = dense_correspondence(&src, &reference, 4).unwrap();
        let mut within = 0usize;
        let mut interior = 0usize;
        for y in 6..n - 6 {
            for x in 6..n - 6 {
                let p = y * n + x;
                interior += 1;
                if (f.dx[p] - 2.0).abs() <= 0.5 && f.dy[p].abs() <= 0.5 {
                    within += 1;
                }
            }
        }
        let frac = within as f64 / interior as f64;
        assert!(frac >= 0.95, "only {frac:.3} of interior within 0.5 px");
    }

    #[test]
    fn radius_validation() {
        let img = Image::new(8, 8, 1);
        assert!(dense_correspondence(&img, &img, 0).is_err());
        assert!(dense_correspondence(&img, &img, 8).is_err());
    }

    #[test]
    fn pure_disparity_flows_recover_magnitude_exactly() {
        // Flows w_i = -d* phi_i: estimate must be d* on every pixel where
        // the denominator is non-degenerate.
        let offsets = grid_offsets(3).unwrap();
        let d_star = 0.75;
        let (w, h) = (8, 8);
        let flows: Vec<FlowField> = offsets
            .iter()
            .map(|o| FlowField {
                width: w,
                height: h,
                dx: vec![-d_star * o.dx; w * h],
                dy: vec![-d_star * o.dy; w * h],
            })
            .collect();
        let d0 = initial_disparity(&flows, &offsets, TAU_DEG).unwrap();
        for &v in d0.data() {
            assert!((v.abs() - d_star).abs() < 1e-6 * d_star);
            // Sign convention: the estimate is +d*.
            assert!((v - d_star).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_flows_give_zero_disparity() {
        let offsets = grid_offsets(3).unwrap();
        let flows: Vec<FlowField> = offsets.iter().map(|_| FlowField::zeros(6, 6)).collect();
        let d0 = initial_disparity(&flows, &offsets, TAU_DEG).unwrap();
        assert!(d0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reference_only_grid_errors() {
        let flows = vec![FlowField::zeros(4, 4)];
        let offsets = vec![GridOffset { dx: 0.0, dy: 0.0 }];
        match initial_disparity(&flows, &offsets, TAU_DEG) {
            Err(Error::NoContributingViews) => {}
            other => panic!("expected NoContributingViews, got {other:?}"),
        }
    }

    #[test]
    fn initial_disparity_is_scale_consistent() {
        let offsets = grid_offsets(3).unwrap();
        let (w, h) = (5, 5);
        let base = 0.6;
        let mk = |c: f64| -> Vec<FlowField> {
            offsets
                .iter()
                .map(|o| FlowField {
                    width: w,
                    height: h,
                    dx: vec![-c * base * o.dx; w * h],
                    dy: vec![-c * base * o.dy; w * h],
                })
                .collect()
        };
        let d1 = initial_disparity(&mk(1.0), &offsets, TAU_DEG).unwrap();
        let d2 = initial_disparity(&mk(2.0), &offsets, TAU_DEG).unwrap();
        for (a, b) in d1.data().iter().zip(d2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matcher_is_deterministic() {
        let a = smooth_noise(32, 3);
        let b = smooth_noise(32, 4);
        let f1 = dense_correspondence(&a, &b, 3).unwrap();
        let f2 = dense_correspondence(&a, &b, 3).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn median_filter_preserves_constants() {
        let data = vec![0.3; 20];
        assert_eq!(median_filter_3x3(&data, 5, 4), data);
    }
}
