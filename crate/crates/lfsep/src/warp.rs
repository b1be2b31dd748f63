//! Disparity-guided backward warping, finite differences, and the
//! first-order model of the warp in disparity.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::img::{sample_bilinear_grad, Image};
use crate::lf_model::{DisparityMap, GridOffset, LayerStack, LightField};

/// Forward-difference operator on unrolled `h x w` images.
///
/// `apply` maps a length `h*w` vector to a length `2*h*w` vector: the x
/// differences followed by the y differences, with replicate boundary
/// (the last column/row difference is zero).
#[derive(Debug, Clone, Copy)]
pub struct Grad {
    pub width: usize,
    pub height: usize,
}

impl Grad {
    pub fn new(width: usize, height: usize) -> Self {
        Grad { width, height }
    }

    pub fn len_in(&self) -> usize {
        self.width * self.height
    }

    pub fn len_out(&self) -> usize {
        2 * self.width * self.height
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.len_in());
        let (w, h) = (self.width, self.height);
        let wh = w * h;
        let mut out = vec![0.0; 2 * wh];
        for y in 0..h {
            for xx in 0..w {
                let p = y * w + xx;
                if xx + 1 < w {
                    out[p] = x[p + 1] - x[p];
                }
                if y + 1 < h {
                    out[wh + p] = x[p + w] - x[p];
                }
            }
        }
        out
    }

    /// Transpose of [`Grad::apply`]: maps a length `2*h*w` vector back.
    pub fn apply_adjoint(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.len_out());
        let (w, h) = (self.width, self.height);
        let wh = w * h;
        let mut out = vec![0.0; wh];
        for y in 0..h {
            for xx in 0..w {
                let p = y * w + xx;
                let mut v = 0.0;
                // x-direction: x[p] appears in gx[p] with -1 (if xx < w-1)
                // and in gx[p-1] with +1 (if xx > 0).
                if xx + 1 < w {
                    v -= g[p];
                }
                if xx > 0 {
                    v += g[p - 1];
                }
                if y + 1 < h {
                    v -= g[wh + p];
                }
                if y > 0 {
                    v += g[wh + p - w];
                }
                out[p] = v;
            }
        }
        out
    }

    /// Apply `D` to every row of a `K x (h*w)` stack, giving `K x (2*h*w)`.
    pub fn apply_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.ncols(), self.len_in());
        let mut out = DMatrix::zeros(m.nrows(), self.len_out());
        let mut row = vec![0.0; self.len_in()];
        for i in 0..m.nrows() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = m[(i, j)];
            }
            let g = self.apply(&row);
            for (j, v) in g.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    /// Apply `D^T` to every row of a `K x (2*h*w)` stack.
    pub fn apply_adjoint_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.ncols(), self.len_out());
        let mut out = DMatrix::zeros(m.nrows(), self.len_in());
        let mut row = vec![0.0; self.len_out()];
        for i in 0..m.nrows() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = m[(i, j)];
            }
            let g = self.apply_adjoint(&row);
            for (j, v) in g.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    /// Map a pixel validity mask into the gradient domain: a difference is
    /// valid when both pixels it touches are valid.
    pub fn mask_to_gradient(&self, mask: &[f64]) -> Vec<f64> {
        assert_eq!(mask.len(), self.len_in());
        let (w, h) = (self.width, self.height);
        let wh = w * h;
        let mut out = vec![0.0; 2 * wh];
        for y in 0..h {
            for xx in 0..w {
                let p = y * w + xx;
                let right = if xx + 1 < w { mask[p + 1] } else { mask[p] };
                let down = if y + 1 < h { mask[p + w] } else { mask[p] };
                out[p] = mask[p] * right;
                out[wh + p] = mask[p] * down;
            }
        }
        out
    }
}

/// Finite-difference gradient of an unrolled image (spec operation).
pub fn gradient(x: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
    if x.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "gradient input has {} values, expected {}",
            x.len(),
            width * height
        )));
    }
    Ok(Grad::new(width, height).apply(x))
}

/// Backward-warp one view to the reference under a disparity map.
///
/// Output pixel `p` samples the view at `p - d(p) * phi` with bilinear
/// interpolation. Samples falling outside the view are clamped to the
/// border and flagged invalid in the returned mask.
pub fn warp_view(
    view: &Image,
    d: &DisparityMap,
    phi: GridOffset,
) -> Result<(Image, Vec<bool>)> {
    let (warped, _jac, valid) = warp_view_with_jacobian(view, d, phi)?;
    Ok((warped, valid))
}

/// Warp plus the per-pixel derivative of the warped intensity w.r.t.
/// disparity, one jacobian plane per channel.
///
/// The derivative is the analytic within-cell derivative of the bilinear
/// interpolant along `-phi`, i.e. the directional gradient of the sampled
/// image scaled by the offset magnitude. This keeps the first-order
/// expansion of the warp exact inside each interpolation cell.
pub fn warp_view_with_jacobian(
    view: &Image,
    d: &DisparityMap,
    phi: GridOffset,
) -> Result<(Image, Vec<Vec<f64>>, Vec<bool>)> {
    let (w, h) = (view.width(), view.height());
    if d.width() != w || d.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "disparity {}x{} does not match view {}x{}",
            d.width(),
            d.height(),
            w,
            h
        )));
    }
    let mut out = Image::new(w, h, view.channels());
    let mut jac = vec![vec![0.0; w * h]; view.channels()];
    let mut valid = vec![true; w * h];
    for c in 0..view.channels() {
        let plane = view.plane(c);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let dv = d.data()[p];
                let sx = x as f64 - dv * phi.dx;
                let sy = y as f64 - dv * phi.dy;
                let (v, dvx, dvy, ok) = sample_bilinear_grad(plane, w, h, sx, sy);
                out.set(c, x, y, v);
                // d/dd [ V(p - d*phi) ] = -(phi . grad V) at the sample point
                jac[c][p] = -(phi.dx * dvx + phi.dy * dvy);
                if c == 0 {
                    valid[p] = ok;
                }
            }
        }
    }
    if phi.is_reference() {
        // The reference view is untouched by the warp; keep it bit-exact.
        out = view.clone();
        for j in &mut jac {
            j.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok((out, jac, valid))
}

/// Warped stacks (one per channel) plus the shared validity mask.
pub fn build_stack(
    lf: &LightField,
    d: &DisparityMap,
) -> Result<(Vec<LayerStack>, DMatrix<f64>)> {
    let lin = linearize(lf, d)?;
    Ok((lin.stacks, lin.mask))
}

/// Per-view, per-pixel derivative of the warped stack w.r.t. disparity
/// (`K x h*w`, single channel).
#[derive(Debug, Clone)]
pub struct WarpJacobian {
    pub data: DMatrix<f64>,
}

/// Warped stacks, jacobians, and mask at one linearization point.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// One warped stack per channel.
    pub stacks: Vec<LayerStack>,
    /// One jacobian stack per channel.
    pub jacobians: Vec<WarpJacobian>,
    /// `K x h*w` validity (1.0 = in bounds for that view).
    pub mask: DMatrix<f64>,
    /// The disparity the stacks were warped with.
    pub d: DisparityMap,
}

/// Warp all views to the reference at `d` and collect the stacks, the
/// per-view disparity jacobians, and the validity mask.
pub fn linearize(lf: &LightField, d: &DisparityMap) -> Result<Linearization> {
    let (w, h, k, ch) = (lf.width(), lf.height(), lf.num_views(), lf.channels());
    if d.width() != w || d.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "disparity {}x{} does not match light field {}x{}",
            d.width(),
            d.height(),
            w,
            h
        )));
    }
    let mut stacks: Vec<LayerStack> = (0..ch).map(|_| LayerStack::zeros(k, w, h)).collect();
    let mut jacobians: Vec<WarpJacobian> = (0..ch)
        .map(|_| WarpJacobian {
            data: DMatrix::zeros(k, w * h),
        })
        .collect();
    let mut mask = DMatrix::zeros(k, w * h);
    for i in 0..k {
        let (warped, jac, valid) = warp_view_with_jacobian(lf.view(i), d, lf.offset(i))?;
        for c in 0..ch {
            stacks[c].set_row(i, warped.plane(c));
            for (j, v) in jac[c].iter().enumerate() {
                jacobians[c].data[(i, j)] = *v;
            }
        }
        for (j, ok) in valid.iter().enumerate() {
            mask[(i, j)] = if *ok { 1.0 } else { 0.0 };
        }
    }
    Ok(Linearization {
        stacks,
        jacobians,
        mask,
        d: d.clone(),
    })
}

/// Column indices of pixels valid in every view (used to judge the
/// low-rank property away from warp borders).
pub fn fully_valid_columns(mask: &DMatrix<f64>) -> Vec<usize> {
    (0..mask.ncols())
        .filter(|&j| (0..mask.nrows()).all(|i| mask[(i, j)] > 0.5))
        .collect()
}
