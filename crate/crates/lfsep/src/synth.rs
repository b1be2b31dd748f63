//! Synthetic light fields with ground truth: a transmitted scene at known
//! disparity blended with a secondary layer moving against the grid.

use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{sample_bilinear, Image};
use crate::io;
use crate::lf_model::{self, DisparityMap, LightField};

/// Geometry of the transmitted scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransmittedScene {
    /// Fronto-parallel textured plane at constant disparity.
    Plane { disparity: f64 },
    /// Soft-edged disc at `d_fg` over a backdrop at `d_bg`: a compact
    /// object in front of a backdrop, the non-planar stress case.
    TwoPlane { d_fg: f64, d_bg: f64 },
    /// Arbitrary texture plus per-pixel disparity from files.
    Custom {
        texture: PathBuf,
        disparity: PathBuf,
    },
}

/// Full description of a synthetic capture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub grid_size: usize,
    pub width: usize,
    pub height: usize,
    pub transmitted: TransmittedScene,
    /// Secondary-layer motion in pixels per grid step, applied opposite
    /// to the camera-induced parallax.
    pub secondary_motion: f64,
    /// Optional texture file for the secondary layer (procedural if unset).
    #[serde(default)]
    pub secondary_texture: Option<PathBuf>,
    /// Optional texture file for the transmitted layer.
    #[serde(default)]
    pub transmitted_texture: Option<PathBuf>,
    /// Blend weight of the secondary layer, in `[0, 1)`.
    pub alpha: f64,
    pub seed: u64,
    /// Blur passes over the transmitted procedural texture (more = smoother).
    #[serde(default = "default_blur")]
    pub transmitted_blur: usize,
    /// Blur passes over the secondary procedural texture. Fewer passes keep
    /// the layer high-frequency, which decorrelates it across views.
    #[serde(default = "default_blur")]
    pub secondary_blur: usize,
}

fn default_blur() -> usize {
    3
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in [0,1), got {}",
                self.alpha
            )));
        }
        if !self.secondary_motion.is_finite() {
            return Err(Error::InvalidConfig("secondary_motion not finite".into()));
        }
        Ok(())
    }
}

/// Reference-view ground truth. The stored layers are pre-weighted
/// (`(1-alpha) * T` and `alpha * S`): the additive decomposition the
/// solver recovers, not the unmixed textures.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub t_ref: Image,
    pub s_ref: Image,
    pub d_true: DisparityMap,
    pub alpha: f64,
}

/// Band-limited procedural texture: blurred noise plus a few smooth blobs.
pub fn procedural_texture(width: usize, height: usize, seed: u64) -> Image {
    procedural_texture_with_blur(width, height, seed, 3)
}

/// Procedural texture with a controllable number of blur passes.
pub fn procedural_texture_with_blur(
    width: usize,
    height: usize,
    seed: u64,
    blur_passes: usize,
) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wh = width * height;
    let mut plane: Vec<f64> = (0..wh).map(|_| rng.random::<f64>()).collect();

    // Separable box blur, radius 2 per pass: limits the bandwidth so
    // bilinear resampling stays accurate.
    for _ in 0..blur_passes {
        let mut tmp = vec![0.0; wh];
        for y in 0..height {
            for x in 0..width {
                let mut s = 0.0;
                for k in -2i64..=2 {
                    let xx = (x as i64 + k).clamp(0, width as i64 - 1) as usize;
                    s += plane[y * width + xx];
                }
                tmp[y * width + x] = s / 5.0;
            }
        }
        for y in 0..height {
            for x in 0..width {
                let mut s = 0.0;
                for k in -2i64..=2 {
                    let yy = (y as i64 + k).clamp(0, height as i64 - 1) as usize;
                    s += tmp[yy * width + x];
                }
                plane[y * width + x] = s / 5.0;
            }
        }
    }

    // Smooth geometric features on top of the noise bed.
    for _ in 0..3 {
        let cx = rng.random::<f64>() * width as f64;
        let cy = rng.random::<f64>() * height as f64;
        let sigma = (0.08 + 0.1 * rng.random::<f64>()) * width.min(height) as f64;
        let amp = 0.6 * (rng.random::<f64>() - 0.5);
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                plane[y * width + x] +=
                    amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
    }

    // Normalize into [0.1, 0.9] to keep blends inside the unit range.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &plane {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-12);
    for v in &mut plane {
        *v = 0.1 + 0.8 * (*v - lo) / span;
    }
    Image::from_planes(width, height, vec![plane]).unwrap()
}

fn load_texture(path: &Path, width: usize, height: usize) -> Result<Image> {
    let img = io::load_image(path)?;
    if img.width() != width || img.height() != height {
        return Err(Error::InconsistentDimensions {
            expected_w: width,
            expected_h: height,
            got_w: img.width(),
            got_h: img.height(),
            path: path.to_path_buf(),
        });
    }
    Ok(img)
}

fn disparity_field(spec: &SyntheticSpec) -> Result<DisparityMap> {
    let (w, h) = (spec.width, spec.height);
    match &spec.transmitted {
        TransmittedScene::Plane { disparity } => Ok(DisparityMap::constant(w, h, *disparity)),
        TransmittedScene::TwoPlane { d_fg, d_bg } => {
            let cx = (w as f64 - 1.0) / 2.0;
            let cy = (h as f64 - 1.0) / 2.0;
            let radius = 0.3 * w.min(h) as f64;
            let blend = 1.5; // px; soft edge keeps the geometry resolvable
            let mut data = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    let t = 1.0 / (1.0 + ((r - radius) / blend).exp());
                    data[y * w + x] = d_bg + (d_fg - d_bg) * t;
                }
            }
            DisparityMap::from_vec(w, h, data)
        }
        TransmittedScene::Custom { disparity, .. } => {
            let d = DisparityMap::load_pfm(disparity)?;
            if d.width() != w || d.height() != h {
                return Err(Error::InconsistentDimensions {
                    expected_w: w,
                    expected_h: h,
                    got_w: d.width(),
                    got_h: d.height(),
                    path: disparity.clone(),
                });
            }
            Ok(d)
        }
    }
}

fn transmitted_texture(spec: &SyntheticSpec) -> Result<Image> {
    if let Some(path) = &spec.transmitted_texture {
        return load_texture(path, spec.width, spec.height);
    }
    if let TransmittedScene::Custom { texture, .. } = &spec.transmitted {
        return load_texture(texture, spec.width, spec.height);
    }
    Ok(procedural_texture_with_blur(
        spec.width,
        spec.height,
        spec.seed,
        spec.transmitted_blur,
    ))
}

fn secondary_texture(spec: &SyntheticSpec) -> Result<Image> {
    if let Some(path) = &spec.secondary_texture {
        return load_texture(path, spec.width, spec.height);
    }
    Ok(procedural_texture_with_blur(
        spec.width,
        spec.height,
        spec.seed ^ 0x9e3779b97f4a7c15,
        spec.secondary_blur,
    ))
}

/// Shift an image by a per-pixel displacement `(sx, sy)` with bilinear
/// sampling (output pixel q samples `q + (sx(q), sy(q))`).
fn shift_sample(tex: &Image, sx: impl Fn(usize, usize) -> f64, sy: impl Fn(usize, usize) -> f64) -> Image {
    let (w, h) = (tex.width(), tex.height());
    let mut out = Image::new(w, h, tex.channels());
    for c in 0..tex.channels() {
        let plane = tex.plane(c);
        for y in 0..h {
            for x in 0..w {
                let (v, _) =
                    sample_bilinear(plane, w, h, x as f64 + sx(x, y), y as f64 + sy(x, y));
                out.set(c, x, y, v);
            }
        }
    }
    out
}

/// Render the light field plus reference-view ground truth.
///
/// View `i` is the convex blend
/// `(1-alpha) * T(q + d_true(q) * phi_i) + alpha * S(q - m * phi_i)`:
/// the transmitted layer follows the disparity parallax, the secondary
/// layer slides `m` pixels per grid step the opposite way.
pub fn render(spec: &SyntheticSpec) -> Result<(LightField, GroundTruth)> {
    spec.validate()?;
    let d_true = disparity_field(spec)?;
    let t_tex = transmitted_texture(spec)?;
    let s_tex = secondary_texture(spec)?;

    let offsets = lf_model::grid_offsets(spec.grid_size)?;
    let max_phi = offsets.iter().map(|o| o.dx.abs().max(o.dy.abs())).fold(0.0, f64::max);
    let max_d = d_true.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let reach = (max_d.max(spec.secondary_motion.abs())) * max_phi;
    if reach >= spec.width.min(spec.height) as f64 {
        return Err(Error::OutOfFrame);
    }

    let mut views = Vec::with_capacity(offsets.len());
    for phi in &offsets {
        let t_view = shift_sample(
            &t_tex,
            |x, y| d_true.get(x, y) * phi.dx,
            |x, y| d_true.get(x, y) * phi.dy,
        );
        let s_view = shift_sample(&s_tex, |_, _| -spec.secondary_motion * phi.dx, |_, _| {
            -spec.secondary_motion * phi.dy
        });
        let mut blended = Image::new(spec.width, spec.height, t_tex.channels());
        for c in 0..t_tex.channels() {
            let (tp, sp) = (t_view.plane(c), s_view.plane(c));
            let out = blended.plane_mut(c);
            for p in 0..spec.width * spec.height {
                out[p] = (1.0 - spec.alpha) * tp[p] + spec.alpha * sp[p];
            }
        }
        views.push(blended);
    }
    let lf = LightField::new(views, spec.grid_size)?;

    let scale_img = |img: &Image, k: f64| -> Image {
        let planes: Vec<Vec<f64>> = (0..img.channels())
            .map(|c| img.plane(c).iter().map(|v| v * k).collect())
            .collect();
        Image::from_planes(img.width(), img.height(), planes).unwrap()
    };
    let gt = GroundTruth {
        t_ref: scale_img(&t_tex, 1.0 - spec.alpha),
        s_ref: scale_img(&s_tex, spec.alpha),
        d_true,
        alpha: spec.alpha,
    };
    Ok((lf, gt))
}

/// Render one instance per blend weight, sharing scene and seed.
pub fn alpha_sweep(
    spec: &SyntheticSpec,
    alphas: &[f64],
) -> Result<Vec<(LightField, GroundTruth)>> {
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut s = spec.clone();
        s.alpha = alpha;
        out.push(render(&s)?);
    }
    Ok(out)
}

/// Write the standard synthetic layout: view images, `lf.json`, and a
/// `gt/` folder with the reference layers, true disparity, and the spec.
pub fn save_scene(
    spec: &SyntheticSpec,
    lf: &LightField,
    gt: &GroundTruth,
    dir: &Path,
) -> Result<()> {
    lf_model::save_lightfield(lf, dir, "synthetic")?;
    let gt_dir = dir.join("gt");
    std::fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;
    io::save_png(&gt.t_ref, &gt_dir.join("T_ref.png"))?;
    io::save_png(&gt.s_ref, &gt_dir.join("S_ref.png"))?;
    gt.d_true.save_pfm(&gt_dir.join("d_true.pfm"))?;
    let spec_path = gt_dir.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(spec).unwrap())
        .map_err(|e| Error::io(&spec_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::{build_stack, fully_valid_columns};

    fn plane_spec(alpha: f64) -> SyntheticSpec {
        SyntheticSpec {
            grid_size: 3,
            width: 48,
            height: 48,
            transmitted: TransmittedScene::Plane { disparity: 0.6 },
            secondary_motion: 1.25,
            secondary_texture: None,
            transmitted_texture: None,
            alpha,
            seed: 7,
            transmitted_blur: 3,
            secondary_blur: 3,
        }
    }

    #[test]
    fn alpha_zero_has_no_secondary() {
        let (lf, gt) = render(&plane_spec(0.0)).unwrap();
        assert!(gt.s_ref.plane(0).iter().all(|&v| v == 0.0));
        // Reference view equals the transmitted texture exactly (phi = 0).
        let r = lf.reference();
        for (a, b) in r.plane(0).iter().zip(gt.t_ref.plane(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn warped_stack_at_true_disparity_is_near_rank_one() {
        let (lf, gt) = render(&plane_spec(0.0)).unwrap();
        let (stacks, mask) = build_stack(&lf, &gt.d_true).unwrap();
        let cols = fully_valid_columns(&mask);
        assert!(cols.len() > 1000);
        let sub = nalgebra::DMatrix::from_fn(stacks[0].views(), cols.len(), |i, j| {
            stacks[0].data[(i, cols[j])]
        });
        let svd = sub.svd(false, false);
        let ratio = svd.singular_values[1] / svd.singular_values[0];
        assert!(ratio < 0.02, "sigma2/sigma1 = {ratio}");
        // Rows match the central row within interpolation tolerance.
        let k = stacks[0].views();
        let refrow = k / 2;
        for i in 0..k {
            let mut worst = 0.0f64;
            for &j in &cols {
                worst = worst.max((stacks[0].data[(i, j)] - stacks[0].data[(refrow, j)]).abs());
            }
            assert!(worst < 0.02, "row {i} deviates {worst}");
        }
    }

    #[test]
    fn renderer_is_linear_in_alpha() {
        let spec = plane_spec(0.3);
        let (lf_mid, _) = render(&spec).unwrap();
        let (lf_t, _) = render(&plane_spec(0.0)).unwrap();
        let mut s_spec = plane_spec(0.0);
        // Isolate the secondary field by rendering alpha -> 1 limit via two
        // renders: view(alpha) = (1-alpha) view_T + alpha view_S.
        s_spec.alpha = 0.5;
        let (lf_half, _) = render(&s_spec).unwrap();
        for i in 0..lf_mid.num_views() {
            for p in 0..lf_mid.view(i).pixel_count() {
                let v_t = lf_t.view(i).plane(0)[p];
                let v_half = lf_half.view(i).plane(0)[p];
                let v_s = 2.0 * v_half - v_t; // recover the alpha=1 field
                let expect = 0.7 * v_t + 0.3 * v_s;
                let got = lf_mid.view(i).plane(0)[p];
                assert!((got - expect).abs() < 1e-9, "view {i} pixel {p}");
            }
        }
    }

    #[test]
    fn secondary_layer_shears_at_the_configured_rate() {
        // Proportional scaling of the reference protocol: 20 px/step at
        // 1024 wide becomes 1.25 px/step at 64. The mean absolute per-step
        // displacement of the secondary content's correlation peak must
        // land on that rate.
        let mut spec = plane_spec(0.5);
        spec.width = 64;
        spec.height = 64;
        spec.secondary_motion = 1.25;
        spec.transmitted = TransmittedScene::Plane { disparity: 0.0 };
        let (lf, _) = render(&spec).unwrap();
        // Isolate the secondary field by subtracting the alpha-0 render.
        let mut t_spec = spec.clone();
        t_spec.alpha = 0.0;
        let (lf_t, _) = render(&t_spec).unwrap();
        let (w, h) = (64usize, 64usize);
        let sec = |i: usize, p: usize| lf.view(i).plane(0)[p] - 0.5 * lf_t.view(i).plane(0)[p];

        // Dense SSD scan along x for each horizontally adjacent pair: the
        // displacement minimizing the mismatch is the per-step motion.
        let ssd_at = |a: usize, b: usize, shift: f64| -> f64 {
            let mut c = 0.0;
            for y in 8..h - 8 {
                for x in 8..w - 8 {
                    let xs = x as f64 + shift;
                    let x0 = xs.floor() as usize;
                    let f = xs - x0 as f64;
                    let vb = sec(b, y * w + x0) * (1.0 - f) + sec(b, y * w + x0 + 1) * f;
                    let d = sec(a, y * w + x) - vb;
                    c += d * d;
                }
            }
            c
        };
        let mut steps = Vec::new();
        for row in 0..3 {
            for col in 0..2 {
                let a = row * 3 + col;
                let b = a + 1; // one step in x: phi differs by (1, 0)
                let mut best = (f64::INFINITY, 0.0f64);
                let mut s = -3.0;
                while s <= 3.0 {
                    let c = ssd_at(a, b, s);
                    if c < best.0 {
                        best = (c, s);
                    }
                    s += 0.05;
                }
                steps.push(best.1.abs());
            }
        }
        let mean_step = steps.iter().sum::<f64>() / steps.len() as f64;
        assert!(
            (mean_step - 1.25).abs() <= 0.1,
            "mean per-step displacement {mean_step:.3} px"
        );
    }

    #[test]
    fn sweep_shares_scene_across_alphas() {
        let spec = plane_spec(0.0);
        let runs = alpha_sweep(&spec, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(runs.len(), 3);
        // The unweighted transmitted texture is identical across alphas.
        let t0: Vec<f64> = runs[0].1.t_ref.plane(0).iter().map(|v| v / 0.9).collect();
        let t1: Vec<f64> = runs[1].1.t_ref.plane(0).iter().map(|v| v / 0.8).collect();
        for (a, b) in t0.iter().zip(&t1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn determinism_under_fixed_seed() {
        let spec = plane_spec(0.25);
        let (lf1, _) = render(&spec).unwrap();
        let (lf2, _) = render(&spec).unwrap();
        for i in 0..lf1.num_views() {
            assert_eq!(lf1.view(i).plane(0), lf2.view(i).plane(0));
        }
    }

    #[test]
    fn out_of_frame_motion_errors() {
        let mut spec = plane_spec(0.2);
        spec.secondary_motion = 100.0;
        assert!(matches!(render(&spec), Err(Error::OutOfFrame)));
    }

    #[test]
    fn invalid_alpha_rejected() {
        assert!(render(&plane_spec(1.0)).is_err());
        assert!(render(&plane_spec(-0.1)).is_err());
    }
}
