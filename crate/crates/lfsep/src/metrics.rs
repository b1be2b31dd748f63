//! Quantitative evaluation of recovered layers and disparity maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::lf_model::DisparityMap;

/// Evaluation summary for one separation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub incorrect_pixel_pct_t: f64,
    pub incorrect_pixel_pct_s: f64,
    pub psnr_t: f64,
    pub psnr_s: f64,
    pub bad_pixel_pct_d: f64,
    pub mean_abs_err_d: f64,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "incorrect_pct_T,incorrect_pct_S,psnr_T,psnr_S,bad_pixel_pct_d,mean_abs_err_d"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.incorrect_pixel_pct_t,
            self.incorrect_pixel_pct_s,
            self.psnr_t,
            self.psnr_s,
            self.bad_pixel_pct_d,
            self.mean_abs_err_d
        )
    }
}

fn channel_planes(recovered: &Image, truth: &Image) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if recovered.width() != truth.width() || recovered.height() != truth.height() {
        return Err(Error::DimensionMismatch(format!(
            "recovered {}x{} vs truth {}x{}",
            recovered.width(),
            recovered.height(),
            truth.width(),
            truth.height()
        )));
    }
    // Mismatched channel counts compare luma against luma.
    if recovered.channels() != truth.channels() {
        return Ok((vec![recovered.to_luma()], vec![truth.to_luma()]));
    }
    let rec = (0..recovered.channels())
        .map(|c| recovered.plane(c).to_vec())
        .collect();
    let tru = (0..truth.channels())
        .map(|c| truth.plane(c).to_vec())
        .collect();
    Ok((rec, tru))
}

/// Percentage of pixels whose max-channel absolute error exceeds `thresh`.
///
/// Pixels where `mask` is false are excluded from the count.
pub fn incorrect_pixel_pct(
    recovered: &Image,
    truth: &Image,
    thresh: f64,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let (rec, tru) = channel_planes(recovered, truth)?;
    let wh = recovered.pixel_count();
    if let Some(m) = mask {
        if m.len() != wh {
            return Err(Error::DimensionMismatch("mask length".into()));
        }
    }
    let mut bad = 0usize;
    let mut total = 0usize;
    for p in 0..wh {
        if let Some(m) = mask {
            if !m[p] {
                continue;
            }
        }
        total += 1;
        let err = rec
            .iter()
            .zip(&tru)
            .map(|(r, t)| (r[p] - t[p]).abs())
            .fold(0.0f64, f64::max);
        if err > thresh {
            bad += 1;
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * bad as f64 / total as f64)
}

/// Percentage of pixels with `|d - d_true| > delta`.
pub fn bad_pixel_pct(d: &DisparityMap, d_true: &DisparityMap, delta: f64) -> Result<f64> {
    if d.width() != d_true.width() || d.height() != d_true.height() {
        return Err(Error::DimensionMismatch("disparity map sizes".into()));
    }
    let n = d.data().len();
    let bad = d
        .data()
        .iter()
        .zip(d_true.data())
        .filter(|(a, b)| (*a - *b).abs() > delta)
        .count();
    Ok(100.0 * bad as f64 / n as f64)
}

/// Mean absolute disparity error in pixels.
pub fn mean_abs_err(d: &DisparityMap, d_true: &DisparityMap) -> Result<f64> {
    if d.width() != d_true.width() || d.height() != d_true.height() {
        return Err(Error::DimensionMismatch("disparity map sizes".into()));
    }
    let n = d.data().len() as f64;
    Ok(d.data()
        .iter()
        .zip(d_true.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB over unit-range intensities.
/// Exact recovery reports `f64::INFINITY`.
pub fn psnr(recovered: &Image, truth: &Image) -> Result<f64> {
    let (rec, tru) = channel_planes(recovered, truth)?;
    let mut se = 0.0;
    let mut n = 0usize;
    for (r, t) in rec.iter().zip(&tru) {
        for (a, b) in r.iter().zip(t) {
            se += (a - b) * (a - b);
            n += 1;
        }
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Bundle all layer and disparity metrics into one report.
pub fn evaluate(
    t_rec: &Image,
    s_rec: &Image,
    d_rec: &DisparityMap,
    t_true: &Image,
    s_true: &Image,
    d_true: &DisparityMap,
    intensity_thresh: f64,
    disparity_delta: f64,
    mask: Option<&[bool]>,
) -> Result<EvalReport> {
    Ok(EvalReport {
        incorrect_pixel_pct_t: incorrect_pixel_pct(t_rec, t_true, intensity_thresh, mask)?,
        incorrect_pixel_pct_s: incorrect_pixel_pct(s_rec, s_true, intensity_thresh, mask)?,
        psnr_t: psnr(t_rec, t_true)?,
        psnr_s: psnr(s_rec, s_true)?,
        bad_pixel_pct_d: bad_pixel_pct(d_rec, d_true, disparity_delta)?,
        mean_abs_err_d: mean_abs_err(d_rec, d_true)?,
    })
}
