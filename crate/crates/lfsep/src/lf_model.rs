//! Domain types for light fields, disparity maps, and view stacks.
//!
//! A light field here is a square grid of `K = N x N` sub-aperture views
//! sharing one resolution, with the central view acting as the reference.
//! Each view's grid offset is the lattice displacement from that reference.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::io;

/// Grid displacement of a view relative to the reference, in grid steps.
///
/// `dx` is the column offset and `dy` the row offset within the camera grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOffset {
    pub dx: f64,
    pub dy: f64,
}

impl GridOffset {
    pub fn norm(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy).sqrt()
    }

    pub fn is_reference(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0
    }
}

/// Lattice offsets for an `n x n` grid in lexicographic (row-major) order.
///
/// The central index maps to (0, 0); offsets span `{-(n-1)/2 ..= (n-1)/2}^2`.
pub fn grid_offsets(n: usize) -> Result<Vec<GridOffset>> {
    if n < 3 || n % 2 == 0 {
        return Err(Error::InvalidGridSize(n));
    }
    let half = (n as i64 - 1) / 2;
    let mut offsets = Vec::with_capacity(n * n);
    for row in -half..=half {
        for col in -half..=half {
            offsets.push(GridOffset {
                dx: col as f64,
                dy: row as f64,
            });
        }
    }
    Ok(offsets)
}

/// Per-pixel disparity of the reference view w.r.t. a one-hop neighbor,
/// in pixels per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize) -> Self {
        DisparityMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "disparity data has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(DisparityMap {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        DisparityMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn save_pfm(&self, path: &Path) -> Result<()> {
        io::write_pfm(&self.data, self.width, self.height, path)
    }

    pub fn load_pfm(path: &Path) -> Result<Self> {
        let (data, width, height) = io::read_pfm(path)?;
        Ok(DisparityMap {
            width,
            height,
            data,
        })
    }
}

/// A `K x (h*w)` matrix whose row `i` is view `i` unrolled row-major.
///
/// One stack holds a single channel; color light fields use one stack per
/// channel sharing the same geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    width: usize,
    height: usize,
    pub data: DMatrix<f64>,
}

impl LayerStack {
    pub fn zeros(views: usize, width: usize, height: usize) -> Self {
        LayerStack {
            width,
            height,
            data: DMatrix::zeros(views, width * height),
        }
    }

    pub fn from_matrix(width: usize, height: usize, data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "stack has {} columns, expected {}",
                data.ncols(),
                width * height
            )));
        }
        Ok(LayerStack {
            width,
            height,
            data,
        })
    }

    pub fn views(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Copy row `i` out as an unrolled image vector.
    pub fn row_vec(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Re-roll row `i` into a single-channel image.
    pub fn roll_row(&self, i: usize) -> Image {
        roll(&self.row_vec(i), self.width, self.height)
    }

    pub fn set_row(&mut self, i: usize, values: &[f64]) {
        assert_eq!(values.len(), self.width * self.height);
        for (j, v) in values.iter().enumerate() {
            self.data[(i, j)] = *v;
        }
    }
}

/// Unroll a single-channel image into a row-major vector of length `h*w`.
pub fn unroll(image: &Image) -> Result<Vec<f64>> {
    if image.channels() != 1 {
        return Err(Error::DimensionMismatch(
            "unroll expects a single-channel image".into(),
        ));
    }
    Ok(image.plane(0).to_vec())
}

/// Inverse of [`unroll`]: reshape a row-major vector into an image.
pub fn roll(values: &[f64], width: usize, height: usize) -> Image {
    assert_eq!(values.len(), width * height);
    Image::from_planes(width, height, vec![values.to_vec()]).unwrap()
}

/// The `K = N x N` grid of sub-aperture views plus their grid offsets.
#[derive(Debug, Clone)]
pub struct LightField {
    views: Vec<Image>,
    grid_size: usize,
    offsets: Vec<GridOffset>,
}

/// Side-car manifest stored as `lf.json` next to the view images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LfManifest {
    pub grid_size: usize,
    #[serde(default)]
    pub baseline_note: String,
    #[serde(default = "default_value_range")]
    pub value_range: [f64; 2],
}

fn default_value_range() -> [f64; 2] {
    [0.0, 1.0]
}

/// Rescale intensities from a declared value range onto `[0, 1]`.
fn normalize_range(img: &mut Image, range: [f64; 2]) {
    let (lo, hi) = (range[0], range[1]);
    if lo == 0.0 && hi == 1.0 {
        return;
    }
    let span = (hi - lo).max(1e-12);
    for c in 0..img.channels() {
        for v in img.plane_mut(c) {
            *v = (*v - lo) / span;
        }
    }
}

impl LightField {
    /// Assemble a light field from views in lexicographic grid order.
    pub fn new(views: Vec<Image>, grid_size: usize) -> Result<Self> {
        let offsets = grid_offsets(grid_size)?;
        if views.len() != grid_size * grid_size {
            return Err(Error::DimensionMismatch(format!(
                "expected {} views, got {}",
                grid_size * grid_size,
                views.len()
            )));
        }
        let (w, h, c) = (views[0].width(), views[0].height(), views[0].channels());
        for v in &views {
            if v.width() != w || v.height() != h || v.channels() != c {
                return Err(Error::DimensionMismatch(
                    "views differ in size or channel count".into(),
                ));
            }
            if !v.is_finite() {
                return Err(Error::DimensionMismatch(
                    "view contains non-finite intensities".into(),
                ));
            }
        }
        Ok(LightField {
            views,
            grid_size,
            offsets,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// Index of the central (reference) view: `(K - 1) / 2` for odd grids.
    pub fn ref_index(&self) -> usize {
        (self.views.len() - 1) / 2
    }

    pub fn view(&self, i: usize) -> &Image {
        &self.views[i]
    }

    pub fn reference(&self) -> &Image {
        &self.views[self.ref_index()]
    }

    pub fn offset(&self, i: usize) -> GridOffset {
        self.offsets[i]
    }

    pub fn offsets(&self) -> &[GridOffset] {
        &self.offsets
    }

    pub fn width(&self) -> usize {
        self.views[0].width()
    }

    pub fn height(&self) -> usize {
        self.views[0].height()
    }

    pub fn channels(&self) -> usize {
        self.views[0].channels()
    }
}

/// File name of the view at grid position (row, col): `view_{row}_{col}.png`.
pub fn view_file_name(row: usize, col: usize) -> String {
    format!("view_{row}_{col}.png")
}

/// Load a light field from a directory of `view_{row}_{col}.png` files
/// plus an `lf.json` manifest declaring the grid size.
pub fn load_lightfield(dir: &Path) -> Result<LightField> {
    let manifest_path = dir.join("lf.json");
    let manifest: LfManifest = {
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(&manifest_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::BadFormat {
            format: "lf.json",
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?
    };
    load_lightfield_views(dir, manifest.grid_size, manifest.value_range)
}

/// Load views for a known grid size (used when no manifest is present).
pub fn load_lightfield_with_grid(dir: &Path, grid_size: usize) -> Result<LightField> {
    load_lightfield_views(dir, grid_size, [0.0, 1.0])
}

fn load_lightfield_views(
    dir: &Path,
    grid_size: usize,
    value_range: [f64; 2],
) -> Result<LightField> {
    if grid_size < 3 || grid_size % 2 == 0 {
        return Err(Error::InvalidGridSize(grid_size));
    }
    let mut views = Vec::with_capacity(grid_size * grid_size);
    let mut dims: Option<(usize, usize)> = None;
    for row in 0..grid_size {
        for col in 0..grid_size {
            let mut path = dir.join(view_file_name(row, col));
            if !path.exists() {
                let pfm: PathBuf = dir.join(format!("view_{row}_{col}.pfm"));
                if pfm.exists() {
                    path = pfm;
                } else {
                    return Err(Error::MissingView(path));
                }
            }
            let mut img = io::load_image(&path)?;
            normalize_range(&mut img, value_range);
            img.clamp_unit();
            if let Some((w, h)) = dims {
                if img.width() != w || img.height() != h {
                    return Err(Error::InconsistentDimensions {
                        expected_w: w,
                        expected_h: h,
                        got_w: img.width(),
                        got_h: img.height(),
                        path,
                    });
                }
            } else {
                dims = Some((img.width(), img.height()));
            }
            views.push(img);
        }
    }
    LightField::new(views, grid_size)
}

/// Write a light field to the standard directory layout with a manifest.
pub fn save_lightfield(lf: &LightField, dir: &Path, baseline_note: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for row in 0..lf.grid_size() {
        for col in 0..lf.grid_size() {
            let i = row * lf.grid_size() + col;
            io::save_png(lf.view(i), &dir.join(view_file_name(row, col)))?;
        }
    }
    let manifest = LfManifest {
        grid_size: lf.grid_size(),
        baseline_note: baseline_note.to_string(),
        value_range: [0.0, 1.0],
    };
    let path = dir.join("lf.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(&path, e))?;
    Ok(())
}
