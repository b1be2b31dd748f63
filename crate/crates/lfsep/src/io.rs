//! File formats: 8-bit PNG, single-channel PFM disparity maps, and
//! Middlebury `.flo` flow fields.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::img::Image;

/// Load a PNG or PFM image, normalizing intensities to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_pfm_image(path),
        _ => load_png(path),
    }
}

fn load_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg {
        image::DynamicImage::ImageLuma8(g) => {
            let plane: Vec<f64> = g.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            Image::from_planes(w, h, vec![plane])
        }
        other => {
            let rgb = other.into_rgb8();
            let raw = rgb.as_raw();
            let wh = w * h;
            let mut planes = vec![vec![0.0; wh]; 3];
            for i in 0..wh {
                for c in 0..3 {
                    planes[c][i] = raw[3 * i + c] as f64 / 255.0;
                }
            }
            Image::from_planes(w, h, planes)
        }
    }
}

/// Save an image as 8-bit PNG (values clamped to `[0, 1]` then scaled).
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let res = if img.channels() == 1 {
        let buf: Vec<u8> = img.plane(0).iter().copied().map(to_u8).collect();
        image::GrayImage::from_raw(w, h, buf).unwrap().save(path)
    } else {
        let wh = img.pixel_count();
        let mut buf = Vec::with_capacity(wh * 3);
        for i in 0..wh {
            for c in 0..3 {
                buf.push(to_u8(img.plane(c)[i]));
            }
        }
        image::RgbImage::from_raw(w, h, buf).unwrap().save(path)
    };
    res.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Write a single-channel PFM file (little-endian, scale field -1.0).
///
/// PFM stores rows bottom-to-top.
pub fn write_pfm(data: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    assert_eq!(data.len(), width * height);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("Pf\n{} {}\n-1.0\n", width, height);
    w.write_all(header.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    for y in (0..height).rev() {
        for x in 0..width {
            let v = data[y * width + x] as f32;
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// Read a single-channel PFM file into row-major top-down order.
pub fn read_pfm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let bad = |reason: String| Error::BadFormat {
        format: "pfm",
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    // Header: three whitespace-separated tokens ("Pf", "w h", "scale").
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header".into()));
        }
        let s = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1; // single whitespace after each token
        Ok(s)
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(bad(format!("expected Pf magic, got {magic}")));
    }
    let width: usize = token()?
        .parse()
        .map_err(|e| bad(format!("bad width: {e}")))?;
    let height: usize = token()?
        .parse()
        .map_err(|e| bad(format!("bad height: {e}")))?;
    let scale: f64 = token()?
        .parse()
        .map_err(|e| bad(format!("bad scale: {e}")))?;
    let little_endian = scale < 0.0;

    let need = width * height * 4;
    if bytes.len() < pos + need {
        return Err(bad(format!(
            "expected {} bytes of samples, found {}",
            need,
            bytes.len().saturating_sub(pos)
        )));
    }
    let mut data = vec![0.0f64; width * height];
    for y_pfm in 0..height {
        let y = height - 1 - y_pfm; // PFM rows are bottom-up
        for x in 0..width {
            let off = pos + (y_pfm * width + x) * 4;
            let raw: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            data[y * width + x] = v as f64;
        }
    }
    Ok((data, width, height))
}

/// Read a PFM file as a single-channel image (HDR view input).
fn read_pfm_image(path: &Path) -> Result<Image> {
    let (data, width, height) = read_pfm(path)?;
    Image::from_planes(width, height, vec![data])
}

pub const FLO_MAGIC: f32 = 202021.25;

/// Read a Middlebury `.flo` flow field: returns (dx, dy, width, height).
pub fn read_flo(path: &Path) -> Result<(Vec<f64>, Vec<f64>, usize, usize)> {
    let bad = |reason: String| Error::BadFormat {
        format: "flo",
        path: path.to_path_buf(),
        reason,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(bad("file shorter than header".into()));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(bad(format!("bad magic {magic}")));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let need = 12 + width * height * 8;
    if bytes.len() < need {
        return Err(bad(format!("expected {need} bytes, got {}", bytes.len())));
    }
    let mut dx = vec![0.0f64; width * height];
    let mut dy = vec![0.0f64; width * height];
    for i in 0..width * height {
        let off = 12 + i * 8;
        dx[i] = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
        dy[i] = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()) as f64;
    }
    Ok((dx, dy, width, height))
}

/// Write a Middlebury `.flo` flow field.
pub fn write_flo(dx: &[f64], dy: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    assert_eq!(dx.len(), width * height);
    assert_eq!(dy.len(), width * height);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&FLO_MAGIC.to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&(width as i32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&(height as i32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    for i in 0..width * height {
        w.write_all(&(dx[i] as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.write_all(&(dy[i] as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
