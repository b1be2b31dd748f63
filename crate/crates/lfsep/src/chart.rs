//! Minimal raster line chart for sweep results.

use std::path::Path;

use crate::error::Result;
use crate::img::Image;
use crate::io;

const W: usize = 560;
const H: usize = 400;
const MARGIN: usize = 48;

// 3x5 pixel digit glyphs for axis labels.
const GLYPHS: [(char, [u8; 5]); 12] = [
    ('0', [0b111, 0b101, 0b101, 0b101, 0b111]),
    ('1', [0b010, 0b110, 0b010, 0b010, 0b111]),
    ('2', [0b111, 0b001, 0b111, 0b100, 0b111]),
    ('3', [0b111, 0b001, 0b111, 0b001, 0b111]),
    ('4', [0b101, 0b101, 0b111, 0b001, 0b001]),
    ('5', [0b111, 0b100, 0b111, 0b001, 0b111]),
    ('6', [0b111, 0b100, 0b111, 0b101, 0b111]),
    ('7', [0b111, 0b001, 0b010, 0b010, 0b010]),
    ('8', [0b111, 0b101, 0b111, 0b101, 0b111]),
    ('9', [0b111, 0b101, 0b111, 0b001, 0b111]),
    ('.', [0b000, 0b000, 0b000, 0b000, 0b010]),
    ('%', [0b101, 0b001, 0b010, 0b100, 0b101]),
];

struct Canvas {
    rgb: Vec<[f64; 3]>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            rgb: vec![[1.0, 1.0, 1.0]; W * H],
        }
    }

    fn put(&mut self, x: i64, y: i64, c: [f64; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < W && (y as usize) < H {
            self.rgb[y as usize * W + x as usize] = c;
        }
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, c: [f64; 3]) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (x0 + t * (x1 - x0)).round() as i64;
            let y = (y0 + t * (y1 - y0)).round() as i64;
            self.put(x, y, c);
            self.put(x + 1, y, c); // 2 px wide for visibility
        }
    }

    fn text(&mut self, x: usize, y: usize, s: &str, c: [f64; 3]) {
        let mut cx = x;
        for ch in s.chars() {
            if let Some((_, rows)) = GLYPHS.iter().find(|(g, _)| *g == ch) {
                for (ry, bits) in rows.iter().enumerate() {
                    for rx in 0..3 {
                        if bits & (1 << (2 - rx)) != 0 {
                            self.put((cx + rx) as i64, (y + ry) as i64, c);
                        }
                    }
                }
            }
            cx += 4;
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut img = Image::new(W, H, 3);
        for p in 0..W * H {
            for c in 0..3 {
                img.plane_mut(c)[p] = self.rgb[p][c];
            }
        }
        io::save_png(&img, path)
    }
}

/// Plot named percentage series against the sweep parameter and save a PNG.
pub fn plot_sweep(xs: &[f64], series: &[(&str, Vec<f64>, [f64; 3])], path: &Path) -> Result<()> {
    let mut cv = Canvas::new();
    let black = [0.0, 0.0, 0.0];
    let gray = [0.85, 0.85, 0.85];
    let (x0, y0) = (MARGIN as f64, (H - MARGIN) as f64);
    let (x1, y1) = ((W - MARGIN / 2) as f64, (MARGIN / 2) as f64);

    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (x_max - x_min).max(1e-9);
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            x0 + (x - x_min) / span * (x1 - x0),
            y0 + (y / 100.0) * (y1 - y0),
        )
    };

    // Grid and y labels at 0..100 by 20.
    for tick in (0..=100).step_by(20) {
        let (_, py) = to_px(x_min, tick as f64);
        cv.line(x0, py, x1, py, gray);
        cv.text(8, py as usize - 2, &format!("{tick}"), black);
    }
    // X ticks at data points.
    for &x in xs {
        let (px, _) = to_px(x, 0.0);
        cv.line(px, y0, px, y0 + 4.0, black);
        cv.text(px as usize - 6, y0 as usize + 8, &format!("{x:.2}"), black);
    }
    cv.line(x0, y0, x1, y0, black);
    cv.line(x0, y0, x0, y1, black);

    for (si, (_, ys, color)) in series.iter().enumerate() {
        for w in xs.iter().zip(ys).collect::<Vec<_>>().windows(2) {
            let (xa, ya) = to_px(*w[0].0, w[0].1.clamp(0.0, 100.0));
            let (xb, yb) = to_px(*w[1].0, w[1].1.clamp(0.0, 100.0));
            cv.line(xa, ya, xb, yb, *color);
        }
        // Legend swatch.
        let ly = MARGIN / 2 + si * 10;
        for dx in 0..8 {
            for dy in 0..8 {
                cv.put((W - MARGIN - 20 + dx) as i64, (ly + dy) as i64, *color);
            }
        }
    }
    cv.save(path)
}
