use std::path::Path;

use super::report::MetricsReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
}

impl Default for Canvas {
    fn default() -> Self {
        Canvas { width: 640, height: 360 }
    }
}

/// RGB raster, row-major from the top-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Image {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [23, 190, 207],
];

/// Line chart of per-slice PSNR, one polyline per method in summary order.
/// Infinite values are not drawn.
pub fn render_psnr_plot(report: &MetricsReport, canvas: Canvas) -> Result<Image> {
    if canvas.width < 32 || canvas.height < 32 {
        return Err(Error::invalid(format!(
            "plot canvas {}×{} is too small (minimum 32×32)",
            canvas.width, canvas.height
        )));
    }
    let mut img = Image::new(canvas.width, canvas.height, [255, 255, 255]);
    let margin = 16i64;
    let (w, h) = (canvas.width as i64, canvas.height as i64);
    let (left, right, top, bottom) = (margin, w - margin, margin, h - margin);
    img.line((left, top), (left, bottom), [0, 0, 0]);
    img.line((left, bottom), (right, bottom), [0, 0, 0]);

    let finite: Vec<f64> = report.rows.iter().map(|r| r.psnr_db).filter(|p| p.is_finite()).collect();
    let max_slice = report.rows.iter().map(|r| r.slice).max().unwrap_or(0).max(1) as f64;
    let (mut lo, mut hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
    if finite.is_empty() {
        return Ok(img);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let to_px = |slice: usize, p: f64| -> (i64, i64) {
        let x = left + ((slice as f64 / max_slice) * (right - left) as f64).round() as i64;
        let y = bottom - (((p - lo) / (hi - lo)) * (bottom - top) as f64).round() as i64;
        (x, y)
    };
    for (k, m) in report.summary.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut prev: Option<(i64, i64)> = None;
        for r in report.rows_for(&m.method) {
            if !r.psnr_db.is_finite() {
                prev = None;
                continue;
            }
            let pt = to_px(r.slice, r.psnr_db);
            match prev {
                Some(p) => img.line(p, pt, color),
                None => img.put(pt.0, pt.1, color),
            }
            prev = Some(pt);
        }
    }
    Ok(img)
}

/// Binary PPM (`P6`, maxval 255).
pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.reserve(img.pixels.len() * 3);
    for p in &img.pixels {
        bytes.extend_from_slice(p);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
