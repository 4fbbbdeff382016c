//! Minimal PNG line plots for training and evaluation curves.
//!
//! No text rendering: axes are plain lines with tick marks, and series are
//! distinguished by color (documented by the caller next to the file). Good
//! enough to see whether a curve goes down.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{PfctError, Result};

pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
}

pub const COLOR_BLUE: [u8; 3] = [31, 119, 180];
pub const COLOR_ORANGE: [u8; 3] = [255, 127, 14];
pub const COLOR_GREEN: [u8; 3] = [44, 160, 44];

const W: u32 = 800;
const H: u32 = 500;
const MARGIN: u32 = 40;

/// Render series to a PNG. With `log_y`, y values must be positive and the
/// vertical axis is log10-scaled.
pub fn line_plot(path: &Path, series: &[Series], log_y: bool) -> Result<()> {
    let ys = |y: f64| if log_y { y.log10() } else { y };
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            if log_y && y <= 0.0 {
                continue;
            }
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(ys(y));
            ymax = ymax.max(ys(y));
        }
    }
    if !xmin.is_finite() || !ymin.is_finite() {
        return Err(PfctError::invalid("no plottable points"));
    }
    if xmax == xmin {
        xmax = xmin + 1.0;
    }
    if ymax == ymin {
        ymax = ymin + 1.0;
    }
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let fx = (x - xmin) / (xmax - xmin);
        let fy = (y - ymin) / (ymax - ymin);
        (
            (MARGIN as f64 + fx * (W - 2 * MARGIN) as f64) as i64,
            (H as f64 - MARGIN as f64 - fy * (H - 2 * MARGIN) as f64) as i64,
        )
    };
    // axes
    let axis = Rgb([0, 0, 0]);
    for x in MARGIN..=W - MARGIN {
        img.put_pixel(x, H - MARGIN, axis);
    }
    for y in MARGIN..=H - MARGIN {
        img.put_pixel(MARGIN, y, axis);
    }
    // ticks: 5 per axis
    for t in 0..=5u32 {
        let x = MARGIN + t * (W - 2 * MARGIN) / 5;
        let y = MARGIN + t * (H - 2 * MARGIN) / 5;
        for d in 0..5u32 {
            img.put_pixel(x, H - MARGIN + d.min(MARGIN - 1), axis);
            img.put_pixel(MARGIN - d.min(MARGIN), y, axis);
        }
    }
    for s in series {
        let pts: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
            .map(|&(x, y)| to_px(x, ys(y)))
            .collect();
        for pair in pts.windows(2) {
            draw_line(&mut img, pair[0], pair[1], Rgb(s.color));
        }
        if pts.len() == 1 {
            draw_line(&mut img, pts[0], pts[0], Rgb(s.color));
        }
    }
    img.save(path).map_err(PfctError::from)
}

fn draw_line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}
