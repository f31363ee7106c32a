use alloc::vec;
use alloc::vec::Vec;

use super::palette::Rgb;

/// 8-bit RGB raster, row-major, no alpha.
///
/// Pixel `(x, y)` is centered on the integer coordinate `(x, y)` and covers
/// `[x - 0.5, x + 0.5) x [y - 0.5, y + 0.5)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbCanvas {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RgbCanvas {
    pub fn new(width: u32, height: u32, background: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = vec![0u8; n * 3];
        for px in pixels.chunks_exact_mut(3) {
            px.copy_from_slice(&[background.0, background.1, background.2]);
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Raw RGB bytes, row-major.
    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        Rgb(self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }

    pub fn set(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&[color.0, color.1, color.2]);
    }

    /// Paints every pixel whose center lies inside the square-capped stroke
    /// rectangle of segment `a -> b` with the given width. Intervals are
    /// half-open so a horizontal stroke of width `w` at an integer `y` covers
    /// exactly `w` rows.
    pub fn stroke_segment(&mut self, a: (f64, f64), b: (f64, f64), width: f64, color: Rgb) {
        let half = width / 2.0;
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = libm::sqrt(dx * dx + dy * dy);
        let (ux, uy) = if len > 0.0 { (dx / len, dy / len) } else { (1.0, 0.0) };
        // Normal rotated +90 degrees in image coordinates (y down).
        let (nx, ny) = (-uy, ux);

        let x_min = libm::floor(a.0.min(b.0) - half - 1.0).max(0.0) as i64;
        let x_max = libm::ceil(a.0.max(b.0) + half + 1.0).min(self.width as f64 - 1.0) as i64;
        let y_min = libm::floor(a.1.min(b.1) - half - 1.0).max(0.0) as i64;
        let y_max = libm::ceil(a.1.max(b.1) + half + 1.0).min(self.height as f64 - 1.0) as i64;

        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let (qx, qy) = (x as f64 - a.0, y as f64 - a.1);
                let along = qx * ux + qy * uy;
                let across = qx * nx + qy * ny;
                if along >= -half && along < len + half && across >= -half && across < half {
                    self.set(x, y, color);
                }
            }
        }
    }

    pub fn stroke_polyline(&mut self, points: &[(f64, f64)], width: f64, color: Rgb) {
        match points {
            [] => {}
            [p] => self.stroke_segment(*p, *p, width, color),
            _ => {
                for w in points.windows(2) {
                    self.stroke_segment(w[0], w[1], width, color);
                }
            }
        }
    }
}
