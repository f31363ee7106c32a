//! Channel-name labels from an 8x8 bitmap font, scaled by an integer factor.

use font8x8::legacy::BASIC_LEGACY;

use super::canvas::RgbCanvas;
use super::palette::Rgb;

const GLYPH: i64 = 8;
const LEFT_PAD: i64 = 2;

fn scale_for(font_px: u32) -> i64 {
    (font_px as i64 / GLYPH).max(1)
}

fn glyph(ch: char) -> [u8; 8] {
    let code = if ch.is_ascii() { ch as usize } else { '?' as usize };
    BASIC_LEGACY[code]
}

/// Label box `(x0, y0, x1, y1)`, exclusive max, vertically centered on the
/// channel baseline.
pub(super) fn label_box(text: &str, baseline: f64, font_px: u32) -> (i64, i64, i64, i64) {
    let scale = scale_for(font_px);
    let h = GLYPH * scale;
    let y0 = libm::floor(baseline) as i64 - h / 2;
    let w = text.chars().count() as i64 * GLYPH * scale;
    (LEFT_PAD, y0, LEFT_PAD + w, y0 + h)
}

pub(super) fn draw_label(canvas: &mut RgbCanvas, text: &str, baseline: f64, font_px: u32, color: Rgb) {
    let scale = scale_for(font_px);
    let (x0, y0, _, _) = label_box(text, baseline, font_px);
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        let gx = x0 + i as i64 * GLYPH * scale;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..GLYPH {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        canvas.set(gx + col * scale + sx, y0 + r as i64 * scale + sy, color);
                    }
                }
            }
        }
    }
}
