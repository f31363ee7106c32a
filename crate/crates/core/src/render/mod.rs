//! Stacked chromatic waveform rendering.
//!
//! Channel `c` at time `t` is drawn at
//! `y = margin + alpha * norm(x[c][t]) + delta * c` with `margin = delta / 2`,
//! channel 0 at the top. Time maps linearly onto the full image width. There
//! are no axes, ticks, grid lines or outer margins, amplitudes are never
//! clipped, and strokes are drawn without anti-aliasing so every stroke pixel
//! carries its channel's exact color.

mod canvas;
mod font;
mod layout;
pub mod normalize;
pub mod palette;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canvas::RgbCanvas;
pub use layout::{layout_trial, Polyline};
pub use normalize::{normalize_channel, Normalizer};
pub use palette::{channel_palette, PaletteMode, Rgb};

use crate::digest::FramedHasher;
use crate::trial::EegTrial;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("alpha must be positive and finite, got {0}")]
    Alpha(f64),
    #[error("delta must be positive and finite, got {0}")]
    Delta(f64),
    #[error("stroke must be at least 1 px")]
    Stroke,
    #[error("image must be at least 1x1 px, got {0}x{1}")]
    Size(u32, u32),
    #[error("palette is empty")]
    EmptyPalette,
    #[error("palette repeats color {0:?}")]
    DuplicateColor(Rgb),
    #[error("palette color {0:?} equals the background")]
    BackgroundColor(Rgb),
    #[error("height {height} px cannot hold {channels} channels at delta {delta} (needs {needed})")]
    TooShort {
        height: u32,
        channels: usize,
        delta: f64,
        needed: f64,
    },
    #[error("label font of {font} px does not fit the {delta} px channel spacing")]
    LabelTooLarge { font: u32, delta: f64 },
}

/// Everything that determines the raster for a given trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Image units per normalized amplitude unit.
    pub alpha: f64,
    /// Vertical spacing between channel baselines.
    pub delta: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub stroke_px: u32,
    /// Cycled when shorter than the channel count.
    pub palette: Vec<Rgb>,
    pub background: Rgb,
    pub draw_labels: bool,
    pub label_font_px: u32,
    pub normalizer: Normalizer,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            alpha: 28.0,
            delta: 44.0,
            width_px: 896,
            height_px: 896,
            stroke_px: 2,
            palette: channel_palette(18, PaletteMode::MachineSeparable),
            background: Rgb::WHITE,
            draw_labels: true,
            label_font_px: 16,
            normalizer: Normalizer::Mad,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(RenderError::Alpha(self.alpha));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(RenderError::Delta(self.delta));
        }
        if self.stroke_px == 0 {
            return Err(RenderError::Stroke);
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(RenderError::Size(self.width_px, self.height_px));
        }
        if self.palette.is_empty() {
            return Err(RenderError::EmptyPalette);
        }
        for (i, c) in self.palette.iter().enumerate() {
            if self.palette[..i].contains(c) {
                return Err(RenderError::DuplicateColor(*c));
            }
            if *c == self.background {
                return Err(RenderError::BackgroundColor(*c));
            }
        }
        if self.draw_labels && (self.label_font_px as f64) > self.delta {
            return Err(RenderError::LabelTooLarge {
                font: self.label_font_px,
                delta: self.delta,
            });
        }
        Ok(())
    }

    /// Checks that `channels` baselines plus margins fit the image height.
    pub fn check_fits(&self, channels: usize) -> Result<(), RenderError> {
        let needed = channels as f64 * self.delta + self.delta;
        if (self.height_px as f64) < needed {
            return Err(RenderError::TooShort {
                height: self.height_px,
                channels,
                delta: self.delta,
                needed,
            });
        }
        Ok(())
    }

    pub fn top_margin(&self) -> f64 {
        self.delta / 2.0
    }

    pub fn color(&self, channel: usize) -> Rgb {
        self.palette[channel % self.palette.len()]
    }

    /// Content hash over every field, in declaration order.
    pub fn digest(&self) -> alloc::string::String {
        let mut h = FramedHasher::new();
        h.str("render-config/v1")
            .f64(self.alpha)
            .f64(self.delta)
            .u64(self.width_px as u64)
            .u64(self.height_px as u64)
            .u64(self.stroke_px as u64)
            .u64(self.palette.len() as u64);
        for c in &self.palette {
            h.bytes(&[c.0, c.1, c.2]);
        }
        let b = self.background;
        h.bytes(&[b.0, b.1, b.2])
            .u64(self.draw_labels as u64)
            .u64(self.label_font_px as u64)
            .str(match self.normalizer {
                Normalizer::Mad => "mad",
                Normalizer::None => "none",
            });
        h.finish_hex()
    }
}

/// Rasterizes `trial` into an RGB canvas.
pub fn render_canvas(trial: &EegTrial, config: &RenderConfig) -> Result<RgbCanvas, RenderError> {
    let lines = layout_trial(trial, config)?;
    let mut canvas = RgbCanvas::new(config.width_px, config.height_px, config.background);
    let stroke = config.stroke_px as f64;
    for line in &lines {
        let color = config.color(line.channel);
        canvas.stroke_polyline(&line.points, stroke, color);
    }
    if config.draw_labels {
        for (c, name) in trial.channel_names.iter().enumerate() {
            let baseline = config.top_margin() + config.delta * c as f64;
            font::draw_label(&mut canvas, name, baseline, config.label_font_px, config.color(c));
        }
    }
    Ok(canvas)
}

/// Pixel bounding boxes `(x0, y0, x1, y1)` (exclusive max) of the channel
/// labels that [`render_canvas`] draws.
pub fn label_boxes(trial: &EegTrial, config: &RenderConfig) -> Vec<(i64, i64, i64, i64)> {
    trial
        .channel_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let baseline = config.top_margin() + config.delta * c as f64;
            font::label_box(name, baseline, config.label_font_px)
        })
        .collect()
}
