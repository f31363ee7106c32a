//! PNG encoding of rendered waveform canvases.

use std::sync::Arc;

use raicl_core::digest::sha256_hex;
use raicl_core::render::{render_canvas, RenderError};
use raicl_core::{EegTrial, RenderConfig, TrialRef};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("expected an 8-bit RGB png, found {0:?} at {1:?} bits")]
    Format(png::ColorType, png::BitDepth),
}

/// A rendered trial. `png_bytes` is 8-bit RGB without alpha.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaveformImage {
    pub png_bytes: Arc<[u8]>,
    pub width_px: u32,
    pub height_px: u32,
    pub source: TrialRef,
    pub config_digest: String,
}

impl WaveformImage {
    /// SHA-256 of the PNG bytes; the embedding store key.
    pub fn digest(&self) -> String {
        sha256_hex(&self.png_bytes)
    }
}

/// Renders `trial` and encodes it. Output depends only on the trial samples
/// and `config`.
pub fn rasterize(trial: &EegTrial, config: &RenderConfig) -> Result<WaveformImage, ImageError> {
    let canvas = render_canvas(trial, config)?;
    let png_bytes = encode_rgb(canvas.width(), canvas.height(), canvas.as_bytes())?;
    Ok(WaveformImage {
        png_bytes: png_bytes.into(),
        width_px: canvas.width(),
        height_px: canvas.height(),
        source: trial.reference(),
        config_digest: config.digest(),
    })
}

pub fn encode_rgb(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        enc.set_filter(png::Filter::Up);
        let mut w = enc.write_header()?;
        w.write_image_data(rgb)?;
        w.finish()?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB png into `(width, height, pixels)`.
pub fn decode_rgb(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), ImageError> {
    let mut reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Format(info.color_type, info.bit_depth));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}
