//! Binary trial files.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `EEGT`               |
//! | 4      | 2    | version (1)                |
//! | 6      | 2    | reserved, zero             |
//! | 8      | 4    | channels `C`               |
//! | 12     | 4    | time points `T`            |
//! | 16     | 8    | sampling rate, f64 Hz      |
//! | 24     | 4    | label                      |
//! | 28     | 4CT  | samples, row-major f32     |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use raicl_core::{ClassLabel, Samples};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"EEGT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Error)]
pub enum TrialFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, not a trial file")]
    Magic([u8; 4]),
    #[error("unsupported trial file version {0}")]
    Version(u16),
    #[error("trial file truncated: header declares {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("trial file has zero channels or time points")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialHeader {
    pub channels: u32,
    pub len: u32,
    pub sampling_rate: f64,
    pub label: ClassLabel,
}

pub fn encode(samples: &Samples, sampling_rate: f64, label: ClassLabel) -> Vec<u8> {
    let data = samples.as_slice();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(samples.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    out.extend_from_slice(&sampling_rate.to_le_bytes());
    out.extend_from_slice(&label.0.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(TrialHeader, Vec<f32>), TrialFileError> {
    if bytes.len() < HEADER_LEN {
        return Err(TrialFileError::Length {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TrialFileError::Magic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(TrialFileError::Version(version));
    }
    let header = TrialHeader {
        channels: u32_at(8),
        len: u32_at(12),
        sampling_rate: f64::from_le_bytes(bytes[16..24].try_into().unwrap()),
        label: ClassLabel(u32_at(24)),
    };
    if header.channels == 0 || header.len == 0 {
        return Err(TrialFileError::Empty);
    }
    let n = header.channels as usize * header.len as usize;
    let expected = HEADER_LEN + 4 * n;
    if bytes.len() != expected {
        return Err(TrialFileError::Length {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}

pub fn write(path: &Path, samples: &Samples, sampling_rate: f64, label: ClassLabel) -> Result<(), TrialFileError> {
    let io = |source| TrialFileError::Io {
        path: path.to_owned(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&encode(samples, sampling_rate, label)).map_err(io)
}

pub fn read(path: &Path) -> Result<(TrialHeader, Vec<f32>), TrialFileError> {
    let bytes = fs::read(path).map_err(|source| TrialFileError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode(&bytes)
}
