//! Trial and label types.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Class index in `0..K`. Zero is the non-task (resting / non-seizure) class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(pub u32);

impl ClassLabel {
    pub const NON_TASK: ClassLabel = ClassLabel(0);

    pub fn is_non_task(self) -> bool {
        self.0 == 0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `(subject, trial_index)` pair identifying one trial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrialRef {
    pub subject_id: String,
    pub trial_index: u64,
}

impl TrialRef {
    pub fn new(subject_id: impl Into<String>, trial_index: u64) -> Self {
        Self {
            subject_id: subject_id.into(),
            trial_index,
        }
    }
}

impl fmt::Display for TrialRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.subject_id, self.trial_index)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrialError {
    #[error("sample matrix must have at least one channel and one time point (got {channels}x{len})")]
    EmptyMatrix { channels: usize, len: usize },
    #[error("sample buffer holds {actual} values, expected {channels}x{len}")]
    ShapeMismatch {
        channels: usize,
        len: usize,
        actual: usize,
    },
    #[error("{names} channel names given for {channels} channels")]
    ChannelNameCount { names: usize, channels: usize },
    #[error("duplicate channel name {0:?}")]
    DuplicateChannel(String),
    #[error("sampling rate must be positive and finite, got {0}")]
    BadRate(f64),
}

/// Row-major `C x T` matrix of amplitudes (microvolts).
///
/// The buffer is reference counted so trials that share a payload (and
/// windows cut from one recording) do not duplicate memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    channels: usize,
    len: usize,
    data: Arc<[f32]>,
}

impl Samples {
    pub fn new(channels: usize, len: usize, data: impl Into<Arc<[f32]>>) -> Result<Self, TrialError> {
        let data = data.into();
        if channels == 0 || len == 0 {
            return Err(TrialError::EmptyMatrix { channels, len });
        }
        if data.len() != channels * len {
            return Err(TrialError::ShapeMismatch {
                channels,
                len,
                actual: data.len(),
            });
        }
        Ok(Self { channels, len, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, TrialError> {
        let channels = rows.len();
        let len = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(channels * len);
        for row in rows {
            if row.len() != len {
                return Err(TrialError::ShapeMismatch {
                    channels,
                    len,
                    actual: rows.iter().map(Vec::len).sum(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(channels, len, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of time points `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, channel: usize) -> &[f32] {
        &self.data[channel * self.len..(channel + 1) * self.len]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.len)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies columns `start..start + len` into a new matrix.
    pub fn slice_columns(&self, start: usize, len: usize) -> Result<Self, TrialError> {
        let mut data = Vec::with_capacity(self.channels * len);
        for row in self.rows() {
            data.extend_from_slice(&row[start..start + len]);
        }
        Self::new(self.channels, len, data)
    }
}

/// One windowed, labeled multichannel sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EegTrial {
    pub subject_id: String,
    /// Position in the subject's chronological recording order.
    pub trial_index: u64,
    pub samples: Samples,
    pub sampling_rate: f64,
    pub channel_names: Arc<[String]>,
    pub label: ClassLabel,
}

impl EegTrial {
    pub fn new(
        subject_id: impl Into<String>,
        trial_index: u64,
        samples: Samples,
        sampling_rate: f64,
        channel_names: impl Into<Arc<[String]>>,
        label: ClassLabel,
    ) -> Result<Self, TrialError> {
        let channel_names = channel_names.into();
        validate_channel_names(&channel_names, samples.channels())?;
        if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
            return Err(TrialError::BadRate(sampling_rate));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            trial_index,
            samples,
            sampling_rate,
            channel_names,
            label,
        })
    }

    pub fn reference(&self) -> TrialRef {
        TrialRef::new(self.subject_id.clone(), self.trial_index)
    }

    pub fn channels(&self) -> usize {
        self.samples.channels()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate
    }
}

pub(crate) fn validate_channel_names(names: &[String], channels: usize) -> Result<(), TrialError> {
    if names.len() != channels {
        return Err(TrialError::ChannelNameCount {
            names: names.len(),
            channels,
        });
    }
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(TrialError::DuplicateChannel(name.clone()));
        }
    }
    Ok(())
}
