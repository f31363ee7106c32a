//! Subject pools, windowing, downsampling and the temporal history filter.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trial::{ClassLabel, EegTrial, Samples, TrialError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("dataset needs at least 2 subjects (one held out, one auxiliary), got {0}")]
    InsufficientSubjects(usize),
    #[error("num_classes must be at least 2, got {0}")]
    TooFewClasses(u32),
    #[error("subject {subject}: duplicate trial_index {index}")]
    DuplicateTrialIndex { subject: String, index: u64 },
    #[error("subject {subject}: trial_index {index} is out of chronological order")]
    UnorderedTrialIndex { subject: String, index: u64 },
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
    #[error("subject {subject} trial {index}: {found} channels, dataset declares {expected}")]
    ChannelCountMismatch {
        subject: String,
        index: u64,
        expected: usize,
        found: usize,
    },
    #[error("subject {subject} trial {index}: channel names differ from the dataset declaration")]
    ChannelNameMismatch { subject: String, index: u64 },
    #[error("subject {subject} trial {index}: {found} samples, expected {expected} (+/-1) for the declared duration and rate")]
    DurationMismatch {
        subject: String,
        index: u64,
        expected: f64,
        found: usize,
    },
    #[error("subject {subject} trial {index}: rate {found} Hz differs from declared {expected} Hz")]
    RateMismatch {
        subject: String,
        index: u64,
        expected: f64,
        found: f64,
    },
    #[error("subject {subject} trial {index}: label {label} is not below num_classes {num_classes}")]
    LabelOutOfRange {
        subject: String,
        index: u64,
        label: u32,
        num_classes: u32,
    },
    #[error("trial {index} belongs to subject {found:?}, not {expected:?}")]
    ForeignTrial {
        expected: String,
        found: String,
        index: u64,
    },
    #[error("window of {duration_s} s at {rate} Hz holds no samples")]
    EmptyWindow { duration_s: f64, rate: f64 },
    #[error("downsampling step must be at least 1")]
    ZeroStep,
    #[error(transparent)]
    Trial(#[from] TrialError),
}

/// All trials recorded from one subject, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPool {
    pub subject_id: String,
    trials: Vec<EegTrial>,
}

impl SubjectPool {
    /// Builds a pool; trials must belong to `subject_id` and have strictly
    /// increasing `trial_index`.
    pub fn new(subject_id: impl Into<String>, trials: Vec<EegTrial>) -> Result<Self, DatasetError> {
        let subject_id = subject_id.into();
        for (i, t) in trials.iter().enumerate() {
            if t.subject_id != subject_id {
                return Err(DatasetError::ForeignTrial {
                    expected: subject_id,
                    found: t.subject_id.clone(),
                    index: t.trial_index,
                });
            }
            if i > 0 {
                let prev = trials[i - 1].trial_index;
                if t.trial_index <= prev {
                    if trials[..i].iter().any(|p| p.trial_index == t.trial_index) {
                        return Err(DatasetError::DuplicateTrialIndex {
                            subject: subject_id,
                            index: t.trial_index,
                        });
                    }
                    return Err(DatasetError::UnorderedTrialIndex {
                        subject: subject_id,
                        index: t.trial_index,
                    });
                }
            }
        }
        Ok(Self { subject_id, trials })
    }

    pub fn trials(&self) -> &[EegTrial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn get(&self, trial_index: u64) -> Option<&EegTrial> {
        self.trials
            .binary_search_by_key(&trial_index, |t| t.trial_index)
            .ok()
            .map(|i| &self.trials[i])
    }

    /// Trials per class label.
    pub fn class_counts(&self) -> BTreeMap<ClassLabel, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.trials {
            *counts.entry(t.label).or_insert(0) += 1;
        }
        counts
    }

    /// Keeps the trials selected by `policy`; see [`DownsamplePolicy`].
    pub fn downsample(&self, policy: &DownsamplePolicy) -> Result<SubjectPool, DatasetError> {
        policy.validate()?;
        let mut position: BTreeMap<Option<ClassLabel>, usize> = BTreeMap::new();
        let mut kept = Vec::new();
        for t in &self.trials {
            let keep = match policy {
                DownsamplePolicy::None => true,
                DownsamplePolicy::EveryNthAll { step } => {
                    let pos = position.entry(None).or_insert(0);
                    let keep = pos.is_multiple_of(*step);
                    *pos += 1;
                    keep
                }
                DownsamplePolicy::EveryNthOfClass { step, classes } => {
                    if classes.contains(&t.label) {
                        // A single stream spanning every targeted class.
                        let pos = position.entry(None).or_insert(0);
                        let keep = pos.is_multiple_of(*step);
                        *pos += 1;
                        keep
                    } else {
                        true
                    }
                }
            };
            if keep {
                kept.push(t.clone());
            }
        }
        Ok(SubjectPool {
            subject_id: self.subject_id.clone(),
            trials: kept,
        })
    }

    /// The subject's non-task trials recorded strictly before `test_trial_index`.
    pub fn historical_pool(&self, test_trial_index: u64) -> Vec<&EegTrial> {
        self.trials
            .iter()
            .filter(|t| t.label.is_non_task() && t.trial_index < test_trial_index)
            .collect()
    }
}

/// Trial retention rule applied before any model querying.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DownsamplePolicy {
    #[default]
    None,
    /// Keep stream positions `0, step, 2*step, ...` over all trials.
    EveryNthAll { step: usize },
    /// Keep positions `0, step, 2*step, ...` within the stream of trials whose
    /// label is in `classes`; every other trial is kept.
    EveryNthOfClass { step: usize, classes: Vec<ClassLabel> },
}

impl DownsamplePolicy {
    pub fn validate(&self) -> Result<(), DatasetError> {
        match self {
            DownsamplePolicy::EveryNthAll { step: 0 } | DownsamplePolicy::EveryNthOfClass { step: 0, .. } => {
                Err(DatasetError::ZeroStep)
            }
            _ => Ok(()),
        }
    }
}

/// An in-memory dataset: a declaration plus one pool per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: u32,
    pub trial_duration_s: f64,
    pub sampling_rate: f64,
    pub channel_names: Arc<[String]>,
    pub subjects: Vec<SubjectPool>,
}

impl Dataset {
    /// Checks every dataset-level invariant.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.num_classes < 2 {
            return Err(DatasetError::TooFewClasses(self.num_classes));
        }
        if self.subjects.len() < 2 {
            return Err(DatasetError::InsufficientSubjects(self.subjects.len()));
        }
        let expected = self.trial_duration_s * self.sampling_rate;
        for (i, pool) in self.subjects.iter().enumerate() {
            if self.subjects[..i].iter().any(|p| p.subject_id == pool.subject_id) {
                return Err(DatasetError::DuplicateSubject(pool.subject_id.clone()));
            }
            for t in pool.trials() {
                let err_ctx = (pool.subject_id.clone(), t.trial_index);
                if t.channels() != self.channel_names.len() {
                    return Err(DatasetError::ChannelCountMismatch {
                        subject: err_ctx.0,
                        index: err_ctx.1,
                        expected: self.channel_names.len(),
                        found: t.channels(),
                    });
                }
                if t.channel_names[..] != self.channel_names[..] {
                    return Err(DatasetError::ChannelNameMismatch {
                        subject: err_ctx.0,
                        index: err_ctx.1,
                    });
                }
                if (t.sampling_rate - self.sampling_rate).abs() > 1e-9 * self.sampling_rate {
                    return Err(DatasetError::RateMismatch {
                        subject: err_ctx.0,
                        index: err_ctx.1,
                        expected: self.sampling_rate,
                        found: t.sampling_rate,
                    });
                }
                if (t.samples.len() as f64 - expected).abs() > 1.0 {
                    return Err(DatasetError::DurationMismatch {
                        subject: err_ctx.0,
                        index: err_ctx.1,
                        expected,
                        found: t.samples.len(),
                    });
                }
                if t.label.0 >= self.num_classes {
                    return Err(DatasetError::LabelOutOfRange {
                        subject: err_ctx.0,
                        index: err_ctx.1,
                        label: t.label.0,
                        num_classes: self.num_classes,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn subject(&self, subject_id: &str) -> Option<&SubjectPool> {
        self.subjects.iter().find(|p| p.subject_id == subject_id)
    }

    pub fn trial(&self, subject_id: &str, trial_index: u64) -> Option<&EegTrial> {
        self.subject(subject_id)?.get(trial_index)
    }

    pub fn total_trials(&self) -> usize {
        self.subjects.iter().map(SubjectPool::len).sum()
    }

    pub fn class_counts(&self) -> BTreeMap<ClassLabel, usize> {
        let mut counts = BTreeMap::new();
        for pool in &self.subjects {
            for (label, n) in pool.class_counts() {
                *counts.entry(label).or_insert(0) += n;
            }
        }
        counts
    }

    /// Applies `policy` to every subject pool.
    pub fn downsample(&self, policy: &DownsamplePolicy) -> Result<Dataset, DatasetError> {
        let subjects = self
            .subjects
            .iter()
            .map(|p| p.downsample(policy))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset {
            subjects,
            ..self.clone()
        })
    }

    /// Keeps only the listed subjects, in dataset order.
    pub fn filter_subjects(&self, keep: &[String]) -> Dataset {
        Dataset {
            subjects: self
                .subjects
                .iter()
                .filter(|p| keep.contains(&p.subject_id))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

/// A continuous, already preprocessed recording.
#[derive(Debug, Clone)]
pub struct Recording {
    pub subject_id: String,
    pub samples: Samples,
    pub sampling_rate: f64,
    pub channel_names: Arc<[String]>,
}

/// Splits `recording` into consecutive non-overlapping windows of
/// `round(duration_s * rate)` samples. A trailing remainder shorter than one
/// window is dropped. `label_for(start, len)` labels each window; indices are
/// assigned chronologically from 0.
pub fn window_recording(
    recording: &Recording,
    duration_s: f64,
    mut label_for: impl FnMut(usize, usize) -> ClassLabel,
) -> Result<Vec<EegTrial>, DatasetError> {
    let window = libm::round(duration_s * recording.sampling_rate);
    if window.is_nan() || window < 1.0 {
        return Err(DatasetError::EmptyWindow {
            duration_s,
            rate: recording.sampling_rate,
        });
    }
    let window = window as usize;
    let count = recording.samples.len() / window;
    (0..count)
        .map(|i| {
            let start = i * window;
            let samples = recording.samples.slice_columns(start, window)?;
            Ok(EegTrial::new(
                recording.subject_id.clone(),
                i as u64,
                samples,
                recording.sampling_rate,
                recording.channel_names.clone(),
                label_for(start, window),
            )?)
        })
        .collect()
}

/// Window label from per-sample annotations: the most frequent label in the
/// window, ties going to the larger (task) label.
pub fn majority_label(annotations: &[ClassLabel], start: usize, len: usize) -> ClassLabel {
    let mut counts: BTreeMap<ClassLabel, usize> = BTreeMap::new();
    for &l in &annotations[start..start + len] {
        *counts.entry(l).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
        .map_or(ClassLabel::NON_TASK, |(l, _)| l)
}
