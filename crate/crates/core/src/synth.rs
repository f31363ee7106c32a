//! Seeded synthetic EEG-like datasets for desk-scale testing.
//!
//! Class 0 trials are low-amplitude Gaussian noise. Task-class trials add a
//! high-amplitude 3 Hz rhythm (class `k` scales it by `k`) with a random phase
//! per channel.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, SubjectPool};
use crate::selection::EmbeddingTable;
use crate::trial::{ClassLabel, EegTrial, Samples};

pub const NOISE_STD_UV: f64 = 10.0;
pub const RHYTHM_AMPLITUDE_UV: f64 = 80.0;
pub const RHYTHM_HZ: f64 = 3.0;

/// Standard double-banana bipolar pairs, reused for channel naming.
pub const BIPOLAR_MONTAGE: [&str; 18] = [
    "FP1-F7", "F7-T3", "T3-T5", "T5-O1", "FP2-F8", "F8-T4", "T4-T6", "T6-O2", "FP1-F3", "F3-C3", "C3-P3", "P3-O1",
    "FP2-F4", "F4-C4", "C4-P4", "P4-O2", "FZ-CZ", "CZ-PZ",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub subjects: usize,
    /// Trials per class per subject; index = class label.
    pub trials_per_class: Vec<usize>,
    pub channels: usize,
    pub trial_duration_s: f64,
    pub sampling_rate: f64,
    /// Leading non-task trials before the shuffled remainder, so early
    /// queries have a history to draw anchors from.
    pub lead_in: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            subjects: 4,
            trials_per_class: alloc::vec![20, 20],
            channels: 4,
            trial_duration_s: 1.0,
            sampling_rate: 64.0,
            lead_in: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("synthetic spec requests zero trials")]
    NoTrials,
    #[error("synthetic spec needs at least one channel and a positive duration and rate")]
    BadShape,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}

pub fn channel_names(channels: usize) -> Vec<String> {
    (0..channels)
        .map(|c| match BIPOLAR_MONTAGE.get(c) {
            Some(name) => String::from(*name),
            None => format!("CH{c}"),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn synth_trial(
    rng: &mut ChaCha8Rng,
    subject: &str,
    index: u64,
    label: ClassLabel,
    channels: usize,
    len: usize,
    rate: f64,
    names: &Arc<[String]>,
) -> Result<EegTrial, SynthError> {
    let mut data = Vec::with_capacity(channels * len);
    for _ in 0..channels {
        let phase = rng.random::<f64>() * 2.0 * PI;
        for t in 0..len {
            let mut v = NOISE_STD_UV * gaussian(rng);
            if !label.is_non_task() {
                let time = t as f64 / rate;
                v += label.0 as f64 * RHYTHM_AMPLITUDE_UV * libm::sin(2.0 * PI * RHYTHM_HZ * time + phase);
            }
            data.push(v as f32);
        }
    }
    let samples = Samples::new(channels, len, data).map_err(DatasetError::from)?;
    Ok(EegTrial::new(subject, index, samples, rate, names.clone(), label).map_err(DatasetError::from)?)
}

/// Deterministic in `(spec, seed)`.
pub fn synthesize_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset, SynthError> {
    let per_subject: usize = spec.trials_per_class.iter().sum();
    if spec.subjects == 0 || per_subject == 0 {
        return Err(SynthError::NoTrials);
    }
    let positive = |x: f64| x > 0.0;
    if spec.channels == 0 || !positive(spec.trial_duration_s) || !positive(spec.sampling_rate) {
        return Err(SynthError::BadShape);
    }
    let len = libm::round(spec.trial_duration_s * spec.sampling_rate) as usize;
    if len == 0 {
        return Err(SynthError::BadShape);
    }
    let names: Arc<[String]> = channel_names(spec.channels).into();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = Vec::with_capacity(spec.subjects);
    for s in 0..spec.subjects {
        let subject_id = format!("S{:02}", s + 1);
        let mut labels: Vec<ClassLabel> = Vec::with_capacity(per_subject);
        for (k, &n) in spec.trials_per_class.iter().enumerate() {
            labels.extend(core::iter::repeat_n(ClassLabel(k as u32), n));
        }
        let lead = spec.lead_in.min(spec.trials_per_class[0]);
        // Class-0 labels come first in `labels`, so the lead-in is a prefix.
        labels[lead..].shuffle(&mut rng);
        let trials = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                synth_trial(
                    &mut rng,
                    &subject_id,
                    i as u64,
                    label,
                    spec.channels,
                    len,
                    spec.sampling_rate,
                    &names,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        subjects.push(SubjectPool::new(subject_id, trials)?);
    }
    Ok(Dataset {
        name: spec.name.clone(),
        num_classes: spec.trials_per_class.len().max(2) as u32,
        trial_duration_s: spec.trial_duration_s,
        sampling_rate: spec.sampling_rate,
        channel_names: names,
        subjects,
    })
}

/// Parameters of the synthetic embedding generator.
///
/// A trial whose apparent class is `a` embeds as
///
/// * `a = 0`: `class_scale * p_0 + background_scale * b_s + noise`
/// * `a > 0`: `class_scale * p_a + variant_scale * v_{g,a} + task_background * b_s + noise`
///
/// where `p` are class prototypes, `b_s` a per-subject background direction,
/// `g = s mod groups` the subject's group and `v` a group-specific variant of
/// the task class. With probability `label_noise` the apparent class is a
/// uniformly drawn other class. All directions are unit Gaussian vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub dim: usize,
    pub class_scale: f64,
    pub background_scale: f64,
    pub task_background: f64,
    pub variant_scale: f64,
    pub groups: usize,
    pub noise: f64,
    pub label_noise: f64,
}

impl EmbeddingModel {
    /// Classes far apart, no label noise: nearest-example classification is exact.
    pub fn separable(dim: usize) -> Self {
        Self {
            dim,
            class_scale: 1.0,
            background_scale: 0.1,
            task_background: 0.1,
            variant_scale: 0.1,
            groups: 1,
            noise: 0.02,
            label_noise: 0.0,
        }
    }

    /// Clustered subjects with 20% label noise.
    pub fn clustered(dim: usize) -> Self {
        Self {
            dim,
            class_scale: 1.0,
            background_scale: 3.0,
            task_background: 0.0,
            variant_scale: 3.0,
            groups: 3,
            noise: 0.5,
            label_noise: 0.2,
        }
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    v.into_iter().map(|x| x / norm).collect()
}

/// One vector per trial of `dataset`, keyed by `(subject, trial_index)`.
/// Deterministic in `(dataset, model, seed)`.
pub fn synthesize_embeddings(dataset: &Dataset, model: &EmbeddingModel, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e4be_dd17_0000);
    let k = dataset.num_classes as usize;
    let dim = model.dim.max(1);
    let groups = model.groups.max(1);
    let protos: Vec<Vec<f64>> = (0..k).map(|_| unit_gaussian(&mut rng, dim)).collect();
    let variants: Vec<Vec<Vec<f64>>> = (0..groups)
        .map(|_| (0..k).map(|_| unit_gaussian(&mut rng, dim)).collect())
        .collect();
    let mut table = EmbeddingTable::new();
    for (s, pool) in dataset.subjects.iter().enumerate() {
        let background = unit_gaussian(&mut rng, dim);
        let g = s % groups;
        for trial in pool.trials() {
            let mut apparent = trial.label.index();
            if k > 1 && rng.random::<f64>() < model.label_noise {
                let shift = rng.random_range(1..k);
                apparent = (apparent + shift) % k;
            }
            let v: Vec<f32> = (0..dim)
                .map(|i| {
                    let mut x = model.class_scale * protos[apparent][i];
                    if apparent == 0 {
                        x += model.background_scale * background[i];
                    } else {
                        x += model.variant_scale * variants[g][apparent][i] + model.task_background * background[i];
                    }
                    (x + model.noise * gaussian(&mut rng) / libm::sqrt(dim as f64)) as f32
                })
                .collect();
            table.insert(&pool.subject_id, trial.trial_index, v);
        }
    }
    table
}
