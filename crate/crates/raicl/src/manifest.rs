//! JSON manifests indexing binary trial files.
//!
//! ```json
//! {
//!   "dataset_name": "chsz",
//!   "num_classes": 2,
//!   "trial_duration_s": 4.0,
//!   "sampling_rate": 250.0,
//!   "channel_names": ["FP1-F7", "F7-T3"],
//!   "subjects": [
//!     {"subject_id": "S01", "trials": [{"file": "S01/0.eegt", "trial_index": 0, "label": 0}]}
//!   ]
//! }
//! ```
//!
//! `file` is relative to the manifest's directory. Several entries may share
//! one file; it is read once. `channel_names` is optional and defaults to
//! `CH0`, `CH1`, ...

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use raicl_core::dataset::{Dataset, DatasetError, SubjectPool};
use raicl_core::{ClassLabel, EegTrial, Samples};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trialfile::{self, TrialFileError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_name: String,
    pub num_classes: u32,
    pub trial_duration_s: f64,
    pub sampling_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_names: Option<Vec<String>>,
    pub subjects: Vec<ManifestSubject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub subject_id: String,
    pub trials: Vec<ManifestTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub file: String,
    pub trial_index: u64,
    pub label: ClassLabel,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{file}: {source}")]
    TrialFile {
        file: String,
        #[source]
        source: TrialFileError,
    },
    #[error("{file}: header label {header} disagrees with manifest label {manifest}")]
    LabelMismatch { file: String, header: u32, manifest: u32 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl Manifest {
    pub fn from_path(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        crate::fsutil::write_atomic(path, self.to_json().as_bytes()).map_err(|source| ManifestError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn total_trials(&self) -> usize {
        self.subjects.iter().map(|s| s.trials.len()).sum()
    }

    /// Reads every referenced trial file and builds a validated dataset.
    pub fn load_dataset(&self, base_dir: &Path) -> Result<Dataset, ManifestError> {
        let mut cache: HashMap<&str, (trialfile::TrialHeader, Arc<[f32]>)> = HashMap::new();
        let mut names: Option<Arc<[String]>> = self.channel_names.clone().map(Into::into);
        let mut subjects = Vec::with_capacity(self.subjects.len());
        for subject in &self.subjects {
            let mut trials = Vec::with_capacity(subject.trials.len());
            for entry in &subject.trials {
                let (header, data) = match cache.get(entry.file.as_str()) {
                    Some(hit) => hit.clone(),
                    None => {
                        let (h, d) = trialfile::read(&base_dir.join(&entry.file)).map_err(|source| {
                            ManifestError::TrialFile {
                                file: entry.file.clone(),
                                source,
                            }
                        })?;
                        let hit = (h, Arc::<[f32]>::from(d));
                        cache.insert(&entry.file, hit.clone());
                        hit
                    }
                };
                if header.label != entry.label {
                    return Err(ManifestError::LabelMismatch {
                        file: entry.file.clone(),
                        header: header.label.0,
                        manifest: entry.label.0,
                    });
                }
                let names = match &names {
                    Some(n) => n.clone(),
                    None => {
                        let generated: Arc<[String]> = (0..header.channels).map(|c| format!("CH{c}")).collect();
                        names = Some(generated.clone());
                        generated
                    }
                };
                if names.len() != header.channels as usize {
                    return Err(DatasetError::ChannelCountMismatch {
                        subject: subject.subject_id.clone(),
                        index: entry.trial_index,
                        expected: names.len(),
                        found: header.channels as usize,
                    }
                    .into());
                }
                let samples = Samples::new(header.channels as usize, header.len as usize, data)
                    .map_err(DatasetError::from)?;
                let trial = EegTrial::new(
                    subject.subject_id.clone(),
                    entry.trial_index,
                    samples,
                    header.sampling_rate,
                    names,
                    entry.label,
                )
                .map_err(DatasetError::from)?;
                trials.push(trial);
            }
            subjects.push(SubjectPool::new(subject.subject_id.clone(), trials)?);
        }
        let channel_names = names.unwrap_or_else(|| Arc::from(Vec::new()));
        let dataset = Dataset {
            name: self.dataset_name.clone(),
            num_classes: self.num_classes,
            trial_duration_s: self.trial_duration_s,
            sampling_rate: self.sampling_rate,
            channel_names,
            subjects,
        };
        dataset.validate()?;
        Ok(dataset)
    }
}

/// Loads a manifest and the dataset it indexes.
pub fn load_manifest(path: &Path) -> Result<(Manifest, Dataset), ManifestError> {
    let manifest = Manifest::from_path(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let dataset = manifest.load_dataset(base)?;
    Ok((manifest, dataset))
}

/// Writes one trial file per trial under `dir/<subject>/` plus
/// `dir/manifest.json`, and returns the manifest.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<Manifest, ManifestError> {
    let mut subjects = Vec::with_capacity(dataset.subjects.len());
    for pool in &dataset.subjects {
        let mut trials = Vec::with_capacity(pool.len());
        for t in pool.trials() {
            let file = format!("{}/{:06}.eegt", pool.subject_id, t.trial_index);
            trialfile::write(&dir.join(&file), &t.samples, t.sampling_rate, t.label)
                .map_err(|source| ManifestError::TrialFile { file: file.clone(), source })?;
            trials.push(ManifestTrial {
                file,
                trial_index: t.trial_index,
                label: t.label,
            });
        }
        subjects.push(ManifestSubject {
            subject_id: pool.subject_id.clone(),
            trials,
        });
    }
    let manifest = Manifest {
        dataset_name: dataset.name.clone(),
        num_classes: dataset.num_classes,
        trial_duration_s: dataset.trial_duration_s,
        sampling_rate: dataset.sampling_rate,
        channel_names: Some(dataset.channel_names.to_vec()),
        subjects,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
