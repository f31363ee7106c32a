//! Support-set construction for retrieval-augmented in-context learning.
//!
//! For a query trial of a held-out subject:
//!
//! * non-task anchors come from the subject's own history (non-task trials
//!   recorded before the query), ranked by distance to the history centroid;
//! * task examples for each class `k >= 1` come from auxiliary subjects: one
//!   medoid per subject, ranked by distance to the query embedding.
//!
//! The four [`Strategy`] variants replace one or both rankings with seeded
//! uniform draws. All random draws for one query come from a single
//! [`query_rng`] stream, consumed class by class in label order.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::geometry::{self, cosine_distance, GeometryError};
use crate::trial::{ClassLabel, EegTrial, TrialRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Every example drawn uniformly from auxiliary subjects.
    Random,
    /// Non-task anchors drawn uniformly from the query subject's history;
    /// task examples drawn uniformly from auxiliary subjects.
    RestingStateAnchor,
    /// Most representative history anchors; task examples drawn uniformly
    /// from the auxiliary per-subject medoids.
    Representativeness,
    /// Most representative history anchors; the task medoids nearest the query.
    RepresentativenessSimilarity,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::RestingStateAnchor,
        Strategy::Representativeness,
        Strategy::RepresentativenessSimilarity,
    ];

    /// Whether non-task anchors come from the query subject's history.
    pub fn uses_history(self) -> bool {
        !matches!(self, Strategy::Random)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::RestingStateAnchor => "resting_state_anchor",
            Strategy::Representativeness => "representativeness",
            Strategy::RepresentativenessSimilarity => "representativeness_similarity",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match norm.as_str() {
            "random" => Ok(Strategy::Random),
            "restingstateanchor" | "anchor" => Ok(Strategy::RestingStateAnchor),
            "representativeness" | "rep" => Ok(Strategy::Representativeness),
            "representativenesssimilarity" | "repsim" => Ok(Strategy::RepresentativenessSimilarity),
            _ => Err(alloc::format!(
                "unknown strategy {s:?} (expected random, resting_state_anchor, representativeness, representativeness_similarity)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Examples per class (`M`).
    pub shots: usize,
    pub strategy: Strategy,
    /// Only consumed by uniform draws.
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            shots: 2,
            strategy: Strategy::RepresentativenessSimilarity,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub source: TrialRef,
    pub label: ClassLabel,
    /// Representativeness or similarity distance for ranked picks; `None`
    /// for uniform draws.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    /// Class 0 first, then 1, 2, ...; ranked picks in ascending score.
    pub entries: Vec<SupportEntry>,
    pub config: SelectionConfig,
    pub query: TrialRef,
    pub num_classes: u32,
}

/// A broken support-set invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A task-class example taken from the held-out subject.
    TaskFromQuerySubject { entry: TrialRef, label: ClassLabel },
    /// A non-task anchor at or after the query.
    FutureAnchor { entry: TrialRef },
    /// Wrong number of entries for a class.
    ClassCount { label: ClassLabel, expected: usize, found: usize },
}

impl SupportSet {
    /// Every invariant violation; empty for a valid set.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for e in &self.entries {
            if e.source.subject_id != self.query.subject_id {
                continue;
            }
            if !e.label.is_non_task() {
                out.push(Violation::TaskFromQuerySubject {
                    entry: e.source.clone(),
                    label: e.label,
                });
            } else if e.source.trial_index >= self.query.trial_index {
                out.push(Violation::FutureAnchor { entry: e.source.clone() });
            }
        }
        for k in 0..self.num_classes {
            let found = self.entries.iter().filter(|e| e.label.0 == k).count();
            if found != self.config.shots {
                out.push(Violation::ClassCount {
                    label: ClassLabel(k),
                    expected: self.config.shots,
                    found,
                });
            }
        }
        out
    }

    pub fn of_class(&self, label: ClassLabel) -> impl Iterator<Item = &SupportEntry> {
        self.entries.iter().filter(move |e| e.label == label)
    }
}

/// Where a short pool was being drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    History,
    AuxiliaryTrials,
    AuxiliaryMedoids,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("no non-task history precedes query {0}")]
    EmptyHistoricalPool(TrialRef),
    #[error("class {label}: {kind:?} pool holds {available} candidates, {needed} needed (short by {})", needed - available)]
    InsufficientPool {
        label: ClassLabel,
        kind: PoolKind,
        needed: usize,
        available: usize,
    },
    #[error("class {0}: no auxiliary subject has a trial of this class")]
    NoContributingSubjects(ClassLabel),
    #[error("no embedding for trial {0}")]
    MissingEmbedding(TrialRef),
    #[error("query trial {0} is not in the dataset")]
    UnknownQuery(TrialRef),
    #[error("shots per class must be at least 1")]
    ZeroShots,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Embedding access by trial.
pub trait EmbeddingLookup {
    fn embedding(&self, subject_id: &str, trial_index: u64) -> Option<&[f32]>;
}

/// In-memory `(subject, trial) -> vector` table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    by_subject: BTreeMap<String, BTreeMap<u64, Vec<f32>>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, subject_id: &str, trial_index: u64, vector: Vec<f32>) {
        self.by_subject
            .entry(String::from(subject_id))
            .or_default()
            .insert(trial_index, vector);
    }

    pub fn len(&self) -> usize {
        self.by_subject.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiplies every stored vector by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        for trials in out.by_subject.values_mut() {
            for v in trials.values_mut() {
                v.iter_mut().for_each(|x| *x *= factor);
            }
        }
        out
    }
}

impl EmbeddingLookup for EmbeddingTable {
    fn embedding(&self, subject_id: &str, trial_index: u64) -> Option<&[f32]> {
        self.by_subject.get(subject_id)?.get(&trial_index).map(Vec::as_slice)
    }
}

/// A trial paired with its embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<'a> {
    pub subject_id: &'a str,
    pub trial_index: u64,
    pub label: ClassLabel,
    pub embedding: &'a [f32],
}

impl<'a> Candidate<'a> {
    pub fn from_trial(trial: &'a EegTrial, lookup: &'a impl EmbeddingLookup) -> Result<Self, SelectionError> {
        let embedding = lookup
            .embedding(&trial.subject_id, trial.trial_index)
            .ok_or_else(|| SelectionError::MissingEmbedding(trial.reference()))?;
        Ok(Self {
            subject_id: &trial.subject_id,
            trial_index: trial.trial_index,
            label: trial.label,
            embedding,
        })
    }

    pub fn reference(&self) -> TrialRef {
        TrialRef::new(self.subject_id, self.trial_index)
    }

    fn entry(&self, score: Option<f64>) -> SupportEntry {
        SupportEntry {
            source: self.reference(),
            label: self.label,
            score,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-query random stream: ChaCha8 seeded with
/// `splitmix64(seed ^ fnv1a(subject) ^ splitmix64(trial_index))`.
pub fn query_rng(seed: u64, query: &TrialRef) -> ChaCha8Rng {
    let mut fnv: u64 = 0xcbf2_9ce4_8422_2325;
    for b in query.subject_id.as_bytes() {
        fnv ^= *b as u64;
        fnv = fnv.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv ^ splitmix64(query.trial_index)))
}

/// `shots` distinct positions drawn uniformly, in draw order.
pub fn draw_uniform<'a>(
    pool: &[Candidate<'a>],
    shots: usize,
    label: ClassLabel,
    kind: PoolKind,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Candidate<'a>>, SelectionError> {
    check_size(pool.len(), shots, label, kind)?;
    Ok(index::sample(rng, pool.len(), shots)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

fn check_size(available: usize, needed: usize, label: ClassLabel, kind: PoolKind) -> Result<(), SelectionError> {
    if available < needed {
        return Err(SelectionError::InsufficientPool {
            label,
            kind,
            needed,
            available,
        });
    }
    Ok(())
}

/// `(position, m_rep)` for every pool member, ascending, lowest position on ties.
pub fn rank_by_representativeness(pool: &[Candidate<'_>]) -> Result<Vec<(usize, f64)>, SelectionError> {
    let c = geometry::centroid(pool.iter().map(|p| p.embedding))?;
    let scores = pool
        .iter()
        .map(|p| geometry::representativeness(p.embedding, &c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(geometry::smallest_k(&scores, pool.len()))
}

/// `(position, m_sim)` for every medoid, ascending, lowest position on ties.
pub fn rank_by_similarity(query: &[f32], medoids: &[Candidate<'_>]) -> Result<Vec<(usize, f64)>, SelectionError> {
    let scores = medoids
        .iter()
        .map(|m| cosine_distance(m.embedding, query))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(geometry::smallest_k(&scores, medoids.len()))
}

/// Non-task anchors.
///
/// `history` is the query subject's prior non-task pool; `auxiliary` holds
/// every auxiliary subject's non-task trials and is only used by
/// [`Strategy::Random`].
pub fn select_nontask_anchors(
    history: &[Candidate<'_>],
    auxiliary: &[Candidate<'_>],
    shots: usize,
    strategy: Strategy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SupportEntry>, SelectionError> {
    let label = ClassLabel::NON_TASK;
    match strategy {
        Strategy::Random => Ok(draw_uniform(auxiliary, shots, label, PoolKind::AuxiliaryTrials, rng)?
            .iter()
            .map(|c| c.entry(None))
            .collect()),
        Strategy::RestingStateAnchor => Ok(draw_uniform(history, shots, label, PoolKind::History, rng)?
            .iter()
            .map(|c| c.entry(None))
            .collect()),
        Strategy::Representativeness | Strategy::RepresentativenessSimilarity => {
            check_size(history.len(), shots, label, PoolKind::History)?;
            let ranked = rank_by_representativeness(history)?;
            Ok(ranked[..shots]
                .iter()
                .map(|&(i, score)| history[i].entry(Some(score)))
                .collect())
        }
    }
}

/// One medoid per auxiliary subject that has class-`label` trials.
///
/// `per_subject` holds each auxiliary subject's class trials in dataset
/// order; empty groups are skipped. The returned score is the medoid's
/// distance to its subject's class centroid.
pub fn auxiliary_medoids<'a>(
    per_subject: &[Vec<Candidate<'a>>],
    label: ClassLabel,
) -> Result<Vec<(Candidate<'a>, f64)>, SelectionError> {
    let mut out = Vec::new();
    for group in per_subject.iter().filter(|g| !g.is_empty()) {
        let c = geometry::centroid(group.iter().map(|g| g.embedding))?;
        let m = geometry::medoid(group.iter().map(|g| g.embedding))?;
        let score = geometry::representativeness(group[m].embedding, &c)?;
        out.push((group[m], score));
    }
    if out.is_empty() {
        return Err(SelectionError::NoContributingSubjects(label));
    }
    Ok(out)
}

/// Task-class examples for one class.
///
/// `medoids` is the per-subject medoid pool, `auxiliary` every auxiliary
/// class-`label` trial.
pub fn select_task_examples(
    query: &[f32],
    medoids: &[Candidate<'_>],
    auxiliary: &[Candidate<'_>],
    label: ClassLabel,
    shots: usize,
    strategy: Strategy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SupportEntry>, SelectionError> {
    match strategy {
        Strategy::Random | Strategy::RestingStateAnchor => {
            Ok(draw_uniform(auxiliary, shots, label, PoolKind::AuxiliaryTrials, rng)?
                .iter()
                .map(|c| c.entry(None))
                .collect())
        }
        Strategy::Representativeness => Ok(draw_uniform(medoids, shots, label, PoolKind::AuxiliaryMedoids, rng)?
            .iter()
            .map(|c| c.entry(None))
            .collect()),
        Strategy::RepresentativenessSimilarity => {
            check_size(medoids.len(), shots, label, PoolKind::AuxiliaryMedoids)?;
            let ranked = rank_by_similarity(query, medoids)?;
            Ok(ranked[..shots]
                .iter()
                .map(|&(i, score)| medoids[i].entry(Some(score)))
                .collect())
        }
    }
}

/// Builds the support set for `query`: every other subject in `dataset` is
/// auxiliary.
pub fn build_support_set(
    dataset: &Dataset,
    query: &TrialRef,
    embeddings: &impl EmbeddingLookup,
    config: &SelectionConfig,
) -> Result<SupportSet, SelectionError> {
    if config.shots == 0 {
        return Err(SelectionError::ZeroShots);
    }
    let shots = config.shots;
    let strategy = config.strategy;
    let pool = dataset
        .subject(&query.subject_id)
        .ok_or_else(|| SelectionError::UnknownQuery(query.clone()))?;
    let query_trial = pool
        .get(query.trial_index)
        .ok_or_else(|| SelectionError::UnknownQuery(query.clone()))?;
    let auxiliary: Vec<_> = dataset
        .subjects
        .iter()
        .filter(|p| p.subject_id != query.subject_id)
        .collect();

    let mut rng = query_rng(config.seed, query);
    let mut entries = Vec::with_capacity(shots * dataset.num_classes as usize);

    // Non-task anchors.
    let history = if strategy.uses_history() {
        let raw = pool.historical_pool(query.trial_index);
        if raw.is_empty() {
            return Err(SelectionError::EmptyHistoricalPool(query.clone()));
        }
        raw.into_iter()
            .map(|t| Candidate::from_trial(t, embeddings))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let aux_non_task = if strategy.uses_history() {
        Vec::new()
    } else {
        class_candidates(&auxiliary, ClassLabel::NON_TASK, embeddings)?
            .into_iter()
            .flatten()
            .collect()
    };
    entries.extend(select_nontask_anchors(&history, &aux_non_task, shots, strategy, &mut rng)?);

    // One block per task class.
    let query_embedding = match strategy {
        Strategy::RepresentativenessSimilarity => Candidate::from_trial(query_trial, embeddings)?.embedding,
        _ => &[][..],
    };
    for k in 1..dataset.num_classes {
        let label = ClassLabel(k);
        let per_subject = class_candidates(&auxiliary, label, embeddings)?;
        let medoids: Vec<Candidate<'_>> = match strategy {
            Strategy::Representativeness | Strategy::RepresentativenessSimilarity => auxiliary_medoids(&per_subject, label)?
                .into_iter()
                .map(|(c, _)| c)
                .collect(),
            _ => Vec::new(),
        };
        let all: Vec<Candidate<'_>> = match strategy {
            Strategy::Random | Strategy::RestingStateAnchor => per_subject.into_iter().flatten().collect(),
            _ => Vec::new(),
        };
        entries.extend(select_task_examples(query_embedding, &medoids, &all, label, shots, strategy, &mut rng)?);
    }

    Ok(SupportSet {
        entries,
        config: *config,
        query: query.clone(),
        num_classes: dataset.num_classes,
    })
}

fn class_candidates<'a, L: EmbeddingLookup>(
    subjects: &[&'a crate::dataset::SubjectPool],
    label: ClassLabel,
    embeddings: &'a L,
) -> Result<Vec<Vec<Candidate<'a>>>, SelectionError> {
    subjects
        .iter()
        .map(|p| {
            p.trials()
                .iter()
                .filter(|t| t.label == label)
                .map(|t| Candidate::from_trial(t, embeddings))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SubjectPool;
    use crate::trial::Samples;
    use alloc::vec;

    fn cand<'a>(subject: &'a str, index: u64, label: u32, e: &'a [f32]) -> Candidate<'a> {
        Candidate {
            subject_id: subject,
            trial_index: index,
            label: ClassLabel(label),
            embedding: e,
        }
    }

    fn rng() -> ChaCha8Rng {
        query_rng(1, &TrialRef::new("t", 9))
    }

    #[test]
    fn anchor_nearest_centroid_wins() {
        // e1 sits on the centroid of {e1, e2, e3}.
        let e1 = [1.0f32, 1.0];
        let e2 = [1.0f32, 0.2];
        let e3 = [0.2f32, 1.0];
        let history = [cand("t", 0, 0, &e1), cand("t", 1, 0, &e2), cand("t", 2, 0, &e3)];
        let out = select_nontask_anchors(&history, &[], 1, Strategy::Representativeness, &mut rng()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, TrialRef::new("t", 0));
        assert!(out[0].score.unwrap() < 1e-12);
    }

    #[test]
    fn pool_equal_to_shots_takes_everything() {
        let e1 = [1.0f32, 0.0];
        let e2 = [0.0f32, 1.0];
        let history = [cand("t", 0, 0, &e1), cand("t", 1, 0, &e2)];
        let out = select_nontask_anchors(&history, &[], 2, Strategy::RepresentativenessSimilarity, &mut rng()).unwrap();
        let mut idx: Vec<u64> = out.iter().map(|e| e.source.trial_index).collect();
        idx.sort();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn short_pool_reports_shortfall() {
        let e1 = [1.0f32, 0.0];
        let history = [cand("t", 0, 0, &e1)];
        let err = select_nontask_anchors(&history, &[], 3, Strategy::RestingStateAnchor, &mut rng()).unwrap_err();
        assert_eq!(
            err,
            SelectionError::InsufficientPool {
                label: ClassLabel(0),
                kind: PoolKind::History,
                needed: 3,
                available: 1
            }
        );
        assert!(alloc::format!("{err}").contains("short by 2"));
    }

    #[test]
    fn medoid_per_subject() {
        let a = [1.0f32, 0.0];
        let b = [0.0f32, 1.0];
        let c = [0.7f32, 0.7];
        let single = [0.3f32, 0.9];
        let groups = vec![
            vec![cand("s1", 0, 1, &a), cand("s1", 1, 1, &b), cand("s1", 2, 1, &c)],
            vec![],
            vec![cand("s3", 5, 1, &single)],
        ];
        let m = auxiliary_medoids(&groups, ClassLabel(1)).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].0.trial_index, 2);
        assert_eq!(m[1].0.trial_index, 5);
        assert_eq!(
            auxiliary_medoids(&[vec![]], ClassLabel(1)).unwrap_err(),
            SelectionError::NoContributingSubjects(ClassLabel(1))
        );
    }

    #[test]
    fn nearest_medoid_to_query() {
        let q = [1.0f32, 0.0];
        let m1 = [2.0f32, 0.0];
        let m2 = [0.0f32, 1.0];
        let medoids = [cand("a", 0, 1, &m2), cand("b", 0, 1, &m1)];
        let out = select_task_examples(&q, &medoids, &[], ClassLabel(1), 1, Strategy::RepresentativenessSimilarity, &mut rng()).unwrap();
        assert_eq!(out[0].source.subject_id, "b");
        assert_eq!(out[0].score, Some(0.0));
        let all = select_task_examples(&q, &medoids, &[], ClassLabel(1), 2, Strategy::RepresentativenessSimilarity, &mut rng()).unwrap();
        assert_eq!(all[1].source.subject_id, "a");
        assert_eq!(all[1].score, Some(1.0));
    }

    #[test]
    fn strategy_parsing() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("RepSim".parse::<Strategy>().unwrap(), Strategy::RepresentativenessSimilarity);
        assert!("nearest".parse::<Strategy>().is_err());
    }

    fn small_dataset() -> (Dataset, EmbeddingTable) {
        let names: Vec<String> = vec!["a".into()];
        let mut table = EmbeddingTable::new();
        let mut subjects = Vec::new();
        for (s, subject) in ["t", "u", "v"].iter().enumerate() {
            let labels = [0u32, 0, 1, 0, 1, 0];
            let trials = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| {
                    let x = (s * 10 + i) as f32;
                    table.insert(subject, i as u64, vec![1.0 + l as f32 * 5.0, x * 0.1 + 0.5, (i % 3) as f32]);
                    EegTrial::new(*subject, i as u64, Samples::new(1, 2, vec![0.0, 1.0]).unwrap(), 2.0, names.clone(), ClassLabel(l)).unwrap()
                })
                .collect();
            subjects.push(SubjectPool::new(*subject, trials).unwrap());
        }
        let ds = Dataset {
            name: "d".into(),
            num_classes: 2,
            trial_duration_s: 1.0,
            sampling_rate: 2.0,
            channel_names: names.into(),
            subjects,
        };
        (ds, table)
    }

    #[test]
    fn full_set_respects_invariants() {
        let (ds, table) = small_dataset();
        for strategy in Strategy::ALL {
            let cfg = SelectionConfig { shots: 2, strategy, seed: 11 };
            let set = build_support_set(&ds, &TrialRef::new("t", 4), &table, &cfg).unwrap();
            assert_eq!(set.entries.len(), 4);
            assert!(set.violations().is_empty(), "{strategy}: {:?}", set.violations());
            assert_eq!(set.entries[0].label, ClassLabel(0));
            assert_eq!(set.entries[3].label, ClassLabel(1));
            let again = build_support_set(&ds, &TrialRef::new("t", 4), &table, &cfg).unwrap();
            assert_eq!(set, again);
            let from_query = set.of_class(ClassLabel(0)).all(|e| e.source.subject_id == "t");
            assert_eq!(from_query, strategy.uses_history());
        }
    }

    #[test]
    fn empty_history_is_reported() {
        let (ds, table) = small_dataset();
        let cfg = SelectionConfig {
            shots: 1,
            strategy: Strategy::RepresentativenessSimilarity,
            seed: 0,
        };
        assert_eq!(
            build_support_set(&ds, &TrialRef::new("t", 0), &table, &cfg).unwrap_err(),
            SelectionError::EmptyHistoricalPool(TrialRef::new("t", 0))
        );
        let random = SelectionConfig {
            strategy: Strategy::Random,
            ..cfg
        };
        assert!(build_support_set(&ds, &TrialRef::new("t", 0), &table, &random).is_ok());
    }

    #[test]
    fn violations_are_detected() {
        let set = SupportSet {
            entries: vec![
                SupportEntry {
                    source: TrialRef::new("t", 5),
                    label: ClassLabel(0),
                    score: None,
                },
                SupportEntry {
                    source: TrialRef::new("t", 1),
                    label: ClassLabel(1),
                    score: None,
                },
            ],
            config: SelectionConfig {
                shots: 1,
                strategy: Strategy::Random,
                seed: 0,
            },
            query: TrialRef::new("t", 5),
            num_classes: 2,
        };
        let v = set.violations();
        assert_eq!(v.len(), 2);
        assert!(matches!(v[0], Violation::TaskFromQuerySubject { .. }) || matches!(v[1], Violation::TaskFromQuerySubject { .. }));
        assert!(v.iter().any(|x| matches!(x, Violation::FutureAnchor { .. })));
    }
}
