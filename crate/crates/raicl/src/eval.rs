//! Leave-one-subject-out evaluation and ablations.
//!
//! Every held-out subject's trials are rendered, embedded, given a support
//! set drawn from the other subjects (plus the subject's own earlier
//! non-task history), prompted, classified and parsed. Per-subject BCA is
//! averaged without weights.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use raicl_core::dataset::DatasetError;
use raicl_core::digest::sha256_hex;
use raicl_core::metrics::{mean, ConfusionMatrix};
use raicl_core::prompt::{build_prompt, ExampleImage, ImageRole, PromptError, PromptPart};
use raicl_core::selection::{build_support_set, EmbeddingTable, PoolKind, SelectionError, Violation};
use raicl_core::{
    ClassLabel, Dataset, Decision, PromptBundle, PromptConfig, RenderConfig, SelectionConfig, Strategy, Tier, TrialRef,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayStats};
use crate::image::{rasterize, ImageError, WaveformImage};
use crate::provider::{embed_all, EmbeddingProvider, ProviderError};
use crate::templates::TEMPLATE_VERSION;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("need at least two subjects to hold one out, found {0}")]
    TooFewSubjects(usize),
    #[error("leakage guard tripped for {query}: {violations:?}")]
    Leakage { query: TrialRef, violations: Vec<Violation> },
    #[error("ablation needs at least one strategy and one tier")]
    EmptyAxes,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailurePolicy {
    /// Counted in the confusion matrix as an error for the true class.
    #[default]
    CountAsWrong,
    /// Left out of the confusion matrix, still itemized.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub selection: SelectionConfig,
    pub prompt: PromptConfig,
    pub parse_failure: ParseFailurePolicy,
    /// Use a random support set when the query has no usable history.
    pub fallback_random: bool,
}

/// A dataset with every trial rendered and embedded, shared across runs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub render: RenderConfig,
    pub images: HashMap<TrialRef, WaveformImage>,
    pub table: EmbeddingTable,
    pub by_digest: HashMap<String, Arc<[f32]>>,
    pub provider_id: String,
    pub model_id: String,
}

pub fn render_all(dataset: &Dataset, render: &RenderConfig) -> Result<Vec<WaveformImage>, ImageError> {
    let trials: Vec<_> = dataset.subjects.iter().flat_map(|p| p.trials()).collect();
    trials.par_iter().map(|t| rasterize(t, render)).collect()
}

/// Renders and embeds every trial. Lookup misses are reported together.
pub fn prepare(dataset: Dataset, render: &RenderConfig, provider: &dyn EmbeddingProvider) -> Result<Prepared, EvalError> {
    dataset.validate()?;
    let images = render_all(&dataset, render)?;
    let embeddings = embed_all(&images, provider)?;
    let mut table = EmbeddingTable::new();
    let mut by_digest = HashMap::new();
    let mut by_ref = HashMap::with_capacity(images.len());
    for (im, e) in images.into_iter().zip(embeddings) {
        table.insert(&im.source.subject_id, im.source.trial_index, e.vector.clone());
        by_digest.insert(e.source_digest, Arc::from(e.vector));
        by_ref.insert(im.source.clone(), im);
    }
    Ok(Prepared {
        dataset,
        render: render.clone(),
        images: by_ref,
        table,
        by_digest,
        provider_id: provider.provider_id().to_owned(),
        model_id: provider.model_id().to_owned(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Label,
    ParseFailure,
    /// No support set could be built; not sent.
    Skipped,
    /// The backend call failed.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub trial_index: u64,
    pub true_label: ClassLabel,
    pub predicted: Option<ClassLabel>,
    pub outcome: Outcome,
    pub from_cache: bool,
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_digest: Option<String>,
    pub support: Vec<TrialRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub predictions: Vec<Prediction>,
    pub confusion: ConfusionMatrix,
    /// `None` when a class has no evaluated trial for this subject.
    pub bca: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Unweighted mean of the defined per-subject BCAs, in percent.
    pub mean_bca: Option<f64>,
    pub subjects_scored: usize,
    pub evaluated: usize,
    pub correct: usize,
    pub parse_failures: usize,
    pub fallbacks: usize,
    pub skipped: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub bundles_checked: usize,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub dataset: String,
    pub strategy: Strategy,
    pub tier: Tier,
    pub shots: usize,
    pub seed: u64,
    pub backend_id: String,
    pub provider_id: String,
    pub model_id: String,
    pub template_version: String,
    pub template_digest: String,
    pub render_digest: String,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub subjects: Vec<SubjectReport>,
    pub aggregate: Aggregate,
    pub gateway: GatewayStats,
    pub audit: AuditSummary,
    /// Externally computed baselines (name to mean BCA) merged for comparison.
    pub baselines: BTreeMap<String, f64>,
}

/// Post-hoc leakage scan of an issued bundle: no task-class image from the
/// held-out subject and no non-task image of it at or after the query.
pub fn audit_bundle(bundle: &PromptBundle, query: &TrialRef) -> Vec<String> {
    let mut out = Vec::new();
    for part in &bundle.parts {
        let PromptPart::Image {
            role: ImageRole::Example { .. },
            source: Some(src),
            label,
            ..
        } = part
        else {
            continue;
        };
        if src.subject_id != query.subject_id {
            continue;
        }
        match label {
            Some(l) if l.is_non_task() => {
                if src.trial_index >= query.trial_index {
                    out.push(format!("{query}: non-task example {src} is not before the query"));
                }
            }
            _ => out.push(format!("{query}: task-class example {src} comes from the held-out subject")),
        }
    }
    out
}

struct TrialRun {
    prediction: Prediction,
    audit: Option<Vec<String>>,
}

fn history_shortfall(e: &SelectionError) -> bool {
    matches!(
        e,
        SelectionError::EmptyHistoricalPool(_)
            | SelectionError::InsufficientPool {
                kind: PoolKind::History,
                ..
            }
    )
}

fn run_trial(
    prepared: &Prepared,
    settings: &EvalSettings,
    gateway: &Gateway,
    query: TrialRef,
    label: ClassLabel,
) -> Result<TrialRun, EvalError> {
    let blank = |outcome, detail: String| Prediction {
        trial_index: query.trial_index,
        true_label: label,
        predicted: None,
        outcome,
        from_cache: false,
        fallback: false,
        prompt_digest: None,
        support: Vec::new(),
        detail: Some(detail),
    };

    let mut fallback = false;
    let support = if settings.prompt.tier.needs_examples() {
        let built = match build_support_set(&prepared.dataset, &query, &prepared.table, &settings.selection) {
            Err(e) if history_shortfall(&e) && settings.fallback_random => {
                fallback = true;
                let random = SelectionConfig {
                    strategy: Strategy::Random,
                    ..settings.selection
                };
                build_support_set(&prepared.dataset, &query, &prepared.table, &random)
            }
            other => other,
        };
        match built {
            Ok(set) => {
                let violations = set.violations();
                if !violations.is_empty() {
                    return Err(EvalError::Leakage { query, violations });
                }
                Some(set)
            }
            Err(e) => {
                return Ok(TrialRun {
                    prediction: blank(Outcome::Skipped, e.to_string()),
                    audit: None,
                })
            }
        }
    } else {
        None
    };

    let examples: Option<Vec<ExampleImage>> = support.as_ref().map(|set| {
        set.entries
            .iter()
            .map(|e| ExampleImage {
                label: e.label,
                source: e.source.clone(),
                png: prepared.images[&e.source].png_bytes.clone(),
            })
            .collect()
    });
    let query_png = prepared.images[&query].png_bytes.clone();
    let bundle = build_prompt(&settings.prompt, examples.as_deref(), query_png, Some(query.clone()))?;
    let audit = audit_bundle(&bundle, &query);
    let support_refs: Vec<TrialRef> = support.map(|s| s.entries.into_iter().map(|e| e.source).collect()).unwrap_or_default();

    let prediction = match gateway.classify(&bundle, &settings.prompt.class_names) {
        Ok(resp) => {
            let (predicted, outcome, detail) = match resp.decision {
                Decision::Label { label } => (Some(label), Outcome::Label, None),
                Decision::ParseFailure { raw } => (None, Outcome::ParseFailure, Some(truncate(&raw, 200))),
            };
            Prediction {
                trial_index: query.trial_index,
                true_label: label,
                predicted,
                outcome,
                from_cache: resp.from_cache,
                fallback,
                prompt_digest: Some(bundle.digest.clone()),
                support: support_refs,
                detail,
            }
        }
        Err(e) => {
            tracing::error!(query = %query, "classification failed: {e}");
            Prediction {
                fallback,
                prompt_digest: Some(bundle.digest.clone()),
                support: support_refs,
                ..blank(Outcome::Error, e.to_string())
            }
        }
    };
    Ok(TrialRun {
        prediction,
        audit: Some(audit),
    })
}

fn truncate(s: &str, max_chars: usize) -> String {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_owned(),
    }
}

/// Snapshot of everything that determines a run's predictions.
pub fn config_snapshot(prepared: &Prepared, settings: &EvalSettings, gateway: &Gateway) -> serde_json::Value {
    serde_json::json!({
        "dataset": prepared.dataset.name,
        "render": prepared.render,
        "selection": settings.selection,
        "prompt": settings.prompt,
        "parse_failure": settings.parse_failure,
        "fallback_random": settings.fallback_random,
        "backend": gateway.config(),
        "embedding": {"provider_id": prepared.provider_id, "model_id": prepared.model_id},
    })
}

pub fn run_loso(prepared: &Prepared, settings: &EvalSettings, gateway: &Gateway) -> Result<EvalReport, EvalError> {
    let ds = &prepared.dataset;
    if ds.subjects.len() < 2 {
        return Err(EvalError::TooFewSubjects(ds.subjects.len()));
    }
    let prompt = settings.prompt.clone().normalized()?;
    let settings = EvalSettings {
        prompt,
        ..settings.clone()
    };
    let stats_before = gateway.stats();
    let k = ds.num_classes as usize;
    let mut subjects = Vec::with_capacity(ds.subjects.len());
    let mut audit = AuditSummary::default();
    let mut agg = Aggregate::default();

    for pool in &ds.subjects {
        let runs: Vec<TrialRun> = pool
            .trials()
            .par_iter()
            .map(|t| run_trial(prepared, &settings, gateway, t.reference(), t.label))
            .collect::<Result<_, _>>()?;
        let mut confusion = ConfusionMatrix::new(k);
        let mut predictions = Vec::with_capacity(runs.len());
        for run in runs {
            if let Some(v) = run.audit {
                audit.bundles_checked += 1;
                audit.violations.extend(v);
            }
            let p = run.prediction;
            agg.fallbacks += p.fallback as usize;
            match p.outcome {
                Outcome::Label => {
                    confusion.record(p.true_label, p.predicted).expect("labels validated with dataset");
                    agg.evaluated += 1;
                    agg.correct += (p.predicted == Some(p.true_label)) as usize;
                }
                Outcome::ParseFailure => {
                    agg.parse_failures += 1;
                    if settings.parse_failure == ParseFailurePolicy::CountAsWrong {
                        confusion.record(p.true_label, None).expect("labels validated with dataset");
                        agg.evaluated += 1;
                    }
                }
                Outcome::Skipped => agg.skipped += 1,
                Outcome::Error => agg.errors += 1,
            }
            predictions.push(p);
        }
        let bca = confusion.bca().ok();
        subjects.push(SubjectReport {
            subject_id: pool.subject_id.clone(),
            predictions,
            confusion,
            bca,
        });
    }
    let scored: Vec<f64> = subjects.iter().filter_map(|s| s.bca).collect();
    agg.mean_bca = mean(&scored);
    agg.subjects_scored = scored.len();

    let after = gateway.stats();
    let config = config_snapshot(prepared, &settings, gateway);
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: ds.name.clone(),
        strategy: settings.selection.strategy,
        tier: settings.prompt.tier,
        shots: settings.selection.shots,
        seed: settings.selection.seed,
        backend_id: gateway.config().backend_id(),
        provider_id: prepared.provider_id.clone(),
        model_id: prepared.model_id.clone(),
        template_version: TEMPLATE_VERSION.to_owned(),
        template_digest: settings.prompt.template_digest(),
        render_digest: prepared.render.digest(),
        config_digest: sha256_hex(config.to_string().as_bytes()),
        config,
        subjects,
        aggregate: agg,
        gateway: GatewayStats {
            network_calls: after.network_calls - stats_before.network_calls,
            cache_hits: after.cache_hits - stats_before.cache_hits,
            retries: after.retries - stats_before.retries,
            refreshes: after.refreshes - stats_before.refreshes,
        },
        audit,
        baselines: BTreeMap::new(),
    })
}

/// Evaluates the Cartesian product `strategies x tiers`, strategy-major,
/// sharing the prepared data and the gateway (and so its cache).
pub fn run_ablation(
    prepared: &Prepared,
    base: &EvalSettings,
    strategies: &[Strategy],
    tiers: &[Tier],
    gateway: &Gateway,
) -> Result<Vec<EvalReport>, EvalError> {
    if strategies.is_empty() || tiers.is_empty() {
        return Err(EvalError::EmptyAxes);
    }
    let mut out = Vec::with_capacity(strategies.len() * tiers.len());
    for &strategy in strategies {
        for &tier in tiers {
            let mut s = base.clone();
            s.selection.strategy = strategy;
            s.prompt.tier = tier;
            tracing::info!(%strategy, %tier, "ablation run");
            out.push(run_loso(prepared, &s, gateway)?);
        }
    }
    Ok(out)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per prediction.
    pub fn predictions_csv(&self) -> String {
        let mut s = String::from(
            "subject_id,trial_index,true_label,predicted,outcome,correct,from_cache,fallback,prompt_digest,support\n",
        );
        for subj in &self.subjects {
            for p in &subj.predictions {
                let support: Vec<String> = p.support.iter().map(|r| r.to_string()).collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    csv(&subj.subject_id),
                    p.trial_index,
                    p.true_label.0,
                    p.predicted.map(|l| l.0.to_string()).unwrap_or_default(),
                    outcome_str(p.outcome),
                    p.predicted == Some(p.true_label),
                    p.from_cache,
                    p.fallback,
                    p.prompt_digest.as_deref().unwrap_or(""),
                    csv(&support.join(" ")),
                );
            }
        }
        s
    }
}

fn outcome_str(o: Outcome) -> &'static str {
    match o {
        Outcome::Label => "label",
        Outcome::ParseFailure => "parse_failure",
        Outcome::Skipped => "skipped",
        Outcome::Error => "error",
    }
}

fn csv(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Comparison table across reports. The `system` column lets externally
/// computed baseline rows be appended.
pub fn comparison_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(
        "system,strategy,tier,mean_bca,subjects_scored,evaluated,parse_failures,fallbacks,skipped,errors,network_calls,cache_hits\n",
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            csv(&r.backend_id),
            r.strategy,
            r.tier,
            r.aggregate.mean_bca.map(|b| format!("{b:.4}")).unwrap_or_default(),
            r.aggregate.subjects_scored,
            r.aggregate.evaluated,
            r.aggregate.parse_failures,
            r.aggregate.fallbacks,
            r.aggregate.skipped,
            r.aggregate.errors,
            r.gateway.network_calls,
            r.gateway.cache_hits,
        );
        for (name, bca) in &r.baselines {
            let _ = writeln!(s, "{},,,{bca:.4},,,,,,,,", csv(name));
        }
    }
    s
}
