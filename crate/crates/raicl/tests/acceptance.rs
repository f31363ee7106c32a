//! One PASS/FAIL line per acceptance criterion.
//!
//! Run with `cargo test -p raicl --test acceptance -- --nocapture`. Lines are
//! written straight to stdout so they show even without `--nocapture`.
//! `RAICL_BLESS_GOLDEN=1` rewrites the render checksums.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::index;
use rand::{Rng, SeedableRng};

use common::*;
use raicl::eval::{audit_bundle, prepare, run_loso, EvalSettings, ParseFailurePolicy, Prepared};
use raicl::gateway::{BackendConfig, Gateway, ResponseCache, SimClock};
use raicl::image::{decode_rgb, rasterize};
use raicl::provider::FileProvider;
use raicl::store::{EmbeddingStore, IndexKey, StoreMeta};
use raicl::synthetic::synthetic_store;
use raicl::templates::default_prompt_config;
use raicl_core::digest::sha256_hex;
use raicl_core::geometry::{centroid, cosine_distance, medoid};
use raicl_core::prompt::{build_prompt, ExampleImage};
use raicl_core::render::{render_canvas, Normalizer};
use raicl_core::selection::{build_support_set, query_rng, EmbeddingLookup, EmbeddingTable, PoolKind, SelectionError};
use raicl_core::synth::{synthesize_dataset, EmbeddingModel, SynthSpec};
use raicl_core::{
    ClassLabel, ConfusionMatrix, Dataset, EegTrial, RenderConfig, Rgb, Samples, SelectionConfig, Strategy, SubjectPool,
    SupportSet, Tier, TrialRef,
};

const STRATEGIES: [Strategy; 4] = [
    Strategy::Random,
    Strategy::RestingStateAnchor,
    Strategy::Representativeness,
    Strategy::RepresentativenessSimilarity,
];

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// Runs one criterion, prints its line and returns whether it passed.
fn criterion(name: &str, limit: Duration, body: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let timing = format!("{:.1}s of {}s", elapsed.as_secs_f64(), limit.as_secs());
    let (pass, detail) = match result {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; over the time limit")),
        Err(e) => (false, e),
    };
    report(&format!("{} {name}: {detail} ({timing})", if pass { "PASS" } else { "FAIL" }));
    pass
}

// ---------------------------------------------------------------- geometry

fn oracle_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    (1.0 - dot / (nu * nv)).clamp(0.0, 2.0)
}

fn random_vec(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn geometry_criterion() -> Check {
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..10_000 {
        let dim = rng.random_range(1..=64);
        let u = random_vec(&mut rng, dim);
        let v = random_vec(&mut rng, dim);
        let d = cosine_distance(&u, &v).unwrap();
        ensure((0.0..=2.0).contains(&d), || format!("distance {d} out of range"))?;
        ensure(d == cosine_distance(&v, &u).unwrap(), || "asymmetric distance".into())?;
        let oracle = oracle_cosine(&widen(&u), &widen(&v));
        ensure((d - oracle).abs() < 1e-9, || format!("distance {d} vs oracle {oracle}"))?;
        let a = rng.random_range(0.01f32..100.0);
        let b = rng.random_range(0.01f32..100.0);
        let su: Vec<f32> = u.iter().map(|x| a * x).collect();
        let sv: Vec<f32> = v.iter().map(|x| b * x).collect();
        let ds = cosine_distance(&su, &sv).unwrap();
        ensure((d - ds).abs() < 1e-6, || format!("scale changed {d} to {ds}"))?;
        let dw = oracle_cosine(&widen(&u).iter().map(|x| 3.5 * x).collect::<Vec<_>>(), &widen(&v));
        ensure((oracle - dw).abs() < 1e-9, || format!("f64 scale changed {oracle} to {dw}"))?;
        ensure(cosine_distance(&u, &u).unwrap() < 1e-9, || "d(u, u) is not 0".into())?;
        let neg: Vec<f32> = u.iter().map(|x| -x).collect();
        ensure((cosine_distance(&u, &neg).unwrap() - 2.0).abs() < 1e-9, || "d(u, -u) is not 2".into())?;
    }
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let dim = rng.random_range(2..=16);
        let set: Vec<Vec<f32>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
        let c = centroid(set.iter().map(Vec::as_slice)).unwrap();
        for j in 0..dim {
            let mean = set.iter().map(|v| v[j] as f64).sum::<f64>() / n as f64;
            ensure((c.vector[j] - mean).abs() < 1e-12, || format!("centroid {} vs {mean}", c.vector[j]))?;
        }
        // Brute force: every member's distance to the mean, first minimum wins.
        let mean: Vec<f64> = (0..dim)
            .map(|j| set.iter().map(|v| v[j] as f64).sum::<f64>() / n as f64)
            .collect();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, v) in set.iter().enumerate() {
            let d = oracle_cosine(&widen(v), &mean);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        let m = medoid(set.iter().map(Vec::as_slice)).unwrap();
        ensure(m == best, || {
            let dm = oracle_cosine(&widen(&set[m]), &mean);
            format!("medoid {m} ({dm:e}), brute force {best} ({best_d:e}), n {n}, dim {dim}")
        })?;
    }
    Ok("10000 pairs and 1000 sets agree with the oracle".into())
}

// ---------------------------------------------------------- support sets

struct RandomCase {
    dataset: Dataset,
    table: EmbeddingTable,
    shots: usize,
    seed: u64,
    queries: Vec<TrialRef>,
}

/// Small random datasets with file-backed embeddings. Some vectors repeat,
/// exactly or scaled by 2, so ties in every ranking are exercised.
fn random_cases(count: usize) -> Vec<RandomCase> {
    let mut rng = StdRng::seed_from_u64(2);
    let dir = tempfile::tempdir().unwrap();
    let dim = 6;
    (0..count)
        .map(|case| {
            let k: u32 = rng.random_range(2..=3);
            let subjects = rng.random_range(2..=6);
            let names: Arc<[String]> = vec!["CH0".to_string()].into();
            let samples = Samples::new(1, 2, vec![0.0f32, 1.0]).unwrap();
            let mut store = EmbeddingStore::new(StoreMeta {
                provider_id: "file".into(),
                model_id: "random".into(),
                dimension: dim,
            });
            let mut pools = Vec::new();
            for s in 0..subjects {
                let id = format!("P{s}");
                let n = rng.random_range(1..=60);
                let mut idx = rng.random_range(0..3u64);
                let mut trials = Vec::new();
                let mut prev: Option<Vec<f32>> = None;
                for _ in 0..n {
                    let label = if rng.random_bool(0.6) { 0 } else { rng.random_range(1..k) };
                    let v = match (&prev, rng.random_range(0..10)) {
                        (Some(p), 0) => p.clone(),
                        (Some(p), 1) => p.iter().map(|x| 2.0 * x).collect(),
                        _ => random_vec(&mut rng, dim),
                    };
                    let digest = sha256_hex(format!("{case}/{id}/{idx}").as_bytes());
                    store.insert(&digest, v.clone()).unwrap();
                    let key = IndexKey {
                        subject_id: id.clone(),
                        trial_index: idx,
                        config_digest: "acceptance".into(),
                    };
                    store.insert_index(key, &digest).unwrap();
                    trials.push(EegTrial::new(&id, idx, samples.clone(), 2.0, names.clone(), ClassLabel(label)).unwrap());
                    prev = Some(v);
                    idx += rng.random_range(1..=3);
                }
                pools.push(SubjectPool::new(id, trials).unwrap());
            }
            let dataset = Dataset {
                name: format!("random{case}"),
                num_classes: k,
                trial_duration_s: 1.0,
                sampling_rate: 2.0,
                channel_names: names,
                subjects: pools,
            };
            let path = dir.path().join(format!("store{case}"));
            store.save(&path).unwrap();
            let reopened = EmbeddingStore::open(&path).unwrap();
            let mut table = EmbeddingTable::new();
            for pool in &dataset.subjects {
                for t in pool.trials() {
                    let digest = reopened.lookup_index(&pool.subject_id, t.trial_index, "acceptance").unwrap();
                    table.insert(&pool.subject_id, t.trial_index, reopened.get(digest).unwrap().to_vec());
                }
            }
            let all: Vec<TrialRef> = dataset.subjects.iter().flat_map(|p| p.trials()).map(|t| t.reference()).collect();
            let queries = index::sample(&mut rng, all.len(), all.len().min(8))
                .into_iter()
                .map(|i| all[i].clone())
                .collect();
            RandomCase {
                dataset,
                table,
                shots: rng.random_range(1..=3),
                seed: rng.random(),
                queries,
            }
        })
        .collect()
}

/// `(source, label, score)` triples, or an error rendered as a short key.
type Picks = Result<Vec<(TrialRef, ClassLabel, Option<f64>)>, String>;

fn error_key(e: &SelectionError) -> String {
    match e {
        SelectionError::EmptyHistoricalPool(_) => "empty history".into(),
        SelectionError::InsufficientPool {
            label,
            kind,
            needed,
            available,
        } => format!("short {} {kind:?} {needed} {available}", label.0),
        SelectionError::NoContributingSubjects(l) => format!("no subjects {}", l.0),
        other => format!("{other}"),
    }
}

struct Item<'a> {
    trial: &'a EegTrial,
    v: Vec<f64>,
}

fn item<'a>(case: &RandomCase, trial: &'a EegTrial) -> Item<'a> {
    let v = case.table.embedding(&trial.subject_id, trial.trial_index).unwrap();
    Item { trial, v: widen(v) }
}

/// All `m`-subsets of `0..n`.
fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, m, &mut Vec::new(), &mut out);
    out
}

/// The `m` lowest-scoring items by exhaustive subset search: the subset
/// whose ascending `(score, position)` listing is lexicographically least.
fn best_subset(scores: &[f64], m: usize) -> Vec<usize> {
    let key = |s: &[usize]| {
        let mut k: Vec<(f64, usize)> = s.iter().map(|&i| (scores[i], i)).collect();
        k.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        k
    };
    let mut best: Option<Vec<(f64, usize)>> = None;
    for s in subsets(scores.len(), m) {
        let k = key(&s);
        let better = match &best {
            None => true,
            Some(b) => k
                .iter()
                .zip(b)
                .find_map(|(x, y)| match x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)) {
                    std::cmp::Ordering::Equal => None,
                    o => Some(o == std::cmp::Ordering::Less),
                })
                .unwrap_or(false),
        };
        if better {
            best = Some(k);
        }
    }
    best.unwrap().into_iter().map(|(_, i)| i).collect()
}

fn mean_of(items: &[&Item<'_>]) -> Vec<f64> {
    let dim = items[0].v.len();
    (0..dim)
        .map(|j| items.iter().map(|it| it.v[j]).sum::<f64>() / items.len() as f64)
        .collect()
}

fn brute_medoid(items: &[&Item<'_>]) -> usize {
    let c = mean_of(items);
    let mut best = (0, f64::INFINITY);
    for (i, it) in items.iter().enumerate() {
        let d = oracle_cosine(&it.v, &c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Independent support-set construction straight from the definitions.
fn reference_support(case: &RandomCase, query: &TrialRef, strategy: Strategy) -> Picks {
    let m = case.shots;
    let ds = &case.dataset;
    let item = |t| item(case, t);
    let aux: Vec<&SubjectPool> = ds.subjects.iter().filter(|p| p.subject_id != query.subject_id).collect();
    let aux_class = |k: u32| -> Vec<Vec<Item<'_>>> {
        aux.iter()
            .map(|p| p.trials().iter().filter(|t| t.label.0 == k).map(item).collect())
            .collect()
    };
    let mut rng = query_rng(case.seed, query);
    let mut out = Vec::new();
    let pick = |it: &Item<'_>, score: Option<f64>| (it.trial.reference(), it.trial.label, score);
    let short = |k: u32, kind: PoolKind, n: usize| format!("short {k} {kind:?} {m} {n}");

    let own = ds.subject(&query.subject_id).unwrap();
    let history: Vec<Item<'_>> = own
        .trials()
        .iter()
        .filter(|t| t.label.0 == 0 && t.trial_index < query.trial_index)
        .map(item)
        .collect();
    match strategy {
        Strategy::Random => {
            let pool: Vec<Item<'_>> = aux_class(0).into_iter().flatten().collect();
            if pool.len() < m {
                return Err(short(0, PoolKind::AuxiliaryTrials, pool.len()));
            }
            for i in index::sample(&mut rng, pool.len(), m) {
                out.push(pick(&pool[i], None));
            }
        }
        _ => {
            if history.is_empty() {
                return Err("empty history".into());
            }
            if history.len() < m {
                return Err(short(0, PoolKind::History, history.len()));
            }
            if strategy == Strategy::RestingStateAnchor {
                for i in index::sample(&mut rng, history.len(), m) {
                    out.push(pick(&history[i], None));
                }
            } else {
                let refs: Vec<&Item<'_>> = history.iter().collect();
                let c = mean_of(&refs);
                let scores: Vec<f64> = history.iter().map(|h| oracle_cosine(&h.v, &c)).collect();
                for i in best_subset(&scores, m) {
                    out.push(pick(&history[i], Some(scores[i])));
                }
            }
        }
    }

    let q = widen(case.table.embedding(&query.subject_id, query.trial_index).unwrap());
    for k in 1..ds.num_classes {
        let groups = aux_class(k);
        match strategy {
            Strategy::Random | Strategy::RestingStateAnchor => {
                let pool: Vec<Item<'_>> = groups.into_iter().flatten().collect();
                if pool.len() < m {
                    return Err(short(k, PoolKind::AuxiliaryTrials, pool.len()));
                }
                for i in index::sample(&mut rng, pool.len(), m) {
                    out.push(pick(&pool[i], None));
                }
            }
            _ => {
                let medoids: Vec<&Item<'_>> = groups
                    .iter()
                    .filter(|g| !g.is_empty())
                    .map(|g| {
                        let refs: Vec<&Item<'_>> = g.iter().collect();
                        refs[brute_medoid(&refs)]
                    })
                    .collect();
                if medoids.is_empty() {
                    return Err(format!("no subjects {k}"));
                }
                if medoids.len() < m {
                    return Err(short(k, PoolKind::AuxiliaryMedoids, medoids.len()));
                }
                if strategy == Strategy::Representativeness {
                    for i in index::sample(&mut rng, medoids.len(), m) {
                        out.push(pick(medoids[i], None));
                    }
                } else {
                    let scores: Vec<f64> = medoids.iter().map(|md| oracle_cosine(&md.v, &q)).collect();
                    for i in best_subset(&scores, m) {
                        out.push(pick(medoids[i], Some(scores[i])));
                    }
                }
            }
        }
    }
    Ok(out)
}

fn same_picks(a: &Picks, b: &Picks) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => {
            x.len() == y.len()
                && x.iter().zip(y).all(|(p, q)| {
                    p.0 == q.0
                        && p.1 == q.1
                        && match (p.2, q.2) {
                            (None, None) => true,
                            (Some(s), Some(t)) => (s - t).abs() <= 1e-12,
                            _ => false,
                        }
                })
        }
        (Err(x), Err(y)) => x == y,
        _ => false,
    }
}

fn core_picks(set: &Result<SupportSet, SelectionError>) -> Picks {
    match set {
        Ok(s) => Ok(s.entries.iter().map(|e| (e.source.clone(), e.label, e.score)).collect()),
        Err(e) => Err(error_key(e)),
    }
}

fn run_case(case: &RandomCase, query: &TrialRef, strategy: Strategy) -> Result<SupportSet, SelectionError> {
    let cfg = SelectionConfig {
        shots: case.shots,
        strategy,
        seed: case.seed,
    };
    build_support_set(&case.dataset, query, &case.table, &cfg)
}

fn selection_criterion(cases: &[RandomCase]) -> Check {
    let (mut built, mut errors) = (0, 0);
    for case in cases {
        for q in &case.queries {
            for strategy in STRATEGIES {
                let got = core_picks(&run_case(case, q, strategy));
                let want = reference_support(case, q, strategy);
                ensure(same_picks(&got, &want), || {
                    format!("{} {q} {strategy:?}: got {got:?}, reference {want:?}", case.dataset.name)
                })?;
                if got.is_ok() {
                    built += 1;
                } else {
                    errors += 1;
                }
            }
        }
    }
    Ok(format!(
        "{} datasets, {built} support sets and {errors} typed errors match the reference",
        cases.len()
    ))
}

fn leakage_criterion(cases: &[RandomCase]) -> Check {
    let png: Arc<[u8]> = Arc::from(&b"not a real png"[..]);
    let mut checked = 0;
    for case in cases {
        let names: Vec<String> = (0..case.dataset.num_classes).map(|k| format!("CLASS{k}")).collect();
        let prompt = default_prompt_config(Tier::ReasoningExamples, &names);
        for q in &case.queries {
            for strategy in STRATEGIES {
                let Ok(set) = run_case(case, q, strategy) else { continue };
                let v = set.violations();
                ensure(v.is_empty(), || format!("{q} {strategy:?}: {v:?}"))?;
                for e in &set.entries {
                    let truth = case.dataset.trial(&e.source.subject_id, e.source.trial_index).unwrap().label;
                    ensure(truth == e.label, || format!("{q}: {} carries the wrong label", e.source))?;
                    if e.source.subject_id == q.subject_id {
                        ensure(e.label.0 == 0 && e.source.trial_index < q.trial_index, || {
                            format!("{q} {strategy:?}: {} leaks", e.source)
                        })?;
                    }
                }
                for k in 0..case.dataset.num_classes {
                    let n = set.entries.iter().filter(|e| e.label.0 == k).count();
                    ensure(n == case.shots, || format!("{q}: class {k} has {n} entries"))?;
                }
                let examples: Vec<ExampleImage> = set
                    .entries
                    .iter()
                    .map(|e| ExampleImage {
                        label: e.label,
                        source: e.source.clone(),
                        png: png.clone(),
                    })
                    .collect();
                let bundle = build_prompt(&prompt, Some(&examples), png.clone(), Some(q.clone())).unwrap();
                let audit = audit_bundle(&bundle, q);
                ensure(audit.is_empty(), || format!("{q}: {audit:?}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("0 violations in {checked} support sets and prompts"))
}

// ----------------------------------------------------------------- render

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/render_sha256.txt")
}

fn render_criterion() -> Check {
    let ds = synthesize_dataset(&SynthSpec::default(), 7).unwrap();
    let config = RenderConfig::default();
    let trials: Vec<&EegTrial> = ds
        .subjects
        .iter()
        .take(2)
        .flat_map(|p| [0usize, 5, 10, 20, 30].map(|i| &p.trials()[i]))
        .collect();
    let mut lines = String::new();
    for t in &trials {
        let a = rasterize(t, &config).unwrap();
        let b = rasterize(t, &config).unwrap();
        ensure(a.png_bytes == b.png_bytes, || format!("{} renders differently twice", t.reference()))?;
        let (_, _, pixels) = decode_rgb(&a.png_bytes).unwrap();
        ensure(pixels == render_canvas(t, &config).unwrap().as_bytes(), || "PNG does not round-trip".into())?;
        lines.push_str(&format!("{} {}\n", t.reference(), a.digest()));
    }
    let path = golden_path();
    if std::env::var_os("RAICL_BLESS_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &lines).unwrap();
    }
    let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure(golden == lines, || format!("checksums differ from {}:\n{lines}", path.display()))?;

    let worst = layout_error()?;
    ensure(worst <= 0.5, || format!("stroke centre off by {worst:.3} px"))?;
    Ok(format!(
        "{} trials byte-identical and match golden checksums; layout within {worst:.3} px",
        trials.len()
    ))
}

/// Mean row of the pixels painted in `color` in column `x`.
fn stroke_centre(pixels: &[u8], width: u32, height: u32, x: u32, color: Rgb) -> Option<f64> {
    let rows: Vec<u32> = (0..height)
        .filter(|&y| {
            let i = 3 * (y * width + x) as usize;
            pixels[i..i + 3] == [color.0, color.1, color.2]
        })
        .collect();
    (!rows.is_empty()).then(|| rows.iter().map(|&y| y as f64).sum::<f64>() / rows.len() as f64)
}

/// Worst distance between a measured stroke centre and the expected row,
/// over flat channels (offsets) and single channels at several amplitudes.
fn layout_error() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut measure = |rows: Vec<Vec<f32>>, config: &RenderConfig, expected: &dyn Fn(usize, f64) -> f64| {
        let c = rows.len();
        let names: Vec<String> = (0..c).map(|i| format!("CH{i}")).collect();
        let samples = Samples::from_rows(&rows).unwrap();
        let trial = EegTrial::new("L", 0, samples, 16.0, names, ClassLabel(0)).unwrap();
        let canvas = render_canvas(&trial, config).unwrap();
        for (ch, row) in rows.iter().enumerate() {
            for x in [config.width_px / 4, config.width_px / 2, config.width_px - 5] {
                let got = stroke_centre(canvas.as_bytes(), config.width_px, config.height_px, x, config.color(ch))
                    .ok_or_else(|| format!("channel {ch} not drawn at x = {x}"))?;
                worst = worst.max((got - expected(ch, row[0] as f64)).abs());
            }
        }
        Ok::<(), String>(())
    };
    let base = RenderConfig {
        width_px: 160,
        draw_labels: false,
        normalizer: Normalizer::None,
        ..RenderConfig::default()
    };
    for (delta, channels) in [(44.0, 4usize), (30.0, 6), (17.5, 8)] {
        let config = RenderConfig {
            delta,
            height_px: ((channels + 1) as f64 * delta).ceil() as u32,
            ..base.clone()
        };
        let expected = |c: usize, _: f64| delta / 2.0 + delta * c as f64;
        measure(vec![vec![0.0; 16]; channels], &config, &expected)?;
    }
    for alpha in [5.0, 12.0, 28.0] {
        for v in [-0.9f32, -0.35, 0.0, 0.4, 1.0] {
            // A 60 px lane keeps every trace on the canvas.
            let config = RenderConfig {
                alpha,
                delta: 60.0,
                height_px: 120,
                ..base.clone()
            };
            let expected = |_: usize, v: f64| 30.0 + alpha * v;
            measure(vec![vec![v; 16]], &config, &expected)?;
        }
    }
    Ok(worst)
}

// ------------------------------------------------------------ end to end

fn settings(strategy: Strategy, seed: u64) -> EvalSettings {
    EvalSettings {
        selection: SelectionConfig { shots: 2, strategy, seed },
        prompt: default_prompt_config(Tier::ReasoningExamples, &class_names()),
        parse_failure: ParseFailurePolicy::CountAsWrong,
        fallback_random: false,
    }
}

fn prepared(spec: &SynthSpec, render: &RenderConfig, model: &EmbeddingModel, seed: u64) -> (Prepared, Gateway) {
    let ds = synthesize_dataset(spec, seed).unwrap();
    let store = Arc::new(synthetic_store(&ds, render, model, seed).unwrap());
    let prepared = prepare(ds, render, &FileProvider::new(store.clone())).unwrap();
    let gw = Gateway::mock(BackendConfig::default(), store).unwrap();
    (prepared, gw)
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let mut c = 1.0f64;
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= wins {
            tail += c;
        }
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

fn end_to_end_criterion() -> Check {
    let render = RenderConfig {
        width_px: 96,
        height_px: 224,
        label_font_px: 8,
        ..RenderConfig::default()
    };
    let (p, gw) = prepared(&SynthSpec::default(), &render, &EmbeddingModel::separable(16), 11);
    for strategy in STRATEGIES {
        let r = run_loso(&p, &settings(strategy, 11), &gw).unwrap();
        ensure(r.aggregate.mean_bca == Some(100.0), || {
            format!("separable {strategy:?}: mean BCA {:?}", r.aggregate.mean_bca)
        })?;
        ensure(r.audit.violations.is_empty(), || format!("{:?}", r.audit.violations))?;
    }

    let spec = SynthSpec {
        subjects: 9,
        trials_per_class: vec![16, 16],
        channels: 1,
        sampling_rate: 8.0,
        lead_in: 4,
        ..SynthSpec::default()
    };
    let small = RenderConfig {
        width_px: 64,
        height_px: 88,
        label_font_px: 8,
        ..RenderConfig::default()
    };
    let seeds = 20;
    let mut bca = vec![Vec::new(); STRATEGIES.len()];
    for seed in 0..seeds {
        let (p, gw) = prepared(&spec, &small, &EmbeddingModel::clustered(32), seed);
        for (i, strategy) in STRATEGIES.into_iter().enumerate() {
            let r = run_loso(&p, &settings(strategy, seed), &gw).unwrap();
            ensure(r.audit.violations.is_empty(), || format!("{:?}", r.audit.violations))?;
            bca[i].push(r.aggregate.mean_bca.ok_or("no subject scored")?);
        }
    }
    let means: Vec<String> = bca
        .iter()
        .zip(STRATEGIES)
        .map(|(b, s)| format!("{} {:.2}", s.as_str(), b.iter().sum::<f64>() / b.len() as f64))
        .collect();
    let mut tests = Vec::new();
    for i in 0..STRATEGIES.len() - 1 {
        let wins = (0..seeds as usize).filter(|&s| bca[i + 1][s] > bca[i][s]).count();
        let losses = (0..seeds as usize).filter(|&s| bca[i + 1][s] < bca[i][s]).count();
        let p = sign_test(wins, losses);
        let pair = format!("{} > {}", STRATEGIES[i + 1].as_str(), STRATEGIES[i].as_str());
        ensure(p < 0.05, || format!("{pair}: {wins} wins, {losses} losses, p = {p:.4}; means {means:?}"))?;
        tests.push(format!("{pair} {wins}-{losses} p={p:.2e}"));
    }
    Ok(format!(
        "separable BCA 100 for every strategy; clustered means [{}]; {}",
        means.join(", "),
        tests.join("; ")
    ))
}

// -------------------------------------------------------------------- BCA

fn bca_criterion() -> Check {
    let mut rng = StdRng::seed_from_u64(6);
    for _ in 0..50 {
        let k = rng.random_range(2..=5);
        let mut counts: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0..30)).collect()).collect();
        let unparsed: Vec<u64> = (0..k).map(|_| rng.random_range(0..6)).collect();
        for (c, row) in counts.iter_mut().enumerate() {
            if row.iter().sum::<u64>() + unparsed[c] == 0 {
                row[c] = 1;
            }
        }
        let mut cm = ConfusionMatrix::from_counts(counts.clone()).unwrap();
        cm.unparsed = unparsed.clone();
        let recall_sum: f64 = (0..k)
            .map(|c| counts[c][c] as f64 / (counts[c].iter().sum::<u64>() + unparsed[c]) as f64)
            .sum();
        let oracle = 100.0 * recall_sum / k as f64;
        let got = cm.bca().unwrap();
        ensure((got - oracle).abs() < 1e-12, || format!("{counts:?} {unparsed:?}: {got} vs {oracle}"))?;
    }
    for _ in 0..50 {
        let k = rng.random_range(2..=5);
        let per = rng.random_range(1..40u64);
        let mut cm = ConfusionMatrix::new(k);
        for truth in 0..k {
            for _ in 0..per {
                let pred = match rng.random_range(0..=k) {
                    p if p == k => None,
                    p => Some(ClassLabel(p as u32)),
                };
                cm.record(ClassLabel(truth as u32), pred).unwrap();
            }
        }
        let (b, a) = (cm.bca().unwrap(), cm.accuracy().unwrap());
        ensure((b - a).abs() < 1e-12, || format!("balanced matrix: BCA {b}, accuracy {a}"))?;
    }
    Ok("50 random matrices match the oracle; balanced BCA equals accuracy".into())
}

// ---------------------------------------------------------------- gateway

fn gateway_criterion() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let clock = SimClock::new();
    let t = ScriptedTransport::new(&clock, vec![]);
    let gw = remote_gateway(remote_config(), t.clone(), &clock).with_cache(ResponseCache::new(dir.path()));
    let b = bundle(1);
    gw.classify(&b, &class_names()).unwrap();
    let fresh = remote_gateway(remote_config(), t.clone(), &clock).with_cache(ResponseCache::new(dir.path()));
    let hit = fresh.classify(&b, &class_names()).unwrap();
    ensure(hit.from_cache && t.call_count() == 1, || "cached prompt reached the network".into())?;

    let clock = SimClock::new();
    let t = ScriptedTransport::new(&clock, vec![Ok(status(429)), Ok(status(429))]);
    let r = remote_gateway(remote_config(), t.clone(), &clock)
        .classify(&bundle(2), &class_names())
        .unwrap();
    ensure(r.retries == 2 && t.call_times() == vec![0, 1000, 3000], || {
        format!("429 retries at {:?}", t.call_times())
    })?;

    let clock = SimClock::new();
    let cfg = BackendConfig {
        requests_per_minute: 5,
        ..remote_config()
    };
    let t = ScriptedTransport::new(&clock, vec![]);
    let gw = remote_gateway(cfg, t.clone(), &clock);
    for n in 0..17 {
        gw.classify(&bundle(100 + n), &class_names()).unwrap();
        clock.advance(250);
    }
    let times = t.call_times();
    let busiest = (0..times.len())
        .map(|i| times[i..].iter().take_while(|&&x| x < times[i] + 60_000).count())
        .max()
        .unwrap();
    ensure(busiest <= 5, || format!("{busiest} calls within one minute"))?;
    Ok(format!(
        "cache hit made no call; two 429s retried after 1 s and 2 s; at most {busiest} calls per minute"
    ))
}

#[test]
fn acceptance() {
    let mins = |m: u64| Duration::from_secs(60 * m);
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    results.push(criterion("cosine, centroid and medoid", secs(10), geometry_criterion));
    let cases = random_cases(200);
    results.push(criterion("support sets match the reference", secs(60), || {
        selection_criterion(&cases)
    }));
    results.push(criterion("no leakage into support sets or prompts", secs(60), || {
        leakage_criterion(&cases)
    }));
    results.push(criterion("deterministic rendering and layout", secs(60), render_criterion));
    results.push(criterion("end-to-end LOSO on synthetic data", mins(5), end_to_end_criterion));
    results.push(criterion("balanced classification accuracy", secs(10), bca_criterion));
    results.push(criterion("gateway cache, retries and rate cap", secs(10), gateway_criterion));
    let passed = results.iter().filter(|&&p| p).count();
    report(&format!("{passed}/{} criteria passed", results.len()));
    assert_eq!(passed, results.len());
}

#[test]
fn sign_test_matches_known_tails() {
    assert!((sign_test(15, 5) - 0.020_694_732_666_015_625).abs() < 1e-15);
    assert!((sign_test(14, 6) - 0.057_659_149_169_921_875).abs() < 1e-15);
    assert_eq!(sign_test(0, 0), 1.0);
}

#[test]
fn subset_search_breaks_ties_by_position() {
    assert_eq!(best_subset(&[0.3, 0.1, 0.1, 0.2], 2), vec![1, 2]);
    assert_eq!(best_subset(&[0.5, 0.5, 0.5], 2), vec![0, 1]);
    assert_eq!(subsets(5, 3).len(), 10);
}

#[test]
fn random_cases_are_reproducible() {
    let a = random_cases(3);
    let b = random_cases(3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.dataset, y.dataset);
        assert_eq!(x.table, y.table);
        assert_eq!(x.queries, y.queries);
    }
}
