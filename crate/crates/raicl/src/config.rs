//! Layered run configuration.
//!
//! Built-in defaults are overridden by a TOML file, then by
//! `RAICL_<SECTION>_<KEY>` environment variables, then by
//! `--<section>-<key>` flags. Every leaf key gets an environment variable
//! and a flag, derived from the key path.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};
use raicl_core::digest::sha256_hex;
use raicl_core::render::{channel_palette, Normalizer, PaletteMode};
use raicl_core::{ClassLabel, DownsamplePolicy, RenderConfig, Rgb, SelectionConfig, Tier};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::eval::ParseFailurePolicy;
use crate::gateway::BackendConfig;
use crate::templates::DEFAULT_CLASS_NAMES;

pub const ENV_PREFIX: &str = "RAICL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("{origin}: unknown configuration key {key}")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: {key} expects {expected}, got {got:?}")]
    BadValue {
        origin: String,
        key: String,
        expected: &'static str,
        got: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSection {
    pub alpha: f64,
    pub delta: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub stroke_px: u32,
    pub palette: PaletteMode,
    /// `#rrggbb`.
    pub background: String,
    pub draw_labels: bool,
    pub label_font_px: u32,
    pub normalizer: Normalizer,
}

impl Default for RenderSection {
    fn default() -> Self {
        let d = RenderConfig::default();
        Self {
            alpha: d.alpha,
            delta: d.delta,
            width_px: d.width_px,
            height_px: d.height_px,
            stroke_px: d.stroke_px,
            palette: PaletteMode::MachineSeparable,
            background: hex(d.background),
            draw_labels: d.draw_labels,
            label_font_px: d.label_font_px,
            normalizer: d.normalizer,
        }
    }
}

fn hex(c: Rgb) -> String {
    format!("#{:02x}{:02x}{:02x}", c.0, c.1, c.2)
}

pub fn parse_hex_color(s: &str) -> Option<Rgb> {
    let h = s.strip_prefix('#').unwrap_or(s);
    if h.len() != 6 || !h.is_ascii() {
        return None;
    }
    let byte = |i: usize| u8::from_str_radix(&h[i..i + 2], 16).ok();
    Some(Rgb(byte(0)?, byte(2)?, byte(4)?))
}

impl RenderSection {
    pub fn to_render_config(&self, channels: usize) -> Result<RenderConfig, ConfigError> {
        let background = parse_hex_color(&self.background)
            .ok_or_else(|| ConfigError::Invalid(format!("render.background {:?} is not #rrggbb", self.background)))?;
        Ok(RenderConfig {
            alpha: self.alpha,
            delta: self.delta,
            width_px: self.width_px,
            height_px: self.height_px,
            stroke_px: self.stroke_px,
            palette: channel_palette(channels, self.palette),
            background,
            draw_labels: self.draw_labels,
            label_font_px: self.label_font_px,
            normalizer: self.normalizer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSection {
    pub tier: Tier,
    pub class_names: Vec<String>,
    /// Directory of template overrides; empty for the shipped ones.
    pub templates_dir: String,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            tier: Tier::ReasoningExamples,
            class_names: DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            templates_dir: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    File,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub store_dir: String,
    pub url: String,
    pub timeout_s: f64,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            kind: ProviderKind::File,
            store_dir: "embeddings".into(),
            url: "http://127.0.0.1:8765".into(),
            timeout_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub parse_failure: ParseFailurePolicy,
    pub fallback_random: bool,
    /// Subjects to keep; empty keeps all.
    pub subjects: Vec<String>,
    /// `none`, `every_nth_all:N` or `every_nth_of_class:N:K[+K...]`.
    pub downsample: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            parse_failure: ParseFailurePolicy::CountAsWrong,
            fallback_random: false,
            subjects: Vec::new(),
            downsample: "none".into(),
        }
    }
}

pub fn parse_downsample(s: &str) -> Result<DownsamplePolicy, ConfigError> {
    let bad = || ConfigError::Invalid(format!("eval.downsample {s:?} is not none, every_nth_all:N or every_nth_of_class:N:K[+K...]"));
    let parts: Vec<&str> = s.trim().split(':').collect();
    let step = |p: &str| p.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
    match parts.as_slice() {
        ["none"] | [""] => Ok(DownsamplePolicy::None),
        ["every_nth_all", n] => Ok(DownsamplePolicy::EveryNthAll { step: step(n)? }),
        ["every_nth_of_class", n, classes] => {
            let classes = classes
                .split('+')
                .map(|c| c.parse::<u32>().map(ClassLabel).map_err(|_| bad()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DownsamplePolicy::EveryNthOfClass { step: step(n)?, classes })
        }
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSection {
    pub dir: String,
}

impl Default for CacheSection {
    fn default() -> Self {
        Self {
            dir: ".raicl-cache/responses".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub render: RenderSection,
    pub selection: SelectionConfig,
    pub prompt: PromptSection,
    pub backend: BackendConfig,
    pub provider: ProviderSection,
    pub eval: EvalSection,
    pub cache: CacheSection,
}

impl AppConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.render.to_render_config(1)?.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        parse_downsample(&self.eval.downsample)?;
        self.backend.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.provider.timeout_s.is_finite() && self.provider.timeout_s > 0.0) {
            return Err(ConfigError::Invalid("provider.timeout_s must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn templates_dir(&self) -> Option<&Path> {
        (!self.prompt.templates_dir.is_empty()).then(|| Path::new(&self.prompt.templates_dir))
    }
}

const HELP: &[(&str, &str)] = &[
    ("render.alpha", "Image units per normalized amplitude unit"),
    ("render.delta", "Vertical spacing between channel baselines"),
    ("render.width_px", "Image width in pixels"),
    ("render.height_px", "Image height in pixels"),
    ("render.stroke_px", "Stroke width in pixels"),
    ("render.palette", "machine_separable or human_perceptual"),
    ("render.background", "Background color as #rrggbb"),
    ("render.draw_labels", "Draw channel names on the left margin"),
    ("render.label_font_px", "Channel label glyph height"),
    ("render.normalizer", "mad or none"),
    ("selection.shots", "Examples per class"),
    ("selection.strategy", "random, resting_state_anchor, representativeness or representativeness_similarity"),
    ("selection.seed", "Seed for uniform draws"),
    ("prompt.tier", "base, reasoning or reasoning_examples"),
    ("prompt.class_names", "Comma-separated class names, class 0 first"),
    ("prompt.templates_dir", "Directory with template overrides"),
    ("backend.kind", "remote_chat or mock_nearest_support"),
    ("backend.endpoint", "Chat-completions URL"),
    ("backend.model", "Model name sent to the endpoint"),
    ("backend.api_key_env", "Environment variable holding the API key"),
    ("backend.temperature", "Sampling temperature"),
    ("backend.allow_nonzero_temperature", "Permit a temperature other than zero"),
    ("backend.max_retries", "Retries after a retryable failure"),
    ("backend.requests_per_minute", "Request cap per rolling minute, 0 for none"),
    ("backend.timeout_s", "Per-request timeout in seconds"),
    ("backend.backoff_base_ms", "First retry delay"),
    ("backend.backoff_max_ms", "Longest retry delay"),
    ("backend.max_tokens", "Completion token limit, 0 to omit"),
    ("provider.kind", "file or http"),
    ("provider.store_dir", "Embedding store directory"),
    ("provider.url", "Embedding service base URL"),
    ("provider.timeout_s", "Embedding request timeout in seconds"),
    ("eval.parse_failure", "count_as_wrong or exclude"),
    ("eval.fallback_random", "Use random examples when a query has no usable history"),
    ("eval.subjects", "Comma-separated subjects to keep, empty for all"),
    ("eval.downsample", "none, every_nth_all:N or every_nth_of_class:N:K[+K...]"),
    ("cache.dir", "Response cache directory"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    String,
    Integer,
    Float,
    Boolean,
    List,
}

impl ValueKind {
    fn of(v: &Value) -> Self {
        match v {
            Value::Integer(_) => ValueKind::Integer,
            Value::Float(_) => ValueKind::Float,
            Value::Boolean(_) => ValueKind::Boolean,
            Value::Array(_) => ValueKind::List,
            _ => ValueKind::String,
        }
    }

    fn expected(self) -> &'static str {
        match self {
            ValueKind::String => "a string",
            ValueKind::Integer => "an integer",
            ValueKind::Float => "a number",
            ValueKind::Boolean => "true or false",
            ValueKind::List => "a comma-separated list",
        }
    }

    fn placeholder(self) -> &'static str {
        match self {
            ValueKind::String => "STR",
            ValueKind::Integer => "INT",
            ValueKind::Float => "NUM",
            ValueKind::Boolean => "BOOL",
            ValueKind::List => "LIST",
        }
    }

    /// Parses a raw env or flag value.
    pub fn parse(self, raw: &str) -> Option<Value> {
        let raw = raw.trim();
        Some(match self {
            ValueKind::String => Value::String(raw.to_owned()),
            ValueKind::Integer => Value::Integer(raw.parse().ok()?),
            ValueKind::Float => Value::Float(raw.parse().ok().filter(|x: &f64| x.is_finite())?),
            ValueKind::Boolean => Value::Boolean(match raw.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" | "on" => true,
                "false" | "0" | "no" | "off" => false,
                _ => return None,
            }),
            ValueKind::List => Value::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Value::String(s.to_owned()))
                    .collect(),
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySpec {
    pub section: String,
    pub key: String,
    pub kind: ValueKind,
    pub help: &'static str,
}

impl KeySpec {
    pub fn path(&self) -> String {
        format!("{}.{}", self.section, self.key)
    }

    pub fn env_var(&self) -> String {
        format!("{ENV_PREFIX}_{}_{}", self.section, self.key).to_ascii_uppercase()
    }

    pub fn flag(&self) -> String {
        format!("{}-{}", self.section, self.key).replace('_', "-")
    }
}

fn defaults_table() -> Table {
    Table::try_from(AppConfig::default()).expect("defaults serialize to TOML")
}

/// Every leaf key, in declaration order.
pub fn key_specs() -> Vec<KeySpec> {
    let mut out = Vec::new();
    for (section, v) in defaults_table() {
        let Value::Table(t) = v else { continue };
        for (key, leaf) in t {
            let path = format!("{section}.{key}");
            let help = HELP.iter().find(|(k, _)| *k == path).map(|(_, h)| *h).unwrap_or("");
            out.push(KeySpec {
                section: section.clone(),
                key,
                kind: ValueKind::of(&leaf),
                help,
            });
        }
    }
    out
}

/// Where a key's final value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Default,
    File(PathBuf),
    Env(String),
    Flag(String),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => f.write_str("default"),
            Source::File(p) => write!(f, "file {}", p.display()),
            Source::Env(v) => write!(f, "env {v}"),
            Source::Flag(n) => write!(f, "flag --{n}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: AppConfig,
    /// Key path to winning source.
    pub sources: BTreeMap<String, Source>,
}

impl Resolved {
    pub fn log_sources(&self) {
        for (key, source) in &self.sources {
            match source {
                Source::Default => tracing::debug!(%key, "config from default"),
                _ => tracing::info!(%key, %source, "config override"),
            }
        }
    }
}

/// Applies the layers in order. `env` looks up a variable by name; `flags`
/// maps key paths to raw flag values.
pub fn resolve(
    file: Option<&Path>,
    env: impl Fn(&str) -> Option<String>,
    flags: &BTreeMap<String, String>,
) -> Result<Resolved, ConfigError> {
    let specs = key_specs();
    let mut table = defaults_table();
    let mut sources: BTreeMap<String, Source> = specs.iter().map(|s| (s.path(), Source::Default)).collect();

    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let parsed: Table = text.parse().map_err(|source| ConfigError::Toml {
            path: path.to_owned(),
            source,
        })?;
        let origin = path.display().to_string();
        for (section, v) in parsed {
            let Value::Table(entries) = v else {
                return Err(ConfigError::UnknownKey { origin, key: section });
            };
            for (key, value) in entries {
                let path_key = format!("{section}.{key}");
                let Some(spec) = specs.iter().find(|s| s.path() == path_key) else {
                    return Err(ConfigError::UnknownKey { origin, key: path_key });
                };
                // TOML integers are accepted where a float is expected.
                let value = match (spec.kind, value) {
                    (ValueKind::Float, Value::Integer(i)) => Value::Float(i as f64),
                    (_, v) => v,
                };
                if ValueKind::of(&value) != spec.kind {
                    return Err(ConfigError::BadValue {
                        origin,
                        key: path_key,
                        expected: spec.kind.expected(),
                        got: value.to_string(),
                    });
                }
                set(&mut table, spec, value);
                sources.insert(path_key, Source::File(path.to_owned()));
            }
        }
    }

    for spec in &specs {
        let var = spec.env_var();
        if let Some(raw) = env(&var) {
            let value = spec.kind.parse(&raw).ok_or_else(|| ConfigError::BadValue {
                origin: format!("env {var}"),
                key: spec.path(),
                expected: spec.kind.expected(),
                got: raw.clone(),
            })?;
            set(&mut table, spec, value);
            sources.insert(spec.path(), Source::Env(var));
        }
    }

    for (path_key, raw) in flags {
        let spec = specs.iter().find(|s| &s.path() == path_key).ok_or_else(|| ConfigError::UnknownKey {
            origin: "flags".into(),
            key: path_key.clone(),
        })?;
        let value = spec.kind.parse(raw).ok_or_else(|| ConfigError::BadValue {
            origin: format!("flag --{}", spec.flag()),
            key: spec.path(),
            expected: spec.kind.expected(),
            got: raw.clone(),
        })?;
        set(&mut table, spec, value);
        sources.insert(spec.path(), Source::Flag(spec.flag()));
    }

    let config: AppConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_owned()))?;
    config.validate()?;
    Ok(Resolved { config, sources })
}

fn set(table: &mut Table, spec: &KeySpec, value: Value) {
    if let Some(Value::Table(section)) = table.get_mut(&spec.section) {
        section.insert(spec.key.clone(), value);
    }
}

/// Adds one global flag per configuration key.
pub fn add_config_flags(mut cmd: Command) -> Command {
    for spec in key_specs() {
        cmd = cmd.arg(
            Arg::new(spec.path())
                .long(spec.flag())
                .value_name(spec.kind.placeholder())
                .help(format!("{} [env: {}]", spec.help, spec.env_var()))
                .help_heading("Configuration")
                .global(true),
        );
    }
    cmd
}

/// Raw values of the configuration flags present on the command line.
pub fn flags_from_matches(matches: &ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for spec in key_specs() {
        let path = spec.path();
        if let Ok(Some(v)) = matches.try_get_one::<String>(&path) {
            out.insert(path, v.clone());
        }
    }
    out
}
