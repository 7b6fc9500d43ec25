//! Experiment configuration files (TOML).
//!
//! Parsing is strict: unknown keys, keys that do not apply to an
//! experiment's kind and out-of-range values are schema errors reported
//! with the line of the offending table.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use toml::Spanned;

/// Version of the configuration schema and of every artifact layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed; there is deliberately no default.
    pub seed: u64,
    pub name: Option<String>,
    #[serde(default)]
    pub experiment: Vec<Spanned<Experiment>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Solve,
    Apriori,
    Dependence,
    Stability,
    FeynmanKac,
    Validate,
    Refine,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Solve => "solve",
            Kind::Apriori => "apriori",
            Kind::Dependence => "dependence",
            Kind::Stability => "stability",
            Kind::FeynmanKac => "feynman-kac",
            Kind::Validate => "validate",
            Kind::Refine => "refine",
        }
    }

    /// Keys accepted besides `kind`, `id`, `fixture` and `params`.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Kind::Simulate => &["n_paths", "n_steps", "max_dump", "exp_moment"],
            Kind::Solve => &[
                "n_paths", "n_steps", "weight", "solver", "truncated_generator", "oracle_tol", "contraction",
                "residual_factor",
            ],
            Kind::Apriori => &["n_paths", "n_steps", "weight", "solver", "truncated_generator", "c"],
            Kind::Dependence => &["n_paths", "n_steps", "weight", "solver", "deltas", "slope_tol"],
            Kind::Stability => &["n_paths", "n_steps", "weight", "solver", "ns"],
            Kind::FeynmanKac => &[
                "n_paths", "n_steps", "solver", "probes", "probe_t", "growth", "strict", "exit_correction", "fd_nx",
                "max_abs_err", "max_rel_err", "fd_rel_err", "max_truncation_mass", "growth_check", "envelope_samples",
            ],
            Kind::Validate => &["samples", "x_scale", "y_scale", "z_scale"],
            Kind::Refine => &["n_paths", "steps", "weight", "solver"],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCfg {
    pub beta: Option<f64>,
    pub rho: Option<f64>,
    pub rho_bar: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeCfg {
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZTargetCfg {
    ControlVariate,
    Increment,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverCfg {
    /// Polynomial basis degree (default 3).
    pub degree: Option<usize>,
    /// Piecewise-constant basis with this many bins instead of polynomials.
    pub bins: Option<usize>,
    pub scheme: Option<SchemeCfg>,
    pub damping: Option<f64>,
    pub max_inner: Option<usize>,
    pub z_target: Option<ZTargetCfg>,
    pub picard_max: Option<usize>,
    pub picard_tol: Option<f64>,
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationCfg {
    pub n: usize,
    pub r: usize,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExpMomentCfg {
    pub gamma: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthCfg {
    pub k: f64,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub kind: Kind,
    pub id: Option<String>,
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    pub weight: Option<Spanned<WeightCfg>>,
    pub solver: Option<Spanned<SolverCfg>>,
    pub truncated_generator: Option<TruncationCfg>,

    pub max_dump: Option<usize>,
    pub exp_moment: Option<ExpMomentCfg>,

    pub oracle_tol: Option<f64>,
    pub contraction: Option<bool>,
    pub residual_factor: Option<f64>,

    pub c: Option<f64>,

    pub deltas: Option<Vec<f64>>,
    pub slope_tol: Option<f64>,

    pub ns: Option<Vec<usize>>,

    pub probes: Option<Vec<f64>>,
    pub probe_t: Option<f64>,
    pub growth: Option<GrowthCfg>,
    pub strict: Option<bool>,
    pub exit_correction: Option<bool>,
    pub fd_nx: Option<usize>,
    pub max_abs_err: Option<f64>,
    pub max_rel_err: Option<f64>,
    pub fd_rel_err: Option<f64>,
    pub max_truncation_mass: Option<f64>,
    pub growth_check: Option<bool>,
    pub envelope_samples: Option<usize>,

    pub samples: Option<usize>,
    pub x_scale: Option<f64>,
    pub y_scale: Option<f64>,
    pub z_scale: Option<f64>,

    pub steps: Option<Vec<usize>>,
}

impl Experiment {
    /// Keys present in the table (sorted).
    pub fn present_keys(&self) -> Vec<String> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m.into_iter().filter(|(_, v)| !v.is_null()).map(|(k, _)| k).collect(),
            _ => Vec::new(),
        }
    }
}

/// A schema violation, located by byte span in the source when possible.
#[derive(Debug, Clone)]
pub struct SchemaError {
    pub span: Option<Range<usize>>,
    /// Dotted path of the offending field, e.g. `experiment[0].weight`.
    pub field: String,
    pub message: String,
}

impl SchemaError {
    pub fn new(span: Option<Range<usize>>, field: impl Into<String>, message: impl Into<String>) -> Self {
        SchemaError {
            span,
            field: field.into(),
            message: message.into(),
        }
    }

    /// 1-based line of the span start in `src`.
    pub fn line(&self, src: &str) -> Option<usize> {
        self.span.as_ref().map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1)
    }

    /// `file:line: field: message`, omitting parts that are unknown.
    pub fn render(&self, file: &str, src: &str) -> String {
        let loc = match self.line(src) {
            Some(l) => format!("{file}:{l}"),
            None => file.to_string(),
        };
        if self.field.is_empty() {
            format!("{loc}: {}", self.message)
        } else {
            format!("{loc}: {}: {}", self.field, self.message)
        }
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

/// Parses and checks the structure of a configuration (not yet the
/// fixture-dependent values; see `plan`).
pub fn parse(src: &str) -> Result<RunConfig, Vec<SchemaError>> {
    let cfg: RunConfig = toml::from_str(src).map_err(|e| {
        let field = e.span().map(|s| enclosing_table(src, s.start)).unwrap_or_default();
        vec![SchemaError::new(e.span(), field, e.message().trim().to_string())]
    })?;
    let mut errs = Vec::new();
    if cfg.version != SCHEMA_VERSION {
        errs.push(SchemaError::new(None, "version", format!("unsupported schema version {} (expected {SCHEMA_VERSION})", cfg.version)));
    }
    if cfg.experiment.is_empty() {
        errs.push(SchemaError::new(None, "experiment", "at least one [[experiment]] is required"));
    }
    if let Some(n) = &cfg.name {
        if !valid_id(n) {
            errs.push(SchemaError::new(None, "name", format!("'{n}' must be non-empty and use only letters, digits, '-', '_' or '.'")));
        }
    }
    let mut seen = BTreeMap::new();
    for (j, e) in cfg.experiment.iter().enumerate() {
        let e_span = e.span();
        let span = Some(e_span.clone());
        let e = e.get_ref();
        let field = format!("experiment[{j}]");
        let allowed = e.kind.keys();
        for key in e.present_keys() {
            if !["kind", "id", "fixture", "params"].contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
                errs.push(SchemaError::new(
                    key_line(src, e_span.clone(), &key).or(span.clone()),
                    format!("{field}.{key}"),
                    format!("not a setting of kind '{}' (allowed: {})", e.kind.name(), allowed.join(", ")),
                ));
            }
        }
        if e.fixture.is_none() {
            errs.push(SchemaError::new(span.clone(), format!("{field}.fixture"), "missing fixture id"));
        }
        let id = experiment_id(j, e);
        if !valid_id(&id) {
            errs.push(SchemaError::new(span.clone(), format!("{field}.id"), format!("'{id}' must use only letters, digits, '-', '_' or '.'")));
        } else if let Some(prev) = seen.insert(id.clone(), j) {
            errs.push(SchemaError::new(span.clone(), format!("{field}.id"), format!("duplicate id '{id}' (also experiment[{prev}])")));
        }
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}

/// Byte range of the `key = …` line directly inside the table starting at
/// `table.start` (sub-tables excluded).
fn key_line(src: &str, table: Range<usize>, key: &str) -> Option<Range<usize>> {
    let mut pos = table.start.min(src.len());
    for (n, line) in src[pos..].split_inclusive('\n').enumerate() {
        let t = line.trim_start();
        if n > 0 && t.starts_with('[') {
            return None;
        }
        let rest = t.strip_prefix(key).or_else(|| t.strip_prefix(&format!("\"{key}\"")));
        if rest.is_some_and(|r| r.trim_start().starts_with('=')) {
            return Some(pos..pos + line.len());
        }
        pos += line.len();
    }
    None
}

/// Path of the table containing byte `offset`, e.g. `experiment[1].solver`;
/// empty at top level.
fn enclosing_table(src: &str, offset: usize) -> String {
    let mut n_exp = 0usize;
    let mut path = String::new();
    for line in src[..offset.min(src.len())].lines() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix("[[").and_then(|r| r.split("]]").next()) {
            let name = name.trim();
            if name == "experiment" {
                n_exp += 1;
                path = format!("experiment[{}]", n_exp - 1);
            } else {
                path = name.to_string();
            }
        } else if let Some(name) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            let name = name.trim();
            path = match name.strip_prefix("experiment.") {
                Some(rest) if n_exp > 0 => format!("experiment[{}].{rest}", n_exp - 1),
                _ => name.to_string(),
            };
        }
    }
    path
}

fn valid_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

/// The explicit id, or `<index>-<kind>`.
pub fn experiment_id(j: usize, e: &Experiment) -> String {
    e.id.clone().unwrap_or_else(|| format!("{j:02}-{}", e.kind.name()))
}
