//! Experiment runner: configs in, result rows out.
//!
//! Every experiment writes a CSV with a fixed header ([`HEADER`]), a JSON
//! metadata sidecar (`<out>.meta.json`) echoing the config and library
//! version, and a timing sidecar (`<out>.timing.csv`) holding wall-clock
//! milliseconds. Wall time is kept out of the main CSV so that repeated runs
//! produce byte-identical results.

mod experiments;
pub mod oracle_check;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{EpOptions, Schedule};
use crate::{Error, Result};

pub use experiments::{run_bpm_experiment, run_clutter_experiment, run_experiment, run_loopy_experiment};
pub use oracle_check::{oracle_check, CheckRow, OracleCheckOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adf,
    Ep,
    Importance,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Adf => "adf",
            Method::Ep => "ep",
            Method::Importance => "importance",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterParams {
    /// True mean; its length sets the dimension.
    #[serde(default = "default_x_true")]
    pub x_true: Vec<f64>,
    #[serde(default = "default_clutter_n")]
    pub n: usize,
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    #[serde(default = "default_clutter_variance")]
    pub clutter_variance: f64,
    /// Sample counts at which the importance sampler is checkpointed.
    #[serde(default = "default_clutter_samples")]
    pub importance_samples: Vec<usize>,
}

impl Default for ClutterParams {
    fn default() -> Self {
        Self {
            x_true: default_x_true(),
            n: default_clutter_n(),
            w: default_w(),
            prior_variance: default_prior_variance(),
            clutter_variance: default_clutter_variance(),
            importance_samples: default_clutter_samples(),
        }
    }
}

fn default_x_true() -> Vec<f64> {
    vec![2.0]
}
fn default_clutter_n() -> usize {
    12
}
fn default_w() -> f64 {
    0.5
}
fn default_prior_variance() -> f64 {
    crate::clutter::DEFAULT_PRIOR_VARIANCE
}
fn default_clutter_variance() -> f64 {
    crate::clutter::DEFAULT_CLUTTER_VARIANCE
}
fn default_clutter_samples() -> Vec<usize> {
    vec![100, 1_000, 10_000]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpmParams {
    /// CSV of feature columns plus `label`; the built-in three-point set
    /// when absent.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub slack: f64,
    #[serde(default = "default_true")]
    pub bias: bool,
    /// Weight dimension used when the dataset is empty.
    #[serde(default = "default_bpm_dim")]
    pub dim: usize,
    /// Prior samples for the importance-sampled Bayes point.
    #[serde(default = "default_bpm_samples")]
    pub importance_samples: usize,
}

impl Default for BpmParams {
    fn default() -> Self {
        Self {
            dataset: None,
            slack: 0.0,
            bias: true,
            dim: default_bpm_dim(),
            importance_samples: default_bpm_samples(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_bpm_dim() -> usize {
    3
}
fn default_bpm_samples() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    /// A network document on disk; the seed only affects random schedules.
    File { path: PathBuf },
    /// A fresh random tree per seed.
    RandomTree { variables: usize, max_cardinality: usize },
    FrustratedTriangle { coupling: f64, bias: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopyParams {
    #[serde(default = "default_network")]
    pub network: NetworkSource,
    /// Damping values to run loopy EP with; the config's EP damping when empty.
    #[serde(default)]
    pub dampings: Vec<f64>,
}

impl Default for LoopyParams {
    fn default() -> Self {
        Self { network: default_network(), dampings: Vec::new() }
    }
}

fn default_network() -> NetworkSource {
    NetworkSource::RandomTree { variables: 8, max_cardinality: 4 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ModelConfig {
    Clutter(ClutterParams),
    Bpm(BpmParams),
    Loopy(LoopyParams),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Clutter(_) => "clutter",
            ModelConfig::Bpm(_) => "bpm",
            ModelConfig::Loopy(_) => "loopy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub ep: EpOptions,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Oracle, Method::Adf, Method::Ep, Method::Importance]
}

fn default_seeds() -> Vec<u64> {
    (1..=20).collect()
}

impl ExperimentConfig {
    /// Desk-scale defaults for an experiment kind.
    pub fn defaults(model: ModelConfig) -> Self {
        let seeds = match model {
            ModelConfig::Clutter(_) => default_seeds(),
            ModelConfig::Bpm(_) => vec![1],
            ModelConfig::Loopy(_) => (1..=5).collect(),
        };
        let ep = EpOptions { tolerance: 1e-6, max_sweeps: 50, ..Default::default() };
        Self { model, methods: default_methods(), ep, seeds, output: None }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        // Fixed orders are checked against the actual term count at run time.
        EpOptions { schedule: Schedule::Sequential, ..self.ep.clone() }.validate(0)?;
        match &self.model {
            ModelConfig::Clutter(p) => {
                if p.x_true.is_empty() {
                    return Err(Error::Config("x_true must have at least one coordinate".into()));
                }
                if self.has(Method::Oracle) && p.n > crate::oracles::MAX_EXACT_OBSERVATIONS {
                    return Err(Error::Config(format!(
                        "n = {} is too large for the exact oracle (limit {}); drop \"oracle\" and compare against importance sampling",
                        p.n,
                        crate::oracles::MAX_EXACT_OBSERVATIONS
                    )));
                }
                if !(0.0..=1.0).contains(&p.w) {
                    return Err(Error::Config(format!("w must lie in [0, 1], got {}", p.w)));
                }
                if p.importance_samples.contains(&0) {
                    return Err(Error::Config("importance sample counts must be positive".into()));
                }
            }
            ModelConfig::Bpm(p) => {
                if p.importance_samples == 0 {
                    return Err(Error::Config("importance_samples must be positive".into()));
                }
                if !(p.slack >= 0.0) {
                    return Err(Error::Config("slack must be non-negative".into()));
                }
            }
            ModelConfig::Loopy(p) => {
                for &g in &p.dampings {
                    if !(g > 0.0 && g <= 1.0) {
                        return Err(Error::Config(format!("damping must lie in (0, 1], got {g}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses `a..b` (inclusive of `b`) or `a..=b`.
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("seed range must look like a..b, got {text:?}"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

/// Parses `sequential`, `random`, `random:<seed>`, or a comma-separated
/// permutation such as `2,0,1`.
pub fn parse_schedule(text: &str) -> Result<Schedule> {
    match text.trim() {
        "sequential" => Ok(Schedule::Sequential),
        "random" => Ok(Schedule::RandomPermutation { seed: 0 }),
        t => {
            if let Some(seed) = t.strip_prefix("random:") {
                let seed = seed.parse().map_err(|_| Error::Config(format!("bad schedule seed in {t:?}")))?;
                return Ok(Schedule::RandomPermutation { seed });
            }
            let order: std::result::Result<Vec<usize>, _> = t.split(',').map(|s| s.trim().parse()).collect();
            order
                .map(|order| Schedule::Fixed { order })
                .map_err(|_| Error::Config(format!("unknown schedule {t:?}")))
        }
    }
}

pub const HEADER: [&str; 14] = [
    "experiment",
    "seed",
    "method",
    "damping",
    "checkpoint",
    "variable",
    "op_tally",
    "evidence_error",
    "mean_error",
    "l1_error",
    "train_error_rate",
    "reference_se",
    "converged",
    "sweeps",
];

/// One output line. `None` is written as `NA`.
///
/// `checkpoint` is the EP sweep, `1` for ADF, the sample count for
/// importance sampling and `0` for the oracle itself. Errors are measured
/// against the exact oracle (clutter, loopy) or the importance-sampled
/// Bayes point (BPM); `reference_se` is the sampler's standard error where
/// a sampled quantity is involved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub method: String,
    pub damping: Option<f64>,
    pub checkpoint: u64,
    pub variable: Option<String>,
    pub op_tally: Option<u64>,
    pub evidence_error: Option<f64>,
    pub mean_error: Option<f64>,
    pub l1_error: Option<f64>,
    pub train_error_rate: Option<f64>,
    pub reference_se: Option<f64>,
    pub converged: Option<bool>,
    pub sweeps: Option<usize>,
    #[serde(skip)]
    pub wall_ms: f64,
}

impl ResultRow {
    pub fn new(experiment: &str, seed: u64, method: &str, checkpoint: u64) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            method: method.into(),
            damping: None,
            checkpoint,
            variable: None,
            op_tally: None,
            evidence_error: None,
            mean_error: None,
            l1_error: None,
            train_error_rate: None,
            reference_se: None,
            converged: None,
            sweeps: None,
            wall_ms: 0.0,
        }
    }

    fn fields(&self) -> Vec<String> {
        fn opt<T: std::fmt::Debug>(v: &Option<T>) -> String {
            v.as_ref().map_or_else(|| "NA".to_string(), |x| format!("{x:?}"))
        }
        vec![
            self.experiment.clone(),
            self.seed.to_string(),
            self.method.clone(),
            opt(&self.damping),
            self.checkpoint.to_string(),
            self.variable.clone().unwrap_or_else(|| "NA".into()),
            opt(&self.op_tally),
            opt(&self.evidence_error),
            opt(&self.mean_error),
            opt(&self.l1_error),
            opt(&self.train_error_rate),
            opt(&self.reference_se),
            opt(&self.converged),
            opt(&self.sweeps),
        ]
    }
}

pub fn write_rows<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(HEADER)?;
    for row in rows {
        out.write_record(row.fields())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_timing<W: Write>(rows: &[ResultRow], mut writer: W) -> Result<()> {
    let mut text = String::from("experiment,seed,method,checkpoint,variable,wall_ms\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{:.3}",
            r.experiment,
            r.seed,
            r.method,
            r.checkpoint,
            r.variable.as_deref().unwrap_or("NA"),
            r.wall_ms
        );
    }
    writer.write_all(text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct Metadata<'a> {
    library: &'static str,
    version: &'static str,
    columns: [&'static str; 14],
    rows: usize,
    config: &'a ExperimentConfig,
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

/// Writes `<out>`, `<out>.meta.json` and `<out>.timing.csv`.
pub fn write_outputs(config: &ExperimentConfig, rows: &[ResultRow], out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_rows(rows, fs::File::create(out)?)?;
    let meta = Metadata {
        library: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        columns: HEADER,
        rows: rows.len(),
        config,
    };
    serde_json::to_writer_pretty(fs::File::create(sidecar(out, ".meta.json"))?, &meta)?;
    write_timing(rows, fs::File::create(sidecar(out, ".timing.csv"))?)?;
    Ok(())
}
