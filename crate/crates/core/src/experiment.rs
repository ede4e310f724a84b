//! Sweeps over ring size and depth on one device, repeated runs, and the
//! aggregated table.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::make_ring;
use crate::noise::{resolve_device, DeviceProfile, NoiseError};
use crate::qaoa::{
    derive_seed, optimize_params, optimize_params_with, Backend, BackendMode, OptimizerSettings, QaoaError,
};
use crate::sim::MAX_DENSITY_QUBITS;
use crate::transpile::PassConfig;

/// Largest `p` the fast preset keeps.
pub const FAST_MAX_P: usize = 4;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no rows to emit")]
    EmptyTable,
    #[error(transparent)]
    Device(#[from] NoiseError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mitigation {
    Off,
    On,
}

impl Mitigation {
    pub fn pass_config(self) -> PassConfig {
        match self {
            Mitigation::Off => PassConfig::mitigation_off(),
            Mitigation::On => PassConfig::mitigation_on(),
        }
    }
}

impl fmt::Display for Mitigation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mitigation::Off => "off",
            Mitigation::On => "on",
        })
    }
}

impl FromStr for Mitigation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(Mitigation::Off),
            "on" => Ok(Mitigation::On),
            _ => Err(format!("mitigation must be `on` or `off`, got `{s}`")),
        }
    }
}

fn default_runs() -> usize {
    10
}
fn default_shots() -> usize {
    50_000
}
fn default_mode() -> BackendMode {
    BackendMode::Shots
}
fn default_restarts() -> usize {
    5
}
fn default_max_evals() -> usize {
    400
}
fn default_refine_evals() -> usize {
    60
}

/// One sweep: every ring size in `ring_sizes` at every depth in `p_range`
/// on one device and mitigation setting.
///
/// Each run optimizes the angles on the ideal statevector first
/// (`restarts` starts, `max_evals` each) and then refines them on the
/// device backend for at most `refine_evals` evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ring_sizes: Vec<usize>,
    pub p_range: (usize, usize),
    pub device: String,
    pub mitigation: Mitigation,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub backend_mode: BackendMode,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    /// Device-stage budget; `None` means `2p + 2` (one COBYLA simplex and a step).
    #[serde(default = "default_refine")]
    pub refine_evals: Option<usize>,
}

fn default_refine() -> Option<usize> {
    Some(default_refine_evals())
}

impl ExperimentConfig {
    pub fn new(ring_sizes: Vec<usize>, p_range: (usize, usize), device: &str, mitigation: Mitigation) -> Self {
        Self {
            ring_sizes,
            p_range,
            device: device.to_string(),
            mitigation,
            runs: default_runs(),
            shots: default_shots(),
            seed: 0,
            backend_mode: default_mode(),
            restarts: default_restarts(),
            max_evals: default_max_evals(),
            refine_evals: default_refine(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Desk-scale preset: 3 runs, 5 000 shots, `p <= 4`, exact noisy
    /// expectation, and the minimal device-stage refinement.
    pub fn fast(mut self) -> Self {
        self.runs = 3;
        self.shots = 5_000;
        self.p_range.1 = self.p_range.1.min(FAST_MAX_P);
        self.p_range.0 = self.p_range.0.min(self.p_range.1);
        self.backend_mode = BackendMode::NoisyExact;
        self.restarts = 3;
        self.max_evals = 300;
        self.refine_evals = None;
        self
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.ring_sizes.is_empty() {
            return bad("ring_sizes is empty".into());
        }
        if let Some(&n) = self.ring_sizes.iter().find(|&&n| n < 3) {
            return bad(format!("ring size {n} is below 3"));
        }
        let (lo, hi) = self.p_range;
        if lo == 0 || hi < lo {
            return bad(format!("p_range ({lo}, {hi}) must satisfy 1 <= p_min <= p_max"));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.backend_mode == BackendMode::Shots && self.shots == 0 {
            return bad("shots must be at least 1".into());
        }
        if self.restarts == 0 || self.max_evals == 0 || self.refine_evals == Some(0) {
            return bad("restarts, max_evals and refine_evals must be at least 1".into());
        }
        if self.backend_mode != BackendMode::NoiselessExact {
            if let Some(&n) = self.ring_sizes.iter().find(|&&n| n > MAX_DENSITY_QUBITS) {
                return bad(format!(
                    "ring size {n} exceeds the density-matrix limit of {MAX_DENSITY_QUBITS}"
                ));
            }
        }
        Ok(())
    }

    fn backend(&self, profile: &DeviceProfile, seed: u64) -> Backend {
        let cfg = self.mitigation.pass_config();
        match self.backend_mode {
            BackendMode::NoiselessExact => Backend {
                mode: BackendMode::NoiselessExact,
                profile: Some(profile.clone()),
                transpile_cfg: Some(cfg),
                shots: None,
                seed,
            },
            BackendMode::NoisyExact => Backend::noisy_exact(profile.clone(), cfg).with_seed(seed),
            BackendMode::Shots => Backend::shots(Some((profile.clone(), cfg)), self.shots, seed),
        }
    }
}

/// Outcome of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub n: usize,
    pub p: usize,
    pub device: String,
    pub mitigation: Mitigation,
    pub run: usize,
    pub seed: u64,
    pub ratio: f64,
    pub f_star: f64,
    /// Exact expectation at the final parameters (same as `f_star` unless sampling).
    pub exact_f_star: f64,
    pub exact_ratio: f64,
    pub success_prob: f64,
    pub depth: usize,
    pub nonlocal: usize,
    pub evals: usize,
    pub budget_exhausted: bool,
    pub params: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: usize,
    pub device: String,
    pub mitigation: Mitigation,
    pub mean_ratio: f64,
    /// Standard error of `mean_ratio` (sample deviation over `sqrt(runs)`).
    pub std_error: f64,
    pub mean_fstar: f64,
    pub mean_success_prob: f64,
    pub mean_depth: f64,
    pub mean_nonlocal: f64,
    pub runs: usize,
    /// Fewer than two successful runs, so `std_error` is reported as 0.
    pub degenerate: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub records: Vec<RunRecord>,
}

impl SweepOutput {
    /// Per-run records as JSON lines.
    pub fn records_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Seed of run `run` of cell `(n, p)`; both mitigation arms share it.
pub fn run_seed(seed: u64, n: usize, p: usize, run: usize) -> u64 {
    derive_seed(seed, ((n as u64) << 40) | ((p as u64) << 24) | run as u64)
}

fn run_once(cfg: &ExperimentConfig, profile: &DeviceProfile, n: usize, p: usize, run: usize) -> RunRecord {
    let seed = run_seed(cfg.seed, n, p, run);
    let mut rec = RunRecord {
        n,
        p,
        device: cfg.device.clone(),
        mitigation: cfg.mitigation,
        run,
        seed,
        ratio: f64::NAN,
        f_star: f64::NAN,
        exact_f_star: f64::NAN,
        exact_ratio: f64::NAN,
        success_prob: f64::NAN,
        depth: 0,
        nonlocal: 0,
        evals: 0,
        budget_exhausted: false,
        params: Vec::new(),
        error: None,
    };
    let outcome = (|| -> Result<_, QaoaError> {
        let g = make_ring(n)?;
        let ideal = optimize_params(&g, p, &Backend::noiseless_exact().with_seed(seed), cfg.restarts, cfg.max_evals)?;
        let settings = OptimizerSettings {
            first_start: Some(ideal.best_params.to_flat()),
            rhobeg: 0.1,
            ..OptimizerSettings::default()
        };
        let budget = cfg.refine_evals.unwrap_or(2 * p + 2);
        let device = optimize_params_with(&g, p, &cfg.backend(profile, seed), 1, budget, &settings)?;
        Ok((ideal.evals, device))
    })();
    match outcome {
        Ok((ideal_evals, r)) => {
            let m = r.metrics.unwrap_or_default();
            rec.ratio = r.ratio;
            rec.f_star = r.f_star;
            rec.exact_f_star = r.exact_f_star;
            rec.exact_ratio = r.exact_f_star / r.c_max;
            rec.success_prob = r.success_prob;
            rec.depth = m.depth;
            rec.nonlocal = m.nonlocal_count;
            rec.evals = ideal_evals + r.evals;
            rec.budget_exhausted = r.budget_exhausted;
            rec.params = r.best_params.to_flat();
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean; 0 for fewer than two samples.
pub fn standard_error(xs: &[f64]) -> f64 {
    let k = xs.len();
    if k < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64;
    (var / k as f64).sqrt()
}

/// Aggregate records into one row per `(n, p, device, mitigation)`, sorted.
pub fn aggregate(records: &[RunRecord]) -> Vec<SweepRow> {
    let mut keys: Vec<(usize, usize, String, Mitigation)> = records
        .iter()
        .map(|r| (r.n, r.p, r.device.clone(), r.mitigation))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(n, p, device, mitigation)| {
            let cell: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.n == n && r.p == p && r.device == device && r.mitigation == mitigation)
                .collect();
            let ok: Vec<&RunRecord> = cell.iter().copied().filter(|r| r.error.is_none()).collect();
            let error = cell.iter().find_map(|r| r.error.clone());
            let col = |f: fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let ratios = col(|r| r.ratio);
            SweepRow {
                n,
                p,
                device,
                mitigation,
                mean_ratio: mean(&ratios),
                std_error: standard_error(&ratios),
                mean_fstar: mean(&col(|r| r.f_star)),
                mean_success_prob: mean(&col(|r| r.success_prob)),
                mean_depth: mean(&col(|r| r.depth as f64)),
                mean_nonlocal: mean(&col(|r| r.nonlocal as f64)),
                runs: ok.len(),
                degenerate: ok.len() < 2,
                error,
            }
        })
        .collect()
}

/// Run every `(n, p)` cell `runs` times. Cell failures are recorded in the
/// row; the sweep carries on.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, ExperimentError> {
    cfg.validate()?;
    let profile = resolve_device(&cfg.device)?;
    let (lo, hi) = cfg.p_range;
    let jobs: Vec<(usize, usize, usize)> = cfg
        .ring_sizes
        .iter()
        .flat_map(|&n| (lo..=hi).flat_map(move |p| (0..cfg.runs).map(move |run| (n, p, run))))
        .collect();
    let mut records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(n, p, run)| run_once(cfg, &profile, n, p, run))
        .collect();
    records.sort_by_key(|r| (r.n, r.p, r.run));
    Ok(SweepOutput {
        rows: aggregate(&records),
        records,
    })
}

pub const TABLE_HEADER: &str = "n,p,device,mitigation,mean_ratio,std_error,mean_fstar,mean_success_prob,depth,nonlocal";

/// CSV table at four decimals, sorted by `(n, p)`.
pub fn emit_table(rows: &[SweepRow]) -> Result<String, ExperimentError> {
    if rows.is_empty() {
        return Err(ExperimentError::EmptyTable);
    }
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (a.n, a.p, &a.device, a.mitigation).cmp(&(b.n, b.p, &b.device, b.mitigation)));
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.n,
            r.p,
            r.device,
            r.mitigation,
            r.mean_ratio,
            r.std_error,
            r.mean_fstar,
            r.mean_success_prob,
            r.mean_depth,
            r.mean_nonlocal
        ));
    }
    Ok(out)
}
