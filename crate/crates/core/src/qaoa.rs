//! The variational loop: objective evaluation on a backend, COBYLA over the
//! 2p angles with restarts, the p=1 grid scan and the closed-form ring values.

use std::cell::RefCell;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};
use std::fmt;
use std::str::FromStr;

use cobyla::{minimize, Func, RhoBeg, StopTols, SuccessStatus};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{build_qaoa_ansatz, CircuitError, CircuitMetrics, QaoaParams};
use crate::graph::{brute_force_maxcut, Graph, GraphError, MaxCutSolution};
use crate::noise::DeviceProfile;
use crate::sim::{
    cost_from_distribution, run_density, run_statevector, run_statevector_active, sample_distribution,
    success_from_distribution, QuantumState, SimError,
};
use crate::transpile::{transpile, PassConfig, TranspileError};

const STREAM_STARTS: u64 = 1 << 40;

#[derive(Debug, Error)]
pub enum QaoaError {
    #[error("invalid backend: {0}")]
    Backend(String),
    #[error("closed-form ring value needs an even ring, got n = {0}")]
    OddRing(usize),
    #[error("QAOA depth p must be at least 1")]
    ZeroDepth,
    #[error("restarts and max_evals must be at least 1")]
    ZeroBudget,
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Transpile(#[from] TranspileError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    NoiselessExact,
    NoisyExact,
    Shots,
}

impl fmt::Display for BackendMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendMode::NoiselessExact => "noiseless_exact",
            BackendMode::NoisyExact => "noisy_exact",
            BackendMode::Shots => "shots",
        })
    }
}

impl FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "noiseless_exact" => Ok(BackendMode::NoiselessExact),
            "noisy_exact" => Ok(BackendMode::NoisyExact),
            "shots" => Ok(BackendMode::Shots),
            _ => Err(format!(
                "unknown backend mode `{s}` (expected noiseless_exact, noisy_exact or shots)"
            )),
        }
    }
}

/// Where objective values come from.
///
/// With a profile and a pass config the ansatz is transpiled onto the
/// device. `noisy_exact` then returns the exact expectation of the noisy
/// state with readout confusion folded in; `shots` samples that state and
/// flips bits with the readout rates. `noiseless_exact` ignores noise even
/// when a profile is present. Without a profile, `shots` samples the ideal
/// virtual state.
#[derive(Debug, Clone, PartialEq)]
pub struct Backend {
    pub mode: BackendMode,
    pub profile: Option<DeviceProfile>,
    pub transpile_cfg: Option<PassConfig>,
    pub shots: Option<usize>,
    pub seed: u64,
}

impl Backend {
    pub fn noiseless_exact() -> Self {
        Self {
            mode: BackendMode::NoiselessExact,
            profile: None,
            transpile_cfg: None,
            shots: None,
            seed: 0,
        }
    }

    pub fn noisy_exact(profile: DeviceProfile, cfg: PassConfig) -> Self {
        Self {
            mode: BackendMode::NoisyExact,
            profile: Some(profile),
            transpile_cfg: Some(cfg),
            shots: None,
            seed: 0,
        }
    }

    pub fn shots(device: Option<(DeviceProfile, PassConfig)>, shots: usize, seed: u64) -> Self {
        let (profile, transpile_cfg) = match device {
            Some((p, c)) => (Some(p), Some(c)),
            None => (None, None),
        };
        Self {
            mode: BackendMode::Shots,
            profile,
            transpile_cfg,
            shots: Some(shots),
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), QaoaError> {
        let bad = |m: &str| Err(QaoaError::Backend(m.to_string()));
        if let Some(cfg) = &self.transpile_cfg {
            cfg.validate()?;
            if self.profile.is_none() {
                return bad("a pass config needs a device profile");
            }
        }
        if self.profile.is_some() && self.transpile_cfg.is_none() && self.mode != BackendMode::NoiselessExact {
            return bad("noisy simulation needs a pass config to make the circuit device-legal");
        }
        match self.mode {
            BackendMode::NoisyExact if self.profile.is_none() => bad("noisy_exact requires a device profile"),
            BackendMode::Shots if self.shots.unwrap_or(0) == 0 => bad("shots mode requires shots >= 1"),
            _ => Ok(()),
        }
    }
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Objective value: exact expectation, or the shot mean in shots mode.
    pub value: f64,
    /// Exact expectation of the same (noisy, readout-confused) distribution.
    pub exact_value: f64,
    /// Probability of an optimal cut: exact, or the shot frequency.
    pub success_prob: f64,
    /// Metrics of the transpiled circuit, when one was transpiled.
    pub metrics: Option<CircuitMetrics>,
}

/// Mix independent per-bit readout confusion into a distribution.
pub fn apply_readout(dist: &mut [f64], readout: &[(f64, f64)]) {
    for (k, &(p01, p10)) in readout.iter().enumerate() {
        if p01 == 0.0 && p10 == 0.0 {
            continue;
        }
        let bit = 1usize << k;
        for x in 0..dist.len() {
            if x & bit != 0 {
                continue;
            }
            let (a, b) = (dist[x], dist[x | bit]);
            dist[x] = a * (1.0 - p01) + b * p10;
            dist[x | bit] = a * p01 + b * (1.0 - p10);
        }
    }
}

/// Seed for evaluation number `stream` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Evaluate the ansatz at `params`. `stream` selects the sampling stream in
/// shots mode so repeated runs see identical noise.
pub fn evaluate(g: &Graph, params: &QaoaParams, backend: &Backend, stream: u64) -> Result<Evaluation, QaoaError> {
    let solution = brute_force_maxcut(g)?;
    evaluate_with(g, &solution, params, backend, stream)
}

fn evaluate_with(
    g: &Graph,
    solution: &MaxCutSolution,
    params: &QaoaParams,
    backend: &Backend,
    stream: u64,
) -> Result<Evaluation, QaoaError> {
    backend.validate()?;
    let n = g.num_vertices();
    let virtual_circuit = build_qaoa_ansatz(g, params, false, false);

    let (mut dist, readout, metrics) = match (&backend.profile, &backend.transpile_cfg) {
        (Some(profile), Some(cfg)) => {
            let r = transpile(&virtual_circuit, profile, cfg)?;
            let targets = r.final_layout.as_slice().to_vec();
            let dist = if backend.mode == BackendMode::NoiselessExact {
                run_statevector_active(&r.circuit)?.distribution(&targets)
            } else {
                run_density(&r.circuit, profile)?.distribution(&targets)
            };
            let readout: Vec<(f64, f64)> = if backend.mode == BackendMode::NoiselessExact {
                Vec::new()
            } else {
                targets
                    .iter()
                    .map(|&q| {
                        let p = profile.qubit(q);
                        (p.p01, p.p10)
                    })
                    .collect()
            };
            (dist, readout, Some(r.metrics_after))
        }
        _ => {
            let targets: Vec<usize> = (0..n).collect();
            (run_statevector(&virtual_circuit)?.distribution(&targets), Vec::new(), None)
        }
    };

    let sampled = if backend.mode == BackendMode::Shots {
        let shots = backend.shots.expect("validated");
        let seed = derive_seed(backend.seed, stream);
        let ro = (!readout.is_empty()).then_some(readout.as_slice());
        Some(sample_distribution(&dist, n, shots, ro, seed)?)
    } else {
        None
    };
    apply_readout(&mut dist, &readout);
    let exact_value = cost_from_distribution(&dist, g);
    let (value, success_prob) = match &sampled {
        Some(counts) => (counts.mean_cost(g)?, counts.success_probability(solution)),
        None => (exact_value, success_from_distribution(&dist, solution)),
    };
    Ok(Evaluation {
        value,
        exact_value,
        success_prob,
        metrics,
    })
}

/// `F_p(gamma, beta)` on `backend`.
pub fn objective(g: &Graph, params: &QaoaParams, backend: &Backend) -> Result<f64, QaoaError> {
    Ok(evaluate(g, params, backend, 0)?.value)
}

/// Per-edge expectation on a ring at p = 1:
/// `(1 + sin(4 beta) sin(gamma) cos(gamma)) / 2`.
pub fn analytic_f1(gamma: f64, beta: f64) -> f64 {
    0.5 * (1.0 + (4.0 * beta).sin() * gamma.sin() * gamma.cos())
}

/// Optimal expectation `n (2p+1)/(2p+2)` on an even ring.
pub fn analytic_ring_fstar(n: usize, p: usize) -> Result<f64, QaoaError> {
    if n % 2 == 1 {
        return Err(QaoaError::OddRing(n));
    }
    Ok(n as f64 * analytic_ring_ratio(p)?)
}

/// Optimal ratio `(2p+1)/(2p+2)`, independent of the ring size.
pub fn analytic_ring_ratio(p: usize) -> Result<f64, QaoaError> {
    if p == 0 {
        return Err(QaoaError::ZeroDepth);
    }
    Ok((2 * p + 1) as f64 / (2 * p + 2) as f64)
}

/// Sampling box for random restarts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRanges {
    /// gamma in [0, pi], beta in [0, pi/2].
    Reduced,
    /// gamma in [0, 2 pi], beta in [0, pi].
    Full,
}

impl ParamRanges {
    fn bounds(self) -> (f64, f64) {
        match self {
            ParamRanges::Reduced => (PI, FRAC_PI_2),
            ParamRanges::Full => (2.0 * PI, PI),
        }
    }
}

impl FromStr for ParamRanges {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reduced" => Ok(ParamRanges::Reduced),
            "full" => Ok(ParamRanges::Full),
            _ => Err(format!("unknown range preset `{s}` (expected reduced or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub ranges: ParamRanges,
    /// Initial simplex size in radians.
    pub rhobeg: f64,
    /// Replaces the ramp start of the first restart.
    pub first_start: Option<Vec<f64>>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            ranges: ParamRanges::Reduced,
            rhobeg: 0.3,
            first_start: None,
        }
    }
}

/// Linear ramp through the known p = 1 optimum: gamma rises and beta falls
/// across layers, and p = 1 gives exactly (pi/4, pi/8).
pub fn ramp_start(p: usize) -> QaoaParams {
    let scale = |k: usize| 2.0 * k as f64 / (p + 1) as f64;
    let gammas = (1..=p).map(|k| FRAC_PI_4 * scale(k)).collect();
    let betas = (1..=p).map(|k| FRAC_PI_8 * scale(p + 1 - k)).collect();
    QaoaParams::new(gammas, betas).expect("p >= 1")
}

/// `gamma mod 2 pi`, `beta mod pi`.
pub fn wrap_params(x: &[f64]) -> Vec<f64> {
    let p = x.len() / 2;
    x.iter()
        .enumerate()
        .map(|(k, &v)| v.rem_euclid(if k < p { 2.0 * PI } else { PI }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub restart: usize,
    pub params: QaoaParams,
    pub value: f64,
    pub exact_value: f64,
    pub success_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaoaResult {
    pub best_params: QaoaParams,
    pub f_star: f64,
    /// Exact expectation at the best parameters (equals `f_star` in exact modes).
    pub exact_f_star: f64,
    pub c_max: f64,
    pub ratio: f64,
    pub success_prob: f64,
    pub evals: usize,
    /// Every evaluation, restarts in order.
    pub history: Vec<HistoryEntry>,
    /// Some restart stopped on its evaluation budget.
    pub budget_exhausted: bool,
    pub metrics: Option<CircuitMetrics>,
}

impl QaoaResult {
    /// Running maximum of the objective along the history.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.history
            .iter()
            .map(|h| {
                best = best.max(h.value);
                best
            })
            .collect()
    }
}

struct RestartRun {
    history: Vec<(HistoryEntry, Option<CircuitMetrics>)>,
    exhausted: bool,
}

fn start_point(p: usize, restart: usize, seed: u64, settings: &OptimizerSettings) -> Vec<f64> {
    if restart == 0 {
        if let Some(x) = &settings.first_start {
            return x.clone();
        }
        return ramp_start(p).to_flat();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_STARTS + restart as u64);
    let (gmax, bmax) = settings.ranges.bounds();
    let gammas: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..gmax)).collect();
    let betas: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..bmax)).collect();
    [gammas, betas].concat()
}

/// Maximize `F_p` with COBYLA from `restarts` start points; `max_evals` caps
/// each restart. The first start is the ramp, the rest are uniform in the
/// reduced ranges.
pub fn optimize_params(
    g: &Graph,
    p: usize,
    backend: &Backend,
    restarts: usize,
    max_evals: usize,
) -> Result<QaoaResult, QaoaError> {
    optimize_params_with(g, p, backend, restarts, max_evals, &OptimizerSettings::default())
}

pub fn optimize_params_with(
    g: &Graph,
    p: usize,
    backend: &Backend,
    restarts: usize,
    max_evals: usize,
    settings: &OptimizerSettings,
) -> Result<QaoaResult, QaoaError> {
    if p == 0 {
        return Err(QaoaError::ZeroDepth);
    }
    if restarts == 0 || max_evals == 0 {
        return Err(QaoaError::ZeroBudget);
    }
    if let Some(x) = &settings.first_start {
        if x.len() != 2 * p {
            return Err(CircuitError::BadParams {
                gammas: x.len() / 2,
                betas: x.len() - x.len() / 2,
            }
            .into());
        }
    }
    backend.validate()?;
    let solution = brute_force_maxcut(g)?;

    let runs: Vec<Result<RestartRun, QaoaError>> = (0..restarts)
        .into_par_iter()
        .map(|r| run_restart(g, &solution, p, backend, r, max_evals, settings))
        .collect();

    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut budget_exhausted = false;
    let mut best: Option<(usize, Option<CircuitMetrics>)> = None;
    for run in runs {
        let run = run?;
        budget_exhausted |= run.exhausted;
        for (entry, metrics) in run.history {
            if best.is_none_or(|(i, _)| entry.value > history[i].value) {
                best = Some((history.len(), metrics));
            }
            history.push(entry);
        }
    }
    let (bi, metrics) = best.expect("at least one evaluation");
    let b: &HistoryEntry = &history[bi];
    Ok(QaoaResult {
        best_params: b.params.clone(),
        f_star: b.value,
        exact_f_star: b.exact_value,
        c_max: solution.c_max,
        ratio: b.value / solution.c_max,
        success_prob: b.success_prob,
        evals: history.len(),
        budget_exhausted,
        metrics,
        history,
    })
}

fn run_restart(
    g: &Graph,
    solution: &MaxCutSolution,
    p: usize,
    backend: &Backend,
    restart: usize,
    max_evals: usize,
    settings: &OptimizerSettings,
) -> Result<RestartRun, QaoaError> {
    let x0 = start_point(p, restart, backend.seed, settings);
    let history: RefCell<Vec<(HistoryEntry, Option<CircuitMetrics>)>> = RefCell::new(Vec::new());
    let failure: RefCell<Option<QaoaError>> = RefCell::new(None);
    let stream_base = (restart as u64) << 32;

    let f = |x: &[f64], _: &mut ()| -> f64 {
        if failure.borrow().is_some() {
            return 0.0;
        }
        let params = QaoaParams::from_flat(&wrap_params(x)).expect("2p angles");
        let stream = stream_base + history.borrow().len() as u64;
        match evaluate_with(g, solution, &params, backend, stream) {
            Ok(e) => {
                history.borrow_mut().push((
                    HistoryEntry {
                        restart,
                        params,
                        value: e.value,
                        exact_value: e.exact_value,
                        success_prob: e.success_prob,
                    },
                    e.metrics,
                ));
                -e.value
            }
            Err(err) => {
                *failure.borrow_mut() = Some(err);
                0.0
            }
        }
    };
    let bound = 8.0 * PI;
    let bounds = vec![(-bound, bound); 2 * p];
    let tols = StopTols {
        ftol_abs: 1e-10,
        xtol_abs: vec![1e-7; 2 * p],
        ..StopTols::default()
    };
    let no_cons: [&dyn Func<()>; 0] = [];
    let status = minimize(f, &x0, &bounds, &no_cons, (), max_evals, RhoBeg::All(settings.rhobeg), Some(tols));
    if let Some(err) = failure.into_inner() {
        return Err(err);
    }
    let history = history.into_inner();
    let exhausted = matches!(status, Ok((SuccessStatus::MaxEvalReached, _, _))) || history.len() >= max_evals;
    Ok(RestartRun { history, exhausted })
}

/// Grid over `[0, gamma_max] x [0, beta_max]` with inclusive endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub gamma_max: f64,
    pub beta_max: f64,
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            gamma_max: PI,
            beta_max: FRAC_PI_2,
            resolution: PI / 30.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), QaoaError> {
        let r = self.resolution;
        if !(r.is_finite() && r > 0.0) {
            return Err(QaoaError::Grid(format!("resolution must be positive, got {r}")));
        }
        if !(self.gamma_max.is_finite() && self.gamma_max > 0.0 && self.beta_max.is_finite() && self.beta_max > 0.0) {
            return Err(QaoaError::Grid("ranges must be positive".into()));
        }
        if r > self.gamma_max.min(self.beta_max) {
            return Err(QaoaError::Grid(format!("resolution {r} exceeds a range")));
        }
        Ok(())
    }

    fn axis(max: f64, res: f64) -> Vec<f64> {
        let steps = (max / res + 1e-9).floor() as usize;
        (0..=steps).map(|k| k as f64 * res).collect()
    }

    pub fn gammas(&self) -> Vec<f64> {
        Self::axis(self.gamma_max, self.resolution)
    }

    pub fn betas(&self) -> Vec<f64> {
        Self::axis(self.beta_max, self.resolution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gamma: f64,
    pub beta: f64,
    pub expectation: f64,
    pub success_prob: f64,
}

/// Evaluate every p = 1 grid node, gamma-major.
pub fn grid_search_p1(g: &Graph, backend: &Backend, spec: &GridSpec) -> Result<Vec<GridPoint>, QaoaError> {
    spec.validate()?;
    backend.validate()?;
    let solution = brute_force_maxcut(g)?;
    let betas = spec.betas();
    let nodes: Vec<(f64, f64)> = spec
        .gammas()
        .into_iter()
        .flat_map(|gm| betas.iter().map(move |&b| (gm, b)))
        .collect();
    nodes
        .par_iter()
        .enumerate()
        .map(|(k, &(gamma, beta))| {
            let params = QaoaParams::new(vec![gamma], vec![beta])?;
            let e = evaluate_with(g, &solution, &params, backend, k as u64)?;
            Ok(GridPoint {
                gamma,
                beta,
                expectation: e.value,
                success_prob: e.success_prob,
            })
        })
        .collect()
}

pub fn grid_to_csv(points: &[GridPoint]) -> String {
    let mut out = String::from("gamma,beta,expectation,success_prob\n");
    for pt in points {
        out.push_str(&format!("{},{},{},{}\n", pt.gamma, pt.beta, pt.expectation, pt.success_prob));
    }
    out
}

/// Optimizer trace: `eval,gamma_1..gamma_p,beta_1..beta_p,value`.
pub fn history_to_csv(history: &[HistoryEntry]) -> String {
    let p = history.first().map_or(0, |h| h.params.p());
    let mut out = String::from("eval");
    for k in 1..=p {
        out.push_str(&format!(",gamma_{k}"));
    }
    for k in 1..=p {
        out.push_str(&format!(",beta_{k}"));
    }
    out.push_str(",value\n");
    for (i, h) in history.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in h.params.to_flat() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", h.value));
    }
    out
}
