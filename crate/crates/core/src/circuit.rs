//! Gate-level circuits, the QAOA ansatz builder and circuit metrics.
//!
//! Rotation conventions: `RX(t) = exp(-i t X / 2)`, `RZ(t) = exp(-i t Z / 2)`
//! and `RZZ(t) = exp(-i t Z⊗Z / 2)`. Two-qubit matrices use the first listed
//! qubit as local index bit 0 (for `CX` that is the control).

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::linalg::{apply_1q, apply_2q, Mat, C64, I, ONE, ZERO};

/// `unitary_of` refuses circuits wider than this.
pub const MAX_UNITARY_QUBITS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("circuit needs at least one qubit")]
    NoQubits,
    #[error("gate {gate} uses qubit {qubit} but the circuit has {num_qubits} qubits")]
    QubitOutOfRange {
        gate: String,
        qubit: usize,
        num_qubits: usize,
    },
    #[error("gate {0} repeats a qubit")]
    RepeatedQubit(String),
    #[error("gate {gate} acts on qubit {qubit} after it was measured")]
    GateAfterMeasure { gate: String, qubit: usize },
    #[error("gate {0} has a non-finite angle")]
    NonFiniteAngle(String),
    #[error("circuit contains measurements")]
    Measured,
    #[error("unitary_of supports at most {MAX_UNITARY_QUBITS} qubits, got {0}")]
    TooManyQubits(usize),
    #[error("QAOA parameters need equal, nonzero numbers of gammas ({gammas}) and betas ({betas})")]
    BadParams { gammas: usize, betas: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    H,
    X,
    SX,
    RX,
    RZ,
    RZZ,
    CX,
    Swap,
    Measure,
}

impl GateKind {
    pub const ALL: [GateKind; 9] = [
        GateKind::H,
        GateKind::X,
        GateKind::SX,
        GateKind::RX,
        GateKind::RZ,
        GateKind::RZZ,
        GateKind::CX,
        GateKind::Swap,
        GateKind::Measure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::X => "x",
            GateKind::SX => "sx",
            GateKind::RX => "rx",
            GateKind::RZ => "rz",
            GateKind::RZZ => "rzz",
            GateKind::CX => "cx",
            GateKind::Swap => "swap",
            GateKind::Measure => "measure",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            GateKind::RZZ | GateKind::CX | GateKind::Swap => 2,
            _ => 1,
        }
    }

    pub fn has_param(self) -> bool {
        matches!(self, GateKind::RX | GateKind::RZ | GateKind::RZZ)
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        GateKind::ALL
            .into_iter()
            .find(|k| k.name() == lower || (lower == "cnot" && *k == GateKind::CX))
            .ok_or_else(|| format!("unknown gate kind {s:?}"))
    }
}

/// The one or two qubits a gate acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Qubits {
    q: [usize; 2],
    len: usize,
}

impl Deref for Qubits {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.q[..self.len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    H(usize),
    X(usize),
    SX(usize),
    RX(usize, f64),
    RZ(usize, f64),
    RZZ(usize, usize, f64),
    CX(usize, usize),
    Swap(usize, usize),
    Measure(usize),
}

impl Gate {
    pub fn kind(&self) -> GateKind {
        match self {
            Gate::H(_) => GateKind::H,
            Gate::X(_) => GateKind::X,
            Gate::SX(_) => GateKind::SX,
            Gate::RX(..) => GateKind::RX,
            Gate::RZ(..) => GateKind::RZ,
            Gate::RZZ(..) => GateKind::RZZ,
            Gate::CX(..) => GateKind::CX,
            Gate::Swap(..) => GateKind::Swap,
            Gate::Measure(_) => GateKind::Measure,
        }
    }

    pub fn qubits(&self) -> Qubits {
        match *self {
            Gate::H(q) | Gate::X(q) | Gate::SX(q) | Gate::RX(q, _) | Gate::RZ(q, _) | Gate::Measure(q) => {
                Qubits { q: [q, 0], len: 1 }
            }
            Gate::RZZ(a, b, _) | Gate::CX(a, b) | Gate::Swap(a, b) => Qubits { q: [a, b], len: 2 },
        }
    }

    pub fn param(&self) -> Option<f64> {
        match *self {
            Gate::RX(_, t) | Gate::RZ(_, t) | Gate::RZZ(_, _, t) => Some(t),
            _ => None,
        }
    }

    pub fn arity(&self) -> usize {
        self.kind().arity()
    }

    pub fn is_unitary(&self) -> bool {
        !matches!(self, Gate::Measure(_))
    }

    pub fn is_two_qubit(&self) -> bool {
        self.is_unitary() && self.arity() == 2
    }

    /// Same gate on relabelled qubits.
    pub fn map_qubits(&self, f: impl Fn(usize) -> usize) -> Gate {
        match *self {
            Gate::H(q) => Gate::H(f(q)),
            Gate::X(q) => Gate::X(f(q)),
            Gate::SX(q) => Gate::SX(f(q)),
            Gate::RX(q, t) => Gate::RX(f(q), t),
            Gate::RZ(q, t) => Gate::RZ(f(q), t),
            Gate::RZZ(a, b, t) => Gate::RZZ(f(a), f(b), t),
            Gate::CX(a, b) => Gate::CX(f(a), f(b)),
            Gate::Swap(a, b) => Gate::Swap(f(a), f(b)),
            Gate::Measure(q) => Gate::Measure(f(q)),
        }
    }

    /// Unitary matrix of the gate (2x2 or 4x4), `None` for measurements.
    pub fn matrix(&self) -> Option<Mat> {
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        let m = match *self {
            Gate::H(_) => Mat::from_rows(&[&[h, h], &[h, -h]]),
            Gate::X(_) => Mat::from_rows(&[&[ZERO, ONE], &[ONE, ZERO]]),
            Gate::SX(_) => {
                let a = C64::new(0.5, 0.5);
                let b = C64::new(0.5, -0.5);
                Mat::from_rows(&[&[a, b], &[b, a]])
            }
            Gate::RX(_, t) => rx_matrix(t),
            Gate::RZ(_, t) => rz_matrix(t),
            Gate::RZZ(_, _, t) => {
                let e = C64::from_polar(1.0, -t / 2.0);
                let o = C64::from_polar(1.0, t / 2.0);
                Mat::diag(&[e, o, o, e])
            }
            Gate::CX(..) => permutation(&[0, 3, 2, 1]),
            Gate::Swap(..) => permutation(&[0, 2, 1, 3]),
            Gate::Measure(_) => return None,
        };
        Some(m)
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind())?;
        for q in self.qubits().iter() {
            write!(f, " {q}")?;
        }
        if let Some(t) = self.param() {
            write!(f, " {t}")?;
        }
        Ok(())
    }
}

pub fn rx_matrix(t: f64) -> Mat {
    let c = C64::new((t / 2.0).cos(), 0.0);
    let s = -I * (t / 2.0).sin();
    Mat::from_rows(&[&[c, s], &[s, c]])
}

pub fn rz_matrix(t: f64) -> Mat {
    Mat::diag(&[C64::from_polar(1.0, -t / 2.0), C64::from_polar(1.0, t / 2.0)])
}

fn permutation(image: &[usize]) -> Mat {
    let mut m = Mat::zeros(image.len());
    for (col, &row) in image.iter().enumerate() {
        m.set(row, col, ONE);
    }
    m
}

/// Depth and gate counts over unitary gates; measurements are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CircuitMetrics {
    pub depth: usize,
    pub op_count: usize,
    pub nonlocal_count: usize,
}

impl CircuitMetrics {
    /// Componentwise `<=`.
    pub fn dominated_by(&self, other: &CircuitMetrics) -> bool {
        self.depth <= other.depth
            && self.op_count <= other.op_count
            && self.nonlocal_count <= other.nonlocal_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    num_qubits: usize,
    gates: Vec<Gate>,
    /// Radians; the circuit's unitary is `e^{i phase}` times the gate product.
    pub global_phase: f64,
}

impl Circuit {
    pub fn new(num_qubits: usize) -> Result<Self, CircuitError> {
        if num_qubits == 0 {
            return Err(CircuitError::NoQubits);
        }
        Ok(Self {
            num_qubits,
            gates: Vec::new(),
            global_phase: 0.0,
        })
    }

    pub fn from_gates(num_qubits: usize, gates: impl IntoIterator<Item = Gate>) -> Result<Self, CircuitError> {
        let mut c = Self::new(num_qubits)?;
        for g in gates {
            c.push(g)?;
        }
        Ok(c)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Append a gate after validating qubit indices and measurement order.
    pub fn push(&mut self, gate: Gate) -> Result<(), CircuitError> {
        let qs = gate.qubits();
        for &q in qs.iter() {
            if q >= self.num_qubits {
                return Err(CircuitError::QubitOutOfRange {
                    gate: gate.to_string(),
                    qubit: q,
                    num_qubits: self.num_qubits,
                });
            }
        }
        if qs.len() == 2 && qs[0] == qs[1] {
            return Err(CircuitError::RepeatedQubit(gate.to_string()));
        }
        if gate.param().is_some_and(|t| !t.is_finite()) {
            return Err(CircuitError::NonFiniteAngle(gate.to_string()));
        }
        for &q in qs.iter() {
            let measured = self
                .gates
                .iter()
                .any(|g| matches!(g, Gate::Measure(m) if *m == q));
            if measured {
                return Err(CircuitError::GateAfterMeasure {
                    gate: gate.to_string(),
                    qubit: q,
                });
            }
        }
        self.gates.push(gate);
        Ok(())
    }

    /// Append without re-checking; callers guarantee validity.
    pub(crate) fn push_unchecked(&mut self, gate: Gate) {
        debug_assert!(gate.qubits().iter().all(|&q| q < self.num_qubits));
        self.gates.push(gate);
    }

    pub(crate) fn with_gates(&self, gates: Vec<Gate>, global_phase: f64) -> Circuit {
        Circuit {
            num_qubits: self.num_qubits,
            gates,
            global_phase,
        }
    }

    pub fn measure_all(&mut self) -> Result<(), CircuitError> {
        for q in 0..self.num_qubits {
            self.push(Gate::Measure(q))?;
        }
        Ok(())
    }

    pub fn has_measurements(&self) -> bool {
        self.gates.iter().any(|g| !g.is_unitary())
    }

    /// Copy of the circuit with measurements removed.
    pub fn without_measurements(&self) -> Circuit {
        self.with_gates(
            self.gates.iter().copied().filter(Gate::is_unitary).collect(),
            self.global_phase,
        )
    }

    pub fn metrics(&self) -> CircuitMetrics {
        let mut level = vec![0usize; self.num_qubits];
        let mut m = CircuitMetrics::default();
        for g in self.gates.iter().filter(|g| g.is_unitary()) {
            let qs = g.qubits();
            let next = qs.iter().map(|&q| level[q]).max().unwrap_or(0) + 1;
            for &q in qs.iter() {
                level[q] = next;
            }
            m.op_count += 1;
            if qs.len() == 2 {
                m.nonlocal_count += 1;
            }
        }
        m.depth = level.into_iter().max().unwrap_or(0);
        m
    }

    /// Qubits touched by at least one gate, ascending.
    pub fn active_qubits(&self) -> Vec<usize> {
        let mut used = vec![false; self.num_qubits];
        for g in &self.gates {
            for &q in g.qubits().iter() {
                used[q] = true;
            }
        }
        (0..self.num_qubits).filter(|&q| used[q]).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("qubits {}\nphase {}\n", self.num_qubits, self.global_phase);
        let n = self.num_qubits;
        let tail_all = self.gates.len() >= n
            && self.gates[self.gates.len() - n..]
                .iter()
                .enumerate()
                .all(|(k, g)| *g == Gate::Measure(k));
        let body = if tail_all {
            &self.gates[..self.gates.len() - n]
        } else {
            &self.gates[..]
        };
        for g in body {
            out.push_str(&g.to_string());
            out.push('\n');
        }
        if tail_all {
            out.push_str("measure all\n");
        }
        out
    }

    /// Parse the line format written by [`Circuit::to_text`]. `#` starts a
    /// comment. The `qubits` header must precede any gate line.
    pub fn from_text(text: &str) -> Result<Circuit, CircuitError> {
        let mut circuit: Option<Circuit> = None;
        let mut phase = 0.0;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let err = |msg: String| CircuitError::Parse { line, msg };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            let head = toks[0].to_ascii_lowercase();
            if head == "qubits" {
                if circuit.is_some() {
                    return Err(err("duplicate qubits header".into()));
                }
                let n = parse_tok::<usize>(&toks, 1).map_err(err)?;
                expect_len(&toks, 2).map_err(err)?;
                circuit = Some(Circuit::new(n).map_err(|e| err(e.to_string()))?);
                continue;
            }
            if head == "phase" {
                phase = parse_tok::<f64>(&toks, 1).map_err(err)?;
                expect_len(&toks, 2).map_err(err)?;
                continue;
            }
            let c = circuit
                .as_mut()
                .ok_or_else(|| err("gate before `qubits` header".into()))?;
            let kind: GateKind = head.parse().map_err(err)?;
            if kind == GateKind::Measure && toks.get(1).is_some_and(|t| t.eq_ignore_ascii_case("all")) {
                expect_len(&toks, 2).map_err(err)?;
                c.measure_all().map_err(|e| err(e.to_string()))?;
                continue;
            }
            let arity = kind.arity();
            let q0 = parse_tok::<usize>(&toks, 1).map_err(err)?;
            let q1 = if arity == 2 {
                parse_tok::<usize>(&toks, 2).map_err(err)?
            } else {
                0
            };
            let t = if kind.has_param() {
                parse_tok::<f64>(&toks, 1 + arity).map_err(err)?
            } else {
                0.0
            };
            expect_len(&toks, 1 + arity + usize::from(kind.has_param())).map_err(err)?;
            let gate = match kind {
                GateKind::H => Gate::H(q0),
                GateKind::X => Gate::X(q0),
                GateKind::SX => Gate::SX(q0),
                GateKind::RX => Gate::RX(q0, t),
                GateKind::RZ => Gate::RZ(q0, t),
                GateKind::RZZ => Gate::RZZ(q0, q1, t),
                GateKind::CX => Gate::CX(q0, q1),
                GateKind::Swap => Gate::Swap(q0, q1),
                GateKind::Measure => Gate::Measure(q0),
            };
            c.push(gate).map_err(|e| err(e.to_string()))?;
        }
        let mut c = circuit.ok_or(CircuitError::Parse {
            line: 0,
            msg: "missing `qubits` header".into(),
        })?;
        c.global_phase = phase;
        Ok(c)
    }
}

fn parse_tok<T: FromStr>(toks: &[&str], k: usize) -> Result<T, String> {
    let t = toks.get(k).ok_or_else(|| format!("missing field {k}"))?;
    t.parse::<T>().map_err(|_| format!("cannot parse {t:?}"))
}

fn expect_len(toks: &[&str], n: usize) -> Result<(), String> {
    if toks.len() == n {
        Ok(())
    } else {
        Err(format!("expected {n} fields, found {}", toks.len()))
    }
}

/// Variational angles: `gammas[k]` drives cost layer `k`, `betas[k]` the
/// mixing layer `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaParams {
    gammas: Vec<f64>,
    betas: Vec<f64>,
}

impl QaoaParams {
    pub fn new(gammas: Vec<f64>, betas: Vec<f64>) -> Result<Self, CircuitError> {
        if gammas.is_empty() || gammas.len() != betas.len() {
            return Err(CircuitError::BadParams {
                gammas: gammas.len(),
                betas: betas.len(),
            });
        }
        Ok(Self { gammas, betas })
    }

    /// Flat `[gammas..., betas...]` form used by optimizers.
    pub fn from_flat(x: &[f64]) -> Result<Self, CircuitError> {
        if x.len() % 2 != 0 {
            return Err(CircuitError::BadParams {
                gammas: x.len() / 2 + 1,
                betas: x.len() / 2,
            });
        }
        let p = x.len() / 2;
        Self::new(x[..p].to_vec(), x[p..].to_vec())
    }

    pub fn p(&self) -> usize {
        self.gammas.len()
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.gammas.iter().chain(&self.betas).copied().collect()
    }
}

/// QAOA circuit for max-cut on `g`: Hadamards, then for each layer the cost
/// unitary `exp(-i gamma H_C)` edge by edge in graph order followed by
/// `RX(2 beta)` on every qubit.
///
/// Each edge contributes `RZZ(-w gamma)`, or `CX · RZ(-w gamma) · CX` with
/// the rotation on the second endpoint when `decompose_rzz` is set. The
/// identity part of `H_C` is kept in `global_phase` (`-w gamma / 2` per
/// edge) so the circuit unitary is exact.
pub fn build_qaoa_ansatz(
    g: &Graph,
    params: &QaoaParams,
    decompose_rzz: bool,
    with_measurements: bool,
) -> Circuit {
    let n = g.num_vertices();
    let mut c = Circuit::new(n).expect("graph has vertices");
    for q in 0..n {
        c.push_unchecked(Gate::H(q));
    }
    for (&gamma, &beta) in params.gammas().iter().zip(params.betas()) {
        for e in g.edges() {
            let angle = -e.weight * gamma;
            if decompose_rzz {
                c.push_unchecked(Gate::CX(e.i, e.j));
                c.push_unchecked(Gate::RZ(e.j, angle));
                c.push_unchecked(Gate::CX(e.i, e.j));
            } else {
                c.push_unchecked(Gate::RZZ(e.i, e.j, angle));
            }
            c.global_phase -= e.weight * gamma / 2.0;
        }
        for q in 0..n {
            c.push_unchecked(Gate::RX(q, 2.0 * beta));
        }
    }
    if with_measurements {
        for q in 0..n {
            c.push_unchecked(Gate::Measure(q));
        }
    }
    c
}

/// Full unitary of a measurement-free circuit, including its global phase.
pub fn unitary_of(c: &Circuit) -> Result<Mat, CircuitError> {
    let n = c.num_qubits();
    if n > MAX_UNITARY_QUBITS {
        return Err(CircuitError::TooManyQubits(n));
    }
    if c.has_measurements() {
        return Err(CircuitError::Measured);
    }
    let dim = 1usize << n;
    let mats: Vec<(Qubits, Mat)> = c
        .gates()
        .iter()
        .map(|g| (g.qubits(), g.matrix().expect("unitary gate")))
        .collect();
    let phase = C64::from_polar(1.0, c.global_phase);
    let mut u = Mat::zeros(dim);
    let mut col = vec![ZERO; dim];
    for j in 0..dim {
        col.iter_mut().for_each(|z| *z = ZERO);
        col[j] = ONE;
        for (qs, m) in &mats {
            if qs.len() == 1 {
                apply_1q(&mut col, qs[0], m);
            } else {
                apply_2q(&mut col, qs[0], qs[1], m);
            }
        }
        for (i, &z) in col.iter().enumerate() {
            u.set(i, j, z * phase);
        }
    }
    Ok(u)
}
