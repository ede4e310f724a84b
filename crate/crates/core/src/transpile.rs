//! Mapping virtual circuits onto a device: layout, swap routing, basis
//! translation and the optimization levels 0 to 3.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Circuit, CircuitError, CircuitMetrics, Gate, GateKind};
use crate::linalg::{apply_1q, apply_2q, Mat, C64, ONE, ZERO};
use crate::noise::{CouplingMap, DeviceProfile};

/// Node cap for the cycle-embedding backtracking search.
pub const EMBEDDING_NODE_BUDGET: u64 = 10_000_000;

/// Largest register `embedded_overlap` will expand.
pub const MAX_OVERLAP_QUBITS: usize = 16;

const ANGLE_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranspileError {
    #[error("optimization level {0} is outside 0..=3")]
    BadLevel(u8),
    #[error("circuit has {circuit} qubits but device has only {device}")]
    TooWide { circuit: usize, device: usize },
    #[error("invalid layout: {0}")]
    BadLayout(String),
    #[error("physical qubits {0} and {1} are not connected")]
    Disconnected(usize, usize),
    #[error("no rule translates {0} into the target basis")]
    Untranslatable(GateKind),
    #[error("{0} gates must be decomposed before routing")]
    NeedsDecomposition(GateKind),
    #[error("register of {0} qubits is too large to compare")]
    TooLarge(usize),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

/// Injective virtual-to-physical qubit map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    v2p: Vec<usize>,
}

impl Layout {
    pub fn new(v2p: Vec<usize>, num_physical: usize) -> Result<Self, TranspileError> {
        let mut seen = vec![false; num_physical];
        for &p in &v2p {
            if p >= num_physical {
                return Err(TranspileError::BadLayout(format!(
                    "physical qubit {p} outside device of {num_physical}"
                )));
            }
            if seen[p] {
                return Err(TranspileError::BadLayout(format!("physical qubit {p} used twice")));
            }
            seen[p] = true;
        }
        Ok(Self { v2p })
    }

    pub fn trivial(n: usize) -> Self {
        Self { v2p: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.v2p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v2p.is_empty()
    }

    pub fn physical(&self, virtual_qubit: usize) -> usize {
        self.v2p[virtual_qubit]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.v2p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutMethod {
    Trivial,
    Embed,
}

impl fmt::Display for LayoutMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayoutMethod::Trivial => "trivial",
            LayoutMethod::Embed => "embed",
        })
    }
}

impl FromStr for LayoutMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trivial" => Ok(LayoutMethod::Trivial),
            "embed" => Ok(LayoutMethod::Embed),
            _ => Err(format!("unknown layout method `{s}` (expected trivial or embed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationMethod {
    Rules,
    Resynth1q,
}

impl fmt::Display for TranslationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TranslationMethod::Rules => "rules",
            TranslationMethod::Resynth1q => "resynth1q",
        })
    }
}

impl FromStr for TranslationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rules" => Ok(TranslationMethod::Rules),
            "resynth1q" | "synthesis" => Ok(TranslationMethod::Resynth1q),
            _ => Err(format!("unknown translation method `{s}` (expected rules or resynth1q)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassConfig {
    pub optimization_level: u8,
    pub layout_method: LayoutMethod,
    pub translation_method: TranslationMethod,
}

impl PassConfig {
    pub fn new(
        optimization_level: u8,
        layout_method: LayoutMethod,
        translation_method: TranslationMethod,
    ) -> Result<Self, TranspileError> {
        let cfg = Self {
            optimization_level,
            layout_method,
            translation_method,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TranspileError> {
        if self.optimization_level > 3 {
            return Err(TranspileError::BadLevel(self.optimization_level));
        }
        Ok(())
    }

    /// Level 0, trivial layout, rule translation.
    pub fn mitigation_off() -> Self {
        Self {
            optimization_level: 0,
            layout_method: LayoutMethod::Trivial,
            translation_method: TranslationMethod::Rules,
        }
    }

    /// Level 3, ring embedding, 1-qubit resynthesis.
    pub fn mitigation_on() -> Self {
        Self {
            optimization_level: 3,
            layout_method: LayoutMethod::Embed,
            translation_method: TranslationMethod::Resynth1q,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranspileResult {
    /// Physical circuit over the whole device register.
    pub circuit: Circuit,
    /// Where each virtual qubit starts.
    pub layout: Layout,
    /// Where each virtual qubit ends up after routing; measurements follow it.
    pub final_layout: Layout,
    /// Layout method actually applied (`embed` falls back to `trivial`).
    pub layout_method: LayoutMethod,
    /// Metrics of the virtual circuit with RZZ decomposed.
    pub metrics_before: CircuitMetrics,
    pub metrics_after: CircuitMetrics,
    pub swap_count: usize,
}

/// Search for physical qubits forming a simple `n`-cycle; ring vertex `k`
/// goes to the `k`-th qubit along the cycle.
pub fn find_cycle_embedding(coupling: &CouplingMap, n: usize) -> Option<Layout> {
    let nq = coupling.num_qubits();
    if n < 3 || n > nq {
        return None;
    }
    let mut budget = EMBEDDING_NODE_BUDGET;
    let mut path = Vec::with_capacity(n);
    let mut used = vec![false; nq];
    // Each cycle is found from its smallest vertex only.
    for start in 0..nq {
        path.clear();
        path.push(start);
        used.iter_mut().for_each(|u| *u = false);
        used[start] = true;
        if extend_cycle(coupling, n, start, &mut path, &mut used, &mut budget) {
            return Some(Layout { v2p: path });
        }
        if budget == 0 {
            return None;
        }
    }
    None
}

fn extend_cycle(
    coupling: &CouplingMap,
    n: usize,
    start: usize,
    path: &mut Vec<usize>,
    used: &mut [bool],
    budget: &mut u64,
) -> bool {
    let last = *path.last().expect("path starts nonempty");
    if path.len() == n {
        return coupling.is_coupled(last, start);
    }
    for &q in coupling.neighbors(last) {
        if q <= start || used[q] {
            continue;
        }
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        used[q] = true;
        path.push(q);
        if extend_cycle(coupling, n, start, path, used, budget) {
            return true;
        }
        path.pop();
        used[q] = false;
    }
    false
}

/// Replace every RZZ by `CX · RZ · CX` (rotation on the second qubit).
pub fn decompose_rzz(c: &Circuit) -> Circuit {
    let mut gates = Vec::with_capacity(c.len());
    for g in c.gates() {
        match *g {
            Gate::RZZ(a, b, t) => gates.extend([Gate::CX(a, b), Gate::RZ(b, t), Gate::CX(a, b)]),
            other => gates.push(other),
        }
    }
    c.with_gates(gates, c.global_phase)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutedCircuit {
    pub circuit: Circuit,
    pub final_layout: Layout,
    pub swap_count: usize,
}

/// Greedy SWAP insertion: the first qubit of each uncoupled 2-qubit gate walks
/// along a BFS shortest path toward the second. Paths stay inside the qubits
/// the layout occupies plus whatever connectors are needed to make that set
/// connected, so routing never spreads over the rest of a large device.
pub fn route_swaps(
    c: &Circuit,
    coupling: &CouplingMap,
    layout: &Layout,
) -> Result<RoutedCircuit, TranspileError> {
    let nq = coupling.num_qubits();
    if layout.len() != c.num_qubits() {
        return Err(TranspileError::BadLayout(format!(
            "layout has {} entries for {} virtual qubits",
            layout.len(),
            c.num_qubits()
        )));
    }
    Layout::new(layout.v2p.clone(), nq)?;
    let allowed = routing_region(coupling, &layout.v2p)?;

    let mut v2p = layout.v2p.clone();
    let mut p2v: Vec<Option<usize>> = vec![None; nq];
    for (v, &p) in v2p.iter().enumerate() {
        p2v[p] = Some(v);
    }
    let mut out = Circuit::new(nq)?;
    out.global_phase = c.global_phase;
    let mut measured = BTreeSet::new();
    let mut swaps = 0;

    for g in c.gates() {
        match *g {
            Gate::Measure(v) => {
                measured.insert(v);
            }
            Gate::RZZ(..) => return Err(TranspileError::NeedsDecomposition(GateKind::RZZ)),
            Gate::CX(a, b) | Gate::Swap(a, b) => {
                let (pa, pb) = (v2p[a], v2p[b]);
                if !coupling.is_coupled(pa, pb) {
                    let path = region_path(coupling, &allowed, pa, pb)
                        .ok_or(TranspileError::Disconnected(pa, pb))?;
                    for w in path[..path.len() - 1].windows(2) {
                        let (x, y) = (w[0], w[1]);
                        out.push_unchecked(Gate::Swap(x, y));
                        swaps += 1;
                        p2v.swap(x, y);
                        for p in [x, y] {
                            if let Some(v) = p2v[p] {
                                v2p[v] = p;
                            }
                        }
                    }
                }
                out.push_unchecked(g.map_qubits(|v| v2p[v]));
            }
            other => out.push_unchecked(other.map_qubits(|v| v2p[v])),
        }
    }
    for v in measured {
        out.push_unchecked(Gate::Measure(v2p[v]));
    }
    Ok(RoutedCircuit {
        circuit: out,
        final_layout: Layout { v2p },
        swap_count: swaps,
    })
}

/// Layout image grown by shortest connectors until its induced subgraph is
/// connected.
fn routing_region(coupling: &CouplingMap, image: &[usize]) -> Result<Vec<bool>, TranspileError> {
    let nq = coupling.num_qubits();
    let mut region: BTreeSet<usize> = image.iter().copied().collect();
    while !region.is_empty() && !coupling.induced_is_connected(&region) {
        let first = *region.iter().next().expect("nonempty");
        let mut in_comp = vec![false; nq];
        let mut queue = VecDeque::from([first]);
        in_comp[first] = true;
        while let Some(u) = queue.pop_front() {
            for &w in coupling.neighbors(u) {
                if region.contains(&w) && !in_comp[w] {
                    in_comp[w] = true;
                    queue.push_back(w);
                }
            }
        }
        // Multi-source BFS from the component to the nearest other region qubit.
        let mut parent: Vec<Option<usize>> = vec![None; nq];
        let mut seen = in_comp.clone();
        let mut queue: VecDeque<usize> = (0..nq).filter(|&q| in_comp[q]).collect();
        let mut hit = None;
        'bfs: while let Some(u) = queue.pop_front() {
            for &w in coupling.neighbors(u) {
                if seen[w] {
                    continue;
                }
                seen[w] = true;
                parent[w] = Some(u);
                if region.contains(&w) {
                    hit = Some(w);
                    break 'bfs;
                }
                queue.push_back(w);
            }
        }
        let Some(mut w) = hit else {
            let other = *region.iter().find(|&&q| !in_comp[q]).expect("disconnected region");
            return Err(TranspileError::Disconnected(first, other));
        };
        while let Some(u) = parent[w] {
            region.insert(u);
            w = u;
        }
    }
    let mut allowed = vec![false; nq];
    for q in region {
        allowed[q] = true;
    }
    Ok(allowed)
}

/// Shortest path inside `allowed`, stepping to the lowest-index neighbour on
/// ties.
fn region_path(coupling: &CouplingMap, allowed: &[bool], from: usize, to: usize) -> Option<Vec<usize>> {
    let nq = coupling.num_qubits();
    let mut dist = vec![usize::MAX; nq];
    dist[to] = 0;
    let mut queue = VecDeque::from([to]);
    while let Some(u) = queue.pop_front() {
        for &w in coupling.neighbors(u) {
            if allowed[w] && dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    if dist[from] == usize::MAX {
        return None;
    }
    let mut path = vec![from];
    let mut u = from;
    while u != to {
        u = *coupling
            .neighbors(u)
            .iter()
            .find(|&&w| allowed[w] && dist[w] + 1 == dist[u])
            .expect("BFS predecessor exists");
        path.push(u);
    }
    Some(path)
}

/// Gate sequence and phase offset replacing `g`, for gates outside the basis.
fn translation_rule(g: Gate) -> Option<(Vec<Gate>, f64)> {
    let r = match g {
        Gate::H(q) => (vec![Gate::RZ(q, FRAC_PI_2), Gate::SX(q), Gate::RZ(q, FRAC_PI_2)], FRAC_PI_4),
        Gate::RX(q, t) => (
            vec![
                Gate::RZ(q, FRAC_PI_2),
                Gate::SX(q),
                Gate::RZ(q, t + PI),
                Gate::SX(q),
                Gate::RZ(q, FRAC_PI_2),
            ],
            FRAC_PI_2,
        ),
        Gate::RZZ(a, b, t) => (vec![Gate::CX(a, b), Gate::RZ(b, t), Gate::CX(a, b)], 0.0),
        Gate::Swap(a, b) => (vec![Gate::CX(a, b), Gate::CX(b, a), Gate::CX(a, b)], 0.0),
        Gate::X(q) => (vec![Gate::SX(q), Gate::SX(q)], 0.0),
        _ => return None,
    };
    Some(r)
}

/// Latest gate in `out` touching `a` or `b`.
fn last_on_pair(out: &[Gate], a: usize, b: usize) -> Option<Gate> {
    out.iter()
        .rev()
        .find(|g| g.qubits().iter().any(|&q| q == a || q == b))
        .copied()
}

/// Rewrite every gate into `basis`, tracking the global phase exactly.
pub fn translate_to_basis(c: &Circuit, basis: &BTreeSet<GateKind>) -> Result<Circuit, TranspileError> {
    fn expand(
        g: Gate,
        basis: &BTreeSet<GateKind>,
        out: &mut Vec<Gate>,
        phase: &mut f64,
    ) -> Result<(), TranspileError> {
        if !g.is_unitary() || basis.contains(&g.kind()) {
            out.push(g);
            return Ok(());
        }
        let (seq, offset) = match g {
            // Orient the CX triple so its first CX can cancel against a CX
            // just before it on the same pair.
            Gate::Swap(a, b) if last_on_pair(out, a, b) == Some(Gate::CX(b, a)) => {
                (vec![Gate::CX(b, a), Gate::CX(a, b), Gate::CX(b, a)], 0.0)
            }
            _ => translation_rule(g).ok_or(TranspileError::Untranslatable(g.kind()))?,
        };
        *phase += offset;
        for h in seq {
            expand(h, basis, out, phase)?;
        }
        Ok(())
    }
    let mut out = Vec::with_capacity(c.len());
    let mut phase = c.global_phase;
    for g in c.gates() {
        expand(*g, basis, &mut out, &mut phase)?;
    }
    Ok(c.with_gates(out, phase))
}

fn wrap_angle(t: f64) -> f64 {
    let w = t.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Shortest `{RZ, SX, X}` sequence for a 2x2 unitary, with the phase `alpha`
/// such that `u = e^{i alpha}` times the sequence's product.
pub fn synthesize_1q(q: usize, u: &Mat) -> (Vec<Gate>, f64) {
    let det = u.get(0, 0) * u.get(1, 1) - u.get(0, 1) * u.get(1, 0);
    let v = u.scale(ONE / det.sqrt());
    // v = [[e^{-i s/2} cos, -e^{-i d/2} sin], [e^{i d/2} sin, e^{i s/2} cos]]
    // with s = phi + lambda, d = phi - lambda.
    let (cos_h, sin_h) = (v.get(0, 0).norm(), v.get(1, 0).norm());
    let theta = 2.0 * sin_h.atan2(cos_h);
    let s = if cos_h > ANGLE_EPS { 2.0 * v.get(1, 1).arg() } else { 0.0 };
    let d = if sin_h > ANGLE_EPS { 2.0 * v.get(1, 0).arg() } else { 0.0 };
    let (phi, lambda) = ((s + d) / 2.0, (s - d) / 2.0);

    let raw = if sin_h < ANGLE_EPS {
        vec![Gate::RZ(q, s)]
    } else if (theta - FRAC_PI_2).abs() < ANGLE_EPS {
        vec![Gate::RZ(q, lambda - FRAC_PI_2), Gate::SX(q), Gate::RZ(q, phi + FRAC_PI_2)]
    } else if cos_h < ANGLE_EPS {
        vec![Gate::X(q), Gate::RZ(q, phi - lambda + PI)]
    } else {
        vec![
            Gate::RZ(q, lambda),
            Gate::SX(q),
            Gate::RZ(q, theta + PI),
            Gate::SX(q),
            Gate::RZ(q, phi + PI),
        ]
    };
    let seq: Vec<Gate> = raw
        .into_iter()
        .filter_map(|g| match g {
            Gate::RZ(q, t) => {
                let t = wrap_angle(t);
                (t.abs() >= ANGLE_EPS).then_some(Gate::RZ(q, t))
            }
            other => Some(other),
        })
        .collect();
    let w = product_1q(&seq);
    let k = (0..4)
        .max_by(|&a, &b| w.data()[a].norm().total_cmp(&w.data()[b].norm()))
        .expect("2x2");
    let alpha = (u.data()[k] / w.data()[k]).arg();
    (seq, alpha)
}

/// Matrix of a 1-qubit gate sequence applied in order.
fn product_1q(seq: &[Gate]) -> Mat {
    let mut m = Mat::identity(2);
    for g in seq {
        m = &g.matrix().expect("unitary") * &m;
    }
    m
}

/// Replace each maximal 1-qubit run by its Euler form when that is strictly
/// shorter. `None` when nothing changed.
fn merge_runs(gates: &[Gate], num_qubits: usize, phase: &mut f64) -> Option<Vec<Gate>> {
    let mut slots: Vec<Vec<Gate>> = gates.iter().map(|g| vec![*g]).collect();
    let mut runs: Vec<Vec<usize>> = vec![Vec::new(); num_qubits];
    let mut changed = false;
    let mut flush = |run: &mut Vec<usize>, slots: &mut Vec<Vec<Gate>>| {
        if run.is_empty() {
            return;
        }
        let q = gates[run[0]].qubits()[0];
        let seq: Vec<Gate> = run.iter().map(|&i| gates[i]).collect();
        let (new_seq, alpha) = synthesize_1q(q, &product_1q(&seq));
        if new_seq.len() < run.len() {
            for &i in run.iter() {
                slots[i].clear();
            }
            slots[*run.last().expect("nonempty")] = new_seq;
            *phase += alpha;
            changed = true;
        }
        run.clear();
    };
    for (i, g) in gates.iter().enumerate() {
        if g.is_unitary() && g.arity() == 1 {
            runs[g.qubits()[0]].push(i);
        } else {
            for &q in g.qubits().iter() {
                flush(&mut runs[q], &mut slots);
            }
        }
    }
    for run in runs.iter_mut() {
        flush(run, &mut slots);
    }
    changed.then(|| slots.into_iter().flatten().collect())
}

fn is_x_type(g: &Gate) -> bool {
    matches!(g, Gate::X(_) | Gate::SX(_) | Gate::RX(..))
}

/// Whether `g` commutes with `CX(c, t)`.
fn commutes_with_cx(g: &Gate, c: usize, t: usize, x_through_target: bool) -> bool {
    match *g {
        Gate::RZ(q, _) => q == c,
        Gate::X(q) | Gate::SX(q) | Gate::RX(q, _) => x_through_target && q == t,
        Gate::CX(c2, t2) => (c2 == c && t2 != t && t2 != c) || (t2 == t && c2 != c && c2 != t),
        _ => false,
    }
}

/// Cancel `CX(c,t) ... CX(c,t)` pairs separated only by gates that commute
/// with them.
fn cancel_cx(gates: &[Gate], x_through_target: bool) -> Option<Vec<Gate>> {
    let mut alive = vec![true; gates.len()];
    let mut changed = false;
    for i in 0..gates.len() {
        let Gate::CX(c, t) = gates[i] else { continue };
        if !alive[i] {
            continue;
        }
        for j in i + 1..gates.len() {
            if !alive[j] {
                continue;
            }
            let g = &gates[j];
            let qs = g.qubits();
            if !qs.contains(&c) && !qs.contains(&t) {
                continue;
            }
            if *g == gates[i] {
                alive[i] = false;
                alive[j] = false;
                changed = true;
                break;
            }
            if !commutes_with_cx(g, c, t, x_through_target) {
                break;
            }
        }
    }
    changed.then(|| {
        gates
            .iter()
            .zip(&alive)
            .filter(|(_, &a)| a)
            .map(|(g, _)| *g)
            .collect()
    })
}

/// Move single gates forward through CX controls (RZ) or targets (X-type)
/// into the next 1-qubit run, keeping the first move whose re-merge shrinks
/// the circuit without growing any metric.
fn commute_and_merge(
    gates: &[Gate],
    num_qubits: usize,
    phase: f64,
    x_through_target: bool,
) -> Option<(Vec<Gate>, f64)> {
    let current = metrics_of(gates, num_qubits);
    for i in 0..gates.len() {
        let g = gates[i];
        let through_control = matches!(g, Gate::RZ(..));
        if !through_control && !(x_through_target && is_x_type(&g)) {
            continue;
        }
        let q = g.qubits()[0];
        let mut passed = false;
        let mut dest = None;
        for (j, h) in gates.iter().enumerate().skip(i + 1) {
            if !h.qubits().contains(&q) {
                continue;
            }
            match *h {
                Gate::CX(c, _) if through_control && c == q => passed = true,
                Gate::CX(_, t) if !through_control && t == q => passed = true,
                _ => {
                    if h.is_unitary() && h.arity() == 1 {
                        dest = Some(j);
                    }
                    break;
                }
            }
        }
        let (true, Some(dest)) = (passed, dest) else { continue };
        let mut moved = gates.to_vec();
        let g = moved.remove(i);
        moved.insert(dest - 1, g);
        let mut new_phase = phase;
        let Some(merged) = merge_runs(&moved, num_qubits, &mut new_phase) else { continue };
        let m = metrics_of(&merged, num_qubits);
        if m.dominated_by(&current) && m.op_count < current.op_count {
            return Some((merged, new_phase));
        }
    }
    None
}

fn metrics_of(gates: &[Gate], num_qubits: usize) -> CircuitMetrics {
    Circuit::new(num_qubits)
        .expect("nonempty register")
        .with_gates(gates.to_vec(), 0.0)
        .metrics()
}

/// Resynthesize 1-qubit runs until no run gets shorter.
pub fn resynthesize_1q(c: &Circuit) -> Circuit {
    let mut gates = c.gates().to_vec();
    let mut phase = c.global_phase;
    while let Some(next) = merge_runs(&gates, c.num_qubits(), &mut phase) {
        gates = next;
    }
    c.with_gates(gates, phase)
}

/// Optimization passes, iterated to a fixed point.
///
/// Level 1 merges 1-qubit runs (dropping identities); level 2 adds CX pair
/// cancellation and RZ commutation through CX controls; level 3 also moves
/// X-type gates through CX targets.
pub fn optimize(c: &Circuit, level: u8) -> Circuit {
    if level == 0 {
        return c.clone();
    }
    let n = c.num_qubits();
    let x_through_target = level >= 3;
    let mut gates = c.gates().to_vec();
    let mut phase = c.global_phase;
    loop {
        let mut changed = false;
        if let Some(next) = merge_runs(&gates, n, &mut phase) {
            gates = next;
            changed = true;
        }
        if level >= 2 {
            if let Some(next) = cancel_cx(&gates, x_through_target) {
                gates = next;
                changed = true;
            }
            if !changed {
                if let Some((next, ph)) = commute_and_merge(&gates, n, phase, x_through_target) {
                    gates = next;
                    phase = ph;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    c.with_gates(gates, phase)
}

/// Layout, routing, translation and optimization in sequence.
pub fn transpile(c: &Circuit, profile: &DeviceProfile, cfg: &PassConfig) -> Result<TranspileResult, TranspileError> {
    cfg.validate()?;
    let n = c.num_qubits();
    if n > profile.num_qubits() {
        return Err(TranspileError::TooWide {
            circuit: n,
            device: profile.num_qubits(),
        });
    }
    let decomposed = decompose_rzz(c);
    let metrics_before = decomposed.metrics();
    let coupling = profile.coupling();
    let (layout, layout_method) = match cfg.layout_method {
        LayoutMethod::Trivial => (Layout::trivial(n), LayoutMethod::Trivial),
        LayoutMethod::Embed => match find_cycle_embedding(coupling, n) {
            Some(l) => (l, LayoutMethod::Embed),
            None => (Layout::trivial(n), LayoutMethod::Trivial),
        },
    };
    let routed = route_swaps(&decomposed, coupling, &layout)?;
    let mut circuit = translate_to_basis(&routed.circuit, profile.basis())?;
    if cfg.translation_method == TranslationMethod::Resynth1q {
        circuit = resynthesize_1q(&circuit);
    }
    let circuit = optimize(&circuit, cfg.optimization_level);
    Ok(TranspileResult {
        metrics_after: circuit.metrics(),
        circuit,
        layout,
        final_layout: routed.final_layout,
        layout_method,
        metrics_before,
        swap_count: routed.swap_count,
    })
}

/// Normalized overlap `Σ_x <V x | T x> / 2^n` between the virtual circuit `V`
/// and the transpiled circuit `T`, with inputs placed by the initial layout,
/// outputs read through the final layout and spare qubits starting in |0>.
/// Its modulus is the unitary fidelity; it equals 1 exactly when the global
/// phase is also preserved.
pub fn embedded_overlap(virtual_circuit: &Circuit, result: &TranspileResult) -> Result<C64, TranspileError> {
    let n = virtual_circuit.num_qubits();
    let mut active: BTreeSet<usize> = result.circuit.active_qubits().into_iter().collect();
    active.extend(result.layout.as_slice());
    active.extend(result.final_layout.as_slice());
    if n > MAX_OVERLAP_QUBITS || active.len() > MAX_OVERLAP_QUBITS {
        return Err(TranspileError::TooLarge(active.len().max(n)));
    }
    let mut local = vec![usize::MAX; result.circuit.num_qubits()];
    for (k, &p) in active.iter().enumerate() {
        local[p] = k;
    }
    let place = |x: usize, layout: &Layout| -> usize {
        (0..n)
            .filter(|&v| (x >> v) & 1 == 1)
            .map(|v| 1usize << local[layout.physical(v)])
            .sum()
    };
    let virtual_gates: Vec<Gate> = virtual_circuit.gates().iter().copied().filter(Gate::is_unitary).collect();
    let physical_gates: Vec<Gate> = result
        .circuit
        .gates()
        .iter()
        .filter(|g| g.is_unitary())
        .map(|g| g.map_qubits(|p| local[p]))
        .collect();
    let phase_v = C64::from_polar(1.0, virtual_circuit.global_phase);
    let phase_t = C64::from_polar(1.0, result.circuit.global_phase);

    let mut acc = ZERO;
    let mut vin = vec![ZERO; 1 << n];
    let mut tin = vec![ZERO; 1 << active.len()];
    for x in 0..1usize << n {
        vin.iter_mut().for_each(|z| *z = ZERO);
        vin[x] = ONE;
        evolve(&mut vin, &virtual_gates);
        tin.iter_mut().for_each(|z| *z = ZERO);
        tin[place(x, &result.layout)] = ONE;
        evolve(&mut tin, &physical_gates);
        for (y, &a) in vin.iter().enumerate() {
            if a != ZERO {
                acc += (a * phase_v).conj() * tin[place(y, &result.final_layout)] * phase_t;
            }
        }
    }
    Ok(acc / (1usize << n) as f64)
}

fn evolve(amps: &mut [C64], gates: &[Gate]) {
    for g in gates {
        let m = g.matrix().expect("unitary");
        let qs = g.qubits();
        if qs.len() == 1 {
            apply_1q(amps, qs[0], &m);
        } else {
            apply_2q(amps, qs[0], qs[1], &m);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_qaoa_ansatz, unitary_of, QaoaParams};
    use crate::graph::make_ring;
    use crate::noise::{default_basis, heavy_hex_map, lagos_map, preset};
    use proptest::prelude::*;

    fn ring_ansatz(n: usize, gamma: f64, beta: f64) -> Circuit {
        let params = QaoaParams::new(vec![gamma], vec![beta]).unwrap();
        build_qaoa_ansatz(&make_ring(n).unwrap(), &params, true, false)
    }

    fn assert_exact(a: &Circuit, b: &Circuit) {
        let (ua, ub) = (unitary_of(a).unwrap(), unitary_of(b).unwrap());
        assert!(ua.max_abs_diff(&ub) < 1e-12, "diff {}", ua.max_abs_diff(&ub));
    }

    #[test]
    fn translation_rules_preserve_phase() {
        let basis: BTreeSet<GateKind> = [GateKind::RZ, GateKind::SX, GateKind::CX].into_iter().collect();
        for g in [
            Gate::H(0),
            Gate::RX(0, 0.37),
            Gate::RX(1, -2.9),
            Gate::X(1),
            Gate::RZZ(0, 1, 1.1),
            Gate::Swap(1, 0),
        ] {
            let c = Circuit::from_gates(2, [g]).unwrap();
            let t = translate_to_basis(&c, &basis).unwrap();
            assert!(t.gates().iter().all(|h| basis.contains(&h.kind())));
            assert_exact(&c, &t);
        }
        let h = Circuit::from_gates(1, [Gate::H(0)]).unwrap();
        assert_eq!(translate_to_basis(&h, &default_basis()).unwrap().len(), 3);
    }

    #[test]
    fn swap_orientation_follows_preceding_cx() {
        let c = Circuit::from_gates(2, [Gate::CX(1, 0), Gate::Swap(0, 1)]).unwrap();
        let t = translate_to_basis(&c, &default_basis()).unwrap();
        assert_eq!(t.gates()[1], Gate::CX(1, 0));
        assert_exact(&c, &t);
        let o = optimize(&t, 2);
        assert_eq!(o.len(), 2);
        assert_exact(&c, &o);
    }

    #[test]
    fn translation_leaves_basis_circuits_alone() {
        let c = Circuit::from_gates(2, [Gate::SX(0), Gate::CX(0, 1), Gate::RZ(1, 0.2), Gate::X(0)]).unwrap();
        assert_eq!(translate_to_basis(&c, &default_basis()).unwrap(), c);
        let bare: BTreeSet<GateKind> = [GateKind::CX].into_iter().collect();
        assert_eq!(
            translate_to_basis(&c, &bare),
            Err(TranspileError::Untranslatable(GateKind::SX))
        );
    }

    #[test]
    fn euler_forms_are_minimal_and_exact() {
        let cases: Vec<(Vec<Gate>, usize)> = vec![
            (vec![Gate::RZ(0, 0.3), Gate::RZ(0, 0.4)], 1),
            (vec![Gate::RZ(0, 0.3), Gate::RZ(0, -0.3)], 0),
            (vec![Gate::RZ(0, 2.0 * PI)], 0),
            (vec![Gate::H(0)], 3),
            (vec![Gate::X(0)], 1),
            (vec![Gate::SX(0), Gate::SX(0)], 1),
            (vec![Gate::H(0), Gate::H(0)], 0),
            (vec![Gate::RX(0, 0.7)], 5),
            (vec![Gate::RZ(0, 1.0), Gate::X(0)], 2),
        ];
        for (seq, len) in cases {
            let u = product_1q(&seq);
            let (out, alpha) = synthesize_1q(0, &u);
            assert_eq!(out.len(), len, "{seq:?} -> {out:?}");
            let w = product_1q(&out).scale(C64::from_polar(1.0, alpha));
            assert!(u.max_abs_diff(&w) < 1e-12);
        }
    }

    #[test]
    fn optimize_examples() {
        let c = Circuit::from_gates(2, [Gate::CX(0, 1), Gate::CX(0, 1)]).unwrap();
        assert!(optimize(&c, 2).is_empty());
        assert_eq!(optimize(&c, 1).len(), 2);
        let c = Circuit::from_gates(1, [Gate::RZ(0, 0.25), Gate::RZ(0, 0.5)]).unwrap();
        let o = optimize(&c, 1);
        assert_eq!(o.gates(), &[Gate::RZ(0, 0.75)]);
        assert!(o.global_phase.abs() < 1e-12);
        assert_eq!(optimize(&c, 0), c);
    }

    #[test]
    fn commutation_exposes_cancellations() {
        // RZ on the control slides through the CX and cancels its inverse.
        let c = Circuit::from_gates(
            2,
            [Gate::RZ(0, 0.4), Gate::CX(0, 1), Gate::RZ(0, -0.4), Gate::SX(1)],
        )
        .unwrap();
        assert_eq!(optimize(&c, 1).len(), 4);
        let o = optimize(&c, 2);
        assert_eq!(o.gates(), &[Gate::CX(0, 1), Gate::SX(1)]);
        assert_exact(&c, &o);
        // X through the target needs level 3.
        let c = Circuit::from_gates(2, [Gate::X(1), Gate::CX(0, 1), Gate::X(1), Gate::RZ(0, 0.1)]).unwrap();
        assert_eq!(optimize(&c, 2).len(), 4);
        let o = optimize(&c, 3);
        assert_eq!(o.len(), 2);
        assert_exact(&c, &o);
        // CX pairs separated by a commuting gate.
        let c = Circuit::from_gates(2, [Gate::CX(0, 1), Gate::RZ(0, 0.3), Gate::CX(0, 1)]).unwrap();
        assert_eq!(optimize(&c, 2).gates(), &[Gate::RZ(0, 0.3)]);
    }

    #[test]
    fn embeddings() {
        let hh = heavy_hex_map(3).unwrap();
        let l = find_cycle_embedding(&hh, 12).expect("12-cycle on heavy hex");
        let v = l.as_slice();
        for k in 0..12 {
            assert!(hh.is_coupled(v[k], v[(k + 1) % 12]));
        }
        assert_eq!(v.iter().collect::<BTreeSet<_>>().len(), 12);
        assert!(find_cycle_embedding(&hh, 8).is_none());
        assert!(find_cycle_embedding(&lagos_map(), 4).is_none());
        let tri = CouplingMap::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(find_cycle_embedding(&tri, 3).unwrap().as_slice(), &[0, 1, 2]);
        assert!(find_cycle_embedding(&tri, 2).is_none());
    }

    #[test]
    fn routing_examples() {
        let line = CouplingMap::new(3, &[(0, 1), (1, 2)]).unwrap();
        let c = Circuit::from_gates(3, [Gate::CX(0, 2)]).unwrap();
        let r = route_swaps(&c, &line, &Layout::trivial(3)).unwrap();
        assert_eq!(r.swap_count, 1);
        assert_eq!(r.circuit.gates(), &[Gate::Swap(0, 1), Gate::CX(1, 2)]);
        assert_eq!(r.final_layout.as_slice(), &[1, 0, 2]);

        let ok = Circuit::from_gates(3, [Gate::H(0), Gate::CX(1, 2), Gate::CX(1, 0)]).unwrap();
        let r = route_swaps(&ok, &line, &Layout::trivial(3)).unwrap();
        assert_eq!(r.swap_count, 0);
        assert_eq!(r.circuit.gates(), ok.gates());

        let split = CouplingMap::new(4, &[(0, 1), (2, 3)]).unwrap();
        let c = Circuit::from_gates(4, [Gate::CX(0, 3)]).unwrap();
        assert!(matches!(
            route_swaps(&c, &split, &Layout::trivial(4)),
            Err(TranspileError::Disconnected(..))
        ));
    }

    #[test]
    fn routing_stays_near_the_layout() {
        // Layout on 0 and 2 of a long line; only qubit 1 joins the region.
        let line = CouplingMap::new(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let allowed = routing_region(&line, &[0, 2]).unwrap();
        assert_eq!(allowed, vec![true, true, true, false, false, false]);
    }

    #[test]
    fn measurements_follow_the_final_layout() {
        let line = CouplingMap::new(3, &[(0, 1), (1, 2)]).unwrap();
        let mut c = Circuit::from_gates(3, [Gate::CX(0, 2)]).unwrap();
        c.measure_all().unwrap();
        let r = route_swaps(&c, &line, &Layout::trivial(3)).unwrap();
        let measured: Vec<usize> = r
            .circuit
            .gates()
            .iter()
            .filter_map(|g| match g {
                Gate::Measure(q) => Some(*q),
                _ => None,
            })
            .collect();
        assert_eq!(measured, vec![1, 0, 2]);
    }

    #[test]
    fn embedded_ring12_has_no_swaps() {
        let c = ring_ansatz(12, 0.4, 0.3);
        assert_eq!(c.metrics().op_count, 60);
        for name in ["kolkata-like", "washington-like"] {
            let profile = preset(name).unwrap();
            let mut per_level = Vec::new();
            for level in 0..=3 {
                let cfg = PassConfig::new(level, LayoutMethod::Embed, TranslationMethod::Resynth1q).unwrap();
                let r = transpile(&c, &profile, &cfg).unwrap();
                assert_eq!(r.layout_method, LayoutMethod::Embed);
                assert_eq!(r.swap_count, 0);
                assert_eq!(r.metrics_after.nonlocal_count, 24);
                assert_eq!(r.metrics_before.op_count, 60);
                per_level.push(r.metrics_after);
            }
            assert_eq!(per_level[1], per_level[3], "{name}");
            assert_eq!(per_level[2], per_level[3], "{name}");
        }
    }

    #[test]
    fn mitigation_ladder_on_ring12() {
        let c = ring_ansatz(12, 0.4, 0.3);
        let profile = preset("kolkata-like").unwrap();
        let off = transpile(&c, &profile, &PassConfig::mitigation_off()).unwrap();
        let on = transpile(&c, &profile, &PassConfig::mitigation_on()).unwrap();
        assert!(off.swap_count > 0);
        assert!(off.metrics_after.nonlocal_count > 100, "{:?}", off.metrics_after);
        assert!(on.metrics_after.depth < off.metrics_after.depth);
        assert!(on.metrics_after.op_count < off.metrics_after.op_count);
        assert!(on.metrics_after.nonlocal_count < off.metrics_after.nonlocal_count);
    }

    #[test]
    fn monotone_levels_on_rings() {
        let profile = preset("kolkata-like").unwrap();
        for n in 4..=12 {
            let c = ring_ansatz(n, 0.7, 0.2);
            for method in [LayoutMethod::Trivial, LayoutMethod::Embed] {
                let at = |level| {
                    let cfg = PassConfig::new(level, method, TranslationMethod::Rules).unwrap();
                    transpile(&c, &profile, &cfg).unwrap().metrics_after
                };
                let (l0, l3) = (at(0), at(3));
                assert!(l3.dominated_by(&l0), "n={n} {method}: {l3:?} vs {l0:?}");
            }
        }
    }

    #[test]
    fn global_phase_carries_minus_six_gamma() {
        let profile = preset("kolkata-like").unwrap();
        let cfg = PassConfig::mitigation_on();
        let phase = |gamma| transpile(&ring_ansatz(12, gamma, 0.3), &profile, &cfg).unwrap().circuit.global_phase;
        let (g0, g1) = (0.2, 0.55);
        let diff = (phase(g1) - phase(g0) + 6.0 * (g1 - g0)).rem_euclid(2.0 * PI);
        assert!(diff.min(2.0 * PI - diff) < 1e-9, "{diff}");
    }

    #[test]
    fn transpiled_ring_matches_virtual_circuit() {
        let profile = preset("kolkata-like").unwrap();
        let c = ring_ansatz(6, 0.9, 0.35);
        for cfg in [PassConfig::mitigation_off(), PassConfig::mitigation_on()] {
            let r = transpile(&c, &profile, &cfg).unwrap();
            let ov = embedded_overlap(&c, &r).unwrap();
            assert!((ov - ONE).norm() < 1e-9, "{cfg:?}: {ov}");
        }
    }

    #[test]
    fn small_cases() {
        let profile = preset("lagos-like").unwrap();
        let c = Circuit::from_gates(1, [Gate::H(0)]).unwrap();
        for level in 0..=3 {
            for method in [LayoutMethod::Trivial, LayoutMethod::Embed] {
                let cfg = PassConfig::new(level, method, TranslationMethod::Rules).unwrap();
                assert_eq!(transpile(&c, &profile, &cfg).unwrap().swap_count, 0);
            }
        }
        let wide = Circuit::new(8).unwrap();
        assert!(matches!(
            transpile(&wide, &profile, &PassConfig::mitigation_on()),
            Err(TranspileError::TooWide { .. })
        ));
        assert_eq!(
            PassConfig::new(4, LayoutMethod::Trivial, TranslationMethod::Rules),
            Err(TranspileError::BadLevel(4))
        );
    }

    fn arb_gate(n: usize) -> impl Strategy<Value = Gate> {
        let q = 0..n;
        let pair = (0..n, 1..n.max(2)).prop_map(move |(a, d)| (a, (a + d) % n));
        let angle = -7.0f64..7.0;
        prop_oneof![
            q.clone().prop_map(Gate::H),
            q.clone().prop_map(Gate::X),
            q.clone().prop_map(Gate::SX),
            (q.clone(), angle.clone()).prop_map(|(q, t)| Gate::RX(q, t)),
            (q, angle.clone()).prop_map(|(q, t)| Gate::RZ(q, t)),
            (pair.clone(), angle).prop_map(|((a, b), t)| Gate::RZZ(a, b, t)),
            pair.clone().prop_map(|(a, b)| Gate::CX(a, b)),
            pair.prop_map(|(a, b)| Gate::Swap(a, b)),
        ]
    }

    fn arb_circuit() -> impl Strategy<Value = Circuit> {
        (2usize..=5)
            .prop_flat_map(|n| (Just(n), prop::collection::vec(arb_gate(n), 0..30), -3.0f64..3.0))
            .prop_map(|(n, gates, phase)| {
                let mut c = Circuit::from_gates(n, gates).unwrap();
                c.global_phase = phase;
                c
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn transpile_preserves_semantics(c in arb_circuit(), dev in 0usize..2, level in 0u8..=3, embed in any::<bool>()) {
            let profile = preset(["lagos-like", "kolkata-like"][dev]).unwrap();
            let method = if embed { LayoutMethod::Embed } else { LayoutMethod::Trivial };
            let cfg = PassConfig::new(level, method, TranslationMethod::Rules).unwrap();
            let r = transpile(&c, &profile, &cfg).unwrap();
            for g in r.circuit.gates() {
                prop_assert!(profile.basis().contains(&g.kind()));
                if g.is_two_qubit() {
                    prop_assert!(profile.coupling().is_coupled(g.qubits()[0], g.qubits()[1]));
                }
            }
            let ov = embedded_overlap(&c, &r).unwrap();
            prop_assert!((ov - ONE).norm() < 1e-9, "overlap {}", ov);
        }

        #[test]
        fn optimize_is_idempotent(c in arb_circuit(), level in 0u8..=3) {
            let t = translate_to_basis(&decompose_rzz(&c), &default_basis()).unwrap();
            let once = optimize(&t, level);
            prop_assert_eq!(optimize(&once, level), once.clone());
            prop_assert!(once.metrics().dominated_by(&t.metrics()));
            let (u, v) = (unitary_of(&t).unwrap(), unitary_of(&once).unwrap());
            prop_assert!(u.max_abs_diff(&v) < 1e-9);
        }
    }
}
