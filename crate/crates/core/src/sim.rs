//! Statevector and density-matrix simulation, expectation values, shot
//! sampling with readout confusion, and success probability.
//!
//! Both state types store only a subset of the circuit's qubits (`labels`);
//! qubits outside it are known to be in `|0>`. Local bit `k` of a state
//! index is qubit `labels[k]`.

use std::collections::{BTreeMap, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{gate_noise, ChannelError, KrausChannel};
use crate::circuit::{Circuit, GateKind};
use crate::graph::{Bitstring, Graph, MaxCutSolution};
use crate::linalg::{apply_1q, apply_2q, for_each_base, Mat, C64, I, ONE, ZERO};
use crate::noise::DeviceProfile;

pub const MAX_STATEVECTOR_QUBITS: usize = 24;
pub const MAX_DENSITY_QUBITS: usize = 12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("circuit contains measurements")]
    Measured,
    #[error("{engine} simulation supports at most {max} qubits, circuit needs {n}")]
    TooLarge {
        engine: &'static str,
        n: usize,
        max: usize,
    },
    #[error("gate `{0}` is not in the device basis")]
    NotInBasis(String),
    #[error("gate `{0}` acts on an uncoupled pair")]
    NotCoupled(String),
    #[error("gate `{0}` uses a qubit the device does not have")]
    QubitOutOfRange(String),
    #[error("device has no spec for gate `{0}`")]
    MissingSpec(String),
    #[error("state covers {found} qubits, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shots must be at least 1")]
    NoShots,
    #[error("readout list has {found} entries for {expected} bits")]
    ReadoutLength { expected: usize, found: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Common read access to simulated states.
pub trait QuantumState {
    /// Width of the circuit register the state belongs to.
    fn register_size(&self) -> usize;

    /// Register qubits held explicitly, in local bit order.
    fn labels(&self) -> &[usize];

    /// Probabilities over local indices.
    fn local_probabilities(&self) -> Vec<f64>;

    /// Distribution over `targets`: bit `k` of the result index is the
    /// outcome of register qubit `targets[k]`. Other qubits are traced out.
    fn distribution(&self, targets: &[usize]) -> Vec<f64> {
        let labels = self.labels();
        let moves: Vec<(usize, usize)> = targets
            .iter()
            .enumerate()
            .filter_map(|(t, q)| labels.iter().position(|l| l == q).map(|local| (local, t)))
            .collect();
        let mut out = vec![0.0; 1 << targets.len()];
        for (i, p) in self.local_probabilities().into_iter().enumerate() {
            let mut x = 0;
            for &(local, t) in &moves {
                x |= ((i >> local) & 1) << t;
            }
            out[x] += p;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    register: usize,
    labels: Vec<usize>,
    amps: Vec<C64>,
}

impl StateVector {
    /// Computational basis state of an `n`-qubit register.
    pub fn basis_state(n: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n];
        amps[index] = ONE;
        Self {
            register: n,
            labels: (0..n).collect(),
            amps,
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.labels.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl QuantumState for StateVector {
    fn register_size(&self) -> usize {
        self.register
    }

    fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn local_probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }
}

fn check_size(engine: &'static str, n: usize, max: usize) -> Result<(), SimError> {
    if n > max {
        Err(SimError::TooLarge { engine, n, max })
    } else {
        Ok(())
    }
}

fn simulate_pure(c: &Circuit, labels: Vec<usize>) -> Result<StateVector, SimError> {
    if c.has_measurements() {
        return Err(SimError::Measured);
    }
    check_size("statevector", labels.len(), MAX_STATEVECTOR_QUBITS)?;
    let mut local = vec![usize::MAX; c.num_qubits()];
    for (k, &q) in labels.iter().enumerate() {
        local[q] = k;
    }
    let mut amps = vec![ZERO; 1 << labels.len()];
    amps[0] = C64::from_polar(1.0, c.global_phase);
    for g in c.gates() {
        let m = g.matrix().expect("unitary gate");
        let qs = g.qubits();
        if qs.len() == 1 {
            apply_1q(&mut amps, local[qs[0]], &m);
        } else {
            apply_2q(&mut amps, local[qs[0]], local[qs[1]], &m);
        }
    }
    Ok(StateVector {
        register: c.num_qubits(),
        labels,
        amps,
    })
}

/// `U_c |0...0>` over the full register, including the global phase.
pub fn run_statevector(c: &Circuit) -> Result<StateVector, SimError> {
    check_size("statevector", c.num_qubits(), MAX_STATEVECTOR_QUBITS)?;
    simulate_pure(c, (0..c.num_qubits()).collect())
}

/// As [`run_statevector`] but holding only the qubits some gate touches,
/// so wide physical circuits with few active qubits stay cheap.
pub fn run_statevector_active(c: &Circuit) -> Result<StateVector, SimError> {
    simulate_pure(c, c.active_qubits())
}

/// Density matrix stored by its Pauli coefficients `c_P = tr(P rho)`,
/// so `rho = 2^-n sum_P c_P P`. The Pauli digit of local qubit `q`
/// (0 = I, 1 = X, 2 = Y, 3 = Z) sits at bits `q` (low) and `n + q` (high)
/// of the coefficient index, the same positions the column and row bits
/// of `q` occupy in a row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    register: usize,
    labels: Vec<usize>,
    pauli: Vec<f64>,
}

/// Dense 2x2 block `(rho00, rho01, rho10, rho11)` to `(I, X, Y, Z)`
/// coefficients, and back.
fn to_pauli_1q() -> Mat {
    Mat::from_rows(&[
        &[ONE, ZERO, ZERO, ONE],
        &[ZERO, ONE, ONE, ZERO],
        &[ZERO, I, -I, ZERO],
        &[ONE, ZERO, ZERO, -ONE],
    ])
}

fn from_pauli_1q() -> Mat {
    let h = C64::new(0.5, 0.0);
    let ih = C64::new(0.0, 0.5);
    Mat::from_rows(&[&[h, ZERO, ZERO, h], &[ZERO, h, -ih, ZERO], &[ZERO, h, ih, ZERO], &[h, ZERO, ZERO, -h]])
}

/// Per-qubit basis change lifted to a `k`-qubit superoperator index.
fn lift_basis_change(m: &Mat, k: usize) -> Mat {
    let d = 1usize << (2 * k);
    let digit = |l: usize, i: usize| ((l >> i) & 1) | (((l >> (k + i)) & 1) << 1);
    let mut out = Mat::zeros(d);
    for r in 0..d {
        for c in 0..d {
            let mut z = ONE;
            for i in 0..k {
                z *= m.get(digit(r, i), digit(c, i));
            }
            out.set(r, c, z);
        }
    }
    out
}

/// Pauli transfer matrix of a dense-layout superoperator on `k` qubits.
fn transfer_matrix(s: &Mat) -> Vec<f64> {
    let k = s.dim().trailing_zeros() as usize / 2;
    let fwd = lift_basis_change(&to_pauli_1q(), k);
    let inv = lift_basis_change(&from_pauli_1q(), k);
    let r = &(&fwd * s) * &inv;
    debug_assert!(r.data().iter().all(|z| z.im.abs() < 1e-9));
    r.data().iter().map(|z| z.re).collect()
}

impl DensityMatrix {
    /// `|0...0><0...0|` on the given register qubits.
    fn ground(register: usize, labels: Vec<usize>) -> Self {
        let n = labels.len();
        let mut pauli = vec![0.0; 1 << (2 * n)];
        for z in 0..1usize << n {
            pauli[z | (z << n)] = 1.0;
        }
        Self { register, labels, pauli }
    }

    pub fn from_statevector(sv: &StateVector) -> Self {
        let n = sv.labels.len();
        let d = sv.amps.len();
        let mut dense = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                dense[r * d + c] = sv.amps[r] * sv.amps[c].conj();
            }
        }
        let t = to_pauli_1q();
        for q in 0..n {
            apply_dense_local(&mut dense, n, q, &t);
        }
        Self {
            register: sv.register,
            labels: sv.labels.clone(),
            pauli: dense.into_iter().map(|z| z.re).collect(),
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.labels.len()
    }

    pub fn pauli_coefficients(&self) -> &[f64] {
        &self.pauli
    }

    /// Matrix element `<r| rho |c>` over local indices.
    pub fn entry(&self, r: usize, c: usize) -> C64 {
        let n = self.labels.len();
        let mut acc = ZERO;
        // One of two Pauli digits per qubit contributes to each element.
        for choice in 0..1usize << n {
            let mut idx = 0;
            let mut w = ONE;
            for q in 0..n {
                let (rb, cb) = ((r >> q) & 1, (c >> q) & 1);
                let second = (choice >> q) & 1 == 1;
                let (digit, val) = match (rb == cb, second) {
                    (true, false) => (0, ONE),
                    (true, true) => (3, if rb == 0 { ONE } else { -ONE }),
                    (false, false) => (1, ONE),
                    (false, true) => (2, if rb == 0 { -I } else { I }),
                };
                idx |= ((digit & 1) << q) | ((digit >> 1) << (n + q));
                w *= val;
            }
            acc += w * self.pauli[idx];
        }
        acc / (1u64 << n) as f64
    }

    pub fn trace(&self) -> f64 {
        self.pauli[0]
    }

    /// `max |rho - rho^dagger|` of the dense form.
    pub fn hermiticity_error(&self) -> f64 {
        let m = self.to_mat();
        m.max_abs_diff(&m.adjoint())
    }

    /// Dense copy, for small states.
    pub fn to_mat(&self) -> Mat {
        let n = self.labels.len();
        let mut dense: Vec<C64> = self.pauli.iter().map(|&x| C64::new(x, 0.0)).collect();
        let t = from_pauli_1q();
        for q in 0..n {
            apply_dense_local(&mut dense, n, q, &t);
        }
        Mat::from_vec(1 << n, dense)
    }

    /// Apply `ch` to register qubits `qubits` (local bit 0 of the channel
    /// is `qubits[0]`); all of them must be held by the state.
    pub fn apply_channel(&mut self, qubits: &[usize], ch: &KrausChannel) {
        let local: Vec<usize> = qubits
            .iter()
            .map(|q| self.labels.iter().position(|l| l == q).expect("qubit held by the state"))
            .collect();
        let (local, s) = canonical_superop(&local, ch.superoperator());
        apply_transfer(&mut self.pauli, self.labels.len(), &local, &transfer_matrix(&s));
    }
}

impl QuantumState for DensityMatrix {
    fn register_size(&self) -> usize {
        self.register
    }

    fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Diagonal from the I/Z coefficients by a Walsh-Hadamard transform.
    fn local_probabilities(&self) -> Vec<f64> {
        let n = self.labels.len();
        let dim = 1usize << n;
        let mut v: Vec<f64> = (0..dim).map(|z| self.pauli[z | (z << n)]).collect();
        let mut h = 1;
        while h < dim {
            for i in (0..dim).step_by(2 * h) {
                for j in i..i + h {
                    let (a, b) = (v[j], v[j + h]);
                    v[j] = a + b;
                    v[j + h] = a - b;
                }
            }
            h *= 2;
        }
        let scale = 1.0 / dim as f64;
        v.iter_mut().for_each(|p| *p *= scale);
        v
    }
}

/// Apply a 4x4 map to the (column, row) bit pair of local qubit `q` in a
/// dense-layout vector.
fn apply_dense_local(data: &mut [C64], n: usize, q: usize, m: &Mat) {
    let offs = [0, 1 << q, 1 << (n + q), (1 << q) | (1 << (n + q))];
    for_each_base(2 * n, &[q, n + q], |base| {
        let v = offs.map(|o| data[base + o]);
        for (r, &o) in offs.iter().enumerate() {
            data[base + o] = (0..4).map(|l| m.get(r, l) * v[l]).sum();
        }
    });
}

/// Offsets of the local indices on qubits `qs`: bit `i` of a local index
/// is the low digit bit of `qs[i]`, bit `k + i` its high bit.
fn local_offsets(n: usize, qs: &[usize]) -> Vec<usize> {
    let k = qs.len();
    (0..1usize << (2 * k))
        .map(|l| {
            (0..k)
                .map(|i| (((l >> i) & 1) << qs[i]) | (((l >> (k + i)) & 1) << (n + qs[i])))
                .sum()
        })
        .collect()
}

fn apply_transfer(pauli: &mut [f64], n: usize, qs: &[usize], r: &[f64]) {
    let offsets = local_offsets(n, qs);
    let mut sorted = qs.to_vec();
    sorted.sort_unstable();
    let mut free = Vec::with_capacity(1 << (n - qs.len()));
    for_each_base(n, &sorted, |b| free.push(b));
    match qs.len() {
        1 => apply_fixed::<4>(pauli, n, &offsets, &free, r),
        2 => apply_fixed::<16>(pauli, n, &offsets, &free, r),
        k => unreachable!("transfer matrices act on 1 or 2 qubits, got {k}"),
    }
}

fn apply_fixed<const D: usize>(pauli: &mut [f64], n: usize, offsets: &[usize], free: &[usize], r: &[f64]) {
    // Column-major so the inner loop is an axpy over output rows.
    let mut m = [[0.0f64; D]; D];
    for (l, col) in m.iter_mut().enumerate() {
        for (row, v) in col.iter_mut().enumerate() {
            *v = r[row * D + l];
        }
    }
    let mut off = [0usize; D];
    off.copy_from_slice(offsets);
    for &hi in free {
        for &lo in free {
            let base = (hi << n) | lo;
            let mut out = [0.0f64; D];
            for l in 0..D {
                let x = pauli[base + off[l]];
                let col = &m[l];
                for row in 0..D {
                    out[row] += col[row] * x;
                }
            }
            for row in 0..D {
                pauli[base + off[row]] = out[row];
            }
        }
    }
}

fn unitary_superop(u: &Mat) -> Mat {
    u.kron(&u.conj())
}

/// Reorder a two-qubit superoperator so its qubits ascend.
fn canonical_superop(qs: &[usize], s: Mat) -> (Vec<usize>, Mat) {
    if qs.len() < 2 || qs[0] < qs[1] {
        return (qs.to_vec(), s);
    }
    // Swap bit pairs (0,1) and (2,3) of every local index.
    let swap = |l: usize| (l & !0b1111) | ((l & 0b0101) << 1) | ((l & 0b1010) >> 1);
    let mut t = Mat::zeros(16);
    for r in 0..16 {
        for c in 0..16 {
            t.set(swap(r), swap(c), s.get(r, c));
        }
    }
    (vec![qs[1], qs[0]], t)
}

/// Embed one-qubit superoperators on the low and high qubit of a pair.
fn lift_pair(lo: Option<&Mat>, hi: Option<&Mat>) -> Mat {
    let id = Mat::identity(4);
    let lo = lo.unwrap_or(&id);
    let hi = hi.unwrap_or(&id);
    let split = |l: usize| {
        let (c0, c1, r0, r1) = (l & 1, (l >> 1) & 1, (l >> 2) & 1, (l >> 3) & 1);
        (r0 * 2 + c0, r1 * 2 + c1)
    };
    let mut s = Mat::zeros(16);
    for r in 0..16 {
        let (ra, rb) = split(r);
        for c in 0..16 {
            let (ca, cb) = split(c);
            s.set(r, c, lo.get(ra, ca) * hi.get(rb, cb));
        }
    }
    s
}

struct FusedOp {
    qubits: Vec<usize>,
    s: Mat,
}

/// Merges adjacent superoperators. One-qubit maps fold into the last
/// two-qubit map on their qubit, or into the first one that follows;
/// consecutive two-qubit maps on the same pair fold together.
struct Fuser {
    ops: Vec<FusedOp>,
    last: Vec<Option<usize>>,
    pending: Vec<Option<Mat>>,
}

impl Fuser {
    fn new(n: usize) -> Self {
        Self {
            ops: Vec::new(),
            last: vec![None; n],
            pending: vec![None; n],
        }
    }

    fn push_1q(&mut self, q: usize, s: Mat) {
        match self.last[q] {
            Some(i) => {
                let op = &mut self.ops[i];
                let lifted = if op.qubits[0] == q {
                    lift_pair(Some(&s), None)
                } else {
                    lift_pair(None, Some(&s))
                };
                op.s = &lifted * &op.s;
            }
            None => {
                self.pending[q] = Some(match self.pending[q].take() {
                    Some(prev) => &s * &prev,
                    None => s,
                });
            }
        }
    }

    fn push_2q(&mut self, a: usize, b: usize, s: Mat) {
        debug_assert!(a < b);
        if let (Some(i), Some(j)) = (self.last[a], self.last[b]) {
            if i == j {
                self.ops[i].s = &s * &self.ops[i].s;
                return;
            }
        }
        let pa = self.pending[a].take();
        let pb = self.pending[b].take();
        let s = if pa.is_some() || pb.is_some() {
            &s * &lift_pair(pa.as_ref(), pb.as_ref())
        } else {
            s
        };
        self.ops.push(FusedOp { qubits: vec![a, b], s });
        self.last[a] = Some(self.ops.len() - 1);
        self.last[b] = Some(self.ops.len() - 1);
    }

    fn finish(mut self) -> Vec<FusedOp> {
        for (q, p) in self.pending.iter_mut().enumerate() {
            if let Some(s) = p.take() {
                self.ops.push(FusedOp { qubits: vec![q], s });
            }
        }
        self.ops
    }
}

/// Noisy simulation of a device-legal circuit. Each gate applies its
/// unitary, then depolarizing noise sized so the combined channel matches
/// the gate's error, then thermal relaxation of every participating qubit
/// for the gate duration. Only qubits touched by some gate are simulated;
/// trailing measurements are ignored (readout error applies at sampling).
pub fn run_density(c: &Circuit, profile: &DeviceProfile) -> Result<DensityMatrix, SimError> {
    let labels = c.active_qubits();
    let n = labels.len();
    check_size("density-matrix", n, MAX_DENSITY_QUBITS)?;
    let mut local = vec![usize::MAX; c.num_qubits()];
    for (k, &q) in labels.iter().enumerate() {
        local[q] = k;
    }

    let mut noise_cache: HashMap<(GateKind, usize, usize), Option<Mat>> = HashMap::new();
    let mut fuser = Fuser::new(n);
    for g in c.gates() {
        if !g.is_unitary() {
            continue;
        }
        let kind = g.kind();
        if !profile.basis().contains(&kind) {
            return Err(SimError::NotInBasis(g.to_string()));
        }
        let qs = g.qubits();
        if qs.iter().any(|&q| q >= profile.num_qubits()) {
            return Err(SimError::QubitOutOfRange(g.to_string()));
        }
        if qs.len() == 2 && !profile.coupling().is_coupled(qs[0], qs[1]) {
            return Err(SimError::NotCoupled(g.to_string()));
        }
        let mut phys: Vec<usize> = qs.to_vec();
        phys.sort_unstable();
        let key = (kind, phys[0], phys.get(1).copied().unwrap_or(usize::MAX));
        if !noise_cache.contains_key(&key) {
            let spec = profile
                .gate_spec(kind, &phys)
                .ok_or_else(|| SimError::MissingSpec(g.to_string()))?;
            let relax: Vec<(f64, f64)> = phys
                .iter()
                .map(|&q| {
                    let p = profile.qubit(q);
                    (p.t1_us, p.t2_us)
                })
                .collect();
            let ch = gate_noise(spec.error, spec.duration_ns, &relax)?;
            noise_cache.insert(key, ch.map(|ch| ch.superoperator()));
        }
        let noise = noise_cache[&key].as_ref();

        let u = unitary_superop(&g.matrix().expect("unitary gate"));
        let lq: Vec<usize> = qs.iter().map(|&q| local[q]).collect();
        let (lq, u) = canonical_superop(&lq, u);
        // Local order follows physical order, so the canonical form of
        // the noise (ascending physical qubits) lines up with `lq`.
        let s = match noise {
            Some(nz) => nz * &u,
            None => u,
        };
        if lq.len() == 1 {
            fuser.push_1q(lq[0], s);
        } else {
            fuser.push_2q(lq[0], lq[1], s);
        }
    }

    let mut rho = DensityMatrix::ground(c.num_qubits(), labels);
    for op in fuser.finish() {
        apply_transfer(&mut rho.pauli, n, &op.qubits, &transfer_matrix(&op.s));
    }
    Ok(rho)
}

/// `sum_x P(x) C(x)` from a distribution over the graph's vertices.
pub fn cost_from_distribution(dist: &[f64], g: &Graph) -> f64 {
    dist.iter()
        .enumerate()
        .map(|(x, p)| p * g.cut_value_index(x as u64))
        .sum()
}

fn check_register(state: &impl QuantumState, g: &Graph) -> Result<(), SimError> {
    if state.register_size() != g.num_vertices() {
        return Err(SimError::DimensionMismatch {
            expected: g.num_vertices(),
            found: state.register_size(),
        });
    }
    Ok(())
}

/// Exact expectation of the cut Hamiltonian, register qubit `k` read as
/// vertex `k`.
pub fn expectation_cost(state: &impl QuantumState, g: &Graph) -> Result<f64, SimError> {
    check_register(state, g)?;
    let targets: Vec<usize> = (0..g.num_vertices()).collect();
    Ok(cost_from_distribution(&state.distribution(&targets), g))
}

/// Probability mass on the optimal cuts. Readout error is not applied.
pub fn success_probability(state: &impl QuantumState, solution: &MaxCutSolution) -> f64 {
    let n = state.register_size();
    let targets: Vec<usize> = (0..n).collect();
    success_from_distribution(&state.distribution(&targets), solution)
}

pub fn success_from_distribution(dist: &[f64], solution: &MaxCutSolution) -> f64 {
    solution
        .optimal_bitstrings
        .iter()
        .filter_map(|b| dist.get(b.index() as usize))
        .sum()
}

/// Measurement record: outcome counts keyed by bitstring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counts {
    num_bits: usize,
    shots: usize,
    counts: BTreeMap<Bitstring, usize>,
}

impl Counts {
    pub fn num_bits(&self) -> usize {
        self.num_bits
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn get(&self, b: &Bitstring) -> usize {
        self.counts.get(b).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Bitstring, &usize)> {
        self.counts.iter()
    }

    /// Empirical `sum_x f(x) C(x)`.
    pub fn mean_cost(&self, g: &Graph) -> Result<f64, SimError> {
        if self.num_bits != g.num_vertices() {
            return Err(SimError::DimensionMismatch {
                expected: g.num_vertices(),
                found: self.num_bits,
            });
        }
        let total: f64 = self
            .counts
            .iter()
            .map(|(b, &k)| k as f64 * g.cut_value_index(b.index()))
            .sum();
        Ok(total / self.shots as f64)
    }

    /// Fraction of shots that landed on an optimal cut.
    pub fn success_probability(&self, solution: &MaxCutSolution) -> f64 {
        let hits: usize = solution.optimal_bitstrings.iter().map(|b| self.get(b)).sum();
        hits as f64 / self.shots as f64
    }

    /// Fraction of shots whose bit `k` reads 1.
    pub fn ones_fraction(&self, k: usize) -> f64 {
        let ones: usize = self
            .counts
            .iter()
            .filter(|(b, _)| b.bit(k) == 1)
            .map(|(_, &c)| c)
            .sum();
        ones as f64 / self.shots as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bitstring,count\n");
        for (b, k) in &self.counts {
            out.push_str(&format!("{b},{k}\n"));
        }
        out
    }
}

/// Draw `shots` outcomes from `dist` (indexed with bit `k` = bit `k` of
/// the outcome), then flip each bit with its `(p01, p10)` confusion rate.
pub fn sample_distribution(
    dist: &[f64],
    num_bits: usize,
    shots: usize,
    readout: Option<&[(f64, f64)]>,
    seed: u64,
) -> Result<Counts, SimError> {
    if shots == 0 {
        return Err(SimError::NoShots);
    }
    if dist.len() != 1 << num_bits {
        return Err(SimError::DimensionMismatch {
            expected: num_bits,
            found: dist.len().trailing_zeros() as usize,
        });
    }
    if let Some(r) = readout {
        if r.len() != num_bits {
            return Err(SimError::ReadoutLength {
                expected: num_bits,
                found: r.len(),
            });
        }
    }
    let readout = readout.filter(|r| r.iter().any(|&(a, b)| a > 0.0 || b > 0.0));
    let weights: Vec<f64> = dist.iter().map(|p| p.max(0.0)).collect();
    let index = WeightedIndex::new(&weights).expect("distribution has positive mass");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = vec![0usize; dist.len()];
    for _ in 0..shots {
        let mut x = index.sample(&mut rng);
        if let Some(r) = readout {
            for (k, &(p01, p10)) in r.iter().enumerate() {
                let flip = if (x >> k) & 1 == 0 { p01 } else { p10 };
                if rng.gen::<f64>() < flip {
                    x ^= 1 << k;
                }
            }
        }
        tally[x] += 1;
    }
    let counts = tally
        .into_iter()
        .enumerate()
        .filter(|&(_, k)| k > 0)
        .map(|(x, k)| (Bitstring::from_index(num_bits, x as u64), k))
        .collect();
    Ok(Counts {
        num_bits,
        shots,
        counts,
    })
}

/// Sample the whole register of `state`.
pub fn sample_counts(
    state: &impl QuantumState,
    shots: usize,
    readout: Option<&[(f64, f64)]>,
    seed: u64,
) -> Result<Counts, SimError> {
    let n = state.register_size();
    let targets: Vec<usize> = (0..n).collect();
    sample_distribution(&state.distribution(&targets), n, shots, readout, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{depolarizing_channel, thermal_relaxation_channel};
    use crate::circuit::{build_qaoa_ansatz, Gate, QaoaParams};
    use crate::graph::{brute_force_maxcut, make_ring};
    use crate::noise::{preset, synthetic_profile, CouplingMap, GateSpec, NoiseDefaults, QubitParams};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn p1(g: f64, b: f64) -> QaoaParams {
        QaoaParams::new(vec![g], vec![b]).unwrap()
    }

    /// All-to-all device over `n` qubits with the bundled basis.
    fn complete_profile(n: usize, defaults: &NoiseDefaults) -> DeviceProfile {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        synthetic_profile("complete", CouplingMap::new(n, &pairs).unwrap(), defaults).unwrap()
    }

    fn one_qubit_profile(t1: f64, t2: f64, basis: &[GateKind], duration: f64) -> DeviceProfile {
        let gates = basis
            .iter()
            .filter(|k| k.arity() == 1)
            .map(|&kind| GateSpec {
                kind,
                qubits: vec![0],
                error: 0.0,
                duration_ns: duration,
            })
            .collect();
        DeviceProfile::new(
            "one",
            CouplingMap::new(1, &[]).unwrap(),
            vec![QubitParams {
                t1_us: t1,
                t2_us: t2,
                p01: 0.0,
                p10: 0.0,
            }],
            gates,
            basis.iter().copied().collect(),
        )
        .unwrap()
    }

    /// Circuit over {rz, sx, x, cx} standing for arbitrary gates.
    fn random_basis_circuit(n: usize, ops: &[(u8, usize, usize, f64)]) -> Circuit {
        let mut c = Circuit::new(n).unwrap();
        for &(k, a, b, t) in ops {
            let (a, b) = (a % n, b % n);
            let g = match k % 4 {
                0 => Gate::RZ(a, t),
                1 => Gate::SX(a),
                2 => Gate::X(a),
                _ if a != b => Gate::CX(a, b),
                _ => Gate::SX(b),
            };
            c.push(g).unwrap();
        }
        c
    }

    #[test]
    fn pauli_basis_change_inverts() {
        assert!((&to_pauli_1q() * &from_pauli_1q()).max_abs_diff(&Mat::identity(4)) < 1e-15);
    }

    #[test]
    fn statevector_examples() {
        let sv = run_statevector(&Circuit::from_gates(1, [Gate::H(0)]).unwrap()).unwrap();
        for a in sv.amplitudes() {
            assert!((a - C64::new(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        }
        let g = make_ring(4).unwrap();
        let sv = run_statevector(&build_qaoa_ansatz(&g, &p1(0.0, 0.0), false, false)).unwrap();
        for a in sv.amplitudes() {
            assert!((a.norm() - 0.25).abs() < 1e-15);
        }
        assert!((expectation_cost(&sv, &g).unwrap() - 2.0).abs() < 1e-12);

        let sv = run_statevector(&build_qaoa_ansatz(&g, &p1(PI / 4.0, PI / 8.0), false, false)).unwrap();
        assert!((expectation_cost(&sv, &g).unwrap() - 3.0).abs() < 1e-12);

        let mut m = Circuit::new(1).unwrap();
        m.measure_all().unwrap();
        assert!(matches!(run_statevector(&m), Err(SimError::Measured)));
        assert!(matches!(run_statevector(&Circuit::new(25).unwrap()), Err(SimError::TooLarge { .. })));
    }

    #[test]
    fn optimal_p1_on_even_rings() {
        for n in (4..=12).step_by(2) {
            let g = make_ring(n).unwrap();
            let sv = run_statevector(&build_qaoa_ansatz(&g, &p1(PI / 4.0, PI / 8.0), true, false)).unwrap();
            assert!((expectation_cost(&sv, &g).unwrap() - 0.75 * n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn expectation_examples() {
        let g = make_ring(4).unwrap();
        // |0101>: vertices 1 and 3 carry bit 1.
        let sv = StateVector::basis_state(4, 0b1010);
        assert_eq!(expectation_cost(&sv, &g).unwrap(), 4.0);
        let g5 = make_ring(5).unwrap();
        assert!(matches!(expectation_cost(&sv, &g5), Err(SimError::DimensionMismatch { .. })));
    }

    #[test]
    fn success_probability_examples() {
        let g = make_ring(4).unwrap();
        let sol = brute_force_maxcut(&g).unwrap();
        let uniform = run_statevector(&build_qaoa_ansatz(&g, &p1(0.0, 0.0), false, false)).unwrap();
        assert!((success_probability(&uniform, &sol) - 0.125).abs() < 1e-12);
        assert!((success_probability(&StateVector::basis_state(4, 0b1010), &sol) - 1.0).abs() < 1e-15);
        let opt = run_statevector(&build_qaoa_ansatz(&g, &p1(PI / 4.0, PI / 8.0), false, false)).unwrap();
        let s = success_probability(&opt, &sol);
        assert!(s > 0.125 && s < 1.0);
    }

    #[test]
    fn thermal_decay_through_density_engine() {
        // X prepares |1>, then relaxation for one t1 (t2 = 2 t1).
        let prof = one_qubit_profile(1.0, 2.0, &[GateKind::X], 1000.0);
        let rho = run_density(&Circuit::from_gates(1, [Gate::X(0)]).unwrap(), &prof).unwrap();
        assert!((rho.entry(1, 1).re - (-1.0f64).exp()).abs() < 1e-9);
        assert!((rho.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn x_without_applicable_noise() {
        let prof = one_qubit_profile(100.0, 80.0, &[GateKind::X, GateKind::CX], 0.0);
        let rho = run_density(&Circuit::from_gates(1, [Gate::X(0)]).unwrap(), &prof).unwrap();
        assert_eq!(rho.local_probabilities(), vec![0.0, 1.0]);
    }

    #[test]
    fn density_rejections() {
        let prof = preset("lagos-like").unwrap();
        let h = Circuit::from_gates(7, [Gate::H(0)]).unwrap();
        assert!(matches!(run_density(&h, &prof), Err(SimError::NotInBasis(_))));
        let cx = Circuit::from_gates(7, [Gate::CX(0, 6)]).unwrap();
        assert!(matches!(run_density(&cx, &prof), Err(SimError::NotCoupled(_))));
        let wide = Circuit::from_gates(8, [Gate::X(7)]).unwrap();
        assert!(matches!(run_density(&wide, &prof), Err(SimError::QubitOutOfRange(_))));
        let big = preset("kolkata-like").unwrap();
        let c = Circuit::from_gates(27, (0..13).map(Gate::X)).unwrap();
        assert!(matches!(run_density(&c, &big), Err(SimError::TooLarge { .. })));
    }

    #[test]
    fn zero_noise_density_equals_pure_state() {
        let prof = complete_profile(4, &NoiseDefaults::zero_noise());
        let ops: Vec<(u8, usize, usize, f64)> = (0..60)
            .map(|k| ((k * 7 % 5) as u8, k * 3 % 4, (k * 5 + 1) % 4, 0.37 * k as f64))
            .collect();
        let c = random_basis_circuit(4, &ops);
        let rho = run_density(&c, &prof).unwrap();
        let pure = DensityMatrix::from_statevector(&run_statevector_active(&c).unwrap());
        assert_eq!(rho.labels(), pure.labels());
        assert!(rho.to_mat().max_abs_diff(&pure.to_mat()) < 1e-10);
    }

    #[test]
    fn noisy_ring4_falls_below_optimum() {
        let g = make_ring(4).unwrap();
        let c = crate::circuit::build_qaoa_ansatz(&g, &p1(PI / 4.0, PI / 8.0), true, false);
        let basis_c = translate_simple(&c);
        let dev = complete_profile(4, &NoiseDefaults::bundled());
        let rho = run_density(&basis_c, &dev).unwrap();
        let f = expectation_cost(&rho, &g).unwrap();
        assert!(f < 3.0 - 1e-3, "{f}");
        assert!(f > 2.5, "{f}");
    }

    /// Minimal {rz, sx, x, cx} translation, exact up to global phase.
    fn translate_simple(c: &Circuit) -> Circuit {
        let mut out = Circuit::new(c.num_qubits()).unwrap();
        for g in c.gates() {
            match *g {
                Gate::H(q) => {
                    out.push(Gate::RZ(q, PI / 2.0)).unwrap();
                    out.push(Gate::SX(q)).unwrap();
                    out.push(Gate::RZ(q, PI / 2.0)).unwrap();
                }
                Gate::RX(q, t) => {
                    out.push(Gate::RZ(q, PI / 2.0)).unwrap();
                    out.push(Gate::SX(q)).unwrap();
                    out.push(Gate::RZ(q, t + PI)).unwrap();
                    out.push(Gate::SX(q)).unwrap();
                    out.push(Gate::RZ(q, PI / 2.0)).unwrap();
                }
                other => out.push(other).unwrap(),
            }
        }
        out
    }

    #[test]
    fn simple_translation_is_faithful() {
        let g = make_ring(4).unwrap();
        let c = build_qaoa_ansatz(&g, &p1(0.3, 0.9), true, false);
        let a = crate::circuit::unitary_of(&c).unwrap();
        let b = crate::circuit::unitary_of(&translate_simple(&c)).unwrap();
        assert!(a.equal_up_to_phase(&b, 1e-10));
    }

    #[test]
    fn fused_matches_unfused_noisy() {
        let prof = complete_profile(3, &NoiseDefaults::bundled());
        let ops: Vec<(u8, usize, usize, f64)> = (0..40)
            .map(|k| ((k * 3 % 4) as u8, k % 3, (k * 2 + 1) % 3, 0.21 * k as f64))
            .collect();
        let c = random_basis_circuit(3, &ops);
        let fused = run_density(&c, &prof).unwrap();
        // Reference: gate by gate with dense Kraus algebra on the full matrix.
        let mut rho = Mat::zeros(8);
        rho.set(0, 0, ONE);
        for g in c.gates() {
            let qs = g.qubits();
            let spec = prof.gate_spec(g.kind(), &qs).unwrap();
            let full_u = embed(&g.matrix().unwrap(), &qs, 3);
            rho = &(&full_u * &rho) * &full_u.adjoint();
            let relax: Vec<(f64, f64)> = qs.iter().map(|&q| (prof.qubit(q).t1_us, prof.qubit(q).t2_us)).collect();
            if let Some(ch) = gate_noise(spec.error, spec.duration_ns, &relax).unwrap() {
                let mut next = Mat::zeros(8);
                for k in ch.ops() {
                    let kk = embed(k, &qs, 3);
                    next = next.add(&(&(&kk * &rho) * &kk.adjoint()));
                }
                rho = next;
            }
        }
        assert!(fused.to_mat().max_abs_diff(&rho) < 1e-12);
    }

    /// Lift a 1- or 2-qubit operator to the full register by columns.
    fn embed(m: &Mat, qs: &[usize], n: usize) -> Mat {
        let d = 1 << n;
        let mut out = Mat::zeros(d);
        for j in 0..d {
            let mut col = vec![ZERO; d];
            col[j] = ONE;
            if qs.len() == 1 {
                apply_1q(&mut col, qs[0], m);
            } else {
                apply_2q(&mut col, qs[0], qs[1], m);
            }
            for (i, z) in col.into_iter().enumerate() {
                out.set(i, j, z);
            }
        }
        out
    }

    #[test]
    fn apply_channel_depolarizes() {
        let sv = StateVector::basis_state(2, 0);
        let mut rho = DensityMatrix::from_statevector(&sv);
        rho.apply_channel(&[1], &depolarizing_channel(1.0, 1).unwrap());
        assert!((rho.entry(0, 0).re - 0.5).abs() < 1e-15);
        assert!((rho.entry(2, 2).re - 0.5).abs() < 1e-15);
        rho.apply_channel(&[1, 0], &depolarizing_channel(1.0, 2).unwrap());
        assert!(rho.to_mat().max_abs_diff(&Mat::identity(4).scale(C64::new(0.25, 0.0))) < 1e-15);
    }

    #[test]
    fn depolarizing_lowers_ring_optimum() {
        for n in [4, 6] {
            let g = make_ring(n).unwrap();
            let sv = run_statevector(&build_qaoa_ansatz(&g, &p1(PI / 4.0, PI / 8.0), false, false)).unwrap();
            let clean = expectation_cost(&sv, &g).unwrap();
            for lambda in [0.01, 0.2, 1.0] {
                let mut rho = DensityMatrix::from_statevector(&sv);
                let ch = depolarizing_channel(lambda, 1).unwrap();
                for q in 0..n {
                    rho.apply_channel(&[q], &ch);
                }
                assert!(expectation_cost(&rho, &g).unwrap() < clean - 1e-9);
            }
        }
    }

    #[test]
    fn thermal_channel_through_apply_channel() {
        let sv = StateVector::basis_state(1, 1);
        let mut rho = DensityMatrix::from_statevector(&sv);
        rho.apply_channel(&[0], &thermal_relaxation_channel(5.0, 10.0, 5000.0).unwrap());
        assert!((rho.entry(1, 1).re - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn distribution_marginalizes_and_pads() {
        // Qubit 1 in |1>, qubits 0 and 2 idle.
        let c = Circuit::from_gates(3, [Gate::X(1)]).unwrap();
        let sv = run_statevector_active(&c).unwrap();
        assert_eq!(sv.labels(), &[1]);
        assert_eq!(sv.distribution(&[0, 1, 2]), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(sv.distribution(&[1]), vec![0.0, 1.0]);
    }

    #[test]
    fn sampling_examples() {
        let zero = StateVector::basis_state(1, 0);
        let counts = sample_counts(&zero, 50_000, Some(&[(0.02, 0.0)]), 7).unwrap();
        let sigma = (0.02f64 * 0.98 / 50_000.0).sqrt();
        assert!((counts.ones_fraction(0) - 0.02).abs() < 4.0 * sigma);

        // |01> text form: vertex 0 reads 0, vertex 1 reads 1.
        let b: Bitstring = "01".parse().unwrap();
        let sv = StateVector::basis_state(2, b.index() as usize);
        let counts = sample_counts(&sv, 1000, None, 1).unwrap();
        assert_eq!(counts.get(&b), 1000);
        assert_eq!(counts.to_csv(), "bitstring,count\n01,1000\n");

        let g = make_ring(4).unwrap();
        let uniform = run_statevector(&build_qaoa_ansatz(&g, &p1(0.0, 0.0), false, false)).unwrap();
        let a = sample_counts(&uniform, 5000, None, 99).unwrap();
        let b = sample_counts(&uniform, 5000, None, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|(_, &k)| k).sum::<usize>(), 5000);
        assert!(matches!(sample_counts(&uniform, 0, None, 1), Err(SimError::NoShots)));
        assert!(matches!(
            sample_counts(&uniform, 10, Some(&[(0.0, 0.0)]), 1),
            Err(SimError::ReadoutLength { .. })
        ));
    }

    #[test]
    fn sampled_expectation_near_exact() {
        let g = make_ring(4).unwrap();
        let sv = run_statevector(&build_qaoa_ansatz(&g, &p1(PI / 4.0, PI / 8.0), false, false)).unwrap();
        let dist = sv.distribution(&[0, 1, 2, 3]);
        let mean = cost_from_distribution(&dist, &g);
        let second: f64 = dist.iter().enumerate().map(|(x, p)| p * g.cut_value_index(x as u64).powi(2)).sum();
        let sigma = ((second - mean * mean) / 50_000.0).sqrt();
        let counts = sample_counts(&sv, 50_000, None, 3).unwrap();
        assert!((counts.mean_cost(&g).unwrap() - 3.0).abs() < 5.0 * sigma);
        let sol = brute_force_maxcut(&g).unwrap();
        assert!((counts.success_probability(&sol) - success_probability(&sv, &sol)).abs() < 0.02);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn noiseless_paths_agree(ops in proptest::collection::vec((0u8..4, 0usize..5, 0usize..5, -4.0f64..4.0), 1..40),
                                 n in 2usize..=5) {
            let c = random_basis_circuit(n, &ops);
            let full = Circuit::from_gates(n, c.gates().iter().copied().chain((0..n).map(|q| Gate::RZ(q, 0.0)))).unwrap();
            let g = make_ring(n.max(3)).unwrap();
            if g.num_vertices() == n {
                let sv = run_statevector(&full).unwrap();
                let prof = complete_profile(n, &NoiseDefaults::zero_noise());
                let rho = run_density(&full, &prof).unwrap();
                let a = expectation_cost(&sv, &g).unwrap();
                let b = expectation_cost(&rho, &g).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!((sv.norm() - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn noisy_states_stay_physical(ops in proptest::collection::vec((0u8..4, 0usize..4, 0usize..4, -4.0f64..4.0), 1..30)) {
            let c = random_basis_circuit(4, &ops);
            let prof = complete_profile(4, &NoiseDefaults { error_2q: Some(0.05), ..NoiseDefaults::bundled() });
            let rho = run_density(&c, &prof).unwrap();
            prop_assert!((rho.trace() - 1.0).abs() < 1e-10);
                        prop_assert!(rho.hermiticity_error() < 1e-10);
            prop_assert!(rho.to_mat().is_psd(1e-8));
        }
    }
}
