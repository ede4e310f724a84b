//! Device profiles: coupling maps, per-qubit relaxation and readout
//! parameters, per-gate error rates and durations.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::GateKind;

/// Environment variable naming a directory of `<name>.json` profiles.
pub const DEVICE_DIR_ENV: &str = "RINGCUT_DEVICE_DIR";

const DEFAULTS_JSON: &str = include_str!("../data/noise_defaults.json");

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("coupling map needs at least one qubit")]
    NoQubits,
    #[error("coupling pair ({0}, {1}) is out of range for {2} qubits")]
    PairOutOfRange(usize, usize, usize),
    #[error("coupling pair ({0}, {0}) couples a qubit to itself")]
    SelfPair(usize),
    #[error("coupling map is disconnected")]
    Disconnected,
    #[error("heavy-hex distance must be odd and at least 3, got {0}")]
    BadDistance(usize),
    #[error("profile lists {found} qubit parameter sets for {expected} qubits")]
    QubitCount { expected: usize, found: usize },
    #[error("qubit {qubit}: {msg}")]
    BadQubit { qubit: usize, msg: String },
    #[error("gate {kind} on {qubits:?}: {msg}")]
    BadGate {
        kind: GateKind,
        qubits: Vec<usize>,
        msg: String,
    },
    #[error("basis gate {kind} has no spec on {qubits:?}")]
    MissingGate { kind: GateKind, qubits: Vec<usize> },
    #[error("incomplete noise defaults: missing {0}")]
    IncompleteDefaults(&'static str),
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid profile document: {0}")]
    Json(#[from] serde_json::Error),
}

/// Undirected physical connectivity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingMap {
    num_qubits: usize,
    pairs: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl CouplingMap {
    /// Pairs are normalized to `(low, high)`; duplicates collapse. The map
    /// may be disconnected; profiles reject that separately.
    pub fn new(num_qubits: usize, pairs: &[(usize, usize)]) -> Result<Self, NoiseError> {
        if num_qubits == 0 {
            return Err(NoiseError::NoQubits);
        }
        let mut set = BTreeSet::new();
        for &(a, b) in pairs {
            if a >= num_qubits || b >= num_qubits {
                return Err(NoiseError::PairOutOfRange(a, b, num_qubits));
            }
            if a == b {
                return Err(NoiseError::SelfPair(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut adj = vec![Vec::new(); num_qubits];
        for &(a, b) in &set {
            adj[a].push(b);
            adj[b].push(a);
        }
        for nb in &mut adj {
            nb.sort_unstable();
        }
        Ok(Self {
            num_qubits,
            pairs: set.into_iter().collect(),
            adj,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Neighbours of `q`, ascending.
    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.adj[q]
    }

    pub fn is_coupled(&self, a: usize, b: usize) -> bool {
        a < self.num_qubits && self.adj[a].binary_search(&b).is_ok()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// BFS distances from `src`; `usize::MAX` marks unreachable qubits.
    pub fn distances_from(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_qubits];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.distances_from(0).iter().all(|&d| d != usize::MAX)
    }

    /// Shortest path `from ..= to`. Among equal-length paths, each step
    /// takes the lowest-indexed neighbour that stays on a shortest path.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let dist = self.distances_from(to);
        if dist[from] == usize::MAX {
            return None;
        }
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            cur = *self.adj[cur]
                .iter()
                .find(|&&v| dist[v] + 1 == dist[cur])
                .expect("BFS predecessor exists");
            path.push(cur);
        }
        Some(path)
    }

    /// Length of the shortest cycle, `None` for forests.
    pub fn girth(&self) -> Option<usize> {
        let mut best = usize::MAX;
        for s in 0..self.num_qubits {
            let mut dist = vec![usize::MAX; self.num_qubits];
            let mut parent = vec![usize::MAX; self.num_qubits];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        parent[v] = u;
                        queue.push_back(v);
                    } else if parent[u] != v {
                        best = best.min(dist[u] + dist[v] + 1);
                    }
                }
            }
        }
        (best != usize::MAX).then_some(best)
    }

    /// Connectivity restricted to `qubits`.
    pub fn induced_is_connected(&self, qubits: &BTreeSet<usize>) -> bool {
        let Some(&start) = qubits.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &self.adj[u] {
                if qubits.contains(&v) && seen.insert(v) {
                    stack.push(v);
                }
            }
        }
        seen.len() == qubits.len()
    }
}

/// Heavy-hexagon lattice. Distance 3 is the 27-qubit Falcon layout,
/// larger odd distances use the row-and-bridge construction of the
/// 65/127-qubit devices.
pub fn heavy_hex_map(distance: usize) -> Result<CouplingMap, NoiseError> {
    if distance < 3 || distance % 2 == 0 {
        return Err(NoiseError::BadDistance(distance));
    }
    if distance == 3 {
        const FALCON: [(usize, usize); 28] = [
            (0, 1), (1, 2), (1, 4), (2, 3), (3, 5), (4, 7), (5, 8), (6, 7),
            (7, 10), (8, 9), (8, 11), (10, 12), (11, 14), (12, 13), (12, 15),
            (13, 14), (14, 16), (15, 18), (16, 19), (17, 18), (18, 21),
            (19, 20), (19, 22), (21, 23), (22, 25), (23, 24), (24, 25), (25, 26),
        ];
        return CouplingMap::new(27, &FALCON);
    }
    let rows = distance;
    let width = 2 * distance + 1;
    let cols_of = |r: usize| {
        if r == 0 {
            0..width - 1
        } else if r == rows - 1 {
            1..width
        } else {
            0..width
        }
    };
    let bridge_cols = |r: usize| (0..width).filter(move |c| c % 4 == if r % 2 == 0 { 0 } else { 2 });

    let mut next = 0;
    let mut row_index: Vec<HashMap<usize, usize>> = Vec::with_capacity(rows);
    let mut bridges: Vec<Vec<(usize, usize)>> = Vec::with_capacity(rows - 1);
    for r in 0..rows {
        let mut idx = HashMap::new();
        for c in cols_of(r) {
            idx.insert(c, next);
            next += 1;
        }
        row_index.push(idx);
        if r + 1 < rows {
            let layer = bridge_cols(r)
                .map(|c| {
                    next += 1;
                    (c, next - 1)
                })
                .collect();
            bridges.push(layer);
        }
    }
    let mut pairs = Vec::new();
    for (r, idx) in row_index.iter().enumerate() {
        for c in cols_of(r) {
            if let Some(&right) = idx.get(&(c + 1)) {
                pairs.push((idx[&c], right));
            }
        }
    }
    for (r, layer) in bridges.iter().enumerate() {
        for &(c, q) in layer {
            pairs.push((row_index[r][&c], q));
            pairs.push((q, row_index[r + 1][&c]));
        }
    }
    CouplingMap::new(next, &pairs)
}

/// The 7-qubit H-shaped map of the small devices.
pub fn lagos_map() -> CouplingMap {
    CouplingMap::new(7, &[(0, 1), (1, 2), (1, 3), (3, 5), (4, 5), (5, 6)]).expect("valid map")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitParams {
    pub t1_us: f64,
    pub t2_us: f64,
    /// P(read 1 | prepared 0).
    pub p01: f64,
    /// P(read 0 | prepared 1).
    pub p10: f64,
}

impl QubitParams {
    fn validate(&self, qubit: usize) -> Result<(), NoiseError> {
        let bad = |msg: String| Err(NoiseError::BadQubit { qubit, msg });
        if !(self.t1_us > 0.0) || !(self.t2_us > 0.0) {
            return bad(format!("t1 ({}) and t2 ({}) must be positive", self.t1_us, self.t2_us));
        }
        if self.t2_us > 2.0 * self.t1_us {
            return bad(format!("t2 ({}) exceeds 2*t1 ({})", self.t2_us, 2.0 * self.t1_us));
        }
        for (name, p) in [("p01", self.p01), ("p10", self.p10)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    /// Average gate infidelity.
    pub error: f64,
    pub duration_ns: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    name: String,
    num_qubits: usize,
    coupling: Vec<[usize; 2]>,
    basis: Vec<GateKind>,
    qubits: Vec<QubitParams>,
    gates: Vec<GateSpec>,
}

/// A validated fake device. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    name: String,
    coupling: CouplingMap,
    qubits: Vec<QubitParams>,
    gates: Vec<GateSpec>,
    basis: BTreeSet<GateKind>,
    lookup: HashMap<(GateKind, usize, usize), usize>,
}

fn gate_key(kind: GateKind, qubits: &[usize]) -> (GateKind, usize, usize) {
    match *qubits {
        [q] => (kind, q, usize::MAX),
        [a, b] => (kind, a.min(b), a.max(b)),
        _ => (kind, usize::MAX, usize::MAX),
    }
}

impl DeviceProfile {
    pub fn new(
        name: impl Into<String>,
        coupling: CouplingMap,
        qubits: Vec<QubitParams>,
        gates: Vec<GateSpec>,
        basis: BTreeSet<GateKind>,
    ) -> Result<Self, NoiseError> {
        let n = coupling.num_qubits();
        if !coupling.is_connected() {
            return Err(NoiseError::Disconnected);
        }
        if qubits.len() != n {
            return Err(NoiseError::QubitCount {
                expected: n,
                found: qubits.len(),
            });
        }
        for (q, p) in qubits.iter().enumerate() {
            p.validate(q)?;
        }
        let mut lookup = HashMap::new();
        for (k, g) in gates.iter().enumerate() {
            let bad = |msg: &str| NoiseError::BadGate {
                kind: g.kind,
                qubits: g.qubits.clone(),
                msg: msg.into(),
            };
            if !basis.contains(&g.kind) {
                return Err(bad("kind is not in the basis"));
            }
            if g.qubits.len() != g.kind.arity() {
                return Err(bad("wrong number of qubits"));
            }
            if g.qubits.iter().any(|&q| q >= n) {
                return Err(bad("qubit out of range"));
            }
            if g.qubits.len() == 2 && !coupling.is_coupled(g.qubits[0], g.qubits[1]) {
                return Err(bad("pair is not coupled"));
            }
            if !(0.0..1.0).contains(&g.error) {
                return Err(bad("error must lie in [0, 1)"));
            }
            if !(g.duration_ns >= 0.0 && g.duration_ns.is_finite()) {
                return Err(bad("duration must be finite and nonnegative"));
            }
            if lookup.insert(gate_key(g.kind, &g.qubits), k).is_some() {
                return Err(bad("duplicate gate spec"));
            }
        }
        for &kind in &basis {
            if kind == GateKind::Measure {
                return Err(NoiseError::BadGate {
                    kind,
                    qubits: vec![],
                    msg: "measure is not a basis gate".into(),
                });
            }
            let sites: Vec<Vec<usize>> = if kind.arity() == 1 {
                (0..n).map(|q| vec![q]).collect()
            } else {
                coupling.pairs().iter().map(|&(a, b)| vec![a, b]).collect()
            };
            for qs in sites {
                if !lookup.contains_key(&gate_key(kind, &qs)) {
                    return Err(NoiseError::MissingGate { kind, qubits: qs });
                }
            }
        }
        Ok(Self {
            name: name.into(),
            coupling,
            qubits,
            gates,
            basis,
            lookup,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_qubits(&self) -> usize {
        self.coupling.num_qubits()
    }

    pub fn coupling(&self) -> &CouplingMap {
        &self.coupling
    }

    pub fn qubit(&self, q: usize) -> &QubitParams {
        &self.qubits[q]
    }

    pub fn qubit_params(&self) -> &[QubitParams] {
        &self.qubits
    }

    pub fn gate_specs(&self) -> &[GateSpec] {
        &self.gates
    }

    pub fn basis(&self) -> &BTreeSet<GateKind> {
        &self.basis
    }

    /// Spec for `kind` on `qubits`; two-qubit lookups ignore direction.
    pub fn gate_spec(&self, kind: GateKind, qubits: &[usize]) -> Option<&GateSpec> {
        self.lookup.get(&gate_key(kind, qubits)).map(|&k| &self.gates[k])
    }

    pub fn from_json(document: &str) -> Result<Self, NoiseError> {
        let doc: ProfileDoc = serde_json::from_str(document)?;
        let pairs: Vec<(usize, usize)> = doc.coupling.iter().map(|p| (p[0], p[1])).collect();
        let coupling = CouplingMap::new(doc.num_qubits, &pairs)?;
        Self::new(doc.name, coupling, doc.qubits, doc.gates, doc.basis.into_iter().collect())
    }

    pub fn to_json(&self) -> String {
        let doc = ProfileDoc {
            name: self.name.clone(),
            num_qubits: self.num_qubits(),
            coupling: self.coupling.pairs().iter().map(|&(a, b)| [a, b]).collect(),
            basis: self.basis.iter().copied().collect(),
            qubits: self.qubits.clone(),
            gates: self.gates.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("profile serializes")
    }

    pub fn load(path: &Path) -> Result<Self, NoiseError> {
        let text = std::fs::read_to_string(path).map_err(|source| NoiseError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Parse and validate a profile document.
pub fn load_profile(document: &str) -> Result<DeviceProfile, NoiseError> {
    DeviceProfile::from_json(document)
}

/// Uniform error and timing parameters. Every field is required by
/// [`synthetic_profile`]; they are optional here so partial documents can
/// be reported precisely.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseDefaults {
    pub error_1q: Option<f64>,
    pub error_2q: Option<f64>,
    pub readout_error: Option<f64>,
    pub t1_us: Option<f64>,
    pub t2_us: Option<f64>,
    pub duration_1q_ns: Option<f64>,
    pub duration_2q_ns: Option<f64>,
}

impl NoiseDefaults {
    /// The bundled representative values.
    pub fn bundled() -> Self {
        serde_json::from_str(DEFAULTS_JSON).expect("bundled defaults parse")
    }

    /// Errors, readout and durations all zero: every channel is the identity.
    pub fn zero_noise() -> Self {
        Self {
            error_1q: Some(0.0),
            error_2q: Some(0.0),
            readout_error: Some(0.0),
            duration_1q_ns: Some(0.0),
            duration_2q_ns: Some(0.0),
            ..Self::bundled()
        }
    }
}

/// The native basis of the synthetic devices.
pub fn default_basis() -> BTreeSet<GateKind> {
    [GateKind::RZ, GateKind::SX, GateKind::X, GateKind::CX].into()
}

/// Uniform profile over `coupling`. `rz` is a virtual frame change and
/// gets zero error and zero duration.
pub fn synthetic_profile(
    name: &str,
    coupling: CouplingMap,
    defaults: &NoiseDefaults,
) -> Result<DeviceProfile, NoiseError> {
    let need = |v: Option<f64>, field: &'static str| v.ok_or(NoiseError::IncompleteDefaults(field));
    let e1 = need(defaults.error_1q, "error_1q")?;
    let e2 = need(defaults.error_2q, "error_2q")?;
    let ro = need(defaults.readout_error, "readout_error")?;
    let t1 = need(defaults.t1_us, "t1_us")?;
    let t2 = need(defaults.t2_us, "t2_us")?;
    let d1 = need(defaults.duration_1q_ns, "duration_1q_ns")?;
    let d2 = need(defaults.duration_2q_ns, "duration_2q_ns")?;

    let n = coupling.num_qubits();
    let qubits = vec![
        QubitParams {
            t1_us: t1,
            t2_us: t2,
            p01: ro,
            p10: ro,
        };
        n
    ];
    let mut gates = Vec::new();
    for q in 0..n {
        gates.push(GateSpec {
            kind: GateKind::RZ,
            qubits: vec![q],
            error: 0.0,
            duration_ns: 0.0,
        });
        for kind in [GateKind::SX, GateKind::X] {
            gates.push(GateSpec {
                kind,
                qubits: vec![q],
                error: e1,
                duration_ns: d1,
            });
        }
    }
    for &(a, b) in coupling.pairs() {
        gates.push(GateSpec {
            kind: GateKind::CX,
            qubits: vec![a, b],
            error: e2,
            duration_ns: d2,
        });
    }
    DeviceProfile::new(name, coupling, qubits, gates, default_basis())
}

pub const PRESET_NAMES: [&str; 4] = ["lagos-like", "kolkata-like", "washington-like", "noiseless"];

/// Bundled presets. `noiseless` uses the 27-qubit map with zero noise.
pub fn preset(name: &str) -> Option<DeviceProfile> {
    let d = NoiseDefaults::bundled();
    let profile = match name {
        "lagos-like" => synthetic_profile(name, lagos_map(), &d),
        "kolkata-like" => synthetic_profile(name, heavy_hex_map(3).ok()?, &d),
        "washington-like" => synthetic_profile(name, heavy_hex_map(7).ok()?, &d),
        "noiseless" => synthetic_profile(name, heavy_hex_map(3).ok()?, &NoiseDefaults::zero_noise()),
        _ => return None,
    };
    Some(profile.expect("presets are valid"))
}

/// Resolve a device by preset name, then as a file path, then as
/// `<name>.json` under `$RINGCUT_DEVICE_DIR`.
pub fn resolve_device(spec: &str) -> Result<DeviceProfile, NoiseError> {
    if let Some(p) = preset(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if path.is_file() {
        return DeviceProfile::load(path);
    }
    if let Some(dir) = std::env::var_os(DEVICE_DIR_ENV) {
        let candidate = Path::new(&dir).join(format!("{spec}.json"));
        if candidate.is_file() {
            return DeviceProfile::load(&candidate);
        }
    }
    Err(NoiseError::UnknownDevice(spec.to_owned()))
}
