//! Max-cut problem instances: weighted undirected graphs, bitstring
//! partitions and an exhaustive ground-truth solver.
//!
//! Vertex `k` is labelled by bit `k` of a [`Bitstring`]; bit value 0 maps to
//! spin `+1` and bit value 1 to spin `-1`. A bitstring printed as text lists
//! vertex 0 first, so `"0101"` puts vertices 1 and 3 in the second set.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest graph the brute-force solver will enumerate.
pub const MAX_BRUTE_FORCE_VERTICES: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one vertex")]
    Empty,
    #[error("a ring needs at least 3 vertices, got {0}")]
    RingTooSmall(usize),
    #[error("edge ({i}, {j}) references a vertex outside 0..{n}")]
    VertexOutOfRange { i: usize, j: usize, n: usize },
    #[error("self-loop on vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({i}, {j}) has non-finite weight {w}")]
    NonFiniteWeight { i: usize, j: usize, w: f64 },
    #[error("bitstring has {got} bits but the graph has {expected} vertices")]
    LengthMismatch { expected: usize, got: usize },
    #[error("brute force is limited to {MAX_BRUTE_FORCE_VERTICES} vertices, got {0}")]
    TooLarge(usize),
    #[error("invalid bitstring {0:?}")]
    BadBitstring(String),
    #[error("invalid graph document: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// An undirected weighted graph. Edge order is preserved exactly as given.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_vertices: usize,
    edges: Vec<Edge>,
}

impl Graph {
    pub fn new(num_vertices: usize, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if num_vertices == 0 {
            return Err(GraphError::Empty);
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.i >= num_vertices || e.j >= num_vertices {
                return Err(GraphError::VertexOutOfRange {
                    i: e.i,
                    j: e.j,
                    n: num_vertices,
                });
            }
            if e.i == e.j {
                return Err(GraphError::SelfLoop(e.i));
            }
            if !e.weight.is_finite() {
                return Err(GraphError::NonFiniteWeight {
                    i: e.i,
                    j: e.j,
                    w: e.weight,
                });
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(GraphError::DuplicateEdge(e.i, e.j));
            }
        }
        Ok(Self {
            num_vertices,
            edges,
        })
    }

    /// Unit-weight graph from a list of vertex pairs.
    pub fn unweighted(num_vertices: usize, pairs: &[(usize, usize)]) -> Result<Self, GraphError> {
        let edges = pairs
            .iter()
            .map(|&(i, j)| Edge { i, j, weight: 1.0 })
            .collect();
        Self::new(num_vertices, edges)
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.i == v || e.j == v).count()
    }

    /// True when every edge has weight exactly 1.
    pub fn is_unweighted(&self) -> bool {
        self.edges.iter().all(|e| e.weight == 1.0)
    }

    /// Cut value of the basis state `index`, where bit `k` of the index is
    /// the partition label of vertex `k`.
    #[inline]
    pub fn cut_value_index(&self, index: u64) -> f64 {
        let mut total = 0.0;
        for e in &self.edges {
            if ((index >> e.i) ^ (index >> e.j)) & 1 == 1 {
                total += e.weight;
            }
        }
        total
    }

    /// Cut values of all `2^n` basis states, indexed like a statevector.
    pub fn cut_table(&self) -> Vec<f64> {
        (0..1u64 << self.num_vertices)
            .map(|x| self.cut_value_index(x))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphDocument::from(self)).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))?;
        doc.try_into()
    }
}

/// The ring of `n` vertices with unit weights, edges in the canonical order
/// `(0,1), (1,2), ..., (n-2,n-1), (n-1,0)`.
pub fn make_ring(n: usize) -> Result<Graph, GraphError> {
    if n < 3 {
        return Err(GraphError::RingTooSmall(n));
    }
    let pairs: Vec<(usize, usize)> = (0..n).map(|k| (k, (k + 1) % n)).collect();
    Graph::unweighted(n, &pairs)
}

/// On-disk form: `{"n": 4, "edges": [[0, 1, 1.0], ...]}`.
#[derive(Debug, Serialize, Deserialize)]
struct GraphDocument {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl From<&Graph> for GraphDocument {
    fn from(g: &Graph) -> Self {
        Self {
            n: g.num_vertices,
            edges: g.edges.iter().map(|e| (e.i, e.j, e.weight)).collect(),
        }
    }
}

impl TryFrom<GraphDocument> for Graph {
    type Error = GraphError;

    fn try_from(doc: GraphDocument) -> Result<Self, Self::Error> {
        let edges = doc
            .edges
            .into_iter()
            .map(|(i, j, weight)| Edge { i, j, weight })
            .collect();
        Graph::new(doc.n, edges)
    }
}

/// A partition label per vertex, packed little-endian (bit `k` = vertex `k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring {
    len: usize,
    value: u64,
}

impl Bitstring {
    pub fn from_index(len: usize, value: u64) -> Self {
        assert!(len <= 64, "bitstrings are limited to 64 bits");
        let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        Self {
            len,
            value: value & mask,
        }
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self, GraphError> {
        if bits.len() > 64 {
            return Err(GraphError::BadBitstring(format!("{} bits", bits.len())));
        }
        let mut value = 0u64;
        for (k, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => value |= 1 << k,
                _ => return Err(GraphError::BadBitstring(format!("{bits:?}"))),
            }
        }
        Ok(Self {
            len: bits.len(),
            value,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Packed value, usable as a statevector index.
    pub fn index(&self) -> u64 {
        self.value
    }

    pub fn bit(&self, k: usize) -> u8 {
        ((self.value >> k) & 1) as u8
    }

    /// Spin of vertex `k`: `(-1)^bit`.
    pub fn spin(&self, k: usize) -> i8 {
        1 - 2 * self.bit(k) as i8
    }

    pub fn complement(&self) -> Self {
        Self::from_index(self.len, !self.value)
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.len {
            f.write_str(if self.bit(k) == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Bitstring {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits: Result<Vec<u8>, _> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(GraphError::BadBitstring(s.to_string())),
            })
            .collect();
        Self::from_bits(&bits?)
    }
}

/// Cut value `sum over cut edges of w_ij`, i.e. `sum w_ij (1 - x_i x_j) / 2`
/// with `x_k = (-1)^bit_k`.
pub fn cut_value(g: &Graph, x: &Bitstring) -> Result<f64, GraphError> {
    if x.len() != g.num_vertices() {
        return Err(GraphError::LengthMismatch {
            expected: g.num_vertices(),
            got: x.len(),
        });
    }
    Ok(g.cut_value_index(x.index()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxCutSolution {
    pub c_max: f64,
    pub optimal_bitstrings: BTreeSet<Bitstring>,
}

impl MaxCutSolution {
    pub fn contains_index(&self, index: u64) -> bool {
        let len = self
            .optimal_bitstrings
            .iter()
            .next()
            .map(Bitstring::len)
            .unwrap_or(0);
        self.optimal_bitstrings
            .contains(&Bitstring::from_index(len, index))
    }
}

/// Exhaustive maximum cut over all `2^n` partitions.
///
/// Only strings with the last vertex in set 0 are evaluated; complements are
/// added afterwards. Ties are detected with a tolerance scaled by the total
/// absolute edge weight so real-valued weights behave.
pub fn brute_force_maxcut(g: &Graph) -> Result<MaxCutSolution, GraphError> {
    let n = g.num_vertices();
    if n > MAX_BRUTE_FORCE_VERTICES {
        return Err(GraphError::TooLarge(n));
    }
    let scale: f64 = g.edges().iter().map(|e| e.weight.abs()).sum::<f64>().max(1.0);
    let tol = 1e-12 * scale;
    let half = 1u64 << (n - 1);

    const CHUNK: u64 = 1 << 14;
    let chunks = half.div_ceil(CHUNK);
    let (c_max, winners) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut best = f64::NEG_INFINITY;
            let mut hits = Vec::new();
            for x in c * CHUNK..((c + 1) * CHUNK).min(half) {
                let v = g.cut_value_index(x);
                if v > best + tol {
                    best = v;
                    hits.clear();
                    hits.push(x);
                } else if (v - best).abs() <= tol {
                    hits.push(x);
                }
            }
            (best, hits)
        })
        .reduce(
            || (f64::NEG_INFINITY, Vec::new()),
            |(a, mut ha), (b, mut hb)| {
                if a > b + tol {
                    (a, ha)
                } else if b > a + tol {
                    (b, hb)
                } else {
                    ha.append(&mut hb);
                    (a.max(b), ha)
                }
            },
        );

    let mut optimal_bitstrings = BTreeSet::new();
    for x in winners {
        let s = Bitstring::from_index(n, x);
        optimal_bitstrings.insert(s);
        optimal_bitstrings.insert(s.complement());
    }
    Ok(MaxCutSolution {
        c_max,
        optimal_bitstrings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bs(s: &str) -> Bitstring {
        s.parse().unwrap()
    }

    #[test]
    fn ring_edges_are_canonical() {
        let g = make_ring(4).unwrap();
        let pairs: Vec<_> = g.edges().iter().map(|e| (e.i, e.j, e.weight)).collect();
        assert_eq!(
            pairs,
            vec![(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]
        );
        let g3 = make_ring(3).unwrap();
        let pairs: Vec<_> = g3.edges().iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 0)]);
        let g12 = make_ring(12).unwrap();
        assert_eq!(g12.num_edges(), 12);
        assert!((0..12).all(|v| g12.degree(v) == 2));
    }

    #[test]
    fn ring_rejects_small() {
        assert_eq!(make_ring(2), Err(GraphError::RingTooSmall(2)));
        assert_eq!(make_ring(0), Err(GraphError::RingTooSmall(0)));
    }

    #[test]
    fn graph_validation() {
        assert!(matches!(
            Graph::unweighted(3, &[(0, 3)]),
            Err(GraphError::VertexOutOfRange { .. })
        ));
        assert_eq!(Graph::unweighted(3, &[(1, 1)]), Err(GraphError::SelfLoop(1)));
        assert_eq!(
            Graph::unweighted(3, &[(0, 1), (1, 0)]),
            Err(GraphError::DuplicateEdge(1, 0))
        );
        let bad = Graph::new(
            2,
            vec![Edge {
                i: 0,
                j: 1,
                weight: f64::NAN,
            }],
        );
        assert!(matches!(bad, Err(GraphError::NonFiniteWeight { .. })));
        assert_eq!(Graph::unweighted(0, &[]), Err(GraphError::Empty));
    }

    #[test]
    fn cut_values() {
        let r4 = make_ring(4).unwrap();
        assert_eq!(cut_value(&r4, &bs("0101")).unwrap(), 4.0);
        assert_eq!(cut_value(&r4, &bs("0000")).unwrap(), 0.0);
        let r5 = make_ring(5).unwrap();
        assert_eq!(cut_value(&r5, &bs("01010")).unwrap(), 4.0);
        assert_eq!(
            cut_value(&r4, &bs("010")),
            Err(GraphError::LengthMismatch {
                expected: 4,
                got: 3
            })
        );
    }

    #[test]
    fn brute_force_small_rings() {
        let s4 = brute_force_maxcut(&make_ring(4).unwrap()).unwrap();
        assert_eq!(s4.c_max, 4.0);
        let expect: BTreeSet<_> = [bs("0101"), bs("1010")].into_iter().collect();
        assert_eq!(s4.optimal_bitstrings, expect);

        let s5 = brute_force_maxcut(&make_ring(5).unwrap()).unwrap();
        assert_eq!(s5.c_max, 4.0);
        assert_eq!(s5.optimal_bitstrings.len(), 10);

        let s12 = brute_force_maxcut(&make_ring(12).unwrap()).unwrap();
        assert_eq!(s12.c_max, 12.0);
        let expect: BTreeSet<_> = [bs("010101010101"), bs("101010101010")]
            .into_iter()
            .collect();
        assert_eq!(s12.optimal_bitstrings, expect);
    }

    #[test]
    fn brute_force_matches_naive_enumeration() {
        // Independent check: plain loop over every string without the
        // complement halving.
        let g = Graph::new(
            5,
            vec![
                Edge { i: 0, j: 1, weight: 0.5 },
                Edge { i: 1, j: 2, weight: 2.0 },
                Edge { i: 2, j: 3, weight: 1.5 },
                Edge { i: 3, j: 4, weight: 0.25 },
                Edge { i: 4, j: 0, weight: 1.0 },
                Edge { i: 1, j: 3, weight: 0.75 },
            ],
        )
        .unwrap();
        let mut best = f64::MIN;
        let mut arg = BTreeSet::new();
        for x in 0..32u64 {
            let s = Bitstring::from_index(5, x);
            let v = cut_value(&g, &s).unwrap();
            if v > best + 1e-12 {
                best = v;
                arg.clear();
            }
            if (v - best).abs() <= 1e-12 {
                arg.insert(s);
            }
        }
        let sol = brute_force_maxcut(&g).unwrap();
        assert_eq!(sol.c_max, best);
        assert_eq!(sol.optimal_bitstrings, arg);
    }

    #[test]
    fn brute_force_bound() {
        let g = make_ring(25).unwrap();
        assert_eq!(brute_force_maxcut(&g), Err(GraphError::TooLarge(25)));
    }

    #[test]
    fn json_round_trip() {
        let g = make_ring(5).unwrap();
        let text = g.to_json();
        assert!(text.starts_with("{\"n\":5,\"edges\":[[0,1,1.0]"));
        assert_eq!(Graph::from_json(&text).unwrap(), g);
        assert!(Graph::from_json("{\"n\":2,\"edges\":[[0,0,1.0]]}").is_err());
    }

    #[test]
    fn bitstring_text() {
        let s = bs("0110");
        assert_eq!(s.index(), 0b0110);
        assert_eq!(s.to_string(), "0110");
        assert_eq!(s.complement().to_string(), "1001");
        assert_eq!(s.spin(0), 1);
        assert_eq!(s.spin(1), -1);
        assert!("01a".parse::<Bitstring>().is_err());
    }

    proptest! {
        #[test]
        fn complement_symmetry_and_bounds(n in 3usize..10, x in any::<u64>()) {
            let g = make_ring(n).unwrap();
            let s = Bitstring::from_index(n, x);
            let v = cut_value(&g, &s).unwrap();
            prop_assert_eq!(v, cut_value(&g, &s.complement()).unwrap());
            prop_assert!(v >= 0.0 && v <= g.total_weight());
        }

        #[test]
        fn optimal_set_is_exact(n in 3usize..11) {
            let g = make_ring(n).unwrap();
            let sol = brute_force_maxcut(&g).unwrap();
            let expected = if n % 2 == 0 { n } else { n - 1 } as f64;
            prop_assert_eq!(sol.c_max, expected);
            for x in 0..1u64 << n {
                let s = Bitstring::from_index(n, x);
                let v = cut_value(&g, &s).unwrap();
                if sol.optimal_bitstrings.contains(&s) {
                    prop_assert_eq!(v, sol.c_max);
                } else {
                    prop_assert!(v < sol.c_max);
                }
            }
            for s in &sol.optimal_bitstrings {
                prop_assert!(sol.optimal_bitstrings.contains(&s.complement()));
            }
        }
    }
}
