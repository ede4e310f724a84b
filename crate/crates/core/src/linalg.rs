//! Small dense complex matrices and the bit-indexed kernels shared by the
//! statevector and density-matrix engines.

use num_complex::Complex64;
use std::ops::Mul;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    dim: usize,
    data: Vec<C64>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m.data[k * dim + k] = ONE;
        }
        m
    }

    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "matrix must be square");
            data.extend_from_slice(r);
        }
        Self { dim, data }
    }

    pub fn from_vec(dim: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        Self { dim, data }
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (k, &v) in entries.iter().enumerate() {
            m.data[k * m.dim + k] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.dim + c] = v;
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                m.data[c * self.dim + r] = self.data[r * self.dim + c].conj();
            }
        }
        m
    }

    pub fn conj(&self) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|k| self.get(k, k)).sum()
    }

    /// Kronecker product `self ⊗ other`; `other` occupies the low index bits.
    pub fn kron(&self, other: &Mat) -> Self {
        let d = self.dim * other.dim;
        let mut m = Self::zeros(d);
        for r1 in 0..self.dim {
            for c1 in 0..self.dim {
                let a = self.get(r1, c1);
                if a == ZERO {
                    continue;
                }
                for r2 in 0..other.dim {
                    for c2 in 0..other.dim {
                        m.data[(r1 * other.dim + r2) * d + c1 * other.dim + c2] =
                            a * other.get(r2, c2);
                    }
                }
            }
        }
        m
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `|tr(A† B)| / dim`: 1 exactly when the matrices agree up to a phase
    /// (for unitaries).
    pub fn phase_insensitive_fidelity(&self, other: &Mat) -> f64 {
        let mut acc = ZERO;
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += a.conj() * b;
        }
        acc.norm() / self.dim as f64
    }

    /// Cholesky test on `self + shift I` (Hermitian input assumed): succeeds
    /// exactly when every eigenvalue exceeds `-shift`.
    pub fn is_psd(&self, shift: f64) -> bool {
        let n = self.dim;
        let mut l = vec![ZERO; n * n];
        for j in 0..n {
            let mut d = self.get(j, j).re + shift;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if d <= 0.0 {
                return false;
            }
            let djj = d.sqrt();
            l[j * n + j] = C64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / djj;
            }
        }
        true
    }

    /// True when `self = e^{i phi} other` for some phi, within `tol`.
    pub fn equal_up_to_phase(&self, other: &Mat, tol: f64) -> bool {
        let (k, _) = other
            .data
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .expect("nonempty");
        if other.data[k].norm() < tol {
            return self.max_abs_diff(other) < tol;
        }
        let ph = self.data[k] / other.data[k];
        let ph = ph / ph.norm();
        self.max_abs_diff(&other.scale(ph)) < tol
    }
}

impl Mul for &Mat {
    type Output = Mat;

    fn mul(self, rhs: &Mat) -> Mat {
        assert_eq!(self.dim, rhs.dim);
        let d = self.dim;
        let mut m = Mat::zeros(d);
        for r in 0..d {
            for k in 0..d {
                let a = self.data[r * d + k];
                if a == ZERO {
                    continue;
                }
                for c in 0..d {
                    m.data[r * d + c] += a * rhs.data[k * d + c];
                }
            }
        }
        m
    }
}

/// Apply a 2x2 matrix to bit `q` of a state vector.
pub fn apply_1q(amps: &mut [C64], q: usize, m: &Mat) {
    let (m00, m01, m10, m11) = (m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1));
    let stride = 1usize << q;
    let len = amps.len();
    let mut base = 0;
    while base < len {
        for i in base..base + stride {
            let a0 = amps[i];
            let a1 = amps[i + stride];
            amps[i] = m00 * a0 + m01 * a1;
            amps[i + stride] = m10 * a0 + m11 * a1;
        }
        base += 2 * stride;
    }
}

/// Apply a 4x4 matrix to bits `(q0, q1)` of a state vector. Local index
/// bit 0 is `q0`, bit 1 is `q1`.
pub fn apply_2q(amps: &mut [C64], q0: usize, q1: usize, m: &Mat) {
    debug_assert_ne!(q0, q1);
    let b0 = 1usize << q0;
    let b1 = 1usize << q1;
    let offsets = [0, b0, b1, b0 | b1];
    let d = m.data();
    for base in 0..amps.len() {
        if base & (b0 | b1) != 0 {
            continue;
        }
        let v = [
            amps[base],
            amps[base + offsets[1]],
            amps[base + offsets[2]],
            amps[base + offsets[3]],
        ];
        for r in 0..4 {
            let row = &d[r * 4..r * 4 + 4];
            amps[base + offsets[r]] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
        }
    }
}

/// Enumerate all indices of a `total_bits`-bit space whose bits at the
/// (sorted ascending) `positions` are zero.
pub fn for_each_base(total_bits: usize, positions: &[usize], mut f: impl FnMut(usize)) {
    let free = total_bits - positions.len();
    for k in 0..1usize << free {
        let mut idx = k;
        for &p in positions {
            let low = idx & ((1 << p) - 1);
            idx = ((idx >> p) << (p + 1)) | low;
        }
        f(idx);
    }
}
