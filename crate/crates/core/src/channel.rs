//! Kraus channels for gate noise: depolarizing and thermal relaxation.

use thiserror::Error;

use crate::linalg::{Mat, C64, I, ONE, ZERO};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("depolarizing parameter {0} is outside [0, 1]")]
    BadLambda(f64),
    #[error("depolarizing arity must be 1 or 2, got {0}")]
    BadArity(usize),
    #[error("t2 ({t2}) exceeds 2*t1 ({})", 2.0 * t1)]
    T2Bound { t1: f64, t2: f64 },
    #[error("relaxation times must be positive, got t1 = {t1}, t2 = {t2}")]
    BadTimes { t1: f64, t2: f64 },
    #[error("duration must be finite and nonnegative, got {0}")]
    BadDuration(f64),
    #[error("Kraus operators must be nonempty square matrices of equal dimension 2 or 4")]
    BadShape,
    #[error("Kraus operators are not trace preserving (deviation {0:e})")]
    NotTracePreserving(f64),
}

/// Completely positive map `rho -> sum_k K rho K^dagger` on one or two
/// qubits. Two-qubit operators use local bit 0 for the first qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    ops: Vec<Mat>,
}

fn pauli(k: usize) -> Mat {
    match k {
        0 => Mat::identity(2),
        1 => Mat::from_rows(&[&[ZERO, ONE], &[ONE, ZERO]]),
        2 => Mat::from_rows(&[&[ZERO, -I], &[I, ZERO]]),
        _ => Mat::diag(&[ONE, -ONE]),
    }
}

impl KrausChannel {
    pub fn new(ops: Vec<Mat>) -> Result<Self, ChannelError> {
        let dim = ops.first().map(Mat::dim).ok_or(ChannelError::BadShape)?;
        if !(dim == 2 || dim == 4) || ops.iter().any(|k| k.dim() != dim) {
            return Err(ChannelError::BadShape);
        }
        let ch = Self { ops };
        let dev = ch.completeness_error();
        if dev > 1e-10 {
            return Err(ChannelError::NotTracePreserving(dev));
        }
        Ok(ch)
    }

    pub fn identity(arity: usize) -> Self {
        Self {
            ops: vec![Mat::identity(1 << arity)],
        }
    }

    pub fn ops(&self) -> &[Mat] {
        &self.ops
    }

    pub fn dim(&self) -> usize {
        self.ops[0].dim()
    }

    pub fn arity(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    /// `max |sum K^dagger K - I|`.
    pub fn completeness_error(&self) -> f64 {
        let d = self.dim();
        let mut acc = Mat::zeros(d);
        for k in &self.ops {
            acc = acc.add(&(&k.adjoint() * k));
        }
        acc.max_abs_diff(&Mat::identity(d))
    }

    /// `after ∘ self`; zero operators are dropped.
    pub fn then(&self, after: &KrausChannel) -> KrausChannel {
        let mut ops = Vec::new();
        for b in &after.ops {
            for a in &self.ops {
                let m = b * a;
                if m.data().iter().any(|z| *z != ZERO) {
                    ops.push(m);
                }
            }
        }
        if ops.is_empty() {
            ops.push(Mat::zeros(self.dim()));
        }
        KrausChannel { ops }
    }

    /// Independent action: `self` on the first (low) qubit, `high` on the second.
    pub fn tensor(&self, high: &KrausChannel) -> KrausChannel {
        let mut ops = Vec::with_capacity(self.ops.len() * high.ops.len());
        for h in &high.ops {
            for l in &self.ops {
                ops.push(h.kron(l));
            }
        }
        KrausChannel { ops }
    }

    /// `sum_k |tr K_k|^2`, the trace of the Pauli transfer matrix.
    pub fn ptm_trace(&self) -> f64 {
        self.ops.iter().map(|k| k.trace().norm_sqr()).sum()
    }

    /// Process fidelity with the identity channel.
    pub fn process_fidelity(&self) -> f64 {
        let d = self.dim() as f64;
        self.ptm_trace() / (d * d)
    }

    /// Average gate fidelity with the identity channel.
    pub fn average_fidelity(&self) -> f64 {
        let d = self.dim() as f64;
        (d * self.process_fidelity() + 1.0) / (d + 1.0)
    }

    /// Superoperator on row-major vectorized density matrices:
    /// `sum_k K ⊗ conj(K)`, row index in the high half.
    pub fn superoperator(&self) -> Mat {
        let mut s = Mat::zeros(self.dim() * self.dim());
        for k in &self.ops {
            s = s.add(&k.kron(&k.conj()));
        }
        s
    }

    /// Apply to a small dense density matrix of matching dimension.
    pub fn apply(&self, rho: &Mat) -> Mat {
        let mut out = Mat::zeros(rho.dim());
        for k in &self.ops {
            out = out.add(&(&(k * rho) * &k.adjoint()));
        }
        out
    }
}

/// `rho -> (1 - lambda) rho + lambda I / 2^arity`, as Pauli Kraus operators.
pub fn depolarizing_channel(lambda: f64, arity: usize) -> Result<KrausChannel, ChannelError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ChannelError::BadLambda(lambda));
    }
    if !(1..=2).contains(&arity) {
        return Err(ChannelError::BadArity(arity));
    }
    let d2 = (1usize << (2 * arity)) as f64;
    let c0 = (1.0 - lambda * (d2 - 1.0) / d2).sqrt();
    let c = (lambda / d2).sqrt();
    let mut ops = Vec::new();
    for k in 0..d2 as usize {
        let p = if arity == 1 {
            pauli(k)
        } else {
            pauli(k >> 2).kron(&pauli(k & 3))
        };
        let coeff = if k == 0 { c0 } else { c };
        if coeff != 0.0 {
            ops.push(p.scale(C64::new(coeff, 0.0)));
        }
    }
    Ok(KrausChannel { ops })
}

/// Amplitude damping with probability `1 - exp(-t/t1)` followed by the
/// pure dephasing needed for off-diagonals to decay as `exp(-t/t2)`.
/// Times in microseconds, duration in nanoseconds.
pub fn thermal_relaxation_channel(t1_us: f64, t2_us: f64, duration_ns: f64) -> Result<KrausChannel, ChannelError> {
    if !(t1_us > 0.0 && t2_us > 0.0) {
        return Err(ChannelError::BadTimes { t1: t1_us, t2: t2_us });
    }
    if t2_us > 2.0 * t1_us {
        return Err(ChannelError::T2Bound { t1: t1_us, t2: t2_us });
    }
    if !(duration_ns >= 0.0 && duration_ns.is_finite()) {
        return Err(ChannelError::BadDuration(duration_ns));
    }
    let t = duration_ns / 1000.0;
    let keep = (-t / t1_us).exp();
    let gamma = 1.0 - keep;
    // Extra dephasing beyond what amplitude damping already causes.
    let f = ((-t / t2_us) + t / (2.0 * t1_us)).exp().min(1.0);

    let damp = KrausChannel {
        ops: [
            Mat::diag(&[ONE, C64::new(keep.sqrt(), 0.0)]),
            Mat::from_rows(&[&[ZERO, C64::new(gamma.sqrt(), 0.0)], &[ZERO, ZERO]]),
        ]
        .into_iter()
        .filter(|m| m.data().iter().any(|z| *z != ZERO))
        .collect(),
    };
    let mut dephase_ops = vec![Mat::identity(2).scale(C64::new(((1.0 + f) / 2.0).sqrt(), 0.0))];
    if f < 1.0 {
        dephase_ops.push(Mat::diag(&[ONE, -ONE]).scale(C64::new(((1.0 - f) / 2.0).sqrt(), 0.0)));
    }
    Ok(damp.then(&KrausChannel { ops: dephase_ops }))
}

/// Depolarizing strength that makes `relax ∘ depolarizing` reach the
/// average gate infidelity `error`, clamped to `[0, 1]`.
pub fn depolarizing_lambda(error: f64, dim: usize, relax_ptm_trace: f64) -> f64 {
    let d = dim as f64;
    let target_pro = 1.0 - error * (d + 1.0) / d;
    let denom = relax_ptm_trace - 1.0;
    if denom <= 0.0 {
        return 0.0;
    }
    (1.0 - (d * d * target_pro - 1.0) / denom).clamp(0.0, 1.0)
}

/// Noise after a gate on `relax.len()` qubits: depolarizing followed by
/// independent thermal relaxation of each qubit for the gate duration.
/// Returns `None` when the channel is exactly the identity.
pub fn gate_noise(error: f64, duration_ns: f64, relax: &[(f64, f64)]) -> Result<Option<KrausChannel>, ChannelError> {
    let arity = relax.len();
    if error == 0.0 && duration_ns == 0.0 {
        return Ok(None);
    }
    let mut r = thermal_relaxation_channel(relax[0].0, relax[0].1, duration_ns)?;
    for &(t1, t2) in &relax[1..] {
        r = r.tensor(&thermal_relaxation_channel(t1, t2, duration_ns)?);
    }
    let lambda = depolarizing_lambda(error, 1 << arity, r.ptm_trace());
    let d = depolarizing_channel(lambda, arity)?;
    Ok(Some(d.then(&r)))
}
