//! Multiplicative-update NMF, unconstrained and with a fixed non-negative
//! basis.
//!
//! The unconstrained solver minimizes `||V - W H||_F` with
//!
//! ```text
//! H <- H * (W^T V) / (W^T W H + eps)
//! W <- W * (V H^T) / (W H H^T + eps)
//! ```
//!
//! The constrained solver fixes an `M x K` basis `B` and minimizes
//! `||V - B P Q||_F` over `P` (`K x L`) and `Q` (`L x N`). Substituting
//! `W = B P` gives
//!
//! ```text
//! P <- P * (B^T V Q^T) / (B^T B P Q Q^T + eps)
//! Q <- Q * (P^T B^T V) / (P^T B^T B P Q + eps)
//! ```
//!
//! Both numerators and denominators are non-negative whenever `V` and `B`
//! are, so every factor stays non-negative. `B` may be a GRBF bank
//! ([`grbf_basis`]) or a single normalized target-signal column
//! ([`target_basis`]).

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::EmbeddingMatrix;

pub const DEFAULT_SOLVER_EPSILON: f64 = 1e-6;
pub const DEFAULT_ITERATIONS: usize = 4;
pub const DEFAULT_RANK: usize = 8;

/// Non-negative factors. For the constrained solver `w` holds the inner
/// gains `P` (`K x L`) and `h` the coefficients `Q` (`L x N`).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationResult {
    pub factors: FactorPair,
    /// `W H` (unconstrained) or `B P Q` (constrained).
    pub low_rank: Array2<f64>,
    /// Frobenius reconstruction error after each iteration.
    pub error_trace: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl FactorizationResult {
    pub fn final_error(&self) -> f64 {
        self.error_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Final error divided by `||V||_F`.
    pub fn relative_error(&self, v: &EmbeddingMatrix) -> f64 {
        let norm = frobenius(v.array());
        if norm == 0.0 {
            self.final_error()
        } else {
            self.final_error() / norm
        }
    }
}

/// Solver settings shared by both update schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSolver {
    pub rank: usize,
    pub iterations: usize,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for MuSolver {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            epsilon: DEFAULT_SOLVER_EPSILON,
        }
    }
}

impl MuSolver {
    pub fn new(rank: usize, iterations: usize, seed: u64) -> Self {
        Self {
            rank,
            iterations,
            seed,
            epsilon: DEFAULT_SOLVER_EPSILON,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(invalid("rank", "must be >= 1"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be >= 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        Ok(())
    }

    /// Unconstrained NMF, `V ~ W H`.
    pub fn factorize(&self, v: &EmbeddingMatrix) -> Result<FactorizationResult> {
        self.validate()?;
        let v = v.array();
        if !is_non_negative(v) {
            return Err(Error::NegativeInput("input matrix"));
        }
        let (m, n) = v.dim();
        let limit = m.min(n);
        if self.rank > limit {
            return Err(Error::RankTooLarge {
                rank: self.rank,
                limit,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut w = random_positive(&mut rng, m, self.rank);
        let mut h = random_positive(&mut rng, self.rank, n);
        let mut trace = Vec::with_capacity(self.iterations);

        for _ in 0..self.iterations {
            let num = w.t().dot(v);
            let den = w.t().dot(&w).dot(&h);
            apply_update(&mut h, &num, &den, self.epsilon);

            let num = v.dot(&h.t());
            let den = w.dot(&h.dot(&h.t()));
            apply_update(&mut w, &num, &den, self.epsilon);

            trace.push(frobenius(&(v - &w.dot(&h))));
        }

        let low_rank = w.dot(&h);
        Ok(FactorizationResult {
            factors: FactorPair {
                w,
                h,
                rank: self.rank,
            },
            low_rank,
            error_trace: trace,
            iterations: self.iterations,
            seed: self.seed,
        })
    }

    /// NMF with a fixed basis, `V ~ B P Q`.
    pub fn factorize_constrained(
        &self,
        v: &EmbeddingMatrix,
        basis: &Array2<f64>,
    ) -> Result<FactorizationResult> {
        self.validate()?;
        let v = v.array();
        if !is_non_negative(v) {
            return Err(Error::NegativeInput("input matrix"));
        }
        if !is_non_negative(basis) {
            return Err(Error::NegativeInput("constraint basis"));
        }
        let (m, n) = v.dim();
        if basis.nrows() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: basis.nrows(),
            });
        }
        let k = basis.ncols();
        if k == 0 {
            return Err(Error::ShapeMismatch("constraint basis has no columns".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut p = random_positive(&mut rng, k, self.rank);
        let mut q = random_positive(&mut rng, self.rank, n);

        let btv = basis.t().dot(v);
        let btb = basis.t().dot(basis);
        let mut trace = Vec::with_capacity(self.iterations);

        for _ in 0..self.iterations {
            let num = btv.dot(&q.t());
            let den = btb.dot(&p).dot(&q.dot(&q.t()));
            apply_update(&mut p, &num, &den, self.epsilon);

            let num = p.t().dot(&btv);
            let den = p.t().dot(&btb).dot(&p).dot(&q);
            apply_update(&mut q, &num, &den, self.epsilon);

            let recon = basis.dot(&p.dot(&q));
            trace.push(frobenius(&(v - &recon)));
        }

        let low_rank = basis.dot(&p.dot(&q));
        Ok(FactorizationResult {
            factors: FactorPair {
                w: p,
                h: q,
                rank: self.rank,
            },
            low_rank,
            error_trace: trace,
            iterations: self.iterations,
            seed: self.seed,
        })
    }
}

/// Unconstrained multiplicative-update NMF with the default guard.
pub fn nmf_mu(
    v: &EmbeddingMatrix,
    rank: usize,
    iterations: usize,
    seed: u64,
) -> Result<FactorizationResult> {
    MuSolver::new(rank, iterations, seed).factorize(v)
}

/// Basis-constrained multiplicative-update NMF with the default guard.
pub fn constrained_nmf_mu(
    v: &EmbeddingMatrix,
    basis: &Array2<f64>,
    rank: usize,
    iterations: usize,
    seed: u64,
) -> Result<FactorizationResult> {
    MuSolver::new(rank, iterations, seed).factorize_constrained(v, basis)
}

fn apply_update(x: &mut Array2<f64>, num: &Array2<f64>, den: &Array2<f64>, eps: f64) {
    Zip::from(x).and(num).and(den).for_each(|x, &n, &d| {
        *x *= n / (d + eps);
    });
}

/// Entries uniform on (0, 1].
fn random_positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || 1.0 - rng.random::<f64>())
}

fn is_non_negative(a: &Array2<f64>) -> bool {
    a.iter().all(|&x| x >= 0.0)
}

pub(crate) fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Bank of Gaussian radial basis functions spaced `delta_t` samples apart.
#[derive(Debug, Clone, PartialEq)]
pub struct GrbfBasis {
    pub phi: Array2<f64>,
    pub sigma: f64,
    pub delta_t: usize,
    pub k: usize,
}

/// `phi[(row, k)] = exp(-(row - k * delta_t)^2 / (2 sigma^2))` for
/// `k in 0..floor((m - 1) / delta_t) + 1`.
pub fn grbf_basis(m: usize, sigma: f64, delta_t: usize) -> Result<GrbfBasis> {
    if m < 2 {
        return Err(invalid("m", "basis length must be >= 2"));
    }
    if delta_t == 0 {
        return Err(invalid("delta_t", "must be >= 1"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma", "must be a positive finite number"));
    }
    let k = (m - 1) / delta_t + 1;
    let two_var = 2.0 * sigma * sigma;
    let phi = Array2::from_shape_fn((m, k), |(row, col)| {
        let d = row as f64 - (col * delta_t) as f64;
        (-(d * d) / two_var).exp()
    });
    Ok(GrbfBasis {
        phi,
        sigma,
        delta_t,
        k,
    })
}

/// A single-column basis built from a target physiological signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetConstraint {
    /// `M x 1`, min-max normalized onto `[floor, 1]`.
    pub basis: Array2<f64>,
    pub floor: f64,
}

impl TargetConstraint {
    pub fn column(&self) -> Vec<f64> {
        self.basis.column(0).to_vec()
    }
}

pub const DEFAULT_TARGET_FLOOR: f64 = 1e-3;

/// `floor + (1 - floor) * (y - min y) / (max y - min y)`.
pub fn target_basis(y: &[f64], m: usize, floor: f64) -> Result<TargetConstraint> {
    if y.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            actual: y.len(),
        });
    }
    if !(floor > 0.0 && floor < 1.0) {
        return Err(invalid("floor", "must lie in (0, 1)"));
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(invalid("target", "contains non-finite samples"));
    }
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::ConstantSignal);
    }
    let basis = Array2::from_shape_fn((m, 1), |(i, _)| {
        floor + (1.0 - floor) * (y[i] - lo) / range
    });
    Ok(TargetConstraint { basis, floor })
}
