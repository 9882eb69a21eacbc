//! Factorize-and-excite attention over voxel embeddings.
//!
//! Pipeline for an embedding `eps`:
//!
//! 1. `xi_pre`: 1x1x1 channel mix followed by ReLU, so the matrix view is
//!    non-negative.
//! 2. Flatten to `V` (temporal rows) and factorize with the solver matching
//!    the variant: plain NMF (`fsam`), NMF constrained by a GRBF bank
//!    (`grbf`), or constrained by the normalized target signal (`tsfm`).
//! 3. Map the low-rank matrix back to the embedding shape and apply
//!    `xi_post` (channel mix, ReLU). This is the attention map.
//! 4. Excite: `eps + IN(eps * attended)`.
//!
//! The whole computation is gradient-free: callers that differentiate the
//! network treat `attended` as a constant.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::factorize::{
    grbf_basis, target_basis, FactorizationResult, MuSolver, DEFAULT_ITERATIONS, DEFAULT_RANK,
    DEFAULT_SOLVER_EPSILON, DEFAULT_TARGET_FLOOR,
};
use crate::tensor::{EmbeddingMatrix, VoxelEmbedding, DEFAULT_NORM_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionVariant {
    /// Unconstrained NMF.
    Fsam,
    /// NMF constrained by a Gaussian radial basis bank.
    Grbf,
    /// NMF constrained by the target physiological signal.
    Tsfm,
}

impl std::str::FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fsam" => Ok(Self::Fsam),
            "grbf" => Ok(Self::Grbf),
            "tsfm" => Ok(Self::Tsfm),
            other => Err(invalid("variant", format!("unknown attention variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub variant: AttentionVariant,
    pub rank: usize,
    pub iterations: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub grbf_sigma: f64,
    pub grbf_delta_t: usize,
    pub target_floor: f64,
    pub norm_epsilon: f64,
    /// `kappa x kappa` weights of the pre-processing 1x1x1 conv; `None` is identity.
    #[serde(skip)]
    pub pre_mix: Option<Array2<f64>>,
    /// `kappa x kappa` weights of the post-processing 1x1x1 conv; `None` is identity.
    #[serde(skip)]
    pub post_mix: Option<Array2<f64>>,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            variant: AttentionVariant::Tsfm,
            rank: DEFAULT_RANK,
            iterations: DEFAULT_ITERATIONS,
            epsilon: DEFAULT_SOLVER_EPSILON,
            seed: 0,
            grbf_sigma: 2.0,
            grbf_delta_t: 4,
            target_floor: DEFAULT_TARGET_FLOOR,
            norm_epsilon: DEFAULT_NORM_EPSILON,
            pre_mix: None,
            post_mix: None,
        }
    }
}

impl AttentionConfig {
    pub fn with_variant(variant: AttentionVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn solver(&self) -> MuSolver {
        MuSolver {
            rank: self.rank,
            iterations: self.iterations,
            seed: self.seed,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be >= 1"));
        }
        if self.rank == 0 {
            return Err(invalid("rank", "must be >= 1"));
        }
        for (name, mix) in [("pre_mix", &self.pre_mix), ("post_mix", &self.post_mix)] {
            if let Some(m) = mix {
                if m.nrows() != m.ncols() {
                    return Err(invalid(name, "channel mix must be square"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Back-mapped low-rank attention after `xi_post`; same shape as the input.
    pub attended: VoxelEmbedding,
    /// `eps + IN(eps * attended)`.
    pub excited: VoxelEmbedding,
    pub factorization: FactorizationResult,
}

fn mix_relu(eps: &VoxelEmbedding, mix: Option<&Array2<f64>>) -> Result<VoxelEmbedding> {
    match mix {
        None => Ok(eps.relu()),
        Some(m) => Ok(eps.mix_channels(m)?.relu()),
    }
}

/// Pre-processing: channel mix then ReLU.
pub fn xi_pre(eps: &VoxelEmbedding, cfg: &AttentionConfig) -> Result<VoxelEmbedding> {
    mix_relu(eps, cfg.pre_mix.as_ref())
}

/// Post-processing: channel mix then ReLU.
pub fn xi_post(eps: &VoxelEmbedding, cfg: &AttentionConfig) -> Result<VoxelEmbedding> {
    mix_relu(eps, cfg.post_mix.as_ref())
}

pub fn compute_attention(
    eps: &VoxelEmbedding,
    cfg: &AttentionConfig,
    target: Option<&[f64]>,
) -> Result<AttentionOutput> {
    cfg.validate()?;
    let v = xi_pre(eps, cfg)?.flatten_to_matrix();
    let factorization = factorize_embedding(&v, cfg, target)?;
    let low_rank = EmbeddingMatrix::new(factorization.low_rank.clone())?;
    let attended = xi_post(&low_rank.unflatten_to_voxel(eps.shape())?, cfg)?;
    let excited = excite_with(eps, &attended, cfg.norm_epsilon)?;
    Ok(AttentionOutput {
        attended,
        excited,
        factorization,
    })
}

/// Runs the solver selected by `cfg.variant` on a flattened embedding.
pub fn factorize_embedding(
    v: &EmbeddingMatrix,
    cfg: &AttentionConfig,
    target: Option<&[f64]>,
) -> Result<FactorizationResult> {
    let solver = cfg.solver();
    match cfg.variant {
        AttentionVariant::Fsam => {
            // Cap the rank for tiny embeddings instead of failing.
            let solver = MuSolver {
                rank: solver.rank.min(v.m().min(v.n())),
                ..solver
            };
            solver.factorize(v)
        }
        AttentionVariant::Grbf => {
            if v.m() < 2 {
                return Err(invalid("tau", "grbf attention needs at least 2 frames"));
            }
            let basis = grbf_basis(v.m(), cfg.grbf_sigma, cfg.grbf_delta_t)?;
            solver.factorize_constrained(v, &basis.phi)
        }
        AttentionVariant::Tsfm => {
            let y = target.ok_or(Error::MissingTarget)?;
            let constraint = target_basis(y, v.m(), cfg.target_floor)?;
            solver.factorize_constrained(v, &constraint.basis)
        }
    }
}

/// Residual excitation, `eps + IN(eps * attended)`.
pub fn excite(eps: &VoxelEmbedding, attended: &VoxelEmbedding) -> Result<VoxelEmbedding> {
    excite_with(eps, attended, DEFAULT_NORM_EPSILON)
}

pub fn excite_with(
    eps: &VoxelEmbedding,
    attended: &VoxelEmbedding,
    norm_epsilon: f64,
) -> Result<VoxelEmbedding> {
    let modulated = eps.hadamard(attended)?;
    eps.add(&modulated.instance_norm(norm_epsilon)?)
}

/// Absolute cosine similarity between every temporal trace and `target`,
/// indexed `[c, a, b]`.
///
/// Both the trace and the target are mean-removed first, so a constant
/// offset on a trace (such as the shift that makes embeddings non-negative)
/// does not mask its temporal shape. Zero-variance traces map to 0.
pub fn csim_map(eps: &VoxelEmbedding, target: &[f64]) -> Result<Array3<f64>> {
    let (t, c, a, b) = eps.shape();
    if target.len() != t {
        return Err(Error::LengthMismatch {
            expected: t,
            actual: target.len(),
        });
    }
    let y = centered(target);
    let y_norm = norm(&y);
    if !(y_norm > 0.0) {
        return Err(invalid("target", "all-zero (or constant) target signal"));
    }
    let mut out = Array3::zeros((c, a, b));
    for ((ci, ai, bi), slot) in out.indexed_iter_mut() {
        let trace = centered(&eps.trace(ci, ai, bi));
        let tn = norm(&trace);
        *slot = if tn > 0.0 {
            let dot: f64 = trace.iter().zip(&y).map(|(p, q)| p * q).sum();
            (dot / (tn * y_norm)).abs().min(1.0)
        } else {
            0.0
        };
    }
    Ok(out)
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean CSIM over locations where `mask` is set and where it is not.
pub fn csim_split(map: &Array3<f64>, mask: &Array3<bool>) -> Result<(f64, f64)> {
    if map.dim() != mask.dim() {
        return Err(Error::ShapeMismatch(format!(
            "csim map {:?} vs mask {:?}",
            map.dim(),
            mask.dim()
        )));
    }
    let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (v, &m) in map.iter().zip(mask.iter()) {
        if m {
            s_in += v;
            n_in += 1;
        } else {
            s_out += v;
            n_out += 1;
        }
    }
    if n_in == 0 || n_out == 0 {
        return Err(invalid("mask", "needs both planted and background locations"));
    }
    Ok((s_in / n_in as f64, s_out / n_out as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn ramp(shape: (usize, usize, usize, usize)) -> VoxelEmbedding {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        VoxelEmbedding::new(shape, (0..n).map(|i| ((i * 37 % 101) as f64) / 50.0).collect())
            .unwrap()
    }

    fn pulse(t: usize) -> Vec<f64> {
        (0..t).map(|i| (2.0 * PI * i as f64 / 10.0).sin()).collect()
    }

    #[test]
    fn xi_pre_identity_and_negation() {
        let eps = ramp((3, 2, 2, 2));
        let cfg = AttentionConfig::default();
        assert_eq!(xi_pre(&eps, &cfg).unwrap(), eps);

        let signed = eps.map(|x| x - 1.0);
        let out = xi_pre(&signed, &cfg).unwrap();
        assert!(out.as_slice().iter().all(|&x| x >= 0.0));
        assert_eq!(out, signed.relu());

        let cfg = AttentionConfig {
            pre_mix: Some(-Array2::<f64>::eye(2)),
            ..cfg
        };
        let pos = eps.map(|x| x + 0.1);
        assert!(xi_pre(&pos, &cfg).unwrap().as_slice().iter().all(|&x| x == 0.0));

        let cfg = AttentionConfig {
            pre_mix: Some(Array2::eye(3)),
            ..AttentionConfig::default()
        };
        assert!(matches!(xi_pre(&eps, &cfg), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn shapes_are_preserved() {
        let eps = ramp((20, 4, 3, 3));
        let y = pulse(20);
        let out = compute_attention(&eps, &AttentionConfig::default(), Some(&y)).unwrap();
        assert_eq!(out.attended.shape(), (20, 4, 3, 3));
        assert_eq!(out.excited.shape(), (20, 4, 3, 3));
        assert!(out.attended.as_slice().iter().all(|&x| x >= 0.0));

        let fsam = AttentionConfig::with_variant(AttentionVariant::Fsam);
        let out = compute_attention(&eps, &fsam, None).unwrap();
        assert_eq!(out.excited.shape(), (20, 4, 3, 3));

        let grbf = AttentionConfig::with_variant(AttentionVariant::Grbf);
        let out = compute_attention(&eps, &grbf, None).unwrap();
        assert_eq!(out.attended.shape(), (20, 4, 3, 3));
    }

    #[test]
    fn tsfm_target_errors() {
        let eps = ramp((20, 4, 3, 3));
        let cfg = AttentionConfig::default();
        assert_eq!(compute_attention(&eps, &cfg, None), Err(Error::MissingTarget));
        let short = pulse(19);
        assert!(matches!(
            compute_attention(&eps, &cfg, Some(&short)),
            Err(Error::LengthMismatch { expected: 20, actual: 19 })
        ));
        assert_eq!(
            compute_attention(&eps, &cfg, Some(&[1.0; 20])),
            Err(Error::ConstantSignal)
        );
    }

    #[test]
    fn tsfm_low_rank_columns_follow_target() {
        let eps = ramp((20, 2, 2, 2));
        let y = pulse(20);
        let out = compute_attention(&eps, &AttentionConfig::default(), Some(&y)).unwrap();
        let basis = target_basis(&y, 20, DEFAULT_TARGET_FLOOR).unwrap().column();
        let bn = norm(&basis);
        for col in out.factorization.low_rank.columns() {
            let dot: f64 = col.iter().zip(&basis).map(|(p, q)| p * q).sum();
            assert_abs_diff_eq!(dot / (col.dot(&col).sqrt() * bn), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn excite_edge_cases() {
        let eps = ramp((4, 2, 2, 2));
        let zeros = VoxelEmbedding::zeros(eps.shape()).unwrap();
        assert_eq!(excite(&eps, &zeros).unwrap(), eps);
        let ones = VoxelEmbedding::filled(eps.shape(), 1.0).unwrap();
        let expected = eps.add(&eps.instance_norm(DEFAULT_NORM_EPSILON).unwrap()).unwrap();
        assert_eq!(excite(&eps, &ones).unwrap(), expected);
        let other = VoxelEmbedding::zeros((4, 2, 2, 1)).unwrap();
        assert!(excite(&eps, &other).is_err());
    }

    #[test]
    fn csim_reference_cases() {
        let t = 40;
        let y: Vec<f64> = (0..t).map(|i| (2.0 * PI * i as f64 / 10.0).sin()).collect();
        let cosine: Vec<f64> = (0..t).map(|i| (2.0 * PI * i as f64 / 10.0).cos()).collect();
        let mut data = Vec::with_capacity(t * 4);
        for i in 0..t {
            data.extend([y[i], -y[i], cosine[i], 0.0]);
        }
        let eps = VoxelEmbedding::new((t, 1, 2, 2), data).unwrap();
        let map = csim_map(&eps, &y).unwrap();
        assert_abs_diff_eq!(map[[0, 0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(map[[0, 0, 1]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(map[[0, 1, 0]], 0.0, epsilon = 1e-6);
        assert_eq!(map[[0, 1, 1]], 0.0);
        assert!(csim_map(&eps, &vec![0.0; t]).is_err());
        assert!(csim_map(&eps, &y[..10]).is_err());
    }

    #[test]
    fn deterministic_outputs() {
        let eps = ramp((16, 3, 2, 2));
        let y = pulse(16);
        for v in [AttentionVariant::Fsam, AttentionVariant::Grbf, AttentionVariant::Tsfm] {
            let cfg = AttentionConfig::with_variant(v);
            let a = compute_attention(&eps, &cfg, Some(&y)).unwrap();
            let b = compute_attention(&eps, &cfg, Some(&y)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn variant_parse() {
        assert_eq!("TSFM".parse::<AttentionVariant>().unwrap(), AttentionVariant::Tsfm);
        assert!("mhsa".parse::<AttentionVariant>().is_err());
    }
}
