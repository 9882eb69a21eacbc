//! Factorize-and-excite attention for remote physiological sensing.
//!
//! The crate covers four layers:
//!
//! - [`tensor`]: voxel embeddings, their `M x N` matrix view, video clips.
//! - [`factorize`] and [`attention`]: multiplicative-update NMF, optionally
//!   constrained by a GRBF bank or by a target physiological signal, and the
//!   attention pipeline built on it.
//! - [`model`] and [`loss`]: a small dual-branch 3D CNN (pulse and
//!   respiration heads) and the two training losses with analytic gradients.
//! - [`metrics`] and [`synth`]: rate estimation, SNR, MACC, error statistics,
//!   and deterministic signal generators used as ground truth.

pub mod attention;
pub mod error;
pub mod factorize;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;

pub use attention::{
    compute_attention, csim_map, excite, factorize_embedding, xi_pre, AttentionConfig, AttentionOutput,
    AttentionVariant,
};
pub use error::{Error, Result};
pub use factorize::{
    constrained_nmf_mu, grbf_basis, nmf_mu, target_basis, FactorPair, FactorizationResult,
    GrbfBasis, MuSolver, TargetConstraint,
};
pub use loss::{fd_gradient_check, neg_pearson_loss, smooth_l1_loss, LossKind};
pub use metrics::{
    concat_windows, error_metrics, estimate_rate_fft, macc, snr, MetricsReport, RateBand,
    RateKind, Waveform,
};
pub use model::{conv3d_forward, DualBranchNet, MiniModelConfig};
pub use tensor::{EmbeddingMatrix, VideoClip, VoxelEmbedding};
