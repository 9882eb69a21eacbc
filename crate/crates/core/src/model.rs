//! Forward-only dual-branch 3D CNN.
//!
//! The pulse (BVP) branch keeps the temporal axis at full length in every
//! block and reduces space by striding; the respiration (RSP) branch also
//! strides in time, then linearly upsamples back to the input frame count.
//! Both branches are fully convolutional in time, so any frame count works
//! (the RSP branch needs it divisible by its temporal stride product).
//!
//! Each block is a zero-padded 3D convolution followed by ReLU. Attention
//! sits after a configurable block; the rest of the branch, a spatial mean
//! and a linear channel projection form the head.

use ndarray::{Array1, Array4, Array5, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{compute_attention, excite_with, AttentionConfig, AttentionOutput, AttentionVariant};
use crate::error::{invalid, Error, Result};
use crate::metrics::Waveform;
use crate::tensor::{VideoClip, VoxelEmbedding, SUPPORTED_CHANNELS, SUPPORTED_RESOLUTIONS};

/// Weights `[out, in, kt, kh, kw]` and one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dWeights {
    pub weight: Array5<f64>,
    pub bias: Array1<f64>,
}

impl Conv3dWeights {
    pub fn new(weight: Array5<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.dim().0 != bias.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} output channels but {} biases",
                weight.dim().0,
                bias.len()
            )));
        }
        Ok(Self {
            weight: weight.as_standard_layout().into_owned(),
            bias,
        })
    }

    /// Uniform on `[-k, k]` with `k = 1 / sqrt(fan_in)`.
    pub fn init(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, kernel: [usize; 3]) -> Self {
        let fan_in = (in_c * kernel[0] * kernel[1] * kernel[2]) as f64;
        let k = 1.0 / fan_in.sqrt();
        let weight = Array5::from_shape_simple_fn((out_c, in_c, kernel[0], kernel[1], kernel[2]), || {
            rng.random_range(-k..=k)
        });
        let bias = Array1::from_shape_simple_fn(out_c, || rng.random_range(-k..=k));
        Self { weight, bias }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }
}

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if kernel > padded {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Dense strided 3D cross-correlation over `[t, c, h, w]` with zero padding.
/// Strides and padding are `[temporal, height, width]`.
pub fn conv3d_forward(
    input: &VoxelEmbedding,
    weights: &Conv3dWeights,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<VoxelEmbedding> {
    let (t, c, h, w) = input.shape();
    let (oc, ic, kt, kh, kw) = weights.weight.dim();
    if ic != c {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {ic} input channels, got {c}"
        )));
    }
    if stride.iter().any(|&s| s == 0) {
        return Err(invalid("stride", "must be >= 1"));
    }
    let ot = out_extent(t, kt, stride[0], padding[0])?;
    let oh = out_extent(h, kh, stride[1], padding[1])?;
    let ow = out_extent(w, kw, stride[2], padding[2])?;

    let src = input.as_slice();
    let wts = weights
        .weight
        .as_slice()
        .expect("conv weights are kept in standard layout");
    let frame_len = oc * oh * ow;
    let mut out = vec![0.0; ot * frame_len];

    // Valid output index range along one axis for kernel offset k.
    let valid = |k: usize, s: usize, p: usize, extent_in: usize, extent_out: usize| {
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if extent_in + p > k {
            ((extent_in - 1 + p - k) / s + 1).min(extent_out)
        } else {
            0
        };
        (lo, hi)
    };

    out.par_chunks_mut(frame_len).enumerate().for_each(|(o_t, frame)| {
        for o_c in 0..oc {
            frame[o_c * oh * ow..(o_c + 1) * oh * ow].fill(weights.bias[o_c]);
        }
        for k_t in 0..kt {
            let i_t = (o_t * stride[0] + k_t) as isize - padding[0] as isize;
            if i_t < 0 || i_t >= t as isize {
                continue;
            }
            let i_t = i_t as usize;
            for i_c in 0..c {
                let plane = &src[(i_t * c + i_c) * h * w..(i_t * c + i_c + 1) * h * w];
                for k_h in 0..kh {
                    let (h_lo, h_hi) = valid(k_h, stride[1], padding[1], h, oh);
                    for k_w in 0..kw {
                        let (w_lo, w_hi) = valid(k_w, stride[2], padding[2], w, ow);
                        for o_c in 0..oc {
                            let wv = wts[(((o_c * ic + i_c) * kt + k_t) * kh + k_h) * kw + k_w];
                            if wv == 0.0 {
                                continue;
                            }
                            let dst = &mut frame[o_c * oh * ow..(o_c + 1) * oh * ow];
                            for o_h in h_lo..h_hi {
                                let i_h = o_h * stride[1] + k_h - padding[1];
                                let row = &plane[i_h * w..(i_h + 1) * w];
                                let drow = &mut dst[o_h * ow..(o_h + 1) * ow];
                                for o_w in w_lo..w_hi {
                                    drow[o_w] += wv * row[o_w * stride[2] + k_w - padding[2]];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    VoxelEmbedding::new((ot, oc, oh, ow), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub out_channels: usize,
    pub temporal_kernel: usize,
    pub spatial_kernel: usize,
    pub temporal_stride: usize,
    pub spatial_stride: usize,
}

impl BlockSpec {
    pub const fn new(out_channels: usize, temporal_stride: usize) -> Self {
        Self {
            out_channels,
            temporal_kernel: 3,
            spatial_kernel: 3,
            temporal_stride,
            spatial_stride: 2,
        }
    }

    fn stride(&self) -> [usize; 3] {
        [self.temporal_stride, self.spatial_stride, self.spatial_stride]
    }

    fn padding(&self) -> [usize; 3] {
        [self.temporal_kernel / 2, self.spatial_kernel / 2, self.spatial_kernel / 2]
    }

    fn kernel(&self) -> [usize; 3] {
        [self.temporal_kernel, self.spatial_kernel, self.spatial_kernel]
    }
}

/// How the modalities reach the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Routing {
    /// Both branches see the same clip: RGB, thermal, or both stacked.
    Shared,
    /// Pulse branch reads RGB, respiration branch reads thermal.
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiniModelConfig {
    pub input_resolution: usize,
    pub input_channels: usize,
    pub routing: Routing,
    pub bvp_blocks: Vec<BlockSpec>,
    pub rsp_blocks: Vec<BlockSpec>,
    pub rsp_upsample_factor: usize,
    /// Attention is applied to the output of this block.
    pub attention_index: usize,
    pub omit_attention: bool,
    pub bvp_attention: AttentionConfig,
    pub rsp_attention: AttentionConfig,
    pub seed: u64,
}

impl Default for MiniModelConfig {
    fn default() -> Self {
        Self {
            input_resolution: 72,
            input_channels: 3,
            routing: Routing::Shared,
            bvp_blocks: vec![
                BlockSpec::new(8, 1),
                BlockSpec::new(12, 1),
                BlockSpec::new(12, 1),
                BlockSpec::new(8, 1),
            ],
            rsp_blocks: vec![
                BlockSpec::new(8, 2),
                BlockSpec::new(12, 2),
                BlockSpec::new(12, 1),
                BlockSpec::new(8, 1),
            ],
            rsp_upsample_factor: 4,
            attention_index: 2,
            omit_attention: false,
            bvp_attention: AttentionConfig::default(),
            rsp_attention: AttentionConfig::default(),
            seed: 0,
        }
    }
}

impl MiniModelConfig {
    pub fn with_input(resolution: usize, channels: usize) -> Self {
        Self {
            input_resolution: resolution,
            input_channels: channels,
            ..Self::default()
        }
    }

    /// RSP temporal strides `(s, 1, 1, 1)` with a matching upsample factor.
    pub fn with_rsp_temporal_strides(mut self, strides: &[usize]) -> Self {
        for (block, &s) in self.rsp_blocks.iter_mut().zip(strides) {
            block.temporal_stride = s;
        }
        self.rsp_upsample_factor = self.rsp_blocks.iter().map(|b| b.temporal_stride).product();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_RESOLUTIONS.contains(&self.input_resolution) {
            return Err(invalid("input_resolution", "must be 9, 36, or 72"));
        }
        if !SUPPORTED_CHANNELS.contains(&self.input_channels) {
            return Err(invalid("input_channels", "must be 1, 3, or 4"));
        }
        if self.routing == Routing::Split && self.input_channels != 4 {
            return Err(invalid("routing", "split routing needs RGB + thermal (4 channels)"));
        }
        for (name, blocks) in [("bvp_blocks", &self.bvp_blocks), ("rsp_blocks", &self.rsp_blocks)] {
            if blocks.is_empty() {
                return Err(invalid(name, "at least one block is required"));
            }
            if self.attention_index >= blocks.len() {
                return Err(invalid("attention_index", format!("{name} has only {} blocks", blocks.len())));
            }
            for b in blocks.iter() {
                if b.out_channels == 0 || b.temporal_stride == 0 || b.spatial_stride == 0 {
                    return Err(invalid(name, "channels and strides must be >= 1"));
                }
                if b.temporal_kernel % 2 == 0 || b.spatial_kernel == 0 {
                    return Err(invalid(name, "temporal kernels must be odd"));
                }
            }
        }
        if self.bvp_blocks.iter().any(|b| b.temporal_stride != 1) {
            return Err(invalid("bvp_blocks", "pulse branch must keep temporal stride 1"));
        }
        let product: usize = self.rsp_blocks.iter().map(|b| b.temporal_stride).product();
        if product != self.rsp_upsample_factor {
            return Err(invalid(
                "rsp_upsample_factor",
                format!("must equal the product of rsp temporal strides ({product})"),
            ));
        }
        self.bvp_attention.validate()?;
        self.rsp_attention.validate()?;
        Ok(())
    }

    fn branch_channels(&self) -> (usize, usize) {
        match self.routing {
            Routing::Shared => (self.input_channels, self.input_channels),
            Routing::Split => (3, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Bvp,
    Rsp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub waveform: Waveform,
    /// `None` when attention was omitted.
    pub attention: Option<AttentionOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    kind: BranchKind,
    specs: Vec<BlockSpec>,
    convs: Vec<Conv3dWeights>,
    head: Array1<f64>,
    head_bias: f64,
    in_channels: usize,
    resolution: usize,
    upsample: usize,
    attention_index: usize,
    attention: Option<AttentionConfig>,
}

impl Branch {
    fn build(
        kind: BranchKind,
        specs: &[BlockSpec],
        in_channels: usize,
        cfg: &MiniModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut convs = Vec::with_capacity(specs.len());
        let mut c = in_channels;
        for spec in specs {
            convs.push(Conv3dWeights::init(rng, spec.out_channels, c, spec.kernel()));
            c = spec.out_channels;
        }
        let k = 1.0 / (c as f64).sqrt();
        let head = Array1::from_shape_simple_fn(c, || rng.random_range(-k..=k));
        let head_bias = rng.random_range(-k..=k);
        let (upsample, attention) = match kind {
            BranchKind::Bvp => (1, cfg.bvp_attention.clone()),
            BranchKind::Rsp => (cfg.rsp_upsample_factor, cfg.rsp_attention.clone()),
        };
        Self {
            kind,
            specs: specs.to_vec(),
            convs,
            head,
            head_bias,
            in_channels,
            resolution: cfg.input_resolution,
            upsample,
            attention_index: cfg.attention_index,
            attention: (!cfg.omit_attention).then_some(attention),
        }
    }

    pub fn kind(&self) -> BranchKind {
        self.kind
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv3dWeights::param_count).sum::<usize>() + self.head.len() + 1
    }

    fn check_clip(&self, clip: &VideoClip) -> Result<()> {
        if clip.channels() != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "{:?} branch expects {} channels, clip has {}",
                self.kind,
                self.in_channels,
                clip.channels()
            )));
        }
        if clip.resolution() != self.resolution {
            return Err(Error::ShapeMismatch(format!(
                "model expects {r}x{r} frames, clip is {c}x{c}",
                r = self.resolution,
                c = clip.resolution()
            )));
        }
        if clip.frames() % self.upsample != 0 {
            return Err(invalid(
                "frames",
                format!(
                    "{} frames not divisible by the rsp upsample factor {}",
                    clip.frames(),
                    self.upsample
                ),
            ));
        }
        Ok(())
    }

    fn run_blocks(&self, mut x: VoxelEmbedding, range: std::ops::Range<usize>) -> Result<VoxelEmbedding> {
        for i in range {
            let spec = &self.specs[i];
            x = conv3d_forward(&x, &self.convs[i], spec.stride(), spec.padding())?.relu();
        }
        Ok(x)
    }

    /// Embeddings at the attention placement.
    pub fn embed(&self, clip: &VideoClip) -> Result<VoxelEmbedding> {
        self.check_clip(clip)?;
        self.run_blocks(clip.to_embedding(), 0..self.attention_index + 1)
    }

    /// Remaining blocks, spatial mean, channel projection, temporal upsampling.
    pub fn head(&self, eps: &VoxelEmbedding, frames: usize, fps: f64) -> Result<Waveform> {
        let x = self.run_blocks(eps.clone(), self.attention_index + 1..self.specs.len())?;
        let pooled = x
            .array()
            .mean_axis(Axis(3))
            .and_then(|a| a.mean_axis(Axis(2)))
            .expect("spatial axes are non-empty");
        let mut samples = pooled.dot(&self.head);
        samples.mapv_inplace(|v| v + self.head_bias);
        let samples = if samples.len() == frames {
            samples.to_vec()
        } else {
            linear_resample(samples.as_slice().expect("contiguous"), frames)
        };
        Waveform::new(samples, fps)
    }

    fn attend(&self, eps: &VoxelEmbedding, target: Option<&[f64]>) -> Result<Option<AttentionOutput>> {
        let Some(cfg) = &self.attention else {
            return Ok(None);
        };
        let resampled;
        let target = match target {
            Some(y) if y.len() != eps.tau() => {
                resampled = linear_resample(y, eps.tau());
                Some(resampled.as_slice())
            }
            other => other,
        };
        if cfg.variant == AttentionVariant::Tsfm && target.is_none() {
            // No label at inference time: run without the attention module.
            return Ok(None);
        }
        compute_attention(eps, cfg, target).map(Some)
    }

    pub fn forward(&self, clip: &VideoClip, target: Option<&[f64]>) -> Result<BranchOutput> {
        if let Some(y) = target {
            if y.len() != clip.frames() {
                return Err(Error::LengthMismatch {
                    expected: clip.frames(),
                    actual: y.len(),
                });
            }
        }
        let eps = self.embed(clip)?;
        let attention = self.attend(&eps, target)?;
        let excited = match &attention {
            Some(a) => &a.excited,
            None => &eps,
        };
        let waveform = self.head(excited, clip.frames(), clip.fps())?;
        Ok(BranchOutput {
            waveform,
            attention,
        })
    }

    /// Forward pass with the attention map forced to zero.
    pub fn forward_zero_attention(&self, clip: &VideoClip) -> Result<Waveform> {
        let eps = self.embed(clip)?;
        let zeros = VoxelEmbedding::zeros(eps.shape())?;
        let norm_eps = self
            .attention
            .as_ref()
            .map_or(crate::tensor::DEFAULT_NORM_EPSILON, |c| c.norm_epsilon);
        let excited = excite_with(&eps, &zeros, norm_eps)?;
        self.head(&excited, clip.frames(), clip.fps())
    }
}

/// Linear interpolation with half-sample alignment, edges held.
pub fn linear_resample(x: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = x.len();
    if n_in == 0 || n_out == 0 {
        return vec![0.0; n_out];
    }
    if n_in == 1 {
        return vec![x[0]; n_out];
    }
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            let frac = pos - lo as f64;
            x[lo] * (1.0 - frac) + x[hi] * frac
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskOutput {
    pub rppg: BranchOutput,
    pub rrsp: BranchOutput,
}

/// Pulse and respiration branches with seeded weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBranchNet {
    cfg: MiniModelConfig,
    bvp: Branch,
    rsp: Branch,
}

impl DualBranchNet {
    pub fn new(cfg: MiniModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (bvp_c, rsp_c) = cfg.branch_channels();
        let bvp = Branch::build(BranchKind::Bvp, &cfg.bvp_blocks, bvp_c, &cfg, &mut rng);
        let rsp = Branch::build(BranchKind::Rsp, &cfg.rsp_blocks, rsp_c, &cfg, &mut rng);
        Ok(Self { cfg, bvp, rsp })
    }

    pub fn config(&self) -> &MiniModelConfig {
        &self.cfg
    }

    pub fn bvp(&self) -> &Branch {
        &self.bvp
    }

    pub fn rsp(&self) -> &Branch {
        &self.rsp
    }

    pub fn param_count(&self) -> usize {
        self.bvp.param_count() + self.rsp.param_count()
    }

    pub fn bvp_branch_forward(&self, clip: &VideoClip, target: Option<&[f64]>) -> Result<Waveform> {
        Ok(self.bvp.forward(clip, target)?.waveform)
    }

    pub fn rsp_branch_forward(&self, clip: &VideoClip, target: Option<&[f64]>) -> Result<Waveform> {
        Ok(self.rsp.forward(clip, target)?.waveform)
    }

    /// Routes the available modalities to the branches and runs both.
    /// `targets` are the optional `(pulse, respiration)` constraint signals.
    pub fn forward_multitask(
        &self,
        rgb: Option<&VideoClip>,
        thermal: Option<&VideoClip>,
        targets: (Option<&[f64]>, Option<&[f64]>),
    ) -> Result<MultitaskOutput> {
        if let (Some(a), Some(b)) = (rgb, thermal) {
            if a.frames() != b.frames() {
                return Err(Error::ShapeMismatch(format!(
                    "rgb has {} frames, thermal has {}",
                    a.frames(),
                    b.frames()
                )));
            }
        }
        let (bvp_in, rsp_in) = match (self.cfg.routing, rgb, thermal) {
            (_, None, None) => {
                return Err(invalid("input", "at least one modality (RGB or thermal) is required"))
            }
            (Routing::Split, Some(r), Some(t)) => (r.clone(), t.clone()),
            (Routing::Split, _, _) => {
                return Err(invalid("input", "split routing needs both RGB and thermal clips"))
            }
            (Routing::Shared, Some(r), Some(t)) => {
                let both = r.concat_channels(t)?;
                (both.clone(), both)
            }
            (Routing::Shared, Some(c), None) | (Routing::Shared, None, Some(c)) => (c.clone(), c.clone()),
        };
        let (rppg, rrsp) = rayon::join(
            || self.bvp.forward(&bvp_in, targets.0),
            || self.rsp.forward(&rsp_in, targets.1),
        );
        Ok(MultitaskOutput {
            rppg: rppg?,
            rrsp: rrsp?,
        })
    }
}

/// Clip of all-constant frames, handy for shape checks.
pub fn constant_clip(frames: usize, resolution: usize, channels: usize, fps: f64, value: f64) -> Result<VideoClip> {
    VideoClip::new(Array4::from_elem((frames, channels, resolution, resolution), value), fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_pulse, gen_video_clip, ClipSpec};
    use approx::assert_abs_diff_eq;

    fn ramp(shape: (usize, usize, usize, usize)) -> VoxelEmbedding {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        VoxelEmbedding::new(shape, (0..n).map(|i| ((i * 13 % 17) as f64) - 8.0).collect()).unwrap()
    }

    /// Direct six-loop reference with explicit bounds checks.
    fn conv_reference(x: &VoxelEmbedding, w: &Conv3dWeights, st: [usize; 3], pd: [usize; 3]) -> Array4<f64> {
        let (t, _, h, wd) = x.shape();
        let (oc, ic, kt, kh, kw) = w.weight.dim();
        let ot = (t + 2 * pd[0] - kt) / st[0] + 1;
        let oh = (h + 2 * pd[1] - kh) / st[1] + 1;
        let ow = (wd + 2 * pd[2] - kw) / st[2] + 1;
        let mut out = Array4::zeros((ot, oc, oh, ow));
        for ((a, o, b, c), v) in out.indexed_iter_mut() {
            let mut acc = w.bias[o];
            for i in 0..ic {
                for dt in 0..kt {
                    for dh in 0..kh {
                        for dw in 0..kw {
                            let it = (a * st[0] + dt) as isize - pd[0] as isize;
                            let ih = (b * st[1] + dh) as isize - pd[1] as isize;
                            let iw = (c * st[2] + dw) as isize - pd[2] as isize;
                            if it >= 0 && ih >= 0 && iw >= 0 && (it as usize) < t && (ih as usize) < h && (iw as usize) < wd {
                                acc += w.weight[[o, i, dt, dh, dw]] * x.array()[[it as usize, i, ih as usize, iw as usize]];
                            }
                        }
                    }
                }
            }
            *v = acc;
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let x = ramp((4, 1, 3, 3));
        let w = Conv3dWeights::new(Array5::ones((1, 1, 1, 1, 1)), Array1::zeros(1)).unwrap();
        assert_eq!(conv3d_forward(&x, &w, [1, 1, 1], [0, 0, 0]).unwrap(), x);
    }

    #[test]
    fn conv_output_extents() {
        let x = ramp((8, 1, 3, 3));
        let w = Conv3dWeights::new(Array5::ones((1, 1, 3, 1, 1)), Array1::zeros(1)).unwrap();
        assert_eq!(conv3d_forward(&x, &w, [1, 1, 1], [1, 0, 0]).unwrap().tau(), 8);
        assert_eq!(conv3d_forward(&x, &w, [2, 1, 1], [1, 0, 0]).unwrap().tau(), 4);
        let big = Conv3dWeights::new(Array5::ones((1, 1, 11, 1, 1)), Array1::zeros(1)).unwrap();
        assert!(matches!(
            conv3d_forward(&x, &big, [1, 1, 1], [1, 0, 0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn conv_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = ramp((7, 2, 9, 8));
        for (st, pd, k) in [
            ([1, 1, 1], [1, 1, 1], [3, 3, 3]),
            ([2, 2, 2], [1, 1, 1], [3, 3, 3]),
            ([3, 2, 1], [0, 2, 1], [3, 5, 2]),
            ([1, 3, 3], [2, 0, 0], [5, 1, 3]),
        ] {
            let w = Conv3dWeights::init(&mut rng, 3, 2, k);
            let fast = conv3d_forward(&x, &w, st, pd).unwrap();
            let slow = conv_reference(&x, &w, st, pd);
            assert_eq!(fast.array().dim(), slow.dim());
            for (a, b) in fast.array().iter().zip(slow.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn bvp_keeps_frame_count() {
        let net = DualBranchNet::new(MiniModelConfig::with_input(9, 3)).unwrap();
        let clip = constant_clip(180, 9, 3, 30.0, 0.5).unwrap();
        assert_eq!(net.bvp_branch_forward(&clip, None).unwrap().len(), 180);
        let bad = constant_clip(180, 9, 1, 30.0, 0.5).unwrap();
        assert!(net.bvp_branch_forward(&bad, None).is_err());
    }

    #[test]
    fn rsp_divisibility() {
        let net = DualBranchNet::new(MiniModelConfig::with_input(9, 3)).unwrap();
        let odd = constant_clip(182, 9, 3, 30.0, 0.5).unwrap();
        assert!(matches!(
            net.rsp_branch_forward(&odd, None),
            Err(Error::InvalidParameter { .. })
        ));
        let clip = constant_clip(180, 9, 3, 30.0, 0.5).unwrap();
        assert_eq!(net.rsp_branch_forward(&clip, None).unwrap().len(), 180);
        let cfg = MiniModelConfig::with_input(9, 3).with_rsp_temporal_strides(&[3, 1, 1, 1]);
        assert_eq!(cfg.rsp_upsample_factor, 3);
        let net = DualBranchNet::new(cfg).unwrap();
        assert_eq!(net.rsp_branch_forward(&clip, None).unwrap().len(), 180);
        let clip = constant_clip(160, 9, 3, 30.0, 0.5).unwrap();
        let net = DualBranchNet::new(MiniModelConfig::with_input(9, 3)).unwrap();
        assert_eq!(net.rsp_branch_forward(&clip, None).unwrap().len(), 160);
    }

    #[test]
    fn config_validation() {
        let mut cfg = MiniModelConfig::default();
        cfg.bvp_blocks[1].temporal_stride = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = MiniModelConfig::default();
        cfg.rsp_upsample_factor = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = MiniModelConfig::default();
        cfg.attention_index = 4;
        assert!(cfg.validate().is_err());
        assert!(MiniModelConfig::with_input(10, 3).validate().is_err());
        assert!(MiniModelConfig::with_input(9, 2).validate().is_err());
    }

    #[test]
    fn multitask_routing() {
        let mut cfg = MiniModelConfig::with_input(9, 4);
        cfg.routing = Routing::Split;
        let net = DualBranchNet::new(cfg).unwrap();
        let rgb = constant_clip(60, 9, 3, 30.0, 0.4).unwrap();
        let th = constant_clip(60, 9, 1, 30.0, 0.6).unwrap();
        let out = net.forward_multitask(Some(&rgb), Some(&th), (None, None)).unwrap();
        assert_eq!((out.rppg.waveform.len(), out.rrsp.waveform.len()), (60, 60));
        assert!(net.forward_multitask(Some(&rgb), None, (None, None)).is_err());
        assert!(net.forward_multitask(None, None, (None, None)).is_err());

        let net = DualBranchNet::new(MiniModelConfig::with_input(9, 3)).unwrap();
        let out = net.forward_multitask(Some(&rgb), None, (None, None)).unwrap();
        assert_eq!(out.rppg.waveform.len(), 60);
        let th_short = constant_clip(40, 9, 1, 30.0, 0.6).unwrap();
        assert!(net.forward_multitask(Some(&rgb), Some(&th_short), (None, None)).is_err());
    }

    #[test]
    fn tsfm_runs_with_target_and_is_skipped_without() {
        let pulse = gen_pulse(30.0, 72.0, 2.0, 0.0, 0.0, 0).unwrap();
        let clip = gen_video_clip(&ClipSpec::new(60, 9, 3, 30.0, 2), Some(&pulse)).unwrap();
        let net = DualBranchNet::new(MiniModelConfig::with_input(9, 3)).unwrap();
        let with = net.bvp().forward(&clip, Some(&pulse.samples)).unwrap();
        assert!(with.attention.is_some());
        let without = net.bvp().forward(&clip, None).unwrap();
        assert!(without.attention.is_none());
        // rsp embeddings are shorter than the clip: the target is resampled
        let rsp = net.rsp().forward(&clip, Some(&pulse.samples)).unwrap();
        assert_eq!(rsp.attention.unwrap().attended.tau(), 15);
    }

    #[test]
    fn omitted_attention_equals_zero_attention() {
        let pulse = gen_pulse(30.0, 72.0, 2.0, 0.0, 0.0, 0).unwrap();
        let clip = gen_video_clip(&ClipSpec::new(60, 36, 3, 30.0, 3), Some(&pulse)).unwrap();
        let mut cfg = MiniModelConfig::with_input(36, 3);
        cfg.omit_attention = true;
        let net = DualBranchNet::new(cfg).unwrap();
        for branch in [net.bvp(), net.rsp()] {
            let omitted = branch.forward(&clip, Some(&pulse.samples)).unwrap();
            assert!(omitted.attention.is_none());
            assert_eq!(omitted.waveform, branch.forward_zero_attention(&clip).unwrap());
        }
    }

    #[test]
    fn resample_preserves_linear_ramps() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let up = linear_resample(&x, 40);
        assert_eq!(up.len(), 40);
        assert_eq!(linear_resample(&x, 10), x);
        for w in up.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }
}
