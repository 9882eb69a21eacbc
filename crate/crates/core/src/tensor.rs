//! Dense containers for voxel embeddings, their 2D factorization view, and
//! video clips.
//!
//! A [`VoxelEmbedding`] is indexed `[t, c, a, b]` (temporal, channel, two
//! spatial axes) in row-major order. Flattening maps the temporal axis to
//! matrix rows and the `(c, a, b)` triple to columns, so element
//! `[t, c, a, b]` lands at row `t`, column `c * (alpha * beta) + a * beta + b`.
//! Because both layouts are row-major the mapping is a reinterpretation of
//! the same buffer.

use ndarray::{Array2, Array4, Axis, Zip};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_NORM_EPSILON: f64 = 1e-5;

/// Extents of a voxel embedding: `(tau, kappa, alpha, beta)`.
pub type VoxelShape = (usize, usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelEmbedding {
    data: Array4<f64>,
}

impl VoxelEmbedding {
    pub fn new(shape: VoxelShape, data: Vec<f64>) -> Result<Self> {
        check_extents(shape)?;
        let (t, c, a, b) = shape;
        let expected = t * c * a * b;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        let data = Array4::from_shape_vec((t, c, a, b), data)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn from_array(data: Array4<f64>) -> Result<Self> {
        let s = data.dim();
        check_extents(s)?;
        // Normalize to standard layout so flatten is a pure reshape.
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(Self { data })
    }

    pub fn zeros(shape: VoxelShape) -> Result<Self> {
        check_extents(shape)?;
        Ok(Self {
            data: Array4::zeros(shape),
        })
    }

    pub fn filled(shape: VoxelShape, value: f64) -> Result<Self> {
        check_extents(shape)?;
        Ok(Self {
            data: Array4::from_elem(shape, value),
        })
    }

    pub fn shape(&self) -> VoxelShape {
        self.data.dim()
    }

    pub fn tau(&self) -> usize {
        self.data.dim().0
    }

    pub fn kappa(&self) -> usize {
        self.data.dim().1
    }

    pub fn array(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array4<f64> {
        self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("voxel embeddings are kept in standard layout")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }

    /// Temporal trace at one `(c, a, b)` location.
    pub fn trace(&self, c: usize, a: usize, b: usize) -> Vec<f64> {
        self.data
            .index_axis(Axis(1), c)
            .index_axis(Axis(1), a)
            .index_axis(Axis(1), b)
            .to_vec()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn relu(&self) -> Self {
        Self {
            data: self.data.mapv(|x| x.max(0.0)),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.mapv(f),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            data: &self.data + &other.data,
        })
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            data: &self.data * k,
        }
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            data: &self.data * &other.data,
        })
    }

    /// Maps `tau` to rows and `(kappa, alpha, beta)` to columns.
    pub fn flatten_to_matrix(&self) -> EmbeddingMatrix {
        let (t, c, a, b) = self.shape();
        let data = self
            .data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t, c * a * b))
            .expect("row-major reshape of a standard-layout array");
        EmbeddingMatrix { data }
    }

    /// Per-channel standardization, statistics pooled over `(t, a, b)`.
    pub fn instance_norm(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        let mut out = self.data.clone();
        for mut channel in out.axis_iter_mut(Axis(1)) {
            let n = channel.len() as f64;
            let mean = channel.sum() / n;
            let var = channel.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + epsilon).sqrt();
            channel.mapv_inplace(|x| (x - mean) * inv);
        }
        Ok(Self { data: out })
    }

    /// Per-voxel channel mixing: `out[t, o, a, b] = sum_c mix[o, c] * x[t, c, a, b]`.
    pub fn mix_channels(&self, mix: &Array2<f64>) -> Result<Self> {
        let (t, c, a, b) = self.shape();
        if mix.dim() != (c, c) {
            return Err(Error::ShapeMismatch(format!(
                "channel mix is {:?}, embedding has {c} channels",
                mix.dim()
            )));
        }
        let mut out = Array4::<f64>::zeros((t, c, a, b));
        Zip::from(out.outer_iter_mut())
            .and(self.data.outer_iter())
            .for_each(|mut dst, src| {
                for o in 0..c {
                    let mut d = dst.index_axis_mut(Axis(0), o);
                    for i in 0..c {
                        let w = mix[[o, i]];
                        if w != 0.0 {
                            d.scaled_add(w, &src.index_axis(Axis(0), i));
                        }
                    }
                }
            });
        Ok(Self { data: out })
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

fn check_extents(shape: VoxelShape) -> Result<()> {
    let (t, c, a, b) = shape;
    if t == 0 || c == 0 || a == 0 || b == 0 {
        return Err(Error::ShapeMismatch(format!(
            "all extents must be >= 1, got {shape:?}"
        )));
    }
    Ok(())
}

/// The `M x N` matrix view of a voxel embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (m, n) = data.dim();
        if m == 0 || n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "matrix extents must be >= 1, got ({m}, {n})"
            )));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_rows(m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        let a = Array2::from_shape_vec((m, n), data)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(a)
    }

    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn is_non_negative(&self) -> bool {
        self.data.iter().all(|&x| x >= 0.0)
    }

    /// Exact inverse of [`VoxelEmbedding::flatten_to_matrix`].
    pub fn unflatten_to_voxel(&self, shape: VoxelShape) -> Result<VoxelEmbedding> {
        check_extents(shape)?;
        let (t, c, a, b) = shape;
        if self.m() != t || self.n() != c * a * b {
            return Err(Error::ShapeMismatch(format!(
                "matrix ({}, {}) cannot hold embedding {shape:?}",
                self.m(),
                self.n()
            )));
        }
        let data = self
            .data
            .clone()
            .into_shape_with_order((t, c, a, b))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(VoxelEmbedding { data })
    }
}

/// Input video frames, stored `[frame, channel, row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    data: Array4<f64>,
    fps: f64,
}

pub const SUPPORTED_RESOLUTIONS: [usize; 3] = [9, 36, 72];
pub const SUPPORTED_CHANNELS: [usize; 3] = [1, 3, 4];

impl VideoClip {
    pub fn new(data: Array4<f64>, fps: f64) -> Result<Self> {
        let (t, c, h, w) = data.dim();
        if t == 0 {
            return Err(Error::Empty("video clip has no frames"));
        }
        if !SUPPORTED_CHANNELS.contains(&c) {
            return Err(Error::ShapeMismatch(format!(
                "clip has {c} channels; supported are 1 (thermal), 3 (RGB), 4 (RGB+thermal)"
            )));
        }
        if h != w || !SUPPORTED_RESOLUTIONS.contains(&h) {
            return Err(Error::ShapeMismatch(format!(
                "clip is {h}x{w}; supported are 9x9, 36x36, 72x72"
            )));
        }
        if !(fps > 0.0) {
            return Err(invalid("fps", "must be positive"));
        }
        if data.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(invalid("data", "pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            fps,
        })
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn resolution(&self) -> usize {
        self.data.dim().2
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn array(&self) -> &Array4<f64> {
        &self.data
    }

    /// Stacks `self` and `other` along the channel axis (RGB + thermal).
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if self.frames() != other.frames() || self.resolution() != other.resolution() {
            return Err(Error::ShapeMismatch(format!(
                "cannot stack clips {:?} and {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        let data = ndarray::concatenate(Axis(1), &[self.data.view(), other.data.view()])
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(data, self.fps)
    }

    pub fn to_embedding(&self) -> VoxelEmbedding {
        VoxelEmbedding {
            data: self.data.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_embedding() -> impl Strategy<Value = VoxelEmbedding> {
        (1usize..6, 1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(t, c, a, b)| {
            prop::collection::vec(-10.0f64..10.0, t * c * a * b)
                .prop_map(move |v| VoxelEmbedding::new((t, c, a, b), v).unwrap())
        })
    }

    #[test]
    fn flatten_small_example() {
        let eps = VoxelEmbedding::new((2, 1, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = eps.flatten_to_matrix();
        assert_eq!(v.array(), &ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(v.unflatten_to_voxel((2, 1, 1, 2)).unwrap(), eps);
    }

    #[test]
    fn flatten_column_order() {
        let shape = (3, 2, 3, 4);
        let eps = VoxelEmbedding::new(shape, (0..72).map(f64::from).collect()).unwrap();
        let v = eps.flatten_to_matrix();
        assert_eq!(v.array().dim(), (3, 24));
        for t in 0..3 {
            for c in 0..2 {
                for a in 0..3 {
                    for b in 0..4 {
                        assert_eq!(v.array()[[t, c * 12 + a * 4 + b]], eps.array()[[t, c, a, b]]);
                    }
                }
            }
        }
    }

    #[test]
    fn unflatten_shape_checks() {
        let v = EmbeddingMatrix::new(Array2::zeros((20, 36))).unwrap();
        assert_eq!(v.unflatten_to_voxel((20, 4, 3, 3)).unwrap().shape(), (20, 4, 3, 3));
        assert!(matches!(
            v.unflatten_to_voxel((20, 4, 3, 4)),
            Err(Error::ShapeMismatch(_))
        ));
        let eps = VoxelEmbedding::zeros((20, 4, 3, 3)).unwrap();
        assert_eq!(eps.flatten_to_matrix().array().dim(), (20, 36));
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(VoxelEmbedding::zeros((0, 1, 1, 1)).is_err());
        assert!(VoxelEmbedding::new((1, 1, 1, 2), vec![1.0]).is_err());
    }

    #[test]
    fn instance_norm_zero_and_constant() {
        let z = VoxelEmbedding::zeros((4, 2, 2, 2)).unwrap();
        assert_eq!(z.instance_norm(1e-5).unwrap(), z);
        let five = VoxelEmbedding::filled((4, 2, 2, 2), 5.0).unwrap();
        assert!(five.instance_norm(1e-5).unwrap().as_slice().iter().all(|&x| x == 0.0));
        assert!(five.instance_norm(0.0).is_err());
    }

    #[test]
    fn hadamard_identities() {
        let a = VoxelEmbedding::new((2, 1, 1, 2), vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let ones = VoxelEmbedding::filled(a.shape(), 1.0).unwrap();
        let zeros = VoxelEmbedding::zeros(a.shape()).unwrap();
        assert_eq!(a.hadamard(&ones).unwrap(), a);
        assert_eq!(a.hadamard(&zeros).unwrap(), zeros);
        let other = VoxelEmbedding::zeros((2, 1, 2, 1)).unwrap();
        assert!(matches!(a.hadamard(&other), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn mix_channels_identity_and_swap() {
        let a = VoxelEmbedding::new((1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.mix_channels(&Array2::eye(2)).unwrap(), a);
        let swap = ndarray::array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(a.mix_channels(&swap).unwrap().to_vec(), vec![3.0, 4.0, 1.0, 2.0]);
        assert!(a.mix_channels(&Array2::eye(3)).is_err());
    }

    #[test]
    fn video_clip_validation() {
        assert!(VideoClip::new(Array4::zeros((10, 3, 9, 9)), 25.0).is_ok());
        assert!(VideoClip::new(Array4::zeros((10, 2, 9, 9)), 25.0).is_err());
        assert!(VideoClip::new(Array4::zeros((10, 3, 10, 10)), 25.0).is_err());
        assert!(VideoClip::new(Array4::from_elem((10, 1, 9, 9), 1.5), 25.0).is_err());
        let rgb = VideoClip::new(Array4::zeros((10, 3, 9, 9)), 25.0).unwrap();
        let th = VideoClip::new(Array4::zeros((10, 1, 9, 9)), 25.0).unwrap();
        assert_eq!(rgb.concat_channels(&th).unwrap().channels(), 4);
    }

    proptest! {
        #[test]
        fn flatten_round_trip(eps in arb_embedding()) {
            let back = eps.flatten_to_matrix().unflatten_to_voxel(eps.shape()).unwrap();
            prop_assert_eq!(back, eps);
        }

        #[test]
        fn flatten_is_linear(e1 in arb_embedding(), ka in -3.0f64..3.0, kb in -3.0f64..3.0) {
            let e2 = e1.map(|x| (x * 1.7).sin());
            let lhs = e1.scale(ka).add(&e2.scale(kb)).unwrap().flatten_to_matrix();
            let rhs = e1.flatten_to_matrix().array() * ka + e2.flatten_to_matrix().array() * kb;
            for (x, y) in lhs.array().iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn instance_norm_moments(eps in arb_embedding(), scale in 2.0f64..20.0) {
            let x = eps.scale(scale);
            let out = x.instance_norm(DEFAULT_NORM_EPSILON).unwrap();
            for (cin, cout) in x.array().axis_iter(Axis(1)).zip(out.array().axis_iter(Axis(1))) {
                let n = cin.len() as f64;
                let m_in = cin.sum() / n;
                let var_in = cin.iter().map(|v| (v - m_in).powi(2)).sum::<f64>() / n;
                let mean = cout.sum() / n;
                prop_assert!(mean.abs() < 1e-6);
                if var_in > 1.0 {
                    let var = cout.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    prop_assert!((var - 1.0).abs() < 1e-3);
                }
            }
        }

        #[test]
        fn instance_norm_affine_invariant(eps in arb_embedding(), gain in 0.5f64..4.0, shift in -50.0f64..50.0) {
            let x = eps.scale(10.0);
            let base = x.instance_norm(DEFAULT_NORM_EPSILON).unwrap();
            let moved = x.map(|v| gain * v + shift).instance_norm(DEFAULT_NORM_EPSILON).unwrap();
            // only channels whose variance dominates epsilon by >= 1e7 are covered
            for (c, (b, m)) in base.array().axis_iter(Axis(1)).zip(moved.array().axis_iter(Axis(1))).enumerate() {
                let ch = x.array().index_axis(Axis(1), c);
                let n = ch.len() as f64;
                let mu = ch.sum() / n;
                let var = ch.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                if var > 100.0 {
                    for (p, q) in b.iter().zip(m.iter()) {
                        prop_assert!((p - q).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
