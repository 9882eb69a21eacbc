//! Python bindings. Matrices cross the boundary as lists of rows, voxel
//! embeddings and clips as flat row-major lists plus a shape tuple.

use ndarray::{Array2, Array4};
use physfactor_core::metrics::{evaluate, macc as macc_impl, snr as snr_impl, EvalProtocol, RateKind, Stat};
use physfactor_core::model::Routing;
use physfactor_core::synth::{gen_pulse as pulse_impl, gen_respiration as resp_impl};
use physfactor_core::{
    self as core, AttentionConfig, AttentionVariant, EmbeddingMatrix, MiniModelConfig, RateBand, VideoClip,
    VoxelEmbedding, Waveform,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a non-empty list of equal-length rows"));
    }
    Ok(Array2::from_shape_vec((m, n), rows.into_iter().flatten().collect()).expect("checked shape"))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn wave(samples: Vec<f64>, fs: f64) -> PyResult<Waveform> {
    Waveform::new(samples, fs).map_err(err)
}

fn band(kind: &str) -> PyResult<RateBand> {
    let kind: RateKind = kind.parse().map_err(err)?;
    Ok(RateBand::for_kind(kind))
}

/// Result of a multiplicative-update factorization.
#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Factorization {
    pub w: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub low_rank: Vec<Vec<f64>>,
    pub error_trace: Vec<f64>,
    pub relative_error: f64,
}

impl Factorization {
    fn from_result(r: core::FactorizationResult, v: &EmbeddingMatrix) -> Self {
        Self {
            relative_error: r.relative_error(v),
            w: rows(&r.factors.w),
            h: rows(&r.factors.h),
            low_rank: rows(&r.low_rank),
            error_trace: r.error_trace,
        }
    }
}

/// Multiplicative-update NMF solver.
#[pyclass(get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
pub struct Solver {
    pub rank: usize,
    pub iterations: usize,
    pub seed: u64,
    pub epsilon: f64,
}

impl Solver {
    fn inner(&self) -> core::MuSolver {
        core::MuSolver {
            rank: self.rank,
            iterations: self.iterations,
            seed: self.seed,
            epsilon: self.epsilon,
        }
    }
}

#[pymethods]
impl Solver {
    #[new]
    #[pyo3(signature = (rank=8, iterations=4, seed=0, epsilon=1e-6))]
    fn new(rank: usize, iterations: usize, seed: u64, epsilon: f64) -> Self {
        Self {
            rank,
            iterations,
            seed,
            epsilon,
        }
    }

    /// `V ~ W H`.
    fn factorize(&self, v: Vec<Vec<f64>>) -> PyResult<Factorization> {
        let v = EmbeddingMatrix::new(matrix(v)?).map_err(err)?;
        let r = self.inner().factorize(&v).map_err(err)?;
        Ok(Factorization::from_result(r, &v))
    }

    /// `V ~ B P Q` with the basis `B` fixed; `w` holds `P`, `h` holds `Q`.
    fn factorize_constrained(&self, v: Vec<Vec<f64>>, basis: Vec<Vec<f64>>) -> PyResult<Factorization> {
        let v = EmbeddingMatrix::new(matrix(v)?).map_err(err)?;
        let r = self.inner().factorize_constrained(&v, &matrix(basis)?).map_err(err)?;
        Ok(Factorization::from_result(r, &v))
    }

    fn __repr__(&self) -> String {
        format!(
            "Solver(rank={}, iterations={}, seed={}, epsilon={})",
            self.rank, self.iterations, self.seed, self.epsilon
        )
    }
}

/// Output of the attention module, flattened row-major over `(t, c, a, b)`.
#[pyclass(get_all, frozen)]
pub struct AttentionResult {
    pub shape: (usize, usize, usize, usize),
    pub attended: Vec<f64>,
    pub excited: Vec<f64>,
    pub error_trace: Vec<f64>,
}

/// Factorized attention over voxel embeddings.
#[pyclass]
pub struct Attention {
    cfg: AttentionConfig,
}

#[pymethods]
impl Attention {
    #[new]
    #[pyo3(signature = (variant="tsfm", rank=8, iterations=4, seed=0))]
    fn new(variant: &str, rank: usize, iterations: usize, seed: u64) -> PyResult<Self> {
        let variant: AttentionVariant = variant.parse().map_err(err)?;
        let cfg = AttentionConfig {
            rank,
            iterations,
            seed,
            ..AttentionConfig::with_variant(variant)
        };
        cfg.validate().map_err(err)?;
        Ok(Self { cfg })
    }

    #[getter]
    fn variant(&self) -> String {
        format!("{:?}", self.cfg.variant).to_lowercase()
    }

    /// `target` is required for tsfm.
    #[pyo3(signature = (embedding, shape, target=None))]
    fn __call__(
        &self,
        embedding: Vec<f64>,
        shape: (usize, usize, usize, usize),
        target: Option<Vec<f64>>,
    ) -> PyResult<AttentionResult> {
        let eps = VoxelEmbedding::new(shape, embedding).map_err(err)?;
        let out = core::compute_attention(&eps, &self.cfg, target.as_deref()).map_err(err)?;
        Ok(AttentionResult {
            shape,
            attended: out.attended.to_vec(),
            excited: out.excited.to_vec(),
            error_trace: out.factorization.error_trace,
        })
    }
}

/// Dual-branch pulse / respiration network with seeded weights.
#[pyclass]
pub struct DualBranchNet {
    net: core::DualBranchNet,
}

fn clip(data: Option<Vec<f64>>, frames: usize, res: usize, channels: usize, fps: f64) -> PyResult<Option<VideoClip>> {
    data.map(|d| {
        let a = Array4::from_shape_vec((frames, channels, res, res), d)
            .map_err(|e| PyValueError::new_err(format!("clip shape: {e}")))?;
        VideoClip::new(a, fps).map_err(err)
    })
    .transpose()
}

#[pymethods]
impl DualBranchNet {
    #[new]
    #[pyo3(signature = (resolution=72, channels=3, seed=0, split=false, omit_attention=false))]
    fn new(resolution: usize, channels: usize, seed: u64, split: bool, omit_attention: bool) -> PyResult<Self> {
        let cfg = MiniModelConfig {
            routing: if split { Routing::Split } else { Routing::Shared },
            omit_attention,
            seed,
            ..MiniModelConfig::with_input(resolution, channels)
        };
        Ok(Self {
            net: core::DualBranchNet::new(cfg).map_err(err)?,
        })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Clips are flat `(frames, channels, res, res)` lists with values in
    /// `[0, 1]`: RGB has 3 channels, thermal 1. Returns `(rppg, rrsp)`.
    #[pyo3(signature = (frames, fps, rgb=None, thermal=None, pulse_target=None, resp_target=None))]
    fn forward(
        &self,
        frames: usize,
        fps: f64,
        rgb: Option<Vec<f64>>,
        thermal: Option<Vec<f64>>,
        pulse_target: Option<Vec<f64>>,
        resp_target: Option<Vec<f64>>,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let res = self.net.config().input_resolution;
        let rgb = clip(rgb, frames, res, 3, fps)?;
        let thermal = clip(thermal, frames, res, 1, fps)?;
        let out = self
            .net
            .forward_multitask(
                rgb.as_ref(),
                thermal.as_ref(),
                (pulse_target.as_deref(), resp_target.as_deref()),
            )
            .map_err(err)?;
        Ok((out.rppg.waveform.samples, out.rrsp.waveform.samples))
    }
}

/// GRBF bank as a list of `m` rows with `K` columns.
#[pyfunction]
#[pyo3(signature = (m, sigma=2.0, delta_t=4))]
fn grbf_basis(m: usize, sigma: f64, delta_t: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&core::grbf_basis(m, sigma, delta_t).map_err(err)?.phi))
}

/// Target signal rescaled into `[floor, 1]`.
#[pyfunction]
#[pyo3(signature = (y, floor=1e-3))]
fn target_basis(y: Vec<f64>, floor: f64) -> PyResult<Vec<f64>> {
    Ok(core::target_basis(&y, y.len(), floor).map_err(err)?.column())
}

/// Absolute cosine similarity of every `(c, a, b)` trace with `target`,
/// flattened row-major.
#[pyfunction]
fn csim(embedding: Vec<f64>, shape: (usize, usize, usize, usize), target: Vec<f64>) -> PyResult<Vec<f64>> {
    let eps = VoxelEmbedding::new(shape, embedding).map_err(err)?;
    Ok(core::csim_map(&eps, &target).map_err(err)?.into_iter().collect())
}

/// Spectral-peak rate in per-minute units.
#[pyfunction]
#[pyo3(signature = (samples, fs, kind="hr"))]
fn estimate_rate(samples: Vec<f64>, fs: f64, kind: &str) -> PyResult<f64> {
    core::estimate_rate_fft(&wave(samples, fs)?, &band(kind)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (samples, fs, ref_rate, kind="hr"))]
fn snr(samples: Vec<f64>, fs: f64, ref_rate: f64, kind: &str) -> PyResult<f64> {
    snr_impl(&wave(samples, fs)?, ref_rate, &band(kind)?).map_err(err)
}

#[pyfunction]
fn macc(pred: Vec<f64>, gt: Vec<f64>, fs: f64, max_lag_s: f64) -> PyResult<f64> {
    macc_impl(&wave(pred, fs)?, &wave(gt, fs)?, max_lag_s).map_err(err)
}

fn stat_dict<'py>(py: Python<'py>, s: Option<&Stat>) -> PyResult<Option<Bound<'py, PyDict>>> {
    s.map(|s| {
        let d = PyDict::new(py);
        d.set_item("avg", s.avg)?;
        d.set_item("se", s.se)?;
        Ok(d)
    })
    .transpose()
}

/// MAE, RMSE, MAPE and Corr of rate lists, each as `{"avg", "se"}`.
#[pyfunction]
fn error_metrics<'py>(py: Python<'py>, preds: Vec<f64>, gts: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let m = core::error_metrics(&preds, &gts).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("MAE", stat_dict(py, Some(&m.mae))?)?;
    d.set_item("RMSE", stat_dict(py, Some(&m.rmse))?)?;
    d.set_item("MAPE", stat_dict(py, Some(&m.mape))?)?;
    d.set_item("Corr", stat_dict(py, m.corr.as_ref())?)?;
    d.set_item("n", m.n)?;
    Ok(d)
}

/// Full windowed evaluation of one recording pair.
#[pyfunction]
#[pyo3(signature = (pred, gt, fs, kind="hr"))]
fn evaluate_pair<'py>(py: Python<'py>, pred: Vec<f64>, gt: Vec<f64>, fs: f64, kind: &str) -> PyResult<Bound<'py, PyDict>> {
    let pairs = [(wave(pred, fs)?, wave(gt, fs)?)];
    let r = evaluate(&pairs, &band(kind)?, &EvalProtocol::default()).map_err(err)?;
    let d = PyDict::new(py);
    for (name, s) in [
        ("MAE", Some(&r.mae)),
        ("RMSE", Some(&r.rmse)),
        ("MAPE", Some(&r.mape)),
        ("Corr", r.corr.as_ref()),
        ("SNR", Some(&r.snr)),
        ("MACC", Some(&r.macc)),
    ] {
        d.set_item(name, stat_dict(py, s)?)?;
    }
    d.set_item("n", r.n)?;
    Ok(d)
}

/// `(loss, grad)` of `1 - pearson(pred, gt)`.
#[pyfunction]
fn neg_pearson_loss(pred: Vec<f64>, gt: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    core::LossKind::NegPearson.eval(&pred, &gt).map_err(err)
}

/// `(loss, grad)` of the mean smooth L1 loss.
#[pyfunction]
fn smooth_l1_loss(pred: Vec<f64>, gt: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    core::LossKind::SmoothL1.eval(&pred, &gt).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (fs, rate_bpm, duration_s, harmonic_ratio=0.0, noise_sigma=0.0, seed=0))]
fn gen_pulse(fs: f64, rate_bpm: f64, duration_s: f64, harmonic_ratio: f64, noise_sigma: f64, seed: u64) -> PyResult<Vec<f64>> {
    Ok(pulse_impl(fs, rate_bpm, duration_s, harmonic_ratio, noise_sigma, seed)
        .map_err(err)?
        .samples)
}

#[pyfunction]
#[pyo3(signature = (fs, rate_brpm, duration_s, harmonic_ratio=0.0, noise_sigma=0.0, seed=0))]
fn gen_respiration(
    fs: f64,
    rate_brpm: f64,
    duration_s: f64,
    harmonic_ratio: f64,
    noise_sigma: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    Ok(resp_impl(fs, rate_brpm, duration_s, harmonic_ratio, noise_sigma, seed)
        .map_err(err)?
        .samples)
}

#[pymodule]
fn physfactor(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Solver>()?;
    m.add_class::<Factorization>()?;
    m.add_class::<Attention>()?;
    m.add_class::<AttentionResult>()?;
    m.add_class::<DualBranchNet>()?;
    m.add_function(wrap_pyfunction!(grbf_basis, m)?)?;
    m.add_function(wrap_pyfunction!(target_basis, m)?)?;
    m.add_function(wrap_pyfunction!(csim, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_rate, m)?)?;
    m.add_function(wrap_pyfunction!(snr, m)?)?;
    m.add_function(wrap_pyfunction!(macc, m)?)?;
    m.add_function(wrap_pyfunction!(error_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_pair, m)?)?;
    m.add_function(wrap_pyfunction!(neg_pearson_loss, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_l1_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gen_pulse, m)?)?;
    m.add_function(wrap_pyfunction!(gen_respiration, m)?)?;
    Ok(())
}
