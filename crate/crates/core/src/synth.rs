//! Seeded generators for pulse/respiration waveforms, planted-signal voxel
//! embeddings, and toy video clips.

use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::metrics::Waveform;
use crate::tensor::{VideoClip, VoxelEmbedding, VoxelShape};

pub const PULSE_RATE_RANGE: (f64, f64) = (30.0, 220.0);
pub const RESP_RATE_RANGE: (f64, f64) = (4.0, 40.0);

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| invalid("noise_sigma", e.to_string()))
}

fn periodic(
    fs: f64,
    rate_per_min: f64,
    duration_s: f64,
    harmonic_ratio: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Waveform> {
    if !(duration_s >= 1.0) {
        return Err(invalid("duration_s", "must be >= 1 s"));
    }
    if !(harmonic_ratio >= 0.0) {
        return Err(invalid("harmonic_ratio", "must be >= 0"));
    }
    if !(noise_sigma >= 0.0) {
        return Err(invalid("noise_sigma", "must be >= 0"));
    }
    if !(fs > 0.0) {
        return Err(invalid("fs", "must be positive"));
    }
    let f0 = rate_per_min / 60.0;
    let n = (fs * duration_s).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = normal(noise_sigma)?;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let mut x = (2.0 * PI * f0 * t).sin() + harmonic_ratio * (4.0 * PI * f0 * t).sin();
            if noise_sigma > 0.0 {
                x += dist.sample(&mut rng);
            }
            x
        })
        .collect();
    Waveform::new(samples, fs)
}

/// Unit-amplitude fundamental plus `harmonic_ratio` times the second
/// harmonic plus Gaussian noise. Rate in beats per minute, `[30, 220]`.
pub fn gen_pulse(
    fs: f64,
    rate_bpm: f64,
    duration_s: f64,
    harmonic_ratio: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Waveform> {
    check_rate(rate_bpm, PULSE_RATE_RANGE, "rate_bpm")?;
    periodic(fs, rate_bpm, duration_s, harmonic_ratio, noise_sigma, seed)
}

/// Same generator with breaths per minute in `[4, 40]`.
pub fn gen_respiration(
    fs: f64,
    rate_brpm: f64,
    duration_s: f64,
    harmonic_ratio: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Waveform> {
    check_rate(rate_brpm, RESP_RATE_RANGE, "rate_brpm")?;
    periodic(fs, rate_brpm, duration_s, harmonic_ratio, noise_sigma, seed)
}

fn check_rate(rate: f64, (lo, hi): (f64, f64), name: &'static str) -> Result<()> {
    if !(rate >= lo && rate <= hi) {
        return Err(invalid(name, format!("{rate} outside [{lo}, {hi}]")));
    }
    Ok(())
}

/// Recipe for a voxel embedding with a signal planted at chosen locations.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub shape: VoxelShape,
    /// `(c, a, b)` locations carrying the signal.
    pub mask: Vec<(usize, usize, usize)>,
    pub signal: Waveform,
    /// Noise on planted traces, relative to the unit signal amplitude.
    pub noise_sigma: f64,
    /// Noise on background traces.
    pub background_sigma: f64,
    pub seed: u64,
}

impl PlantSpec {
    pub fn new(
        shape: VoxelShape,
        mask: Vec<(usize, usize, usize)>,
        signal: Waveform,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            shape,
            mask,
            signal,
            noise_sigma,
            background_sigma: 1.0,
            seed,
        }
    }

    /// Every `stride`-th location in `(c, a, b)` row-major order.
    pub fn strided_mask(shape: VoxelShape, stride: usize, offset: usize) -> Vec<(usize, usize, usize)> {
        let (_, c, a, b) = shape;
        (0..c * a * b)
            .filter(|i| i % stride.max(1) == offset % stride.max(1))
            .map(|i| (i / (a * b), (i / b) % a, i % b))
            .collect()
    }
}

/// Planted traces carry the signal (rescaled to zero mean, unit peak) plus
/// noise; the rest is pure noise. The whole tensor is then shifted by its
/// minimum so it is non-negative.
pub fn gen_planted_embedding(spec: &PlantSpec) -> Result<(VoxelEmbedding, Array3<bool>)> {
    let (t, c, a, b) = spec.shape;
    if t == 0 || c == 0 || a == 0 || b == 0 {
        return Err(Error::ShapeMismatch(format!("invalid shape {:?}", spec.shape)));
    }
    if spec.signal.len() != t {
        return Err(Error::LengthMismatch {
            expected: t,
            actual: spec.signal.len(),
        });
    }
    if spec.mask.is_empty() {
        return Err(invalid("mask", "at least one planted location is required"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.background_sigma >= 0.0) {
        return Err(invalid("noise_sigma", "must be >= 0"));
    }
    let mut mask = Array3::from_elem((c, a, b), false);
    for &(ci, ai, bi) in &spec.mask {
        if ci >= c || ai >= a || bi >= b {
            return Err(invalid("mask", format!("({ci}, {ai}, {bi}) outside {:?}", (c, a, b))));
        }
        mask[[ci, ai, bi]] = true;
    }

    let mean = spec.signal.samples.iter().sum::<f64>() / t as f64;
    let peak = spec
        .signal
        .samples
        .iter()
        .map(|x| (x - mean).abs())
        .fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ConstantSignal);
    }
    let unit: Vec<f64> = spec.signal.samples.iter().map(|x| (x - mean) / peak).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planted_noise = normal(spec.noise_sigma)?;
    let background_noise = normal(spec.background_sigma)?;
    let mut data = Array4::<f64>::zeros((t, c, a, b));
    for ((ci, ai, bi), &planted) in mask.indexed_iter() {
        for ti in 0..t {
            data[[ti, ci, ai, bi]] = if planted {
                unit[ti] + sample(&planted_noise, spec.noise_sigma, &mut rng)
            } else {
                sample(&background_noise, spec.background_sigma, &mut rng)
            };
        }
    }
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    data.mapv_inplace(|x| x - min);
    Ok((VoxelEmbedding::from_array(data)?, mask))
}

fn sample(dist: &Normal<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sigma > 0.0 {
        dist.sample(rng)
    } else {
        0.0
    }
}

/// Recipe for a toy face clip: a flat skin tone whose intensity follows
/// `pulse` in every channel, plus pixel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSpec {
    pub frames: usize,
    pub resolution: usize,
    pub channels: usize,
    pub fps: f64,
    pub base: f64,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ClipSpec {
    pub fn new(frames: usize, resolution: usize, channels: usize, fps: f64, seed: u64) -> Self {
        Self {
            frames,
            resolution,
            channels,
            fps,
            base: 0.5,
            amplitude: 0.05,
            noise_sigma: 0.01,
            seed,
        }
    }
}

pub fn gen_video_clip(spec: &ClipSpec, pulse: Option<&Waveform>) -> Result<VideoClip> {
    if let Some(p) = pulse {
        if p.len() != spec.frames {
            return Err(Error::LengthMismatch {
                expected: spec.frames,
                actual: p.len(),
            });
        }
    }
    let dist = normal(spec.noise_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t, c, r) = (spec.frames, spec.channels, spec.resolution);
    let mut data = Array4::<f64>::zeros((t, c, r, r));
    for ((ti, _, _, _), v) in data.indexed_iter_mut() {
        let s = pulse.map_or(0.0, |p| p.samples[ti]);
        let x = spec.base + spec.amplitude * s + sample(&dist, spec.noise_sigma, &mut rng);
        *v = x.clamp(0.0, 1.0);
    }
    VideoClip::new(data, spec.fps)
}
