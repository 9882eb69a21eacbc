//! Evaluation suite for estimated pulse and respiration waveforms.
//!
//! Rates come from the peak of a zero-padded magnitude spectrum restricted to
//! a physiological band. Waveform quality is scored by SNR (harmonic windows
//! against the remaining in-band power) and MACC (peak absolute normalized
//! cross-correlation over a bounded lag range). Rate errors are summarized
//! as MAE, RMSE, MAPE and Pearson correlation, each with a standard error.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A uniformly sampled signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub fs: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("waveform has no samples"));
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(invalid("fs", "sampling rate must be positive"));
        }
        Ok(Self { samples, fs })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            samples: self.samples[start..end].to_vec(),
            fs: self.fs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateKind {
    Hr,
    Rr,
}

impl std::str::FromStr for RateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hr" => Ok(Self::Hr),
            "rr" => Ok(Self::Rr),
            other => Err(invalid("kind", format!("expected `hr` or `rr`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateBand {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub kind: RateKind,
}

impl RateBand {
    pub fn new(lo_hz: f64, hi_hz: f64, kind: RateKind) -> Result<Self> {
        if !(lo_hz > 0.0 && hi_hz > lo_hz && hi_hz.is_finite()) {
            return Err(invalid("band", format!("need 0 < lo < hi, got [{lo_hz}, {hi_hz}]")));
        }
        Ok(Self { lo_hz, hi_hz, kind })
    }

    /// 36 to 198 beats per minute.
    pub fn hr() -> Self {
        Self {
            lo_hz: 0.6,
            hi_hz: 3.3,
            kind: RateKind::Hr,
        }
    }

    /// 6 to 30 breaths per minute.
    pub fn rr() -> Self {
        Self {
            lo_hz: 0.1,
            hi_hz: 0.5,
            kind: RateKind::Rr,
        }
    }

    pub fn for_kind(kind: RateKind) -> Self {
        match kind {
            RateKind::Hr => Self::hr(),
            RateKind::Rr => Self::rr(),
        }
    }

    pub fn contains_hz(&self, f: f64) -> bool {
        f >= self.lo_hz - EDGE_TOLERANCE_HZ && f <= self.hi_hz + EDGE_TOLERANCE_HZ
    }
}

pub const EVAL_WINDOW_S: f64 = 30.0;
pub const MIN_RATE_DURATION_S: f64 = 10.0;
pub const DEFAULT_PAD_FACTOR: usize = 8;
/// Bins this close to a band or window edge count as inside it.
const EDGE_TOLERANCE_HZ: f64 = 1e-9;
const SNR_FUNDAMENTAL_HALF_WIDTH_HZ: f64 = 0.1;
const SNR_HARMONIC_HALF_WIDTH_HZ: f64 = 0.2;
pub const SNR_FLOOR_DB: f64 = -20.0;
pub const SNR_CEIL_DB: f64 = 40.0;

/// Concatenates segments and truncates to at most 30 s.
pub fn concat_windows(segments: &[Waveform]) -> Result<Waveform> {
    concat_windows_capped(segments, EVAL_WINDOW_S)
}

pub fn concat_windows_capped(segments: &[Waveform], cap_s: f64) -> Result<Waveform> {
    let first = segments.first().ok_or(Error::Empty("no segments to concatenate"))?;
    let fs = first.fs;
    if let Some(bad) = segments.iter().find(|s| s.fs != fs) {
        return Err(Error::MixedSamplingRates(fs, bad.fs));
    }
    let cap = (cap_s * fs).round() as usize;
    let samples: Vec<f64> = segments
        .iter()
        .flat_map(|s| s.samples.iter().copied())
        .take(cap)
        .collect();
    Waveform::new(samples, fs)
}

/// One-sided power spectrum of the mean-removed signal, zero-padded to `nfft`.
#[derive(Debug, Clone)]
pub struct PowerSpectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub resolution_hz: f64,
}

pub fn power_spectrum(samples: &[f64], fs: f64, nfft: usize) -> PowerSpectrum {
    let nfft = nfft.max(samples.len());
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .map(|&x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(nfft)
        .collect();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(nfft);
    fft.process(&mut buf);
    let half = nfft / 2 + 1;
    let resolution_hz = fs / nfft as f64;
    PowerSpectrum {
        freqs: (0..half).map(|k| k as f64 * resolution_hz).collect(),
        power: buf[..half].iter().map(|c| c.norm_sqr()).collect(),
        resolution_hz,
    }
}

/// Spectral-peak rate estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimator {
    /// FFT length is `pad_factor * next_power_of_two(n)`.
    pub pad_factor: usize,
    pub min_duration_s: f64,
}

impl Default for RateEstimator {
    fn default() -> Self {
        Self {
            pad_factor: DEFAULT_PAD_FACTOR,
            min_duration_s: MIN_RATE_DURATION_S,
        }
    }
}

impl RateEstimator {
    pub fn nfft(&self, n: usize) -> usize {
        self.pad_factor.max(1) * n.next_power_of_two()
    }

    /// Spacing of the padded spectrum, in per-minute units.
    pub fn bin_width_per_min(&self, n: usize, fs: f64) -> f64 {
        60.0 * fs / self.nfft(n) as f64
    }

    /// Rate in per-minute units (beats or breaths).
    pub fn estimate(&self, wave: &Waveform, band: &RateBand) -> Result<f64> {
        if wave.duration_s() < self.min_duration_s {
            return Err(Error::SignalTooShort {
                duration_s: wave.duration_s(),
                required_s: self.min_duration_s,
            });
        }
        check_nyquist(wave.fs, band)?;
        let spec = power_spectrum(&wave.samples, wave.fs, self.nfft(wave.len()));
        let peak = spec
            .freqs
            .iter()
            .zip(&spec.power)
            .filter(|(f, _)| band.contains_hz(**f))
            .fold(None::<(f64, f64)>, |best, (&f, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((f, p)),
            })
            .ok_or_else(|| invalid("band", "no spectral bins fall inside the band"))?;
        Ok(60.0 * peak.0)
    }
}

fn check_nyquist(fs: f64, band: &RateBand) -> Result<()> {
    let nyquist_hz = fs / 2.0;
    if band.hi_hz > nyquist_hz {
        return Err(Error::BandAboveNyquist {
            hi_hz: band.hi_hz,
            nyquist_hz,
        });
    }
    Ok(())
}

/// FFT-peak rate with the default 8x padding and 10 s minimum duration.
pub fn estimate_rate_fft(wave: &Waveform, band: &RateBand) -> Result<f64> {
    RateEstimator::default().estimate(wave, band)
}

/// Zeroes all spectral content outside `band` (both half-spectra).
pub fn bandpass_mask(wave: &Waveform, band: &RateBand) -> Result<Waveform> {
    check_nyquist(wave.fs, band)?;
    let n = wave.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = wave.samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * wave.fs / n as f64;
        if !band.contains_hz(f) {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Waveform::new(buf.iter().map(|c| c.re / n as f64).collect(), wave.fs)
}

/// Signal and noise power split used by [`snr`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrPowers {
    pub signal: f64,
    pub noise: f64,
}

/// Signal power is everything within 0.1 Hz of the reference rate and
/// within 0.2 Hz of its second harmonic; noise is the remaining in-band
/// power. The spectrum is the unpadded periodogram of the mean-removed
/// signal.
pub fn snr_powers(pred: &Waveform, ref_rate: f64, band: &RateBand) -> Result<SnrPowers> {
    let f0 = ref_rate / 60.0;
    if !band.contains_hz(f0) {
        return Err(Error::RateOutsideBand {
            rate: ref_rate,
            lo: band.lo_hz * 60.0,
            hi: band.hi_hz * 60.0,
        });
    }
    check_nyquist(pred.fs, band)?;
    let spec = power_spectrum(&pred.samples, pred.fs, pred.len());
    let (mut signal, mut noise) = (0.0, 0.0);
    for (&f, &p) in spec.freqs.iter().zip(&spec.power) {
        let in_signal = (f - f0).abs() <= SNR_FUNDAMENTAL_HALF_WIDTH_HZ + EDGE_TOLERANCE_HZ
            || (f - 2.0 * f0).abs() <= SNR_HARMONIC_HALF_WIDTH_HZ + EDGE_TOLERANCE_HZ;
        if in_signal {
            signal += p;
        } else if band.contains_hz(f) {
            noise += p;
        }
    }
    Ok(SnrPowers { signal, noise })
}

/// SNR in dB, clipped to [-20, 40].
pub fn snr(pred: &Waveform, ref_rate: f64, band: &RateBand) -> Result<f64> {
    let p = snr_powers(pred, ref_rate, band)?;
    Ok(snr_db(p.signal, p.noise))
}

pub(crate) fn snr_db(signal: f64, noise: f64) -> f64 {
    if signal <= 0.0 {
        return SNR_FLOOR_DB;
    }
    if noise <= 0.0 {
        return SNR_CEIL_DB;
    }
    (10.0 * (signal / noise).log10()).clamp(SNR_FLOOR_DB, SNR_CEIL_DB)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n == 0 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let denom = (sxx * syy).sqrt();
    if denom > 0.0 {
        Some((sxy / denom).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// Maximum absolute Pearson correlation over integer lags up to
/// `max_lag_s * fs`. Overlaps shorter than 3 samples are skipped.
pub fn macc(pred: &Waveform, gt: &Waveform, max_lag_s: f64) -> Result<f64> {
    if pred.fs != gt.fs {
        return Err(Error::MixedSamplingRates(pred.fs, gt.fs));
    }
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if !(max_lag_s >= 0.0) {
        return Err(invalid("max_lag_s", "must be >= 0"));
    }
    let n = pred.len() as isize;
    let max_lag = ((max_lag_s * pred.fs).floor() as isize).min(n - 1);
    let mut best = 0.0f64;
    for lag in -max_lag..=max_lag {
        // pred[i + lag] paired with gt[i]
        let (p, g) = if lag >= 0 {
            let l = lag as usize;
            (&pred.samples[l..], &gt.samples[..gt.len() - l])
        } else {
            let l = (-lag) as usize;
            (&pred.samples[..pred.len() - l], &gt.samples[l..])
        };
        if p.len() < 3 {
            continue;
        }
        if let Some(r) = pearson(p, g) {
            best = best.max(r.abs());
        }
    }
    Ok(best.min(1.0))
}

/// Average with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub avg: f64,
    /// NaN (serialized as null) when undefined.
    #[serde(serialize_with = "ser_maybe_nan", deserialize_with = "de_maybe_nan")]
    pub se: f64,
}

fn ser_maybe_nan<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn de_maybe_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl Stat {
    /// Mean and `sample_std / sqrt(n)` (zero for a single item).
    pub fn of(items: &[f64]) -> Self {
        let n = items.len() as f64;
        let avg = items.iter().sum::<f64>() / n;
        let se = if items.len() > 1 {
            let var = items.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { avg, se }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae: Stat,
    pub rmse: Stat,
    /// Percent.
    pub mape: Stat,
    /// `None` when fewer than 3 items or a constant series.
    pub corr: Option<Stat>,
    pub n: usize,
}

/// MAE, RMSE, MAPE (percent) and Pearson correlation of estimated rates.
pub fn error_metrics(preds: &[f64], gts: &[f64]) -> Result<ErrorMetrics> {
    check_pairs(preds, gts)?;
    let n = preds.len();
    let abs_err: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).collect();
    let sq_err: Vec<f64> = abs_err.iter().map(|e| e * e).collect();
    if gts.iter().any(|&g| g == 0.0) {
        return Err(Error::MetricPrecondition {
            metric: "MAPE",
            reason: "ground-truth rate of zero".into(),
        });
    }
    let pct: Vec<f64> = abs_err
        .iter()
        .zip(gts)
        .map(|(e, g)| 100.0 * e / g.abs())
        .collect();

    let mse = Stat::of(&sq_err);
    let rmse_avg = mse.avg.sqrt();
    // delta method: se(sqrt(m)) = se(m) / (2 sqrt(m))
    let rmse_se = if rmse_avg > 0.0 {
        mse.se / (2.0 * rmse_avg)
    } else {
        0.0
    };
    Ok(ErrorMetrics {
        mae: Stat::of(&abs_err),
        rmse: Stat {
            avg: rmse_avg,
            se: rmse_se,
        },
        mape: Stat::of(&pct),
        corr: pearson_stat(preds, gts).ok(),
        n,
    })
}

/// Pearson correlation of rates. The standard error maps the Fisher-z
/// error `1 / sqrt(n - 3)` back through `dr/dz = 1 - r^2`; it is NaN for
/// three items.
pub fn pearson_stat(preds: &[f64], gts: &[f64]) -> Result<Stat> {
    check_pairs(preds, gts)?;
    let n = preds.len();
    if n < 3 {
        return Err(Error::MetricPrecondition {
            metric: "Corr",
            reason: format!("needs at least 3 items, got {n}"),
        });
    }
    let r = pearson(preds, gts).ok_or_else(|| Error::MetricPrecondition {
        metric: "Corr",
        reason: "constant series".into(),
    })?;
    let se = if n > 3 {
        (1.0 - r * r).max(0.0) / (n as f64 - 3.0).sqrt()
    } else {
        f64::NAN
    };
    Ok(Stat { avg: r, se })
}

fn check_pairs(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Empty("no rates to compare"));
    }
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            expected: gts.len(),
            actual: preds.len(),
        });
    }
    Ok(())
}

/// Windowing and spectral settings for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub window_s: f64,
    pub pad_factor: usize,
    /// Defaults to half the window.
    pub max_lag_s: Option<f64>,
    pub bandpass: bool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            window_s: EVAL_WINDOW_S,
            pad_factor: DEFAULT_PAD_FACTOR,
            max_lag_s: None,
            bandpass: false,
        }
    }
}

impl EvalProtocol {
    /// Non-overlapping windows of `window_s`; a trailing remainder of at
    /// least 10 s forms its own window.
    pub fn windows(&self, len: usize, fs: f64) -> Vec<(usize, usize)> {
        let step = ((self.window_s * fs).round() as usize).max(1);
        let min_len = (MIN_RATE_DURATION_S * fs).ceil() as usize;
        let mut out = Vec::new();
        let mut start = 0;
        while start < len {
            let end = (start + step).min(len);
            if end - start >= min_len || (out.is_empty() && end == len) {
                out.push((start, end));
            }
            start = end;
        }
        out
    }
}

/// Per-window rates and waveform scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub pred_rate: f64,
    pub gt_rate: f64,
    pub snr_db: f64,
    pub macc: f64,
}

/// Full metric table row: rate errors plus SNR and MACC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: RateKind,
    pub n: usize,
    #[serde(rename = "MAE")]
    pub mae: Stat,
    #[serde(rename = "RMSE")]
    pub rmse: Stat,
    #[serde(rename = "MAPE")]
    pub mape: Stat,
    #[serde(rename = "Corr")]
    pub corr: Option<Stat>,
    #[serde(rename = "SNR")]
    pub snr: Stat,
    #[serde(rename = "MACC")]
    pub macc: Stat,
    pub windows: Vec<WindowScore>,
}

impl MetricsReport {
    /// Plain-text table with Avg/SE column pairs.
    pub fn to_table(&self) -> String {
        let unit = match self.kind {
            RateKind::Hr => "BPM",
            RateKind::Rr => "br/min",
        };
        let fmt = |s: &Stat| format!("{:>10.4} {:>10.4}", s.avg, s.se);
        let corr = self
            .corr
            .as_ref()
            .map(fmt)
            .unwrap_or_else(|| format!("{:>10} {:>10}", "n/a", "n/a"));
        let mut out = String::new();
        out.push_str(&format!("{:<8} {:>10} {:>10}\n", "metric", "avg", "se"));
        out.push_str(&format!("{:<8} {}\n", "MAE", fmt(&self.mae)));
        out.push_str(&format!("{:<8} {}\n", "RMSE", fmt(&self.rmse)));
        out.push_str(&format!("{:<8} {}\n", "MAPE", fmt(&self.mape)));
        out.push_str(&format!("{:<8} {}\n", "Corr", corr));
        out.push_str(&format!("{:<8} {}\n", "SNR", fmt(&self.snr)));
        out.push_str(&format!("{:<8} {}\n", "MACC", fmt(&self.macc)));
        out.push_str(&format!("units: {unit} (MAE, RMSE), % (MAPE), dB (SNR); n = {}\n", self.n));
        out
    }
}

/// Scores one `(pred, gt)` pair window by window.
pub fn score_pair(
    pred: &Waveform,
    gt: &Waveform,
    band: &RateBand,
    protocol: &EvalProtocol,
) -> Result<Vec<WindowScore>> {
    if pred.fs != gt.fs {
        return Err(Error::MixedSamplingRates(pred.fs, gt.fs));
    }
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if gt.duration_s() < MIN_RATE_DURATION_S {
        return Err(Error::SignalTooShort {
            duration_s: gt.duration_s(),
            required_s: MIN_RATE_DURATION_S,
        });
    }
    let estimator = RateEstimator {
        pad_factor: protocol.pad_factor,
        min_duration_s: MIN_RATE_DURATION_S,
    };
    let max_lag = protocol.max_lag_s.unwrap_or(protocol.window_s / 2.0);
    protocol
        .windows(gt.len(), gt.fs)
        .into_par_iter()
        .map(|(s, e)| {
            let (mut p, mut g) = (pred.slice(s, e), gt.slice(s, e));
            if protocol.bandpass {
                p = bandpass_mask(&p, band)?;
                g = bandpass_mask(&g, band)?;
            }
            let pred_rate = estimator.estimate(&p, band)?;
            let gt_rate = estimator.estimate(&g, band)?;
            Ok(WindowScore {
                pred_rate,
                gt_rate,
                snr_db: snr(&p, gt_rate, band)?,
                macc: macc(&p, &g, max_lag)?,
            })
        })
        .collect()
}

/// Scores every pair and aggregates over all windows, in input order.
pub fn evaluate(
    pairs: &[(Waveform, Waveform)],
    band: &RateBand,
    protocol: &EvalProtocol,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no signal pairs to evaluate"));
    }
    let mut windows = Vec::new();
    for (pred, gt) in pairs {
        windows.extend(score_pair(pred, gt, band, protocol)?);
    }
    let preds: Vec<f64> = windows.iter().map(|w| w.pred_rate).collect();
    let gts: Vec<f64> = windows.iter().map(|w| w.gt_rate).collect();
    let errs = error_metrics(&preds, &gts)?;
    let snrs: Vec<f64> = windows.iter().map(|w| w.snr_db).collect();
    let maccs: Vec<f64> = windows.iter().map(|w| w.macc).collect();
    Ok(MetricsReport {
        kind: band.kind,
        n: windows.len(),
        mae: errs.mae,
        rmse: errs.rmse,
        mape: errs.mape,
        corr: errs.corr,
        snr: Stat::of(&snrs),
        macc: Stat::of(&maccs),
        windows,
    })
}
