use std::path::{Path, PathBuf};
use std::time::Instant;

use physfactor_core::attention::{csim_split, xi_pre};
use physfactor_core::metrics::{evaluate, RateKind};
use physfactor_core::model::Routing;
use physfactor_core::synth::{gen_planted_embedding, gen_pulse, gen_respiration, gen_video_clip, ClipSpec, PlantSpec};
use physfactor_core::{
    compute_attention, csim_map, estimate_rate_fft, factorize_embedding, AttentionConfig, DualBranchNet,
    EmbeddingMatrix, Error, VoxelEmbedding, Waveform,
};
use serde::Serialize;

use crate::args::{Cli, Command, Format, Kind, Modality, Output, SolverOverrides, SynthCommand};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{matrix_csv, read_matrix, read_signal, signal_csv, to_json, write_output};
use crate::report::{AttendReport, BenchReport, CsimSummary, DemoReport, FactorizeReport, Table};

pub const BENCH_WARMUP: usize = 3;
const PLANT_FPS: f64 = 30.0;

pub fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Factorize {
            input,
            target,
            low_rank_out,
            solver,
            output,
        } => factorize(&cfg, &input, target.as_deref(), low_rank_out.as_deref(), &solver, &output),
        Command::Attend {
            input,
            shape,
            target,
            synthetic,
            frames,
            channels,
            size,
            noise_sigma,
            rate,
            mask_stride,
            excited_out,
            solver,
            output,
        } => {
            let source = if synthetic {
                EmbeddingSource::Planted {
                    frames,
                    channels,
                    size,
                    noise_sigma,
                    rate,
                    mask_stride,
                }
            } else {
                let shape = shape
                    .filter(|s| s.len() == 3)
                    .ok_or_else(|| CliError::Usage("--input needs --shape C,A,B".into()))?;
                EmbeddingSource::File {
                    path: input.expect("clap requires --input without --synthetic"),
                    shape: [shape[0], shape[1], shape[2]],
                }
            };
            attend(&cfg, source, target.as_deref(), excited_out.as_deref(), &solver, &output)
        }
        Command::Metrics {
            pred,
            gt,
            fs,
            kind,
            bandpass,
            max_lag_s,
            output,
        } => metrics(&cfg, &pred, &gt, fs, kind, bandpass, max_lag_s, &output),
        Command::Synth { what } => synth(&cfg, what),
        Command::Bench {
            repeats,
            frames,
            resolution,
            no_target,
            output,
        } => bench(&cfg, repeats, frames, resolution, !no_target, &output),
        Command::DemoForward {
            frames,
            resolution,
            modality,
            rate,
            resp_rate,
            with_target,
            rppg_out,
            rrsp_out,
            output,
        } => demo_forward(
            &cfg,
            DemoArgs {
                frames,
                resolution,
                modality,
                rate,
                resp_rate,
                with_target,
            },
            rppg_out.as_deref(),
            rrsp_out.as_deref(),
            &output,
        ),
        Command::Config { print_defaults, show } => {
            let text = if print_defaults {
                RunConfig::defaults_toml()
            } else if show {
                cfg.to_toml()
            } else {
                return Err(CliError::Usage("config needs --print-defaults or --show".into()));
            };
            write_output(None, &text)
        }
    }
}

fn emit<T: Serialize + Table>(report: &T, output: &Output) -> CliResult<()> {
    let text = match output.format {
        Format::Json => to_json(report),
        Format::Table => report.to_table(),
    };
    write_output(output.out.as_deref(), &text)
}

fn attention_config(cfg: &RunConfig, solver: &SolverOverrides) -> AttentionConfig {
    let mut a = cfg.attention();
    if let Some(v) = solver.variant {
        a.variant = v.into();
    }
    if let Some(r) = solver.rank {
        a.rank = r;
    }
    if let Some(i) = solver.iterations {
        a.iterations = i;
    }
    a
}

fn factorize(
    cfg: &RunConfig,
    input: &Path,
    target: Option<&Path>,
    low_rank_out: Option<&Path>,
    solver: &SolverOverrides,
    output: &Output,
) -> CliResult<()> {
    let v = EmbeddingMatrix::new(read_matrix(input)?)?;
    let target = target
        .map(|p| read_signal(p, Some(1.0)).map(|w| w.samples))
        .transpose()?;
    let a = attention_config(cfg, solver);
    let res = factorize_embedding(&v, &a, target.as_deref())?;
    if let Some(path) = low_rank_out {
        write_output(Some(path), &matrix_csv(&res.low_rank))?;
    }
    let report = FactorizeReport {
        variant: a.variant,
        m: v.m(),
        n: v.n(),
        rank: res.factors.rank,
        iterations: res.iterations,
        seed: res.seed,
        final_error: res.final_error(),
        relative_error: res.relative_error(&v),
        error_trace: res.error_trace,
    };
    emit(&report, output)
}

enum EmbeddingSource {
    File {
        path: PathBuf,
        shape: [usize; 3],
    },
    Planted {
        frames: usize,
        channels: usize,
        size: usize,
        noise_sigma: f64,
        rate: f64,
        mask_stride: usize,
    },
}

fn planted(
    seed: u64,
    frames: usize,
    channels: usize,
    size: usize,
    noise_sigma: f64,
    rate: f64,
    mask_stride: usize,
) -> CliResult<(VoxelEmbedding, ndarray::Array3<bool>, Waveform)> {
    if mask_stride == 0 {
        return Err(Error::InvalidParameter {
            name: "mask_stride".into(),
            reason: "must be >= 1".into(),
        }
        .into());
    }
    let y = gen_pulse(PLANT_FPS, rate, frames as f64 / PLANT_FPS, 0.3, 0.0, seed)?;
    let shape = (frames, channels, size, size);
    let spec = PlantSpec::new(shape, PlantSpec::strided_mask(shape, mask_stride, 1), y.clone(), noise_sigma, seed);
    let (eps, mask) = gen_planted_embedding(&spec)?;
    Ok((eps, mask, y))
}

fn mean(x: &ndarray::Array3<f64>) -> f64 {
    x.mean().unwrap_or(0.0)
}

fn attend(
    cfg: &RunConfig,
    source: EmbeddingSource,
    target: Option<&Path>,
    excited_out: Option<&Path>,
    solver: &SolverOverrides,
    output: &Output,
) -> CliResult<()> {
    let a = attention_config(cfg, solver);
    let mut y = target
        .map(|p| read_signal(p, Some(1.0)).map(|w| w.samples))
        .transpose()?;
    let (eps, mask) = match source {
        EmbeddingSource::File { path, shape } => {
            let m = EmbeddingMatrix::new(read_matrix(&path)?)?;
            let eps = m.unflatten_to_voxel((m.m(), shape[0], shape[1], shape[2]))?;
            (eps, None)
        }
        EmbeddingSource::Planted {
            frames,
            channels,
            size,
            noise_sigma,
            rate,
            mask_stride,
        } => {
            let (eps, mask, planted_y) =
                planted(cfg.rng.seed, frames, channels, size, noise_sigma, rate, mask_stride)?;
            y.get_or_insert(planted_y.samples);
            (eps, Some(mask))
        }
    };
    let out = compute_attention(&eps, &a, y.as_deref())?;
    let v = xi_pre(&eps, &a)?.flatten_to_matrix();
    let csim = match &y {
        Some(y) => {
            let input = csim_map(&eps, y)?;
            let excited = csim_map(&out.excited, y)?;
            let split = mask.as_ref().map(|m| csim_split(&excited, m)).transpose()?;
            Some(CsimSummary {
                input_mean: mean(&input),
                excited_mean: mean(&excited),
                planted_mean: split.map(|s| s.0),
                background_mean: split.map(|s| s.1),
                gap: split.map(|s| s.0 - s.1),
            })
        }
        None => None,
    };
    if let Some(path) = excited_out {
        write_output(Some(path), &matrix_csv(out.excited.flatten_to_matrix().array()))?;
    }
    let (t, c, h, w) = eps.shape();
    let report = AttendReport {
        variant: a.variant,
        shape: [t, c, h, w],
        seed: a.seed,
        relative_error: out.factorization.relative_error(&v),
        error_trace: out.factorization.error_trace,
        csim,
    };
    emit(&report, output)
}

#[allow(clippy::too_many_arguments)]
fn metrics(
    cfg: &RunConfig,
    preds: &[PathBuf],
    gts: &[PathBuf],
    fs: Option<f64>,
    kind: Kind,
    bandpass: bool,
    max_lag_s: Option<f64>,
    output: &Output,
) -> CliResult<()> {
    if preds.len() != gts.len() {
        return Err(CliError::Usage(format!(
            "{} --pred files but {} --gt files",
            preds.len(),
            gts.len()
        )));
    }
    let pairs = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| Ok((read_signal(p, fs)?, read_signal(g, fs)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let kind = match kind {
        Kind::Hr => RateKind::Hr,
        Kind::Rr => RateKind::Rr,
    };
    let mut protocol = cfg.protocol();
    protocol.bandpass |= bandpass;
    if max_lag_s.is_some() {
        protocol.max_lag_s = max_lag_s;
    }
    let report = evaluate(&pairs, &cfg.band(kind)?, &protocol)?;
    emit(&report, output)
}

fn synth(cfg: &RunConfig, what: SynthCommand) -> CliResult<()> {
    let seed = cfg.rng.seed;
    match what {
        SynthCommand::Pulse { rate, signal: s } => {
            let w = gen_pulse(s.fs, rate, s.duration, s.harmonic, s.noise, seed)?;
            write_output(s.out.as_deref(), &signal_csv(&w.samples, s.time_column.then_some(w.fs)))
        }
        SynthCommand::Resp { rate, signal: s } => {
            let w = gen_respiration(s.fs, rate, s.duration, s.harmonic, s.noise, seed)?;
            write_output(s.out.as_deref(), &signal_csv(&w.samples, s.time_column.then_some(w.fs)))
        }
        SynthCommand::Embedding {
            frames,
            channels,
            size,
            noise_sigma,
            rate,
            mask_stride,
            out,
            target_out,
        } => {
            let (eps, _, y) = planted(seed, frames, channels, size, noise_sigma, rate, mask_stride)?;
            if let Some(path) = target_out {
                write_output(Some(&path), &signal_csv(&y.samples, None))?;
            }
            write_output(out.as_deref(), &matrix_csv(eps.flatten_to_matrix().array()))
        }
    }
}

struct ModelInputs {
    net: DualBranchNet,
    rgb: Option<physfactor_core::VideoClip>,
    thermal: Option<physfactor_core::VideoClip>,
    pulse: Waveform,
    resp: Waveform,
    fps: f64,
}

fn model_inputs(
    cfg: &RunConfig,
    frames: Option<usize>,
    resolution: Option<usize>,
    modality: Modality,
    rate: f64,
    resp_rate: f64,
) -> CliResult<ModelInputs> {
    let mut model = cfg.model();
    if let Some(r) = resolution {
        model.input_resolution = r;
    }
    let (want_rgb, want_thermal) = match modality {
        Modality::Rgb => (true, false),
        Modality::Thermal => (false, true),
        Modality::Both => (true, true),
    };
    if model.routing == Routing::Shared {
        model.input_channels = 3 * want_rgb as usize + want_thermal as usize;
    }
    let net = DualBranchNet::new(model)?;
    let frames = frames.unwrap_or(cfg.model.frames);
    let fps = cfg.model.fps;
    let seed = cfg.rng.seed;
    let res = net.config().input_resolution;
    let duration = frames as f64 / fps;
    let pulse = gen_pulse(fps, rate, duration, 0.3, 0.0, seed)?;
    let resp = gen_respiration(fps, resp_rate, duration, 0.0, 0.0, seed)?;
    let rgb = want_rgb
        .then(|| gen_video_clip(&ClipSpec::new(frames, res, 3, fps, seed), Some(&pulse)))
        .transpose()?;
    let thermal = want_thermal
        .then(|| gen_video_clip(&ClipSpec::new(frames, res, 1, fps, seed.wrapping_add(1)), Some(&resp)))
        .transpose()?;
    Ok(ModelInputs {
        net,
        rgb,
        thermal,
        pulse,
        resp,
        fps,
    })
}

fn bench(
    cfg: &RunConfig,
    repeats: usize,
    frames: Option<usize>,
    resolution: Option<usize>,
    with_target: bool,
    output: &Output,
) -> CliResult<()> {
    if repeats == 0 {
        return Err(Error::InvalidParameter {
            name: "repeats".into(),
            reason: "must be >= 1".into(),
        }
        .into());
    }
    let m = model_inputs(cfg, frames, resolution, Modality::Rgb, 72.0, 15.0)?;
    let targets = if with_target {
        (Some(m.pulse.samples.as_slice()), Some(m.resp.samples.as_slice()))
    } else {
        (None, None)
    };
    let forward = || m.net.forward_multitask(m.rgb.as_ref(), m.thermal.as_ref(), targets);
    for _ in 0..BENCH_WARMUP {
        forward()?;
    }
    let mut samples_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        forward()?;
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = samples_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let median_ms = if repeats % 2 == 1 {
        sorted[repeats / 2]
    } else {
        0.5 * (sorted[repeats / 2 - 1] + sorted[repeats / 2])
    };
    let clip = m.rgb.as_ref().expect("bench uses an rgb clip");
    let report = BenchReport {
        frames: clip.frames(),
        resolution: clip.resolution(),
        channels: clip.channels(),
        params: m.net.param_count(),
        with_target,
        warmup: BENCH_WARMUP,
        repeats,
        min_ms: sorted[0],
        median_ms,
        mean_ms: samples_ms.iter().sum::<f64>() / repeats as f64,
        samples_ms,
    };
    emit(&report, output)
}

struct DemoArgs {
    frames: Option<usize>,
    resolution: Option<usize>,
    modality: Modality,
    rate: f64,
    resp_rate: f64,
    with_target: bool,
}

fn demo_forward(
    cfg: &RunConfig,
    args: DemoArgs,
    rppg_out: Option<&Path>,
    rrsp_out: Option<&Path>,
    output: &Output,
) -> CliResult<()> {
    let m = model_inputs(cfg, args.frames, args.resolution, args.modality, args.rate, args.resp_rate)?;
    let targets = if args.with_target {
        (Some(m.pulse.samples.as_slice()), Some(m.resp.samples.as_slice()))
    } else {
        (None, None)
    };
    let out = m.net.forward_multitask(m.rgb.as_ref(), m.thermal.as_ref(), targets)?;
    if let Some(p) = rppg_out {
        write_output(Some(p), &signal_csv(&out.rppg.waveform.samples, Some(m.fps)))?;
    }
    if let Some(p) = rrsp_out {
        write_output(Some(p), &signal_csv(&out.rrsp.waveform.samples, Some(m.fps)))?;
    }
    let rate = |w: &Waveform, kind: RateKind| -> CliResult<Option<f64>> {
        if w.duration_s() < physfactor_core::metrics::MIN_RATE_DURATION_S {
            return Ok(None);
        }
        Ok(Some(estimate_rate_fft(w, &cfg.band(kind)?)?))
    };
    let cfg_model = m.net.config();
    let report = DemoReport {
        frames: out.rppg.waveform.len(),
        resolution: cfg_model.input_resolution,
        fps: m.fps,
        routing: cfg_model.routing,
        params: m.net.param_count(),
        bvp_attention: out.rppg.attention.is_some(),
        rsp_attention: out.rrsp.attention.is_some(),
        rppg_len: out.rppg.waveform.len(),
        rrsp_len: out.rrsp.waveform.len(),
        rppg_rate_bpm: rate(&out.rppg.waveform, RateKind::Hr)?,
        rrsp_rate_bpm: rate(&out.rrsp.waveform, RateKind::Rr)?,
    };
    emit(&report, output)
}
