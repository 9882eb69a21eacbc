use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use physfactor_core::AttentionVariant;

use crate::config::CONFIG_ENV;

/// Constrained-NMF attention, physiological metrics and a toy dual-branch
/// network.
#[derive(Debug, Parser)]
#[command(name = "physfactor", version, about)]
pub struct Cli {
    /// TOML run configuration
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for factor init, model weights and synthetic data; overrides [rng].seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Fsam,
    Grbf,
    Tsfm,
}

impl From<Variant> for AttentionVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Fsam => AttentionVariant::Fsam,
            Variant::Grbf => AttentionVariant::Grbf,
            Variant::Tsfm => AttentionVariant::Tsfm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Hr,
    Rr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Modality {
    Rgb,
    Thermal,
    Both,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Report format
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Write the report here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolverOverrides {
    /// Attention variant; defaults to [attention].variant
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,

    /// Factorization rank; defaults to [attention].rank
    #[arg(long)]
    pub rank: Option<usize>,

    /// Multiplicative-update iterations; defaults to [attention].iterations
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Factorize a non-negative matrix CSV (rows are time steps)
    Factorize {
        /// Matrix CSV, one row per line
        #[arg(long, value_name = "PATH")]
        input: PathBuf,

        /// Target signal CSV, required for tsfm (length = matrix rows)
        #[arg(long, value_name = "PATH")]
        target: Option<PathBuf>,

        /// Write the low-rank reconstruction as CSV
        #[arg(long, value_name = "PATH")]
        low_rank_out: Option<PathBuf>,

        #[command(flatten)]
        solver: SolverOverrides,

        #[command(flatten)]
        output: Output,
    },

    /// Run the attention module on a flattened embedding or a planted synthetic one
    Attend {
        /// Flattened embedding CSV: one row per frame, columns (c, a, b) row-major
        #[arg(long, value_name = "PATH", required_unless_present = "synthetic")]
        input: Option<PathBuf>,

        /// Channel and spatial extents of --input as C,A,B
        #[arg(long, value_delimiter = ',', value_name = "C,A,B", requires = "input")]
        shape: Option<Vec<usize>>,

        /// Target signal CSV (one value per frame)
        #[arg(long, value_name = "PATH")]
        target: Option<PathBuf>,

        /// Generate a planted-signal embedding instead of reading one
        #[arg(long, conflicts_with = "input")]
        synthetic: bool,

        /// Synthetic embedding frames
        #[arg(long, default_value_t = 160)]
        frames: usize,

        /// Synthetic embedding channels
        #[arg(long, default_value_t = 8)]
        channels: usize,

        /// Synthetic embedding spatial size
        #[arg(long, default_value_t = 6)]
        size: usize,

        /// Planted noise relative to unit signal amplitude
        #[arg(long, default_value_t = 0.3)]
        noise_sigma: f64,

        /// Planted pulse rate in BPM (30 fps)
        #[arg(long, default_value_t = 72.0)]
        rate: f64,

        /// Every n-th location carries the signal
        #[arg(long, default_value_t = 4)]
        mask_stride: usize,

        /// Write the excited embedding as a flattened CSV
        #[arg(long, value_name = "PATH")]
        excited_out: Option<PathBuf>,

        #[command(flatten)]
        solver: SolverOverrides,

        #[command(flatten)]
        output: Output,
    },

    /// Score predicted waveforms against ground truth in 30 s windows
    Metrics {
        /// Predicted signal CSV; repeat for several recordings
        #[arg(long, value_name = "PATH", required = true)]
        pred: Vec<PathBuf>,

        /// Ground-truth signal CSV, paired with --pred in order
        #[arg(long, value_name = "PATH", required = true)]
        gt: Vec<PathBuf>,

        /// Sampling rate in Hz; required for single-column files
        #[arg(long)]
        fs: Option<f64>,

        /// Heart rate or respiration rate
        #[arg(long, value_enum, default_value_t = Kind::Hr)]
        kind: Kind,

        /// Zero spectral content outside the band before scoring
        #[arg(long)]
        bandpass: bool,

        /// MACC lag budget in seconds; defaults to half the window
        #[arg(long)]
        max_lag_s: Option<f64>,

        #[command(flatten)]
        output: Output,
    },

    /// Write synthetic signals or embeddings as CSV
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },

    /// Time forward passes of the dual-branch model
    Bench {
        /// Timed forward passes after 3 warm-ups
        #[arg(long, default_value_t = 10)]
        repeats: usize,

        /// Clip length; defaults to [model].frames
        #[arg(long)]
        frames: Option<usize>,

        /// Frame size; defaults to [model].resolution
        #[arg(long)]
        resolution: Option<usize>,

        /// Skip the target signal, so tsfm attention is bypassed
        #[arg(long)]
        no_target: bool,

        #[command(flatten)]
        output: Output,
    },

    /// Run the dual-branch model on a synthetic clip
    DemoForward {
        /// Clip length; defaults to [model].frames
        #[arg(long)]
        frames: Option<usize>,

        /// Frame size; defaults to [model].resolution
        #[arg(long)]
        resolution: Option<usize>,

        /// Which clips to synthesize
        #[arg(long, value_enum, default_value_t = Modality::Rgb)]
        modality: Modality,

        /// Pulse rate in the synthetic clip, BPM
        #[arg(long, default_value_t = 72.0)]
        rate: f64,

        /// Respiration rate of the rsp target, breaths/min
        #[arg(long, default_value_t = 15.0)]
        resp_rate: f64,

        /// Pass the synthetic signals as attention targets
        #[arg(long)]
        with_target: bool,

        /// Write the pulse output as CSV
        #[arg(long, value_name = "PATH")]
        rppg_out: Option<PathBuf>,

        /// Write the respiration output as CSV
        #[arg(long, value_name = "PATH")]
        rrsp_out: Option<PathBuf>,

        #[command(flatten)]
        output: Output,
    },

    /// Print the default or the effective configuration
    Config {
        /// Print the built-in defaults as TOML
        #[arg(long, conflicts_with = "show")]
        print_defaults: bool,

        /// Print the configuration after loading --config and --seed
        #[arg(long)]
        show: bool,
    },
}

#[derive(Debug, Args)]
pub struct SignalArgs {
    /// Sampling rate in Hz
    #[arg(long, default_value_t = 30.0)]
    pub fs: f64,

    /// Duration in seconds
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,

    /// Second-harmonic amplitude relative to the fundamental
    #[arg(long, default_value_t = 0.0)]
    pub harmonic: f64,

    /// Gaussian noise standard deviation
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,

    /// Prepend a time column and a header
    #[arg(long)]
    pub time_column: bool,

    /// Output CSV; stdout when omitted
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Pulse waveform
    Pulse {
        /// Beats per minute
        #[arg(long, default_value_t = 72.0)]
        rate: f64,

        #[command(flatten)]
        signal: SignalArgs,
    },

    /// Respiration waveform
    Resp {
        /// Breaths per minute
        #[arg(long, default_value_t = 15.0)]
        rate: f64,

        #[command(flatten)]
        signal: SignalArgs,
    },

    /// Planted-signal embedding, flattened to one row per frame
    Embedding {
        #[arg(long, default_value_t = 160)]
        frames: usize,

        #[arg(long, default_value_t = 8)]
        channels: usize,

        #[arg(long, default_value_t = 6)]
        size: usize,

        /// Planted noise relative to unit signal amplitude
        #[arg(long, default_value_t = 0.3)]
        noise_sigma: f64,

        /// Planted pulse rate in BPM (30 fps)
        #[arg(long, default_value_t = 72.0)]
        rate: f64,

        /// Every n-th location carries the signal
        #[arg(long, default_value_t = 4)]
        mask_stride: usize,

        /// Embedding CSV; stdout when omitted
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,

        /// Also write the planted signal
        #[arg(long, value_name = "PATH")]
        target_out: Option<PathBuf>,
    },
}
