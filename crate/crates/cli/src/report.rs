//! Reports emitted by the subcommands.

use physfactor_core::model::Routing;
use physfactor_core::AttentionVariant;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizeReport {
    pub variant: AttentionVariant,
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub iterations: usize,
    pub seed: u64,
    pub error_trace: Vec<f64>,
    pub final_error: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsimSummary {
    pub input_mean: f64,
    pub excited_mean: f64,
    pub planted_mean: Option<f64>,
    pub background_mean: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttendReport {
    pub variant: AttentionVariant,
    pub shape: [usize; 4],
    pub seed: u64,
    pub error_trace: Vec<f64>,
    pub relative_error: f64,
    /// Present when a target signal was available.
    pub csim: Option<CsimSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub resolution: usize,
    pub channels: usize,
    pub params: usize,
    pub with_target: bool,
    pub warmup: usize,
    pub repeats: usize,
    pub samples_ms: Vec<f64>,
    pub min_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub frames: usize,
    pub resolution: usize,
    pub fps: f64,
    pub routing: Routing,
    pub params: usize,
    pub bvp_attention: bool,
    pub rsp_attention: bool,
    pub rppg_len: usize,
    pub rrsp_len: usize,
    /// Only for clips of at least 10 s.
    pub rppg_rate_bpm: Option<f64>,
    pub rrsp_rate_bpm: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub trait Table {
    fn to_table(&self) -> String;
}

impl Table for FactorizeReport {
    fn to_table(&self) -> String {
        let trace: Vec<String> = self.error_trace.iter().map(|e| format!("{e:.6}")).collect();
        format!(
            "variant        {:?}\nshape          {} x {}\nrank           {}\niterations     {}\nseed           {}\nerror trace    {}\nrelative error {:.6}\n",
            self.variant,
            self.m,
            self.n,
            self.rank,
            self.iterations,
            self.seed,
            trace.join(" "),
            self.relative_error
        )
    }
}

impl Table for AttendReport {
    fn to_table(&self) -> String {
        let mut out = format!(
            "variant        {:?}\nshape          {:?}\nseed           {}\nrelative error {:.6}\n",
            self.variant, self.shape, self.seed, self.relative_error
        );
        if let Some(c) = &self.csim {
            out.push_str(&format!(
                "csim input     {:.4}\ncsim excited   {:.4}\ncsim planted   {}\ncsim backgr.   {}\ncsim gap       {}\n",
                c.input_mean,
                c.excited_mean,
                opt(c.planted_mean),
                opt(c.background_mean),
                opt(c.gap)
            ));
        }
        out
    }
}

impl Table for BenchReport {
    fn to_table(&self) -> String {
        format!(
            "input          {} x {}x{} x {}ch\nparams         {}\nwith target    {}\nrepeats        {} (+{} warm-up)\nmin ms         {:.2}\nmedian ms      {:.2}\nmean ms        {:.2}\n",
            self.frames,
            self.resolution,
            self.resolution,
            self.channels,
            self.params,
            self.with_target,
            self.repeats,
            self.warmup,
            self.min_ms,
            self.median_ms,
            self.mean_ms
        )
    }
}

impl Table for DemoReport {
    fn to_table(&self) -> String {
        format!(
            "input          {} x {}x{} @ {} fps\nrouting        {:?}\nparams         {}\nattention      bvp {} / rsp {}\nrppg           {} samples, {} BPM\nrrsp           {} samples, {} br/min\n",
            self.frames,
            self.resolution,
            self.resolution,
            self.fps,
            self.routing,
            self.params,
            self.bvp_attention,
            self.rsp_attention,
            self.rppg_len,
            opt(self.rppg_rate_bpm),
            self.rrsp_len,
            opt(self.rrsp_rate_bpm)
        )
    }
}

impl Table for physfactor_core::MetricsReport {
    fn to_table(&self) -> String {
        physfactor_core::MetricsReport::to_table(self)
    }
}
