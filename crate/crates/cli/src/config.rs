//! Run configuration loaded from TOML.

use std::path::Path;

use physfactor_core::factorize::{DEFAULT_ITERATIONS, DEFAULT_RANK, DEFAULT_SOLVER_EPSILON, DEFAULT_TARGET_FLOOR};
use physfactor_core::metrics::{EvalProtocol, RateKind, DEFAULT_PAD_FACTOR, EVAL_WINDOW_S};
use physfactor_core::model::{BlockSpec, Routing};
use physfactor_core::tensor::DEFAULT_NORM_EPSILON;
use physfactor_core::{AttentionConfig, AttentionVariant, MiniModelConfig, RateBand};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_ENV: &str = "PHYSFACTOR_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSection {
    pub variant: AttentionVariant,
    pub rank: usize,
    pub iterations: usize,
    pub epsilon: f64,
    pub grbf_sigma: f64,
    pub grbf_delta_t: usize,
    pub target_floor: f64,
    pub norm_epsilon: f64,
}

impl Default for AttentionSection {
    fn default() -> Self {
        Self {
            variant: AttentionVariant::Tsfm,
            rank: DEFAULT_RANK,
            iterations: DEFAULT_ITERATIONS,
            epsilon: DEFAULT_SOLVER_EPSILON,
            grbf_sigma: 2.0,
            grbf_delta_t: 4,
            target_floor: DEFAULT_TARGET_FLOOR,
            norm_epsilon: DEFAULT_NORM_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub resolution: usize,
    pub channels: usize,
    pub routing: Routing,
    pub frames: usize,
    pub fps: f64,
    pub attention_index: usize,
    pub omit_attention: bool,
    pub rsp_upsample_factor: usize,
    pub bvp_blocks: Vec<BlockSpec>,
    pub rsp_blocks: Vec<BlockSpec>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = MiniModelConfig::default();
        Self {
            resolution: m.input_resolution,
            channels: m.input_channels,
            routing: m.routing,
            frames: 160,
            fps: 30.0,
            attention_index: m.attention_index,
            omit_attention: m.omit_attention,
            rsp_upsample_factor: m.rsp_upsample_factor,
            bvp_blocks: m.bvp_blocks,
            rsp_blocks: m.rsp_blocks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub hr_band_hz: [f64; 2],
    pub rr_band_hz: [f64; 2],
    pub window_s: f64,
    pub pad_factor: usize,
    /// Omitted means half of `window_s`.
    pub max_lag_s: Option<f64>,
    pub bandpass: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let hr = RateBand::hr();
        let rr = RateBand::rr();
        Self {
            hr_band_hz: [hr.lo_hz, hr.hi_hz],
            rr_band_hz: [rr.lo_hz, rr.hi_hz],
            window_s: EVAL_WINDOW_S,
            pad_factor: DEFAULT_PAD_FACTOR,
            max_lag_s: None,
            bandpass: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RngSection {
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub attention: AttentionSection,
    pub model: ModelSection,
    pub metrics: MetricsSection,
    pub rng: RngSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|msg| CliError::parse(path, msg))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Defaults as TOML, with the optional keys shown commented out.
    pub fn defaults_toml() -> String {
        let mut out = String::from("# physfactor run configuration\n");
        for line in Self::default().to_toml().lines() {
            out.push_str(line);
            out.push('\n');
            if line == "[metrics]" {
                out.push_str("# max_lag_s = 15.0  # default: half of window_s\n");
            }
        }
        out
    }

    pub fn attention(&self) -> AttentionConfig {
        let a = &self.attention;
        AttentionConfig {
            variant: a.variant,
            rank: a.rank,
            iterations: a.iterations,
            epsilon: a.epsilon,
            seed: self.rng.seed,
            grbf_sigma: a.grbf_sigma,
            grbf_delta_t: a.grbf_delta_t,
            target_floor: a.target_floor,
            norm_epsilon: a.norm_epsilon,
            pre_mix: None,
            post_mix: None,
        }
    }

    pub fn model(&self) -> MiniModelConfig {
        let m = &self.model;
        MiniModelConfig {
            input_resolution: m.resolution,
            input_channels: m.channels,
            routing: m.routing,
            bvp_blocks: m.bvp_blocks.clone(),
            rsp_blocks: m.rsp_blocks.clone(),
            rsp_upsample_factor: m.rsp_upsample_factor,
            attention_index: m.attention_index,
            omit_attention: m.omit_attention,
            bvp_attention: self.attention(),
            rsp_attention: self.attention(),
            seed: self.rng.seed,
        }
    }

    pub fn band(&self, kind: RateKind) -> physfactor_core::Result<RateBand> {
        let [lo, hi] = match kind {
            RateKind::Hr => self.metrics.hr_band_hz,
            RateKind::Rr => self.metrics.rr_band_hz,
        };
        RateBand::new(lo, hi, kind)
    }

    pub fn protocol(&self) -> EvalProtocol {
        EvalProtocol {
            window_s: self.metrics.window_s,
            pad_factor: self.metrics.pad_factor,
            max_lag_s: self.metrics.max_lag_s,
            bandpass: self.metrics.bandpass,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = RunConfig::defaults_toml();
        assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
        assert!(text.contains("[attention]") && text.contains("[[model.bvp_blocks]]"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("[attention]\nrnak = 3\n").is_err());
        assert!(RunConfig::parse("[bogus]\n").is_err());
        let partial = RunConfig::parse("[attention]\nvariant = \"fsam\"\n[rng]\nseed = 9\n").unwrap();
        assert_eq!(partial.attention.variant, AttentionVariant::Fsam);
        assert_eq!(partial.attention().seed, 9);
        assert_eq!(partial.model().seed, 9);
        assert_eq!(partial.model, ModelSection::default());
    }

    #[test]
    fn model_defaults_match_core() {
        let mut core = MiniModelConfig::default();
        core.bvp_attention.seed = 0;
        assert_eq!(RunConfig::default().model(), core);
    }
}
