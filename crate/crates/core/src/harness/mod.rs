//! Run configuration, the end-to-end demo, invariant suites and the
//! multiply-add counting model behind the command-line tool.

mod check;
mod demo;
mod flops;

pub use check::{cmd_check, suite_names, CheckHooks, CheckReport, SuiteResult};
pub use demo::{cmd_demo, demo_report, run_pipeline, synthetic_images, DemoReport, Pipeline, PipelineOutput, TensorSummary};
pub use flops::{flop_estimate, flop_sweep, measured_s6_count, AttentionCounts, FlopReport, SweepRow};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocks::BlockConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::offsets::{parse_annotations, offset_report, OffsetOptions, OffsetReport};

/// Environment variable that replaces `out_dir` and nothing else.
pub const OUT_DIR_ENV: &str = "XMODAL_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `(height, width)` of the synthetic input images; multiples of 32.
    pub image_size: (usize, usize),
    pub image_channels: usize,
    pub seed: u64,
    pub block: BlockConfig,
    pub fusion: FusionConfig,
    pub offsets: OffsetOptions,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            image_size: (640, 640),
            image_channels: 3,
            seed: 0,
            block: BlockConfig::default(),
            fusion: FusionConfig::default(),
            offsets: OffsetOptions::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses JSON; unknown or mistyped fields report their dotted path.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::config("image_size", format!("{h}x{w} must be positive multiples of 32")));
        }
        if self.image_channels == 0 {
            return Err(Error::config("image_channels", "must be positive"));
        }
        self.block.validate("block")?;
        self.fusion.validate("fusion")?;
        self.offsets.validate("offsets")?;
        if self.block.channels != self.fusion.channels.c5 {
            return Err(Error::config(
                "block.channels",
                format!("must equal fusion.channels.c5 = {}", self.fusion.channels.c5),
            ));
        }
        let (gh, gw) = self.block.target_grid;
        if gh > h / 32 || gw > w / 32 {
            return Err(Error::config(
                "block.target_grid",
                format!("{gh}x{gw} exceeds the top-level map {}x{}", h / 32, w / 32),
            ));
        }
        Ok(())
    }
}

/// Reads line-delimited annotations and builds the offset report.
pub fn cmd_offsets(input: &Path, cfg: &RunConfig) -> Result<OffsetReport> {
    let text = std::fs::read_to_string(input)?;
    offset_report(&parse_annotations(&text)?, &cfg.offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_json_str(&cfg.to_json_pretty()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json_str("{}").unwrap(), cfg);
    }

    #[test]
    fn errors_carry_field_paths() {
        let field = |text: &str| match RunConfig::from_json_str(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field(r#"{"block": {"n_single": "three"}}"#), "block.n_single");
        assert_eq!(field(r#"{"block": {"local_window": [3, 3]}}"#), "block.local_window");
        assert_eq!(field(r#"{"image_size": [600, 640]}"#), "image_size");
        assert_eq!(field(r#"{"block": {"channels": 32}}"#), "block.channels");
        assert!(field(r#"{"bogus": 1}"#).contains("bogus") || field(r#"{"bogus": 1}"#) == "<root>");
    }
}
