//! Analytic multiply-add counts for the interaction stack and for a
//! cross-attention stack of matched width.

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::error::{Error, Result};
use crate::ssm::{s6_scan_counted, MulAddCount, SSMParams, ScanMode};
use crate::tensors::{SeededRng, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionCounts {
    /// `4·L·C²` for the Q, K, V and output projections.
    pub projections: u64,
    /// `2·L²·C` for scores and the weighted sum.
    pub quadratic: u64,
    /// One self-attention block: projections + quadratic + MLP.
    pub self_block: u64,
    /// Cross block: two attention passes with swapped query/key roles.
    pub cross_block: u64,
    pub total: u64,
    /// Sum of every `L²` term in `total`.
    pub quadratic_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub tokens: u64,
    pub channels: u64,
    pub state_dim: u64,
    pub hidden: u64,
    pub n_single: u64,
    pub scan_mode: ScanMode,
    /// One scan direction (single or cross; the counts coincide).
    pub scan_per_direction: u64,
    pub mlp_per_block: u64,
    pub single_block: u64,
    pub cross_block: u64,
    /// `2 · n_single · single_block + cross_block`.
    pub mamba_total: u64,
    pub attention: AttentionCounts,
    /// `mamba_total / attention.total`.
    pub ratio: f64,
}

/// Counts for token length `tokens` at the configured widths.
pub fn flop_estimate(cfg: &RunConfig, tokens: usize) -> Result<FlopReport> {
    if tokens == 0 {
        return Err(Error::param("token count must be at least 1"));
    }
    let l = tokens as u64;
    let c = cfg.block.channels as u64;
    let n = cfg.block.state_dim as u64;
    let h = cfg.block.hidden() as u64;
    let k = cfg.block.n_single as u64;
    let scan = match cfg.block.scan.mode {
        // projections L·C(2N+1), discretization 2NL, recurrence L·C(3N+1)
        ScanMode::Selective => l * (5 * n * c + 2 * c + 2 * n),
        ScanMode::TimeInvariant => l * (3 * n * c + c + 2 * n),
    };
    let mlp = 2 * l * c * h;
    let single = mlp + 4 * scan;
    let cross = 12 * scan;
    let mamba_total = 2 * k * single + cross;

    let projections = 4 * l * c * c;
    let quadratic = 2 * l * l * c;
    let self_block = mlp + projections + quadratic;
    let cross_attn = 2 * (projections + quadratic);
    let attn_total = 2 * k * self_block + cross_attn;
    Ok(FlopReport {
        tokens: l,
        channels: c,
        state_dim: n,
        hidden: h,
        n_single: k,
        scan_mode: cfg.block.scan.mode,
        scan_per_direction: scan,
        mlp_per_block: mlp,
        single_block: single,
        cross_block: cross,
        mamba_total,
        attention: AttentionCounts {
            projections,
            quadratic,
            self_block,
            cross_block: cross_attn,
            total: attn_total,
            quadratic_total: (2 * k + 2) * quadratic,
        },
        ratio: mamba_total as f64 / attn_total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tokens: u64,
    pub mamba_total: u64,
    pub attention_total: u64,
    pub ratio: f64,
}

pub fn flop_sweep(cfg: &RunConfig, lengths: &[usize]) -> Result<Vec<SweepRow>> {
    lengths
        .iter()
        .map(|&l| {
            let r = flop_estimate(cfg, l)?;
            Ok(SweepRow {
                tokens: r.tokens,
                mamba_total: r.mamba_total,
                attention_total: r.attention.total,
                ratio: r.ratio,
            })
        })
        .collect()
}

/// Instrumented count of one scan direction at the configured widths.
pub fn measured_s6_count(cfg: &RunConfig, tokens: usize) -> Result<u64> {
    let mut rng = SeededRng::new(cfg.seed);
    let params = SSMParams::init(cfg.block.channels, cfg.block.state_dim, &mut rng);
    let x = TokenSequence::new(tokens, cfg.block.channels, rng.uniform_vec(tokens * cfg.block.channels, -1.0, 1.0))?;
    let mut count = MulAddCount::default();
    s6_scan_counted(&x, &params, cfg.block.scan, &mut count)?;
    Ok(count.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::ScanConfig;

    #[test]
    fn default_config_counts() {
        let cfg = RunConfig::default();
        let r = flop_estimate(&cfg, 64).unwrap();
        assert_eq!(r.mamba_total, 18_456_576);
        assert_eq!(r.attention.total, 18_874_368);
        assert!(r.mamba_total < r.attention.total);
        assert_eq!(r.mamba_total, 2 * r.n_single * r.single_block + r.cross_block);
    }

    #[test]
    fn analytic_count_matches_instrumented_scan() {
        for scan in [ScanConfig::selective(), ScanConfig::time_invariant()] {
            let mut cfg = RunConfig::default();
            cfg.block.scan = scan;
            cfg.block.channels = 5;
            cfg.block.state_dim = 3;
            for l in [1, 7, 20] {
                assert_eq!(flop_estimate(&cfg, l).unwrap().scan_per_direction, measured_s6_count(&cfg, l).unwrap());
            }
        }
    }

    #[test]
    fn zero_tokens_rejected() {
        assert!(flop_estimate(&RunConfig::default(), 0).is_err());
    }
}
