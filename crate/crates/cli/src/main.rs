use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use xmodal_core::bundle::TensorBundle;
use xmodal_core::harness::{
    cmd_check, cmd_offsets, demo_report, flop_estimate, flop_sweep, measured_s6_count, CheckHooks,
    Pipeline, RunConfig, OUT_DIR_ENV,
};
use xmodal_core::scanpaths::{ScanDirection, ScanPlan};

/// Cross-modal scan interaction and guided fusion at desk scale.
#[derive(Parser)]
#[command(name = "xmodal", version)]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; takes precedence over XMODAL_OUT_DIR and the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthetic end-to-end pipeline and write a report.
    Demo {
        /// Load model weights from a tensor bundle instead of initialising them.
        #[arg(long, value_name = "PATH")]
        params: Option<PathBuf>,
    },
    /// Run the invariant suites; exits 1 if any fails.
    Check {
        /// Module name (`ssm`) or suite prefix (`ssm.zoh`).
        #[arg(long)]
        filter: Option<String>,
        /// List suite names and exit.
        #[arg(long)]
        list: bool,
        #[arg(long, hide = true)]
        corrupt_plan: bool,
    },
    /// Multiply-add counts for the interaction stack vs. cross-attention.
    Bench {
        /// Token count; defaults to the configured token grid.
        #[arg(long)]
        tokens: Option<usize>,
    },
    /// Offset statistics from line-delimited JSON annotations.
    Offsets {
        #[arg(value_name = "INPUT")]
        input: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &cli.out {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn demo(cfg: &RunConfig, params: Option<&Path>) -> Result<ExitCode> {
    let model = match params {
        None => Pipeline::init(cfg),
        Some(path) => Pipeline::from_bundle(&TensorBundle::load(path)?, cfg)
            .with_context(|| format!("loading weights from {}", path.display()))?,
    };
    let report = demo_report(cfg, &model)?;
    let path = write_json(&cfg.out_dir, "demo_report.json", &report)?;
    model.to_bundle().save(&cfg.out_dir.join("params.xmtb"))?;
    let (h, w) = cfg.block.target_grid;
    let plans = ScanPlan::build_set(h, w, &ScanDirection::CROSS, cfg.block.local_window)?;
    write_json(&cfg.out_dir, "scan_plans.json", &plans)?;
    for t in &report.tensors {
        println!("{:<16} {:?}  l2 = {:.6e}", t.name, t.shape, t.l2_norm);
    }
    println!("all_finite: {}", report.all_finite);
    println!("hash: {}", report.determinism_hash);
    println!("report: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Demo { params } => demo(&cfg, params.as_deref()),
        Command::Check {
            filter,
            list,
            corrupt_plan,
        } => {
            if *list {
                for name in xmodal_core::harness::suite_names() {
                    println!("{name}");
                }
                return Ok(ExitCode::SUCCESS);
            }
            let report = cmd_check(&cfg, filter.as_deref(), &CheckHooks {
                corrupt_plan: *corrupt_plan,
            });
            if report.executed == 0 {
                bail!("no suite matches filter {:?}", filter.as_deref().unwrap_or(""));
            }
            for s in &report.suites {
                let status = if s.passed { "PASS" } else { "FAIL" };
                if s.passed {
                    println!("{status} {}.{}", s.module, s.name);
                } else {
                    println!("{status} {}.{}: {}", s.module, s.name, s.detail);
                }
            }
            let path = write_json(&cfg.out_dir, "check_report.json", &report)?;
            println!("{}/{} passed; report: {}", report.passed, report.executed, path.display());
            Ok(if report.ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Bench { tokens } => {
            let l = tokens.unwrap_or_else(|| cfg.block.tokens());
            let report = flop_estimate(&cfg, l)?;
            let lengths: Vec<usize> = [l / 4, l / 2, l, 2 * l, 4 * l].into_iter().filter(|&x| x > 0).collect();
            let sweep = flop_sweep(&cfg, &lengths)?;
            let measured = measured_s6_count(&cfg, l)?;
            let value = json!({ "report": report, "sweep": sweep, "measured_scan_per_direction": measured });
            let path = write_json(&cfg.out_dir, "flop_report.json", &value)?;
            println!("tokens: {l}");
            println!("mamba interaction:    {}", report.mamba_total);
            println!("cross-attention:      {}", report.attention.total);
            println!("ratio:                {:.4}", report.ratio);
            println!("report: {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Offsets { input } => {
            let report = cmd_offsets(input, &cfg).with_context(|| format!("reading {}", input.display()))?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let path = write_json(&cfg.out_dir, "offset_report.json", &report)?;
            println!(
                "matched {} objects; misaligned fraction {:.4}; 1-5 px share {:.4}",
                report.matched, report.histogram.misaligned_fraction, report.histogram.one_to_five_share
            );
            println!("report: {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
