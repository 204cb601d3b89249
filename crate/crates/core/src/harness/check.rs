//! Invariant suites run by `check`. Each suite is self-contained, seeded from
//! the run config and returns a one-line failure detail.

use serde::{Deserialize, Serialize};

use super::{flop_estimate, measured_s6_count, RunConfig};
use crate::blocks::{
    cross_mamba_block, single_block_backward, single_mamba_block, BlockConfig, CrossBlockParams, PositionalEmbedding,
    SingleBlockParams,
};
use crate::fusion::{neck_pipeline, ChannelPlan, FusionConfig, NeckWeights, PyramidSet};
use crate::offsets::{
    intersection_area, offset_report, retention_by_level, AreaMode, Annotation, BoxPx, OffsetOptions,
};
use crate::scanpaths::{apply_scan, check_window, max_window, reverse_scan, ScanDirection, ScanPlan};
use crate::ssm::{
    cs6_scan, fixed_projections, recurrence, s6_backward, s6_scan, zoh_discretize, BbarRule, DiscreteSSMParams,
    SSMParams, ScanConfig,
};
use crate::tensors::{
    adaptive_pool, conv2d, dropout, Dense, FeatureMap, Kernel, Matrix, PoolMode, SeededRng, TokenSequence,
};

/// Test-only fault injection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckHooks {
    /// Swap two order entries of the first plan in the bijectivity suite.
    pub corrupt_plan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub module: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub filter: Option<String>,
    pub executed: usize,
    pub passed: usize,
    pub failed: usize,
    pub ok: bool,
    pub suites: Vec<SuiteResult>,
}

type Outcome = std::result::Result<(), String>;
type SuiteFn = fn(&RunConfig, &CheckHooks) -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn lift<T>(r: crate::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

const SUITES: &[(&str, &str, SuiteFn)] = &[
    ("tensors", "conv_identity", tensors_conv_identity),
    ("tensors", "pool_identity", tensors_pool_identity),
    ("tensors", "dropout_rate", tensors_dropout_rate),
    ("scanpaths", "bijectivity", scan_bijectivity),
    ("scanpaths", "window_constraint", scan_window_constraint),
    ("scanpaths", "json_round_trip", scan_json_round_trip),
    ("ssm", "cumsum_collapse", ssm_cumsum),
    ("ssm", "zoh_taylor", ssm_zoh_taylor),
    ("ssm", "time_invariant_linearity", ssm_linearity),
    ("ssm", "gradient_fd", ssm_gradient),
    ("ssm", "cs6_degeneracy", ssm_cs6_degeneracy),
    ("blocks", "shape_preservation", blocks_shape),
    ("blocks", "determinism", blocks_determinism),
    ("blocks", "dead_scan_path", blocks_dead_path),
    ("blocks", "cross_symmetry", blocks_cross_symmetry),
    ("blocks", "modal_asymmetry", blocks_modal_asymmetry),
    ("blocks", "constant_input_symmetry", blocks_constant_symmetry),
    ("blocks", "mlp_gradient_fd", blocks_mlp_gradient),
    ("fusion", "scale_arithmetic", fusion_scales),
    ("fusion", "guidance_reaches_p3", fusion_guidance),
    ("fusion", "both_modalities_matter", fusion_both_modalities),
    ("offsets", "area_arithmetic", offsets_area),
    ("offsets", "retention_monotone", offsets_retention),
    ("offsets", "misaligned_fixture", offsets_fixture),
    ("harness", "flop_scaling", harness_flop_scaling),
    ("harness", "flop_inequality", harness_flop_inequality),
    ("harness", "flop_instrumented", harness_flop_instrumented),
    ("harness", "default_hyperparameters", harness_defaults),
];

/// `module.name` for every suite, in execution order.
pub fn suite_names() -> Vec<String> {
    SUITES.iter().map(|(m, n, _)| format!("{m}.{n}")).collect()
}

fn selected(module: &str, name: &str, filter: Option<&str>) -> bool {
    match filter {
        None => true,
        Some(f) => module == f || format!("{module}.{name}").starts_with(f),
    }
}

/// Runs the matching suites concurrently; results keep declaration order.
pub fn cmd_check(cfg: &RunConfig, filter: Option<&str>, hooks: &CheckHooks) -> CheckReport {
    let chosen: Vec<_> = SUITES.iter().filter(|(m, n, _)| selected(m, n, filter)).collect();
    let outcomes: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = chosen.iter().map(|(_, _, f)| s.spawn(move || f(cfg, hooks))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| Err(panic_message(p))))
            .collect()
    });
    let suites: Vec<SuiteResult> = chosen
        .iter()
        .zip(outcomes)
        .map(|((m, n, _), out)| SuiteResult {
            module: m.to_string(),
            name: n.to_string(),
            passed: out.is_ok(),
            detail: out.err().unwrap_or_default(),
        })
        .collect();
    let passed = suites.iter().filter(|s| s.passed).count();
    CheckReport {
        filter: filter.map(String::from),
        executed: suites.len(),
        passed,
        failed: suites.len() - passed,
        ok: passed == suites.len(),
        suites,
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    let msg = p
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into());
    format!("panicked: {msg}")
}

fn rng_for(cfg: &RunConfig, suite: u64) -> SeededRng {
    SeededRng::new(cfg.seed).fork(0x5EED_0000 + suite)
}

fn random_map(h: usize, w: usize, c: usize, rng: &mut SeededRng) -> FeatureMap {
    FeatureMap::new(h, w, c, rng.uniform_vec(h * w * c, -1.0, 1.0)).expect("shape")
}

fn random_tokens(l: usize, c: usize, rng: &mut SeededRng) -> TokenSequence {
    TokenSequence::new(l, c, rng.uniform_vec(l * c, -1.0, 1.0)).expect("shape")
}

/// A narrow copy of the block config for suites that repeat full forward passes.
fn narrow_block(cfg: &RunConfig) -> BlockConfig {
    BlockConfig {
        channels: 4,
        hidden: Some(8),
        state_dim: 3,
        dropout: 0.0,
        ..cfg.block.clone()
    }
}

fn top_level_size(cfg: &RunConfig) -> (usize, usize) {
    (cfg.image_size.0 / 32, cfg.image_size.1 / 32)
}

fn tensors_conv_identity(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 1);
    let x = random_map(6, 7, 3, &mut rng);
    let y = lift(conv2d(&x, &Kernel::centered_identity(3, 3), 1, 1))?;
    ensure!(y == x, "3x3 centered identity kernel changed the input");
    Ok(())
}

fn tensors_pool_identity(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 2);
    let x = random_map(5, 4, 2, &mut rng);
    for mode in [PoolMode::Avg, PoolMode::Max] {
        ensure!(lift(adaptive_pool(&x, 5, 4, mode))? == x, "{mode:?} pooling to the same size is not identity");
    }
    Ok(())
}

fn tensors_dropout_rate(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 3);
    let p = if cfg.block.dropout > 0.0 { cfg.block.dropout } else { 0.1 };
    let x = TokenSequence::from_fn(100, 100, |_, _| 1.0);
    let y = lift(dropout(&x, p, &mut rng, true))?;
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
    ensure!((zeros - p).abs() <= 0.02, "dropped fraction {zeros} vs p = {p}");
    let scale = 1.0 / (1.0 - p);
    ensure!(y.data().iter().all(|&v| v == 0.0 || v == scale), "survivors not scaled by 1/(1-p)");
    ensure!(lift(dropout(&x, p, &mut rng, false))? == x, "eval-mode dropout is not identity");
    Ok(())
}

fn scan_bijectivity(cfg: &RunConfig, hooks: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 4);
    let (h, w) = cfg.block.target_grid;
    let mut plans = lift(ScanPlan::build_set(h, w, &ScanDirection::CROSS, cfg.block.local_window))?;
    if hooks.corrupt_plan && plans[0].len() >= 2 {
        plans[0].corrupt_swap(0, 1);
    }
    let grid = random_map(h, w, 3, &mut rng);
    for plan in &plans {
        plan.verify().map_err(|e| format!("{:?}: {e}", plan.direction()))?;
        let back = lift(reverse_scan(&lift(apply_scan(&grid, plan))?, plan))?;
        ensure!(back == grid, "{:?}: reverse_scan(apply_scan(X)) != X", plan.direction());
    }
    Ok(())
}

fn scan_window_constraint(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let (h, w) = cfg.block.target_grid;
    ensure!(
        check_window(h, w, (max_window(h) + 1, 1)).is_err(),
        "window taller than ceil(h/3) accepted"
    );
    ensure!(
        check_window(h, w, (1, max_window(w) + 1)).is_err(),
        "window wider than ceil(w/3) accepted"
    );
    for wh in 1..=max_window(h) {
        for ww in 1..=max_window(w) {
            let ok = check_window(h, w, (wh, ww)).is_ok();
            ensure!(ok == (h % wh == 0 && w % ww == 0), "window {wh}x{ww} on {h}x{w}: accepted = {ok}");
        }
    }
    Ok(())
}

fn scan_json_round_trip(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let (h, w) = cfg.block.target_grid;
    for plan in lift(ScanPlan::build_set(h, w, &ScanDirection::CROSS, cfg.block.local_window))? {
        ensure!(lift(ScanPlan::from_json(&plan.to_json()))? == plan, "{:?} JSON round trip", plan.direction());
    }
    Ok(())
}

fn ssm_cumsum(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 5);
    let len = 64;
    let x = random_tokens(len, 2, &mut rng);
    let disc = lift(DiscreteSSMParams::time_invariant(len, &[1.0], &[1.0], &[1.0], &[0.0, 0.0]))?;
    let y = lift(recurrence(&x, &x, &disc))?;
    let mut acc = [0.0; 2];
    for t in 0..len {
        for (c, a) in acc.iter_mut().enumerate() {
            *a += x.get(t, c);
            ensure!(y.get(t, c) == *a, "prefix sum differs at t = {t}");
        }
    }
    Ok(())
}

fn ssm_zoh_taylor(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 6);
    for _ in 0..20 {
        let mut p = SSMParams::init(1, 4, &mut rng);
        p.fixed.delta = rng.uniform_vec(1, 0.001, 0.2)[0];
        p.fixed.b = rng.uniform_vec(4, -1.0, 1.0);
        let disc = lift(zoh_discretize(&p, &fixed_projections(&p, 1), BbarRule::Approx))?;
        for k in 0..4 {
            let x = p.fixed.delta * p.a[k];
            let (mut term, mut sum) = (1.0, 1.0);
            for i in 1..20 {
                term *= x / i as f64;
                sum += term;
            }
            ensure!((disc.a_bar[k] - sum).abs() < 1e-12, "exp({x}) off by {}", disc.a_bar[k] - sum);
            ensure!(disc.b_bar[k] == p.fixed.delta * p.fixed.b[k], "B̄ != Δ·B");
        }
    }
    Ok(())
}

fn ssm_linearity(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 7);
    let p = SSMParams::init(3, 4, &mut rng);
    let ti = ScanConfig::time_invariant();
    for _ in 0..10 {
        let (x, z) = (random_tokens(12, 3, &mut rng), random_tokens(12, 3, &mut rng));
        let (a, b) = (1.7, -0.6);
        let mixed = x.scale(a).add(&z.scale(b)).expect("shape");
        let lhs = lift(s6_scan(&mixed, &p, ti))?;
        let rhs = lift(s6_scan(&x, &p, ti))?.scale(a).add(&lift(s6_scan(&z, &p, ti))?.scale(b)).expect("shape");
        let err = lhs.max_abs_diff(&rhs);
        ensure!(err <= 1e-12, "superposition error {err}");
    }
    Ok(())
}

fn ssm_gradient(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 8);
    let p = SSMParams::init(2, 3, &mut rng);
    let x = random_tokens(10, 2, &mut rng);
    let w = random_tokens(10, 2, &mut rng);
    let scan = cfg.block.scan;
    let g = lift(s6_backward(&x, &p, scan, &w))?;
    let loss = |p: &SSMParams, x: &TokenSequence| -> crate::Result<f64> {
        Ok(s6_scan(x, p, scan)?.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
    };
    let eps = 1e-6;
    let flat = p.flat_values();
    for i in 0..flat.len() {
        let shifted = |s: f64| {
            let mut v = flat.clone();
            v[i] += s;
            let mut q = p.clone();
            q.set_flat_values(&v);
            loss(&q, &x)
        };
        let numeric = (lift(shifted(eps))? - lift(shifted(-eps))?) / (2.0 * eps);
        let analytic = g.params.flat_values()[i];
        let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        ensure!(rel <= 1e-5, "parameter {i}: analytic {analytic} vs numeric {numeric}");
    }
    Ok(())
}

fn ssm_cs6_degeneracy(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 9);
    let mut p = SSMParams::init(3, 4, &mut rng);
    let x = random_tokens(9, 3, &mut rng);
    let zero = TokenSequence::zeros(9, 3);
    let scan = cfg.block.scan;
    let y = lift(cs6_scan(&zero, &x, &p, scan))?;
    for t in 0..9 {
        for c in 0..3 {
            ensure!(y.get(t, c) == p.d[c] * x.get(t, c), "zero state input: y != D ⊙ x2");
        }
    }
    p.d = vec![0.0; 3];
    ensure!(
        lift(cs6_scan(&x, &zero, &p, scan))? == lift(s6_scan(&x, &p, scan))?,
        "zero skip input with D = 0 differs from the single-sequence readout"
    );
    Ok(())
}

fn blocks_shape(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 10);
    let block = &cfg.block;
    let params = SingleBlockParams::init(block, &mut rng);
    let (th, tw) = top_level_size(cfg);
    let s = random_map(th, tw, block.channels, &mut rng);
    let out = lift(single_mamba_block(&s, &params, block, &mut rng, false))?;
    let (gh, gw) = block.target_grid;
    ensure!(out.shape() == (gh, gw, block.channels), "single block output {:?}", out.shape());
    let again = lift(single_mamba_block(&out, &params, block, &mut rng, false))?;
    ensure!(again.shape() == out.shape(), "block is not shape preserving at the token grid");
    let cross = CrossBlockParams::init(block, &mut rng);
    let (y1, y2) = lift(cross_mamba_block(&out, &again, &cross, block))?;
    ensure!(y1.shape() == out.shape() && y2.shape() == out.shape(), "cross block changed shape");
    Ok(())
}

fn blocks_determinism(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let block = narrow_block(cfg);
    let run = || -> crate::Result<FeatureMap> {
        let mut rng = rng_for(cfg, 11);
        let params = SingleBlockParams::init(&block, &mut rng);
        let s = random_map(block.target_grid.0 * 2, block.target_grid.1 * 2, block.channels, &mut rng);
        single_mamba_block(&s, &params, &block, &mut rng, false)
    };
    ensure!(lift(run())? == lift(run())?, "repeated eval-mode runs differ");
    Ok(())
}

fn blocks_dead_path(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 12);
    let block = narrow_block(cfg);
    let mut params = SingleBlockParams::init(&block, &mut rng);
    params.pos = PositionalEmbedding::zeros(block.tokens(), block.channels);
    for p in &mut params.ssm {
        p.c_proj = Matrix::zeros(block.state_dim, block.channels);
        p.fixed.c = vec![0.0; block.state_dim];
        p.d = vec![0.0; block.channels];
    }
    let s = random_map(block.target_grid.0 * 2, block.target_grid.1 + 3, block.channels, &mut rng);
    let out = lift(single_mamba_block(&s, &params, &block, &mut rng, false))?;
    let shortcut = lift(crate::blocks::pool_embed(&s, &block))?;
    ensure!(out == shortcut, "dead scan path does not reduce to the pooled shortcut");
    Ok(())
}

fn blocks_cross_symmetry(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 13);
    let block = narrow_block(cfg);
    let shared = CrossBlockParams::shared(&block, &mut rng);
    let (gh, gw) = block.target_grid;
    let f = random_map(gh, gw, block.channels, &mut rng);
    let (y1, y2) = lift(cross_mamba_block(&f, &f, &shared, &block))?;
    ensure!(y1 == y2, "equal inputs under shared parameters gave Y1 != Y2");
    Ok(())
}

fn blocks_modal_asymmetry(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 14);
    let block = narrow_block(cfg);
    let shared = CrossBlockParams::shared(&block, &mut rng);
    let (gh, gw) = block.target_grid;
    let f1 = random_map(gh, gw, block.channels, &mut rng);
    let f2 = random_map(gh, gw, block.channels, &mut rng);
    let (y1, y2) = lift(cross_mamba_block(&f1, &f2, &shared, &block))?;
    let gap = y1.max_abs_diff(&y2);
    ensure!(gap > 1e-9, "distinct inputs gave Y1 ≈ Y2 (gap {gap})");
    Ok(())
}

/// Constant grids in time-invariant mode with one parameter set shared by
/// all directions: the four global scans pair up under a 180° rotation (and,
/// on square grids, under transposition), so the output is invariant under
/// those symmetries.
fn blocks_constant_symmetry(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 15);
    let block = BlockConfig {
        scan: ScanConfig::time_invariant(),
        share_direction_params: true,
        ..narrow_block(cfg)
    };
    let mut params = SingleBlockParams::init(&block, &mut rng);
    params.pos = PositionalEmbedding::zeros(block.tokens(), block.channels);
    let (h, w) = block.target_grid;
    let s = FeatureMap::filled(h, w, block.channels, 0.37);
    let out = lift(single_mamba_block(&s, &params, &block, &mut rng, false))?;
    for i in 0..h {
        for j in 0..w {
            for c in 0..block.channels {
                let v = out.get(i, j, c);
                let rot = out.get(h - 1 - i, w - 1 - j, c);
                ensure!((v - rot).abs() <= 1e-12, "180° rotation asymmetry at ({i}, {j}, {c})");
                if h == w {
                    ensure!((v - out.get(j, i, c)).abs() <= 1e-12, "transpose asymmetry at ({i}, {j}, {c})");
                }
            }
        }
    }
    Ok(())
}

fn blocks_mlp_gradient(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 16);
    let block = narrow_block(cfg);
    let params = SingleBlockParams::init(&block, &mut rng);
    let (gh, gw) = block.target_grid;
    let s = random_map(gh + 2, gw + 1, block.channels, &mut rng);
    let up = random_map(gh, gw, block.channels, &mut rng);
    let g = lift(single_block_backward(&s, &params, &block, &up))?;
    let loss = |p: &SingleBlockParams| -> crate::Result<f64> {
        let y = single_mamba_block(&s, p, &block, &mut SeededRng::new(0), false)?;
        Ok(y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum())
    };
    let eps = 1e-6;
    let (hidden, ch) = (params.mlp.up.rows(), params.mlp.up.cols());
    for idx in [0, hidden * ch / 2, hidden * ch - 1] {
        for which in ["up", "down"] {
            let shifted = |sgn: f64| {
                let mut q = params.clone();
                let m = if which == "up" { &mut q.mlp.up } else { &mut q.mlp.down };
                m.data_mut()[idx] += sgn * eps;
                loss(&q)
            };
            let numeric = (lift(shifted(1.0))? - lift(shifted(-1.0))?) / (2.0 * eps);
            let analytic = if which == "up" { g.mlp.up.data()[idx] } else { g.mlp.down.data()[idx] };
            let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            ensure!(rel <= 1e-4, "mlp.{which}[{idx}]: analytic {analytic} vs numeric {numeric}");
        }
    }
    Ok(())
}

fn small_fusion(cfg: &RunConfig) -> FusionConfig {
    FusionConfig {
        branch_count: cfg.fusion.branch_count,
        channels: ChannelPlan { c3: 3, c4: 4, c5: 5 },
    }
}

fn random_pyramid(fusion: &FusionConfig, s3: (usize, usize), rng: &mut SeededRng) -> PyramidSet {
    let ChannelPlan { c3, c4, c5 } = fusion.channels;
    let mut pair = |h: usize, w: usize, c: usize| (random_map(h, w, c, rng), random_map(h, w, c, rng));
    let a3 = pair(s3.0, s3.1, c3);
    let a4 = pair(s3.0 / 2, s3.1 / 2, c4);
    let a5 = pair(s3.0 / 4, s3.1 / 4, c5);
    let mut p = PyramidSet::from_backbone(a3, a4, a5);
    let (f_rgb, f_ir) = pair(s3.0 / 4, s3.1 / 4, c5);
    p.f5_rgb = f_rgb;
    p.f5_ir = f_ir;
    p
}

fn fusion_scales(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let (h, w) = cfg.image_size;
    ensure!(h % 32 == 0 && w % 32 == 0, "image size {h}x{w} not divisible by 32");
    let mut rng = rng_for(cfg, 17);
    let fusion = small_fusion(cfg);
    let pyr = random_pyramid(&fusion, (8, 12), &mut rng);
    let out = lift(neck_pipeline(&pyr, &NeckWeights::init(&fusion, &mut rng), &fusion))?;
    ensure!(out.p3.shape() == (8, 12, 3), "P3 {:?}", out.p3.shape());
    ensure!(out.p4.shape() == (4, 6, 4), "P4 {:?}", out.p4.shape());
    ensure!(out.p5.shape() == (2, 3, 5), "P5 {:?}", out.p5.shape());
    Ok(())
}

fn fusion_guidance(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 18);
    let fusion = small_fusion(cfg);
    let pyr = random_pyramid(&fusion, (8, 8), &mut rng);
    let weights = NeckWeights::init(&fusion, &mut rng);
    let base = lift(neck_pipeline(&pyr, &weights, &fusion))?;
    let mut bumped = pyr.clone();
    bumped.f5_rgb = bumped.f5_rgb.map(|v| v + 1e-3);
    let moved = lift(neck_pipeline(&bumped, &weights, &fusion))?;
    ensure!(moved.p3.max_abs_diff(&base.p3) > 0.0, "perturbing F5 left P3 unchanged");
    Ok(())
}

fn fusion_both_modalities(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let mut rng = rng_for(cfg, 19);
    let fusion = small_fusion(cfg);
    let pyr = random_pyramid(&fusion, (8, 8), &mut rng);
    let weights = NeckWeights::init(&fusion, &mut rng);
    let base = lift(neck_pipeline(&pyr, &weights, &fusion))?;
    for which in ["rgb", "ir"] {
        let mut z = pyr.clone();
        let target = if which == "rgb" { &mut z.s3_rgb } else { &mut z.s3_ir };
        *target = FeatureMap::zeros(target.height(), target.width(), target.channels());
        let out = lift(neck_pipeline(&z, &weights, &fusion))?;
        ensure!(out.p3.max_abs_diff(&base.p3) > 0.0, "zeroing S3_{which} left P3 unchanged");
    }
    Ok(())
}

fn offsets_area(_: &RunConfig, _: &CheckHooks) -> Outcome {
    for mode in [AreaMode::Literal, AreaMode::Clamped] {
        ensure!(lift(intersection_area(20.0, 20.0, 3.0, 4.0, mode))? == 272.0, "{mode:?}: 20,20,3,4 != 272");
        ensure!(lift(intersection_area(20.0, 20.0, 0.0, 0.0, mode))? == 400.0, "{mode:?}: zero offset");
    }
    let r = lift(retention_by_level(4.0, 4.0, &[8.0, 16.0, 32.0]))?;
    ensure!(r == [0.25, 0.5625, 0.765625], "retention at (4, 4): {r:?}");
    Ok(())
}

fn offsets_retention(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let levels: Vec<f64> = (1..=64).map(|b| b as f64).collect();
    for d in 0..=70 {
        let r = lift(retention_by_level(d as f64 * 0.5, d as f64 * 0.25, &levels))?;
        ensure!(r.windows(2).all(|p| p[1] >= p[0]), "retention not monotone in block size at offset {d}");
    }
    for &b in &cfg.offsets.levels {
        let mut prev = f64::INFINITY;
        for d in 0..=(2.0 * b) as usize {
            let a = lift(intersection_area(b, b, d as f64, 0.0, AreaMode::Clamped))?;
            ensure!(a <= prev, "clamped area increased at dx = {d}, block {b}");
            prev = a;
        }
    }
    Ok(())
}

/// 100 objects, 35 displaced; 32 of those by 1..=5 px (≥ 90 %).
pub(crate) fn misaligned_fixture() -> Vec<Annotation> {
    let mut out = Vec::new();
    let mut push = |i: usize, modality: &str, x: f64, y: f64| {
        out.push(Annotation {
            image_id: format!("img{}", i / 10),
            modality: modality.into(),
            object_id: Some(format!("obj{i}")),
            bbox: BoxPx { x, y, w: 24.0, h: 16.0 },
            class: "person".into(),
        });
    };
    for i in 0..100 {
        let (x, y) = (60.0 * (i % 10) as f64, 40.0);
        let shift = match i {
            0..=64 => 0.0,
            65..=96 => (1 + (i - 65) % 5) as f64,
            _ => 8.0,
        };
        push(i, "rgb", x, y);
        push(i, "ir", x + shift, y - 0.25 * shift);
    }
    out
}

fn offsets_fixture(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let report = lift(offset_report(&misaligned_fixture(), &OffsetOptions {
        norm: cfg.offsets.norm,
        ..OffsetOptions::default()
    }))?;
    ensure!(report.matched == 100, "matched {} of 100", report.matched);
    let h = &report.histogram;
    ensure!(h.misaligned_fraction == 0.35, "misaligned fraction {}", h.misaligned_fraction);
    ensure!(h.one_to_five_share >= 0.9, "1–5 px share {}", h.one_to_five_share);
    Ok(())
}

fn harness_flop_scaling(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let l = cfg.block.tokens();
    let a = lift(flop_estimate(cfg, l))?;
    let b = lift(flop_estimate(cfg, 2 * l))?;
    ensure!(b.mamba_total == 2 * a.mamba_total, "mamba total does not double with L");
    ensure!(
        b.attention.quadratic_total == 4 * a.attention.quadratic_total,
        "attention L² term does not quadruple"
    );
    Ok(())
}

fn harness_flop_inequality(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let r = lift(flop_estimate(cfg, cfg.block.tokens()))?;
    ensure!(
        r.mamba_total < r.attention.total,
        "mamba {} ≥ attention {}",
        r.mamba_total,
        r.attention.total
    );
    Ok(())
}

fn harness_flop_instrumented(cfg: &RunConfig, _: &CheckHooks) -> Outcome {
    let l = cfg.block.tokens();
    let analytic = lift(flop_estimate(cfg, l))?.scan_per_direction;
    let measured = lift(measured_s6_count(cfg, l))?;
    ensure!(analytic == measured, "analytic {analytic} vs instrumented {measured}");
    Ok(())
}

fn harness_defaults(_: &RunConfig, _: &CheckHooks) -> Outcome {
    let d = RunConfig::default();
    ensure!(d.block.target_grid == (8, 8), "default token grid {:?}", d.block.target_grid);
    ensure!(d.block.local_window == (2, 2), "default local window {:?}", d.block.local_window);
    ensure!(d.block.n_single == 3, "default single-block count {}", d.block.n_single);
    lift(d.validate())
}
