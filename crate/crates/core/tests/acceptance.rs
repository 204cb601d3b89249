//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its own PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::path::PathBuf;

use common::*;
use xmodal_core::blocks::{
    cross_mamba_block, single_block_backward, single_mamba_block, BlockConfig, CrossBlockParams, SingleBlockParams,
};
use xmodal_core::harness::{cmd_check, cmd_demo, cmd_offsets, flop_estimate, CheckHooks, RunConfig};
use xmodal_core::offsets::{intersection_area, retention_by_level, AreaMode};
use xmodal_core::scanpaths::{apply_scan, max_window, reverse_scan, ScanDirection, ScanPlan};
use xmodal_core::ssm::{
    cs6_scan, fixed_projections, recurrence, s6_backward, s6_scan, zoh_discretize, BbarRule, DiscreteSSMParams,
    SSMParams, ScanConfig, ScanMode,
};
use xmodal_core::tensors::{Dense, SeededRng, TokenSequence};

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn pick(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    (lo + (rng.uniform_vec(1, 0.0, (hi - lo + 1) as f64)[0] as usize)).min(hi)
}

fn random_divisor_window(g: usize, rng: &mut SeededRng) -> usize {
    let ok: Vec<usize> = (1..=max_window(g)).filter(|w| g % w == 0).collect();
    ok[pick(rng, 0, ok.len() - 1)]
}

fn scan_round_trip() -> Outcome {
    let mut rng = SeededRng::new(101);
    for i in 0..200 {
        let (h, w, c) = (pick(&mut rng, 1, 32), pick(&mut rng, 1, 32), pick(&mut rng, 1, 8));
        let x = random_map(h, w, c, &mut rng);
        let win = (random_divisor_window(h, &mut rng), random_divisor_window(w, &mut rng));
        for dir in ScanDirection::CROSS {
            let plan = ScanPlan::build(h, w, dir, Some(win)).map_err(|e| e.to_string())?;
            let back = reverse_scan(&apply_scan(&x, &plan).unwrap(), &plan).unwrap();
            ensure!(back == x, "grid {i} ({h}x{w}x{c}), {dir:?}: round trip changed values");
        }
    }
    Ok(())
}

fn zoh_oracle() -> Outcome {
    let mut rng = SeededRng::new(102);
    for i in 0..100 {
        let n = pick(&mut rng, 1, 8);
        let mut p = SSMParams::init(1, n, &mut rng);
        p.a = rng.uniform_vec(n, -4.0, -0.05);
        p.fixed.delta = rng.uniform_vec(1, 0.001, 0.25)[0];
        p.fixed.b = rng.uniform_vec(n, -1.0, 1.0);
        let dt = p.fixed.delta;
        let m: Vec<Vec<f64>> = (0..n).map(|r| (0..n).map(|c| if r == c { dt * p.a[r] } else { 0.0 }).collect()).collect();
        let e = taylor_expm(&m, 20);
        let disc = zoh_discretize(&p, &fixed_projections(&p, 1), BbarRule::Approx).map_err(|e| e.to_string())?;
        for k in 0..n {
            let err = (disc.a_bar[k] - e[k][k]).abs();
            ensure!(err < 1e-12, "instance {i}, k = {k}: |Ā − taylor| = {err:e}");
            ensure!(disc.b_bar[k] == dt * p.fixed.b[k], "instance {i}, k = {k}: B̄ != Δ·B");
        }
    }
    Ok(())
}

fn cumsum_collapse() -> Outcome {
    let mut rng = SeededRng::new(103);
    for len in 1..=256 {
        let x = random_tokens(len, 2, &mut rng);
        let disc = DiscreteSSMParams::time_invariant(len, &[1.0], &[1.0], &[1.0], &[0.0, 0.0]).unwrap();
        let y = recurrence(&x, &x, &disc).unwrap();
        let mut acc = [0.0f64; 2];
        for t in 0..len {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += x.get(t, c);
                ensure!(y.get(t, c) == *a, "L = {len}, t = {t}: {} != {}", y.get(t, c), *a);
            }
        }
    }
    Ok(())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn dot(a: &TokenSequence, b: &TokenSequence) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`. Elementwise ratios are dominated by
/// round-off for components near zero at a 1e-6 step.
fn normwise_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(f64::MIN_POSITIVE)
}

fn gradient_check() -> Outcome {
    let eps = 1e-6;
    let mut rng = SeededRng::new(104);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (len, n, c) = (pick(&mut rng, 1, 64), pick(&mut rng, 1, 8), pick(&mut rng, 1, 4));
        let cfg = if i % 2 == 0 { ScanConfig::selective() } else { ScanConfig { rule: BbarRule::Exact, ..ScanConfig::selective() } };
        let p = SSMParams::init(c, n, &mut rng);
        let x = random_tokens(len, c, &mut rng);
        let w = random_tokens(len, c, &mut rng);
        let g = s6_backward(&x, &p, cfg, &w).map_err(|e| e.to_string())?;
        let flat = p.flat_values();
        let numeric: Vec<f64> = (0..flat.len())
            .map(|k| {
                central_difference(
                    |s| {
                        let mut v = flat.clone();
                        v[k] += s;
                        let mut q = p.clone();
                        q.set_flat_values(&v);
                        dot(&s6_scan(&x, &q, cfg).unwrap(), &w)
                    },
                    eps,
                )
            })
            .collect();
        let e = normwise_rel_err(&g.params.flat_values(), &numeric);
        worst = worst.max(e);
        ensure!(e <= 1e-5, "instance {i} (L={len}, N={n}, C={c}) parameters: rel {e:e}");

        let numeric: Vec<f64> = (0..x.data().len())
            .map(|k| {
                central_difference(
                    |s| {
                        let mut v = x.data().to_vec();
                        v[k] += s;
                        dot(&s6_scan(&TokenSequence::new(len, c, v).unwrap(), &p, cfg).unwrap(), &w)
                    },
                    eps,
                )
            })
            .collect();
        let e = normwise_rel_err(g.dx.data(), &numeric);
        worst = worst.max(e);
        ensure!(e <= 1e-5, "instance {i} (L={len}, N={n}, C={c}) inputs: rel {e:e}");
    }

    // Whole single block, through the mlp weights.
    let block = BlockConfig { target_grid: (4, 4), channels: 4, state_dim: 4, ..BlockConfig::default() };
    let params = SingleBlockParams::init(&block, &mut rng);
    let s = random_map(6, 5, 4, &mut rng);
    let up = random_map(4, 4, 4, &mut rng);
    let g = single_block_backward(&s, &params, &block, &up).map_err(|e| e.to_string())?;
    let loss = |q: &SingleBlockParams| -> f64 {
        let y = single_mamba_block(&s, q, &block, &mut SeededRng::new(0), false).unwrap();
        y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
    };
    for which in ["up", "down"] {
        let count = params.mlp.up.data().len();
        for k in 0..count {
            let numeric = central_difference(
                |d| {
                    let mut q = params.clone();
                    let m = if which == "up" { &mut q.mlp.up } else { &mut q.mlp.down };
                    m.data_mut()[k] += d;
                    loss(&q)
                },
                eps,
            );
            let analytic = if which == "up" { g.mlp.up.data()[k] } else { g.mlp.down.data()[k] };
            let e = rel_err(analytic, numeric);
            ensure!(e <= 1e-4, "block mlp.{which}[{k}]: {analytic} vs {numeric} (rel {e:e})");
        }
    }
    println!("      (worst scan relative error {worst:.2e})");
    Ok(())
}

fn cs6_degeneracies() -> Outcome {
    let mut rng = SeededRng::new(105);
    for mode in [ScanMode::Selective, ScanMode::TimeInvariant] {
        for rule in [BbarRule::Approx, BbarRule::Exact] {
            let cfg = ScanConfig { mode, rule };
            for _ in 0..10 {
                let (len, c, n) = (pick(&mut rng, 1, 40), pick(&mut rng, 1, 4), pick(&mut rng, 1, 8));
                let mut p = SSMParams::init(c, n, &mut rng);
                let x = random_tokens(len, c, &mut rng);
                let zero = TokenSequence::zeros(len, c);
                let y = cs6_scan(&zero, &x, &p, cfg).unwrap();
                for t in 0..len {
                    for k in 0..c {
                        ensure!(y.get(t, k) == p.d[k] * x.get(t, k), "{mode:?}/{rule:?}: x1 = 0 gave y != D ⊙ x2");
                    }
                }
                p.d = vec![0.0; c];
                ensure!(
                    cs6_scan(&x, &zero, &p, cfg).unwrap() == s6_scan(&x, &p, cfg).unwrap(),
                    "{mode:?}/{rule:?}: x2 = 0, D = 0 differs from the s6 readout"
                );
            }
        }
    }
    Ok(())
}

fn cross_symmetry() -> Outcome {
    let mut rng = SeededRng::new(106);
    for (grid, ch, mode) in [((8, 8), 4, ScanMode::Selective), ((6, 9), 3, ScanMode::TimeInvariant), ((4, 4), 2, ScanMode::Selective)] {
        let cfg = BlockConfig {
            target_grid: grid,
            channels: ch,
            state_dim: 4,
            local_window: (2, if grid.1 % 3 == 0 { 3 } else { 2 }),
            scan: ScanConfig { mode, rule: BbarRule::Approx },
            ..BlockConfig::default()
        };
        let shared = CrossBlockParams::shared(&cfg, &mut rng);
        let f = random_map(grid.0, grid.1, ch, &mut rng);
        let (y1, y2) = cross_mamba_block(&f, &f, &shared, &cfg).map_err(|e| e.to_string())?;
        ensure!(y1 == y2, "{grid:?}: Y1 != Y2 (max diff {:e})", y1.max_abs_diff(&y2));
    }
    Ok(())
}

fn ti_linearity() -> Outcome {
    let mut rng = SeededRng::new(107);
    let cfg = ScanConfig::time_invariant();
    for i in 0..50 {
        let (len, c, n) = (pick(&mut rng, 1, 64), pick(&mut rng, 1, 4), pick(&mut rng, 1, 8));
        let p = SSMParams::init(c, n, &mut rng);
        let (x, z) = (random_tokens(len, c, &mut rng), random_tokens(len, c, &mut rng));
        let ab = rng.uniform_vec(2, -2.0, 2.0);
        let lhs = s6_scan(&x.scale(ab[0]).add(&z.scale(ab[1])).unwrap(), &p, cfg).unwrap();
        let rhs = s6_scan(&x, &p, cfg).unwrap().scale(ab[0]).add(&s6_scan(&z, &p, cfg).unwrap().scale(ab[1])).unwrap();
        let err = lhs.max_abs_diff(&rhs);
        ensure!(err <= 1e-12, "instance {i}: superposition error {err:e}");
    }
    Ok(())
}

fn window_constraint() -> Outcome {
    for h in 1..=24usize {
        for w in 1..=24usize {
            for wh in 1..=h {
                for ww in [1, w.div_ceil(3), w.div_ceil(3) + 1, w].into_iter().filter(|&v| v >= 1 && v <= w) {
                    let expect = h % wh == 0 && wh <= h.div_ceil(3) && w % ww == 0 && ww <= w.div_ceil(3);
                    for dir in [ScanDirection::LocalFwd, ScanDirection::LocalBwd] {
                        match ScanPlan::build(h, w, dir, Some((wh, ww))) {
                            Ok(plan) => {
                                ensure!(expect, "{h}x{w} accepted window {wh}x{ww}");
                                let mut seen = vec![false; h * w];
                                for &pos in plan.order() {
                                    ensure!(pos < h * w && !seen[pos], "{h}x{w} window {wh}x{ww}: not a bijection");
                                    seen[pos] = true;
                                }
                                ensure!(plan.verify().is_ok(), "{h}x{w} window {wh}x{ww}: verify failed");
                            }
                            Err(_) => ensure!(!expect, "{h}x{w} rejected valid window {wh}x{ww}"),
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn flop_scaling() -> Outcome {
    let cfg = RunConfig::default();
    for l in [1usize, 16, 64, 100, 256] {
        let a = flop_estimate(&cfg, l).map_err(|e| e.to_string())?;
        let b = flop_estimate(&cfg, 2 * l).map_err(|e| e.to_string())?;
        ensure!(b.mamba_total == 2 * a.mamba_total, "L = {l}: mamba {} vs 2×{}", b.mamba_total, a.mamba_total);
        ensure!(
            b.attention.quadratic_total == 4 * a.attention.quadratic_total,
            "L = {l}: attention quadratic term {} vs 4×{}",
            b.attention.quadratic_total,
            a.attention.quadratic_total
        );
    }
    let d = flop_estimate(&cfg, cfg.block.tokens()).map_err(|e| e.to_string())?;
    ensure!(d.mamba_total < d.attention.total, "defaults: mamba {} >= attention {}", d.mamba_total, d.attention.total);
    println!("      (defaults: mamba {} < attention {})", d.mamba_total, d.attention.total);
    Ok(())
}

fn pipeline_shapes() -> Outcome {
    let cfg = RunConfig::default();
    ensure!(cfg.image_size == (640, 640), "default image size {:?}", cfg.image_size);
    let a = cmd_demo(&cfg).map_err(|e| e.to_string())?;
    let b = cmd_demo(&cfg).map_err(|e| e.to_string())?;
    let c = cfg.fusion.channels;
    for (name, side, ch) in [("p3", 80, c.c3), ("p4", 40, c.c4), ("p5", 20, c.c5)] {
        let shape = a.shape_of(name).ok_or(format!("missing {name}"))?;
        ensure!(shape == [side, side, ch], "{name} shape {shape:?}");
    }
    ensure!(a.all_finite, "non-finite values in the demo outputs");
    ensure!(a.determinism_hash == b.determinism_hash, "hashes differ across runs");
    Ok(())
}

fn offset_model() -> Outcome {
    for mode in [AreaMode::Literal, AreaMode::Clamped] {
        let area = intersection_area(20.0, 20.0, 3.0, 4.0, mode).unwrap();
        ensure!(area == 272.0, "{mode:?}: area {area}");
    }
    let levels: Vec<f64> = (1..=64).map(f64::from).collect();
    for dx in 0..=70 {
        for dy in 0..=70 {
            let r = retention_by_level(dx as f64, dy as f64, &levels).unwrap();
            ensure!(r.windows(2).all(|p| p[1] >= p[0]), "retention not monotone at ({dx}, {dy})");
        }
    }
    let cfg = RunConfig::default();
    let rep = cmd_offsets(&data("misaligned_35.ndjson"), &cfg).map_err(|e| e.to_string())?;
    let h = &rep.histogram;
    ensure!(rep.matched == 100, "matched {}", rep.matched);
    ensure!(h.misaligned_fraction == 0.35, "misaligned fraction {}", h.misaligned_fraction);
    ensure!(h.one_to_five_share == 32.0 / 35.0, "1–5 px share {}", h.one_to_five_share);
    ensure!(h.one_to_five_share >= 0.9, "1–5 px share below 0.9");
    let aligned = cmd_offsets(&data("aligned.ndjson"), &cfg).map_err(|e| e.to_string())?;
    ensure!(aligned.histogram.misaligned_fraction == 0.0, "aligned fixture reports misalignment");
    Ok(())
}

fn defaults_fidelity() -> Outcome {
    let shipped = RunConfig::load(&data("default_config.json")).map_err(|e| e.to_string())?;
    ensure!(shipped == RunConfig::default(), "shipped config differs from the built-in defaults");
    ensure!(shipped.block.target_grid == (8, 8), "token grid {:?}", shipped.block.target_grid);
    ensure!(shipped.block.local_window == (2, 2), "local window {:?}", shipped.block.local_window);
    ensure!(shipped.block.n_single == 3, "n_single {}", shipped.block.n_single);
    let report = cmd_check(&shipped, None, &CheckHooks::default());
    for s in report.suites.iter().filter(|s| !s.passed) {
        println!("      failed suite {}.{}: {}", s.module, s.name, s.detail);
    }
    ensure!(report.ok, "{} of {} check suites failed", report.failed, report.executed);
    Ok(())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("scan round trip", scan_round_trip),
        ("ZOH oracle", zoh_oracle),
        ("recurrence collapse to prefix sums", cumsum_collapse),
        ("gradient check", gradient_check),
        ("CS6 degeneracies", cs6_degeneracies),
        ("cross-block symmetry", cross_symmetry),
        ("time-invariant linearity", ti_linearity),
        ("local-scan window constraint", window_constraint),
        ("FLOP scaling", flop_scaling),
        ("pipeline shapes", pipeline_shapes),
        ("offset model", offset_model),
        ("defaults fidelity", defaults_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = std::time::Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS {:>2} {name} ({secs:.1}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
