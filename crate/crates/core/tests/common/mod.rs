//! Reference implementations written without reusing library kernels, plus
//! compositions of the library's already-verified sub-operations.
#![allow(dead_code)]

use xmodal_core::blocks::{BlockConfig, CrossBlockParams, SingleBlockParams};
use xmodal_core::scanpaths::{apply_scan, reverse_scan, ScanDirection, ScanPlan};
use xmodal_core::ssm::{cs6_scan, s6_scan, SSMParams, ScanConfig, ScanMode, BbarRule};
use xmodal_core::tensors::{
    adaptive_pool, dropout, linear, silu_map, FeatureMap, Kernel, PoolMode, SeededRng, TokenSequence,
};

pub fn random_map(h: usize, w: usize, c: usize, rng: &mut SeededRng) -> FeatureMap {
    FeatureMap::new(h, w, c, rng.uniform_vec(h * w * c, -1.0, 1.0)).unwrap()
}

pub fn random_tokens(l: usize, c: usize, rng: &mut SeededRng) -> TokenSequence {
    TokenSequence::new(l, c, rng.uniform_vec(l * c, -1.0, 1.0)).unwrap()
}

/// Six nested loops, zero padding, no kernel flip.
pub fn naive_conv(x: &FeatureMap, k: &Kernel, stride: usize, pad: usize) -> Vec<Vec<Vec<f64>>> {
    let (kh, kw, ci, co) = k.dims();
    let (h, w, _) = x.shape();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![vec![vec![0.0; co]; ow]; oh];
    for oi in 0..oh {
        for oj in 0..ow {
            for o in 0..co {
                let mut s = 0.0;
                for a in 0..kh {
                    for b in 0..kw {
                        for i in 0..ci {
                            let r = (oi * stride + a) as i64 - pad as i64;
                            let c = (oj * stride + b) as i64 - pad as i64;
                            if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                                s += x.get(r as usize, c as usize, i) * k.get(a, b, i, o);
                            }
                        }
                    }
                }
                out[oi][oj][o] = s;
            }
        }
    }
    out
}

/// Output cell `i` of `n` over a source of length `len` reads `[⌊i·len/n⌋, ⌊(i+1)·len/n⌋)`.
pub fn pool_oracle(x: &FeatureMap, th: usize, tw: usize, max: bool) -> Vec<Vec<Vec<f64>>> {
    let (h, w, ch) = x.shape();
    let mut out = vec![vec![vec![0.0; ch]; tw]; th];
    for i in 0..th {
        let rows: Vec<usize> = (i * h / th..(i + 1) * h / th).collect();
        for j in 0..tw {
            let cols: Vec<usize> = (j * w / tw..(j + 1) * w / tw).collect();
            for c in 0..ch {
                let vals: Vec<f64> = rows.iter().flat_map(|&r| cols.iter().map(move |&q| (r, q))).map(|(r, q)| x.get(r, q, c)).collect();
                out[i][j][c] = if max {
                    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                };
            }
        }
    }
    out
}

pub fn max_diff_nested(m: &FeatureMap, o: &[Vec<Vec<f64>>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in o.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            for (c, v) in cell.iter().enumerate() {
                worst = worst.max((m.get(i, j, c) - v).abs());
            }
        }
    }
    worst
}

/// `Σ_{k<terms} M^k / k!` for a dense square matrix.
pub fn taylor_expm(m: &[Vec<f64>], terms: usize) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut result = vec![vec![0.0; n]; n];
    let mut term: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for k in 0..terms {
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    next[i][j] += term[i][l] * m[l][j];
                }
                next[i][j] /= (k + 1) as f64;
            }
        }
        term = next;
    }
    result
}

fn softplus_ref(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        (1.0 + z.exp()).ln()
    }
}

/// Straight loop over time with explicit per-channel states.
pub fn scan_oracle(x1: &TokenSequence, x2: &TokenSequence, p: &SSMParams, cfg: ScanConfig) -> Vec<Vec<f64>> {
    let (len, ch) = x1.shape();
    let n = p.a.len();
    let mut h = vec![vec![0.0; n]; ch];
    let mut y = vec![vec![0.0; ch]; len];
    for t in 0..len {
        let x = x1.row(t);
        let (delta, b, c): (f64, Vec<f64>, Vec<f64>) = match cfg.mode {
            ScanMode::Selective => {
                let z: f64 = (0..ch).map(|i| p.delta_proj[i] * x[i]).sum::<f64>() + p.delta_bias;
                let b = (0..n).map(|k| (0..ch).map(|i| p.b_proj.get(k, i) * x[i]).sum()).collect();
                let c = (0..n).map(|k| (0..ch).map(|i| p.c_proj.get(k, i) * x[i]).sum()).collect();
                (softplus_ref(z), b, c)
            }
            ScanMode::TimeInvariant => (p.fixed.delta, p.fixed.b.clone(), p.fixed.c.clone()),
        };
        for chan in 0..ch {
            let mut out = 0.0;
            for k in 0..n {
                let a_bar = (delta * p.a[k]).exp();
                let b_bar = match cfg.rule {
                    BbarRule::Approx => delta * b[k],
                    BbarRule::Exact => b[k] * ((delta * p.a[k]).exp() - 1.0) / p.a[k],
                };
                h[chan][k] = a_bar * h[chan][k] + b_bar * x[chan];
                out += c[k] * h[chan][k];
            }
            y[t][chan] = out + p.d[chan] * x2.get(t, chan);
        }
    }
    y
}

pub fn max_rel_diff_tokens(y: &TokenSequence, o: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (t, row) in o.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let a = y.get(t, c);
            worst = worst.max((a - v).abs() / v.abs().max(1.0));
        }
    }
    worst
}

/// Single block assembled from the individually verified library pieces.
pub fn single_block_composition(
    s: &FeatureMap,
    p: &SingleBlockParams,
    cfg: &BlockConfig,
    rng: &mut SeededRng,
    training: bool,
) -> FeatureMap {
    let (gh, gw) = cfg.target_grid;
    let f_in = adaptive_pool(s, gh, gw, PoolMode::Avg).unwrap().add(&adaptive_pool(s, gh, gw, PoolMode::Max).unwrap()).unwrap();
    let hidden = silu_map(&linear(&f_in.to_tokens(), &p.mlp.up).unwrap());
    let mapped = dropout(&linear(&hidden, &p.mlp.down).unwrap(), cfg.dropout, rng, training).unwrap();
    let grid = mapped.add(&p.pos.values).unwrap().into_grid(gh, gw).unwrap();
    let mut acc: Option<FeatureMap> = None;
    for (i, dir) in ScanDirection::GLOBAL.iter().enumerate() {
        let plan = ScanPlan::build(gh, gw, *dir, None).unwrap();
        let y = s6_scan(&apply_scan(&grid, &plan).unwrap(), &p.ssm[i], cfg.scan).unwrap();
        let back = reverse_scan(&y, &plan).unwrap();
        acc = Some(match acc {
            None => back,
            Some(a) => a.add(&back).unwrap(),
        });
    }
    acc.unwrap().add(&f_in).unwrap()
}

pub fn cross_block_composition(
    f1: &FeatureMap,
    f2: &FeatureMap,
    p: &CrossBlockParams,
    cfg: &BlockConfig,
) -> (FeatureMap, FeatureMap) {
    let (h, w) = (f1.height(), f1.width());
    let mut y1: Option<FeatureMap> = None;
    let mut y2: Option<FeatureMap> = None;
    for (i, dir) in ScanDirection::CROSS.iter().enumerate() {
        let window = dir.is_local().then_some(cfg.local_window);
        let plan = ScanPlan::build(h, w, *dir, window).unwrap();
        let a = apply_scan(f1, &plan).unwrap();
        let b = apply_scan(f2, &plan).unwrap();
        let r1 = reverse_scan(&cs6_scan(&b, &a, &p.first[i], cfg.scan).unwrap(), &plan).unwrap();
        let r2 = reverse_scan(&cs6_scan(&a, &b, &p.second[i], cfg.scan).unwrap(), &plan).unwrap();
        y1 = Some(y1.map_or(r1.clone(), |acc| acc.add(&r1).unwrap()));
        y2 = Some(y2.map_or(r2.clone(), |acc| acc.add(&r2).unwrap()));
    }
    (y1.unwrap(), y2.unwrap())
}

/// Central difference of `f` along `dir` at step `eps`.
pub fn central_difference(f: impl Fn(f64) -> f64, eps: f64) -> f64 {
    (f(eps) - f(-eps)) / (2.0 * eps)
}
