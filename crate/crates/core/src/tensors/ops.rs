use serde::{Deserialize, Serialize};

use super::{Dense, FeatureMap, Kernel, Matrix, SeededRng, TokenSequence};
use crate::error::{Error, Result};
use rand::Rng;

/// Cross-correlation of `input` with `kernel` (no kernel flip), zero padding.
pub fn conv2d(input: &FeatureMap, kernel: &Kernel, stride: usize, padding: usize) -> Result<FeatureMap> {
    let (kh, kw, c_in, c_out) = kernel.dims();
    if c_in != input.channels() {
        return Err(Error::dim(format!(
            "conv2d: kernel expects {c_in} input channels, input has {}",
            input.channels()
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::geom(format!("conv2d: kernel {kh}x{kw} must have odd extents")));
    }
    if stride == 0 {
        return Err(Error::geom("conv2d: stride must be positive"));
    }
    let (h, w) = (input.height(), input.width());
    let padded_h = h + 2 * padding;
    let padded_w = w + 2 * padding;
    if padded_h < kh || padded_w < kw {
        return Err(Error::geom(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {padded_h}x{padded_w}"
        )));
    }
    let out_h = (padded_h - kh) / stride + 1;
    let out_w = (padded_w - kw) / stride + 1;

    let mut out = vec![0.0; out_h * out_w * c_out];
    let kdata = kernel.data();
    for oi in 0..out_h {
        for oj in 0..out_w {
            let acc = &mut out[(oi * out_w + oj) * c_out..(oi * out_w + oj + 1) * c_out];
            for a in 0..kh {
                let r = (oi * stride + a) as isize - padding as isize;
                if r < 0 || r as usize >= h {
                    continue;
                }
                for b in 0..kw {
                    let c = (oj * stride + b) as isize - padding as isize;
                    if c < 0 || c as usize >= w {
                        continue;
                    }
                    let px = input.cell(r as usize * w + c as usize);
                    let taps = &kdata[(a * kw + b) * c_in * c_out..(a * kw + b + 1) * c_in * c_out];
                    for (i, &x) in px.iter().enumerate() {
                        let row = &taps[i * c_out..(i + 1) * c_out];
                        for (o, &k) in row.iter().enumerate() {
                            acc[o] += x * k;
                        }
                    }
                }
            }
        }
    }
    FeatureMap::new(out_h, out_w, c_out, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Avg,
    Max,
}

/// Start (inclusive) and end (exclusive) of output cell `i`'s source window.
#[inline]
fn window(i: usize, src: usize, dst: usize) -> (usize, usize) {
    (i * src / dst, (i + 1) * src / dst)
}

/// Adaptive pooling with floor-partitioned windows
/// `[floor(i·H/h'), floor((i+1)·H/h'))`.
pub fn adaptive_pool(input: &FeatureMap, target_h: usize, target_w: usize, mode: PoolMode) -> Result<FeatureMap> {
    let (h, w, ch) = input.shape();
    if target_h == 0 || target_w == 0 || target_h > h || target_w > w {
        return Err(Error::geom(format!(
            "adaptive_pool: target {target_h}x{target_w} must be positive and fit within {h}x{w}"
        )));
    }
    let mut out = FeatureMap::zeros(target_h, target_w, ch);
    for i in 0..target_h {
        let (r0, r1) = window(i, h, target_h);
        for j in 0..target_w {
            let (c0, c1) = window(j, w, target_w);
            let cell = out.cell_mut(i * target_w + j);
            match mode {
                PoolMode::Avg => {
                    for r in r0..r1 {
                        for c in c0..c1 {
                            for (acc, &v) in cell.iter_mut().zip(input.cell(r * w + c)) {
                                *acc += v;
                            }
                        }
                    }
                    let area = ((r1 - r0) * (c1 - c0)) as f64;
                    cell.iter_mut().for_each(|v| *v /= area);
                }
                PoolMode::Max => {
                    cell.fill(f64::NEG_INFINITY);
                    for r in r0..r1 {
                        for c in c0..c1 {
                            for (acc, &v) in cell.iter_mut().zip(input.cell(r * w + c)) {
                                *acc = acc.max(v);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `ln(1 + e^x)`, stable for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Elementwise SiLU over any dense tensor.
pub fn silu_map<T: Dense + Clone>(x: &T) -> T {
    let mut out = x.clone();
    out.values_mut().iter_mut().for_each(|v| *v = silu(*v));
    out
}

/// Inverted dropout. In training mode each entry is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`; eval mode is the identity.
/// Each call consumes one stream of `rng`.
pub fn dropout(x: &TokenSequence, p: f64, rng: &mut SeededRng, training: bool) -> Result<TokenSequence> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::param(format!("dropout probability {p} not in [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mut stream = rng.next_stream();
    Ok(x.map(|v| if stream.gen::<f64>() < p { 0.0 } else { v * keep_scale }))
}

/// Applies `weight` (out × in) to every token: `y_t = W x_t`.
pub fn linear(tokens: &TokenSequence, weight: &Matrix) -> Result<TokenSequence> {
    if tokens.channels() != weight.cols() {
        return Err(Error::dim(format!(
            "linear: weight expects {} inputs, tokens have {} channels",
            weight.cols(),
            tokens.channels()
        )));
    }
    let mut out = TokenSequence::zeros(tokens.len(), weight.rows());
    for t in 0..tokens.len() {
        let x = tokens.row(t);
        for (r, y) in out.row_mut(t).iter_mut().enumerate() {
            *y = weight.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

/// Nearest-neighbour resize; source cell for output `(i, j)` is
/// `(floor(i·H/h'), floor(j·W/w'))`.
pub fn resize_nearest(input: &FeatureMap, height: usize, width: usize) -> Result<FeatureMap> {
    if height == 0 || width == 0 {
        return Err(Error::geom("resize_nearest: target dims must be positive"));
    }
    let (h, w, ch) = input.shape();
    let mut out = FeatureMap::zeros(height, width, ch);
    for i in 0..height {
        let r = i * h / height;
        for j in 0..width {
            let c = j * w / width;
            out.cell_mut(i * width + j).copy_from_slice(input.cell(r * w + c));
        }
    }
    Ok(out)
}

pub fn upsample_nearest2x(input: &FeatureMap) -> FeatureMap {
    resize_nearest(input, input.height() * 2, input.width() * 2).expect("doubled dims are positive")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_and_ones() {
        let x = FeatureMap::from_fn(4, 5, 3, |i, j, k| (i * 7 + j * 3 + k) as f64 * 0.5 - 2.0);
        let id = Kernel::centered_identity(1, 3);
        assert_eq!(conv2d(&x, &id, 1, 0).unwrap(), x);

        let ones = FeatureMap::filled(3, 3, 1, 1.0);
        let k = Kernel::from_fn(3, 3, 1, 1, |_, _, _, _| 1.0);
        let y = conv2d(&ones, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), (1, 1, 1));
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_output_size_and_errors() {
        let x = FeatureMap::zeros(7, 6, 2);
        let k = Kernel::zeros(3, 3, 2, 4);
        assert_eq!(conv2d(&x, &k, 2, 1).unwrap().shape(), (4, 3, 4));
        assert!(matches!(
            conv2d(&x, &Kernel::zeros(3, 3, 3, 1), 1, 0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            conv2d(&FeatureMap::zeros(2, 2, 2), &k, 1, 0),
            Err(Error::Geometry(_))
        ));
        assert!(conv2d(&x, &Kernel::zeros(2, 3, 2, 1), 1, 0).is_err());
    }

    #[test]
    fn pool_identity_constant_and_oversize() {
        let x = FeatureMap::from_fn(8, 8, 2, |i, j, k| (i * 8 + j) as f64 - k as f64 * 3.3);
        for mode in [PoolMode::Avg, PoolMode::Max] {
            assert_eq!(adaptive_pool(&x, 8, 8, mode).unwrap(), x);
            let c = adaptive_pool(&FeatureMap::filled(4, 4, 1, 2.5), 2, 2, mode).unwrap();
            assert!(c.data().iter().all(|&v| v == 2.5));
        }
        assert!(matches!(
            adaptive_pool(&x, 9, 8, PoolMode::Avg),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn pool_windows_cover_non_divisible_sizes() {
        // 5 -> 2 splits rows into [0,2) and [2,5).
        let x = FeatureMap::from_fn(5, 1, 1, |i, _, _| i as f64);
        let avg = adaptive_pool(&x, 2, 1, PoolMode::Avg).unwrap();
        assert_eq!(avg.data(), &[0.5, 3.0]);
        let max = adaptive_pool(&x, 2, 1, PoolMode::Max).unwrap();
        assert_eq!(max.data(), &[1.0, 4.0]);
    }

    #[test]
    fn silu_values() {
        assert_eq!(silu(0.0), 0.0);
        assert!(((silu(20.0) - 20.0) / 20.0).abs() < 1e-6);
        let e = 1.0_f64 / (1.0 + (-1.0_f64).exp());
        assert!((silu(1.0) - e).abs() < 1e-15);
        assert!((silu(1.0) - 0.731059).abs() < 1e-6);
        assert!(silu(-800.0).is_finite());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn dropout_modes() {
        let x = TokenSequence::from_fn(50, 2, |t, c| t as f64 + c as f64 + 1.0);
        let mut rng = SeededRng::new(3);
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, &mut rng, false).unwrap(), x);
        assert!(matches!(dropout(&x, 1.0, &mut rng, true), Err(Error::Parameter(_))));
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_fraction_and_scaling() {
        let x = TokenSequence::from_fn(100, 100, |t, c| (t * 100 + c) as f64 + 1.0);
        let mut rng = SeededRng::new(2024);
        let y = dropout(&x, 0.5, &mut rng, true).unwrap();
        let zeroed = y.data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeroed as f64 / 1e4;
        assert!((frac - 0.5).abs() <= 0.02, "zeroed fraction {frac}");
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!(*b == 0.0 || *b == 2.0 * a);
        }
    }

    #[test]
    fn nearest_upsample_replicates() {
        let x = FeatureMap::from_fn(2, 3, 1, |i, j, _| (i * 3 + j) as f64);
        let y = upsample_nearest2x(&x);
        assert_eq!(y.shape(), (4, 6, 1));
        assert_eq!(y.get(3, 5, 0), 5.0);
        assert_eq!(y.get(1, 1, 0), 0.0);
    }
}
