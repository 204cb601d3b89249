use super::{discretize_with, project, DiscreteSSMParams, SSMParams, ScanConfig, ScanMode};
use crate::error::{Error, Result};
use crate::tensors::TokenSequence;

/// Running total of scalar multiplications (each multiply-add counts once).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MulAddCount(pub u64);

/// Runs the discrete recurrence with state input `u` and skip input `v`,
/// starting from `h_0 = 0`.
pub fn recurrence(u: &TokenSequence, v: &TokenSequence, disc: &DiscreteSSMParams) -> Result<TokenSequence> {
    Ok(run(u, v, disc, &mut MulAddCount::default(), false)?.0)
}

/// Forward pass; optionally keeps every state `h_t` as `[t][c][n]` for the adjoint.
pub(crate) fn run(
    u: &TokenSequence,
    v: &TokenSequence,
    disc: &DiscreteSSMParams,
    count: &mut MulAddCount,
    keep_states: bool,
) -> Result<(TokenSequence, Vec<f64>)> {
    let (len, ch) = u.shape();
    if v.shape() != u.shape() {
        return Err(Error::dim(format!(
            "state input {:?} and skip input {:?} differ",
            u.shape(),
            v.shape()
        )));
    }
    if disc.len() != len || disc.channels() != ch {
        return Err(Error::dim(format!(
            "discrete parameters are {}x{}, inputs are {len}x{ch}",
            disc.len(),
            disc.channels()
        )));
    }
    let n = disc.state_dim();
    let mut h = vec![0.0; ch * n];
    let mut states = if keep_states {
        Vec::with_capacity(len * ch * n)
    } else {
        Vec::new()
    };
    let mut y = TokenSequence::zeros(len, ch);
    for t in 0..len {
        let a_bar = &disc.a_bar[t * n..(t + 1) * n];
        let b_bar = &disc.b_bar[t * n..(t + 1) * n];
        let c_t = &disc.c[t * n..(t + 1) * n];
        let (u_t, v_t) = (u.row(t), v.row(t));
        let y_t = y.row_mut(t);
        for c in 0..ch {
            let hc = &mut h[c * n..(c + 1) * n];
            let mut acc = 0.0;
            for k in 0..n {
                hc[k] = a_bar[k] * hc[k] + b_bar[k] * u_t[c];
                acc += c_t[k] * hc[k];
            }
            y_t[c] = acc + disc.d[c] * v_t[c];
        }
        count.0 += (ch * (3 * n + 1)) as u64;
        if keep_states {
            states.extend_from_slice(&h);
        }
    }
    Ok((y, states))
}

pub(crate) fn project_counted(
    tokens: &TokenSequence,
    params: &SSMParams,
    mode: ScanMode,
    count: &mut MulAddCount,
) -> Result<super::Projections> {
    let proj = project(tokens, params, mode)?;
    if mode == ScanMode::Selective {
        let (len, ch) = tokens.shape();
        count.0 += (len * ch * (2 * params.state_dim() + 1)) as u64;
    }
    Ok(proj)
}

/// Selective (or time-invariant) scan of one sequence:
/// `y_t = C_t h_t + D ⊙ x_t` with `h_t = Ā_t h_{t−1} + B̄_t x_t`.
pub fn s6_scan(x: &TokenSequence, params: &SSMParams, cfg: ScanConfig) -> Result<TokenSequence> {
    s6_scan_counted(x, params, cfg, &mut MulAddCount::default())
}

pub fn s6_scan_counted(
    x: &TokenSequence,
    params: &SSMParams,
    cfg: ScanConfig,
    count: &mut MulAddCount,
) -> Result<TokenSequence> {
    cs6_scan_counted(x, x, params, cfg, count)
}

/// Cross-modal scan: `x1` drives the state (and the selective projections),
/// `x2` drives the skip term.
pub fn cs6_scan(x1: &TokenSequence, x2: &TokenSequence, params: &SSMParams, cfg: ScanConfig) -> Result<TokenSequence> {
    cs6_scan_counted(x1, x2, params, cfg, &mut MulAddCount::default())
}

pub fn cs6_scan_counted(
    x1: &TokenSequence,
    x2: &TokenSequence,
    params: &SSMParams,
    cfg: ScanConfig,
    count: &mut MulAddCount,
) -> Result<TokenSequence> {
    if x1.shape() != x2.shape() {
        return Err(Error::dim(format!(
            "cs6_scan: inputs {:?} and {:?} differ",
            x1.shape(),
            x2.shape()
        )));
    }
    let proj = project_counted(x1, params, cfg.mode, count)?;
    let disc = discretize_with(&params.a, &params.d, &proj, cfg.rule, count)?;
    Ok(run(x1, x2, &disc, count, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::SeededRng;

    #[test]
    fn cumulative_sum_configuration() {
        let len = 10;
        let x = TokenSequence::from_fn(len, 1, |t, _| (t as f64) * 0.5 - 1.0);
        let disc = DiscreteSSMParams::time_invariant(len, &[1.0], &[1.0], &[1.0], &[0.0]).unwrap();
        let y = recurrence(&x, &x, &disc).unwrap();
        let mut acc = 0.0;
        for t in 0..len {
            acc += x.get(t, 0);
            assert_eq!(y.get(t, 0), acc);
        }
    }

    #[test]
    fn skip_only_when_readout_is_zero() {
        let mut rng = SeededRng::new(8);
        let mut p = SSMParams::init(2, 3, &mut rng);
        p.c_proj = crate::tensors::Matrix::zeros(3, 2);
        p.d = vec![0.7, -1.3];
        let x = TokenSequence::new(6, 2, rng.uniform_vec(12, -1.0, 1.0)).unwrap();
        let y = s6_scan(&x, &p, ScanConfig::selective()).unwrap();
        for t in 0..6 {
            for c in 0..2 {
                assert_eq!(y.get(t, c), p.d[c] * x.get(t, c));
            }
        }
    }

    #[test]
    fn cs6_rejects_shape_mismatch() {
        let p = SSMParams::zeros(2, 2);
        let r = cs6_scan(&TokenSequence::zeros(3, 2), &TokenSequence::zeros(4, 2), &p, ScanConfig::selective());
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn count_is_linear_in_length() {
        let mut rng = SeededRng::new(1);
        let p = SSMParams::init(3, 4, &mut rng);
        for cfg in [ScanConfig::selective(), ScanConfig::time_invariant()] {
            let mut c1 = MulAddCount::default();
            let mut c2 = MulAddCount::default();
            s6_scan_counted(&TokenSequence::zeros(7, 3), &p, cfg, &mut c1).unwrap();
            s6_scan_counted(&TokenSequence::zeros(14, 3), &p, cfg, &mut c2).unwrap();
            assert_eq!(c2.0, 2 * c1.0);
        }
    }
}
