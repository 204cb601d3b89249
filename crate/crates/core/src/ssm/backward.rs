//! Reverse-mode adjoints of the recurrence, the discretization and the
//! selective projections.

use super::scan::run;
use super::{
    discretize_with, project, BbarRule, DiscreteSSMParams, MulAddCount, SSMParams, ScanConfig, ScanMode,
};
use crate::error::{Error, Result};
use crate::tensors::{sigmoid, TokenSequence};

/// Gradient container with the same layout as [`SSMParams`]; values are unconstrained.
pub type SSMParamGrads = SSMParams;

fn zeroed_like(p: &SSMParams) -> SSMParamGrads {
    let mut g = p.clone();
    g.set_flat_values(&vec![0.0; p.flat_values().len()]);
    g
}

/// Gradients w.r.t. the recurrence inputs and discrete parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGrads {
    pub du: TokenSequence,
    pub dv: TokenSequence,
    /// `L × N`.
    pub da_bar: Vec<f64>,
    /// `L × N`.
    pub db_bar: Vec<f64>,
    /// `L × N`.
    pub dc: Vec<f64>,
    /// Length `C`.
    pub dd: Vec<f64>,
}

/// Adjoint of [`recurrence`](super::recurrence) for the loss `Σ upstream ⊙ y`.
pub fn recurrence_backward(
    u: &TokenSequence,
    v: &TokenSequence,
    disc: &DiscreteSSMParams,
    upstream: &TokenSequence,
) -> Result<DiscreteGrads> {
    if upstream.shape() != u.shape() {
        return Err(Error::dim(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.shape(),
            u.shape()
        )));
    }
    let (_, states) = run(u, v, disc, &mut MulAddCount::default(), true)?;
    let (len, ch) = u.shape();
    let n = disc.state_dim();
    let mut g = DiscreteGrads {
        du: TokenSequence::zeros(len, ch),
        dv: TokenSequence::zeros(len, ch),
        da_bar: vec![0.0; len * n],
        db_bar: vec![0.0; len * n],
        dc: vec![0.0; len * n],
        dd: vec![0.0; ch],
    };
    // dh carries ∂loss/∂h_t; on entry to step t it holds Ā_{t+1} ⊙ ∂loss/∂h_{t+1}.
    let mut dh = vec![0.0; ch * n];
    for t in (0..len).rev() {
        let gy = upstream.row(t);
        let h_t = &states[t * ch * n..(t + 1) * ch * n];
        let h_prev = (t > 0).then(|| &states[(t - 1) * ch * n..t * ch * n]);
        let row = t * n..(t + 1) * n;
        let (a_bar, b_bar, c_t) = (&disc.a_bar[row.clone()], &disc.b_bar[row.clone()], &disc.c[row.clone()]);
        for c in 0..ch {
            g.dd[c] += gy[c] * v.get(t, c);
            g.dv.set(t, c, gy[c] * disc.d[c]);
            let mut du = 0.0;
            for k in 0..n {
                let i = c * n + k;
                g.dc[t * n + k] += gy[c] * h_t[i];
                dh[i] += gy[c] * c_t[k];
                if let Some(hp) = h_prev {
                    g.da_bar[t * n + k] += dh[i] * hp[i];
                }
                g.db_bar[t * n + k] += dh[i] * u.get(t, c);
                du += dh[i] * b_bar[k];
                dh[i] *= a_bar[k];
            }
            g.du.set(t, c, du);
        }
    }
    Ok(g)
}

/// Gradients of a single-sequence scan.
#[derive(Debug, Clone, PartialEq)]
pub struct S6Grads {
    pub dx: TokenSequence,
    pub params: SSMParamGrads,
}

/// Gradients of a cross-modal scan.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossGrads {
    pub dx1: TokenSequence,
    pub dx2: TokenSequence,
    pub params: SSMParamGrads,
}

/// Adjoint of [`s6_scan`](super::s6_scan) for the loss `Σ upstream ⊙ y`.
pub fn s6_backward(
    x: &TokenSequence,
    params: &SSMParams,
    cfg: ScanConfig,
    upstream: &TokenSequence,
) -> Result<S6Grads> {
    let g = cs6_backward(x, x, params, cfg, upstream)?;
    Ok(S6Grads {
        dx: g.dx1.add(&g.dx2)?,
        params: g.params,
    })
}

/// Adjoint of [`cs6_scan`](super::cs6_scan).
pub fn cs6_backward(
    x1: &TokenSequence,
    x2: &TokenSequence,
    params: &SSMParams,
    cfg: ScanConfig,
    upstream: &TokenSequence,
) -> Result<CrossGrads> {
    if x1.shape() != x2.shape() {
        return Err(Error::dim("cs6_backward: input shapes differ"));
    }
    let proj = project(x1, params, cfg.mode)?;
    let disc = discretize_with(&params.a, &params.d, &proj, cfg.rule, &mut MulAddCount::default())?;
    let dg = recurrence_backward(x1, x2, &disc, upstream)?;

    let (len, ch) = x1.shape();
    let n = params.state_dim();
    let mut grads = zeroed_like(params);
    grads.d = dg.dd.clone();

    let mut d_delta = vec![0.0; len];
    let mut d_b = vec![0.0; len * n];
    for t in 0..len {
        let dt = proj.delta[t];
        for k in 0..n {
            let i = t * n + k;
            let a = params.a[k];
            let a_bar = disc.a_bar[i];
            d_delta[t] += dg.da_bar[i] * a_bar * a;
            grads.a[k] += dg.da_bar[i] * a_bar * dt;
            let b = proj.b[i];
            match cfg.rule {
                BbarRule::Exact if a != 0.0 => {
                    let em1 = (dt * a).exp_m1();
                    d_b[i] = dg.db_bar[i] * em1 / a;
                    d_delta[t] += dg.db_bar[i] * b * a_bar;
                    grads.a[k] += dg.db_bar[i] * b * (dt * a_bar * a - em1) / (a * a);
                }
                _ => {
                    d_b[i] = dg.db_bar[i] * dt;
                    d_delta[t] += dg.db_bar[i] * b;
                }
            }
        }
    }

    let mut dx1 = dg.du;
    match cfg.mode {
        ScanMode::TimeInvariant => {
            grads.fixed.delta = d_delta.iter().sum();
            for t in 0..len {
                for k in 0..n {
                    grads.fixed.b[k] += d_b[t * n + k];
                    grads.fixed.c[k] += dg.dc[t * n + k];
                }
            }
        }
        ScanMode::Selective => {
            for t in 0..len {
                let x = x1.row(t).to_vec();
                let z: f64 =
                    params.delta_proj.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + params.delta_bias;
                let dz = d_delta[t] * sigmoid(z);
                grads.delta_bias += dz;
                let dx_row = dx1.row_mut(t);
                for c in 0..ch {
                    grads.delta_proj[c] += dz * x[c];
                    dx_row[c] += dz * params.delta_proj[c];
                }
                for k in 0..n {
                    let (db, dc) = (d_b[t * n + k], dg.dc[t * n + k]);
                    let gb = &mut grads.b_proj.data_mut()[k * ch..(k + 1) * ch];
                    for c in 0..ch {
                        gb[c] += db * x[c];
                    }
                    let gc = &mut grads.c_proj.data_mut()[k * ch..(k + 1) * ch];
                    for c in 0..ch {
                        gc[c] += dc * x[c];
                    }
                    for c in 0..ch {
                        dx_row[c] += db * params.b_proj.get(k, c) + dc * params.c_proj.get(k, c);
                    }
                }
            }
        }
    }
    Ok(CrossGrads {
        dx1,
        dx2: dg.dv,
        params: grads,
    })
}
