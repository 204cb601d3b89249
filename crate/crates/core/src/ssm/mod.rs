//! Diagonal state-space core.
//!
//! Each channel `c` carries its own `N`-dimensional state. Per token `t`:
//!
//! ```text
//! Ā_t = exp(Δ_t · A)            (diagonal, elementwise)
//! B̄_t = Δ_t · B_t               (or the exact hold, see BbarRule)
//! h_t[c] = Ā_t ⊙ h_{t-1}[c] + B̄_t · u_t[c]
//! y_t[c] = ⟨C_t, h_t[c]⟩ + D[c] · v_t[c]
//! ```
//!
//! `u` drives the state and `v` drives the skip term. The single-modality
//! scan uses `u = v = x`; the cross-modal scan takes them from different
//! modalities. In selective mode `Δ_t, B_t, C_t` are projected from `u_t`;
//! in time-invariant mode they are fixed vectors stored in the parameters.

mod backward;
mod scan;

pub use backward::{
    cs6_backward, recurrence_backward, s6_backward, CrossGrads, DiscreteGrads, S6Grads,
    SSMParamGrads,
};
pub use scan::{cs6_scan, cs6_scan_counted, recurrence, s6_scan, s6_scan_counted, MulAddCount};

use serde::{Deserialize, Serialize};

use crate::bundle::TensorBundle;
use crate::error::{Error, Result};
use crate::tensors::{softplus, Matrix, SeededRng, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    #[default]
    Selective,
    TimeInvariant,
}

/// How the input matrix is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BbarRule {
    /// `B̄ = Δ·B`.
    #[default]
    Approx,
    /// `B̄ = (ΔA)⁻¹(exp(ΔA) − I)·ΔB`, which for diagonal `A` is `B·expm1(ΔA)/A`.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default)]
    pub mode: ScanMode,
    #[serde(default)]
    pub rule: BbarRule,
}

impl ScanConfig {
    pub fn selective() -> Self {
        Self::default()
    }

    pub fn time_invariant() -> Self {
        Self {
            mode: ScanMode::TimeInvariant,
            rule: BbarRule::Approx,
        }
    }
}

/// Timescale, input map and readout shared by every token in time-invariant mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedProjection {
    pub delta: f64,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Continuous parameters for one scan direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SSMParams {
    /// Diagonal of `A`, length `N`, strictly negative.
    pub a: Vec<f64>,
    /// `N × C`.
    pub b_proj: Matrix,
    /// `N × C`.
    pub c_proj: Matrix,
    /// Length `C`; `Δ_t = softplus(⟨delta_proj, x_t⟩ + delta_bias)`.
    pub delta_proj: Vec<f64>,
    pub delta_bias: f64,
    /// Skip weights, length `C`.
    pub d: Vec<f64>,
    pub fixed: FixedProjection,
}

/// Range the initial timescale `softplus(delta_bias)` is drawn from.
pub const DELTA_INIT_RANGE: (f64, f64) = (0.01, 0.1);

impl SSMParams {
    /// Seeded initialization: `A = −(1, 2, …, N)`, projections uniform in
    /// `±1/√C`, `D = 1`, and `delta_bias` such that `softplus(delta_bias)` is
    /// log-uniform in [`DELTA_INIT_RANGE`].
    pub fn init(channels: usize, state_dim: usize, rng: &mut SeededRng) -> Self {
        assert!(channels > 0 && state_dim > 0);
        let bound = 1.0 / (channels as f64).sqrt();
        let mut draw = |n: usize| rng.uniform_vec(n, -bound, bound);
        let b_proj = Matrix::new(state_dim, channels, draw(state_dim * channels)).expect("shape");
        let c_proj = Matrix::new(state_dim, channels, draw(state_dim * channels)).expect("shape");
        let delta_proj = draw(channels);
        let fixed_b = draw(state_dim);
        let fixed_c = draw(state_dim);
        let (lo, hi) = DELTA_INIT_RANGE;
        let u = rng.uniform_vec(1, 0.0, 1.0)[0];
        let delta0 = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
        Self {
            a: (1..=state_dim).map(|k| -(k as f64)).collect(),
            b_proj,
            c_proj,
            delta_proj,
            delta_bias: inverse_softplus(delta0),
            d: vec![1.0; channels],
            fixed: FixedProjection {
                delta: delta0,
                b: fixed_b,
                c: fixed_c,
            },
        }
    }

    /// All-zero projections and skip, `A = −(1..N)`, `Δ = ln 2` everywhere.
    pub fn zeros(channels: usize, state_dim: usize) -> Self {
        Self {
            a: (1..=state_dim).map(|k| -(k as f64)).collect(),
            b_proj: Matrix::zeros(state_dim, channels),
            c_proj: Matrix::zeros(state_dim, channels),
            delta_proj: vec![0.0; channels],
            delta_bias: 0.0,
            d: vec![0.0; channels],
            fixed: FixedProjection {
                delta: std::f64::consts::LN_2,
                b: vec![0.0; state_dim],
                c: vec![0.0; state_dim],
            },
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.len()
    }

    pub fn channels(&self) -> usize {
        self.d.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c) = (self.state_dim(), self.channels());
        if n == 0 || c == 0 {
            return Err(Error::dim("state and channel dims must be positive"));
        }
        if let Some(a) = self.a.iter().find(|&&a| !(a < 0.0)) {
            return Err(Error::param(format!("A entries must be strictly negative, got {a}")));
        }
        for (name, m) in [("b_proj", &self.b_proj), ("c_proj", &self.c_proj)] {
            if m.rows() != n || m.cols() != c {
                return Err(Error::dim(format!(
                    "{name} is {}x{}, expected {n}x{c}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if self.delta_proj.len() != c {
            return Err(Error::dim(format!(
                "delta_proj has {} entries, expected {c}",
                self.delta_proj.len()
            )));
        }
        if self.fixed.b.len() != n || self.fixed.c.len() != n {
            return Err(Error::dim("fixed projection vectors must have length N"));
        }
        if !(self.fixed.delta > 0.0) {
            return Err(Error::param(format!(
                "fixed timescale must be positive, got {}",
                self.fixed.delta
            )));
        }
        if !self.flat_values().iter().all(|v| v.is_finite()) {
            return Err(Error::param("parameters must be finite"));
        }
        Ok(())
    }

    /// Flattens every trainable value in a fixed order:
    /// `a, b_proj, c_proj, delta_proj, delta_bias, d, fixed.delta, fixed.b, fixed.c`.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.a);
        v.extend_from_slice(self.b_proj.data());
        v.extend_from_slice(self.c_proj.data());
        v.extend_from_slice(&self.delta_proj);
        v.push(self.delta_bias);
        v.extend_from_slice(&self.d);
        v.push(self.fixed.delta);
        v.extend_from_slice(&self.fixed.b);
        v.extend_from_slice(&self.fixed.c);
        v
    }

    /// Inverse of [`flat_values`](Self::flat_values) for a parameter set of the same shape.
    pub fn set_flat_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.flat_values().len(), "flat length");
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        fill(&mut self.a);
        fill(self.b_proj.data_mut());
        fill(self.c_proj.data_mut());
        fill(&mut self.delta_proj);
        fill(std::slice::from_mut(&mut self.delta_bias));
        fill(&mut self.d);
        fill(std::slice::from_mut(&mut self.fixed.delta));
        fill(&mut self.fixed.b);
        fill(&mut self.fixed.c);
    }

    pub fn write_bundle(&self, prefix: &str, out: &mut TensorBundle) {
        out.push_vector(format!("{prefix}.a"), &self.a);
        out.push_matrix(format!("{prefix}.b_proj"), &self.b_proj);
        out.push_matrix(format!("{prefix}.c_proj"), &self.c_proj);
        out.push_vector(format!("{prefix}.delta_proj"), &self.delta_proj);
        out.push_scalar(format!("{prefix}.delta_bias"), self.delta_bias);
        out.push_vector(format!("{prefix}.d"), &self.d);
        out.push_scalar(format!("{prefix}.fixed_delta"), self.fixed.delta);
        out.push_vector(format!("{prefix}.fixed_b"), &self.fixed.b);
        out.push_vector(format!("{prefix}.fixed_c"), &self.fixed.c);
    }

    pub fn read_bundle(bundle: &TensorBundle, prefix: &str) -> Result<Self> {
        let p = Self {
            a: bundle.vector(&format!("{prefix}.a"))?,
            b_proj: bundle.matrix(&format!("{prefix}.b_proj"))?,
            c_proj: bundle.matrix(&format!("{prefix}.c_proj"))?,
            delta_proj: bundle.vector(&format!("{prefix}.delta_proj"))?,
            delta_bias: bundle.scalar(&format!("{prefix}.delta_bias"))?,
            d: bundle.vector(&format!("{prefix}.d"))?,
            fixed: FixedProjection {
                delta: bundle.scalar(&format!("{prefix}.fixed_delta"))?,
                b: bundle.vector(&format!("{prefix}.fixed_b"))?,
                c: bundle.vector(&format!("{prefix}.fixed_c"))?,
            },
        };
        p.validate()?;
        Ok(p)
    }
}

/// `x` with `softplus(x) = y`, for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    assert!(y > 0.0);
    y + (-(-y).exp_m1()).ln()
}

/// Per-token timescale, input map and readout.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub state_dim: usize,
    /// Length `L`.
    pub delta: Vec<f64>,
    /// `L × N`, row-major.
    pub b: Vec<f64>,
    /// `L × N`, row-major.
    pub c: Vec<f64>,
}

impl Projections {
    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }
}

/// `Δ_t = softplus(⟨delta_proj, x_t⟩ + delta_bias)`, `B_t = B_proj x_t`, `C_t = C_proj x_t`.
pub fn selective_project(tokens: &TokenSequence, params: &SSMParams) -> Result<Projections> {
    if tokens.channels() != params.channels() || params.b_proj.cols() != tokens.channels() {
        return Err(Error::dim(format!(
            "selective_project: tokens have {} channels, parameters expect {}",
            tokens.channels(),
            params.channels()
        )));
    }
    let n = params.state_dim();
    let len = tokens.len();
    let mut proj = Projections {
        state_dim: n,
        delta: Vec::with_capacity(len),
        b: Vec::with_capacity(len * n),
        c: Vec::with_capacity(len * n),
    };
    for t in 0..len {
        let x = tokens.row(t);
        let z: f64 = params.delta_proj.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params.delta_bias;
        proj.delta.push(softplus(z));
        proj.b.extend(params.b_proj.matvec(x)?);
        proj.c.extend(params.c_proj.matvec(x)?);
    }
    Ok(proj)
}

/// The time-invariant projections repeated for `len` tokens.
pub fn fixed_projections(params: &SSMParams, len: usize) -> Projections {
    let n = params.state_dim();
    Projections {
        state_dim: n,
        delta: vec![params.fixed.delta; len],
        b: params.fixed.b.iter().copied().cycle().take(len * n).collect(),
        c: params.fixed.c.iter().copied().cycle().take(len * n).collect(),
    }
}

pub fn project(tokens: &TokenSequence, params: &SSMParams, mode: ScanMode) -> Result<Projections> {
    match mode {
        ScanMode::Selective => selective_project(tokens, params),
        ScanMode::TimeInvariant => {
            if tokens.channels() != params.channels() {
                return Err(Error::dim(format!(
                    "tokens have {} channels, parameters expect {}",
                    tokens.channels(),
                    params.channels()
                )));
            }
            Ok(fixed_projections(params, tokens.len()))
        }
    }
}

/// Per-token discrete parameters. Arrays indexed `[t * N + n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSSMParams {
    len: usize,
    state_dim: usize,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl DiscreteSSMParams {
    /// Builds discrete parameters directly, e.g. to encode limits such as `Ā = 1`
    /// that no finite `(Δ, A)` pair reaches.
    pub fn new(
        len: usize,
        state_dim: usize,
        a_bar: Vec<f64>,
        b_bar: Vec<f64>,
        c: Vec<f64>,
        d: Vec<f64>,
    ) -> Result<Self> {
        if len == 0 || state_dim == 0 || d.is_empty() {
            return Err(Error::dim("discrete parameters need positive dims"));
        }
        for (name, v) in [("a_bar", &a_bar), ("b_bar", &b_bar), ("c", &c)] {
            if v.len() != len * state_dim {
                return Err(Error::dim(format!(
                    "{name} has {} entries, expected {}",
                    v.len(),
                    len * state_dim
                )));
            }
        }
        Ok(Self {
            len,
            state_dim,
            a_bar,
            b_bar,
            c,
            d,
        })
    }

    /// Same discrete values at every step.
    pub fn time_invariant(len: usize, a_bar: &[f64], b_bar: &[f64], c: &[f64], d: &[f64]) -> Result<Self> {
        let rep = |v: &[f64]| v.iter().copied().cycle().take(len * v.len()).collect::<Vec<_>>();
        if a_bar.len() != b_bar.len() || a_bar.len() != c.len() {
            return Err(Error::dim("a_bar, b_bar and c must share the state dim"));
        }
        Self::new(len, a_bar.len(), rep(a_bar), rep(b_bar), rep(c), d.to_vec())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn channels(&self) -> usize {
        self.d.len()
    }
}

/// Zero-order-hold discretization: `Ā = exp(Δ·A)` and `B̄` per `rule`.
pub fn zoh_discretize(params: &SSMParams, proj: &Projections, rule: BbarRule) -> Result<DiscreteSSMParams> {
    discretize_with(&params.a, &params.d, proj, rule, &mut MulAddCount::default())
}

pub(crate) fn discretize_with(
    a: &[f64],
    d: &[f64],
    proj: &Projections,
    rule: BbarRule,
    count: &mut MulAddCount,
) -> Result<DiscreteSSMParams> {
    let n = a.len();
    if proj.state_dim != n || proj.b.len() != proj.len() * n || proj.c.len() != proj.len() * n {
        return Err(Error::dim("projection state dim does not match A"));
    }
    if let Some(bad) = proj.delta.iter().find(|&&dt| !(dt > 0.0)) {
        return Err(Error::param(format!("timescale must be positive, got {bad}")));
    }
    let len = proj.len();
    let mut a_bar = Vec::with_capacity(len * n);
    let mut b_bar = Vec::with_capacity(len * n);
    for t in 0..len {
        let dt = proj.delta[t];
        for k in 0..n {
            let da = dt * a[k];
            a_bar.push(da.exp());
            let b = proj.b[t * n + k];
            b_bar.push(match rule {
                BbarRule::Approx => dt * b,
                BbarRule::Exact if a[k] == 0.0 => dt * b,
                BbarRule::Exact => b * da.exp_m1() / a[k],
            });
        }
        count.0 += 2 * n as u64;
    }
    DiscreteSSMParams::new(len, n, a_bar, b_bar, proj.c.clone(), d.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: usize, n: usize, seed: u64) -> SSMParams {
        SSMParams::init(c, n, &mut SeededRng::new(seed))
    }

    #[test]
    fn init_is_valid_and_in_delta_range() {
        let p = params(3, 4, 1);
        p.validate().unwrap();
        assert_eq!(p.a, vec![-1.0, -2.0, -3.0, -4.0]);
        let d0 = softplus(p.delta_bias);
        assert!((0.01..=0.1).contains(&d0), "{d0}");
        assert!((d0 - p.fixed.delta).abs() < 1e-15);
    }

    #[test]
    fn validate_rejects_non_negative_a() {
        let mut p = params(2, 3, 2);
        p.a[1] = 0.0;
        assert!(matches!(p.validate(), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_token_gives_ln2_timescale() {
        let mut p = params(3, 2, 3);
        p.delta_bias = 0.0;
        let proj = selective_project(&TokenSequence::zeros(1, 3), &p).unwrap();
        assert!((proj.delta[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(proj.delta[0], std::f64::consts::LN_2);
    }

    #[test]
    fn zero_projections_give_zero_maps() {
        let p = SSMParams::zeros(2, 3);
        let x = TokenSequence::from_fn(5, 2, |t, c| t as f64 - c as f64);
        let proj = selective_project(&x, &p).unwrap();
        assert!(proj.b.iter().chain(&proj.c).all(|&v| v == 0.0));
    }

    #[test]
    fn projection_dimension_mismatch() {
        let p = params(3, 2, 4);
        assert!(matches!(
            selective_project(&TokenSequence::zeros(2, 4), &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn discretize_analytic_half_and_limit() {
        let mut p = SSMParams::zeros(1, 1);
        p.a = vec![-1.0];
        let proj = Projections {
            state_dim: 1,
            delta: vec![std::f64::consts::LN_2, 1e-300],
            b: vec![3.0, 3.0],
            c: vec![1.0, 1.0],
        };
        let disc = zoh_discretize(&p, &proj, BbarRule::Approx).unwrap();
        assert_eq!(disc.a_bar[0], 0.5);
        assert_eq!(disc.a_bar[1], 1.0);
        assert!(disc.b_bar[1].abs() < 1e-299);
    }

    #[test]
    fn discretize_rejects_non_positive_delta() {
        let p = SSMParams::zeros(1, 1);
        let proj = Projections {
            state_dim: 1,
            delta: vec![0.0],
            b: vec![0.0],
            c: vec![0.0],
        };
        assert!(matches!(
            zoh_discretize(&p, &proj, BbarRule::Approx),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn exact_rule_approaches_approx_for_small_delta() {
        let p = params(1, 4, 5);
        let proj = Projections {
            state_dim: 4,
            delta: vec![1e-7],
            b: vec![1.0, -2.0, 0.5, 3.0],
            c: vec![0.0; 4],
        };
        let ex = zoh_discretize(&p, &proj, BbarRule::Exact).unwrap();
        let ap = zoh_discretize(&p, &proj, BbarRule::Approx).unwrap();
        // Relative gap is ΔA/2 to leading order.
        for ((e, a), ak) in ex.b_bar.iter().zip(&ap.b_bar).zip(&p.a) {
            let rel = (e - a).abs() / a.abs();
            assert!((rel - 0.5e-7 * ak.abs()).abs() < 1e-12, "{rel}");
        }
    }

    #[test]
    fn inverse_softplus_round_trips() {
        for y in [1e-4, 0.01, 0.05, 0.1, 1.0, 30.0] {
            assert!((softplus(inverse_softplus(y)) - y).abs() <= 1e-14 * y.max(1.0));
        }
    }

    #[test]
    fn flat_values_round_trip() {
        let p = params(3, 2, 9);
        let mut q = SSMParams::zeros(3, 2);
        q.set_flat_values(&p.flat_values());
        assert_eq!(p, q);
    }

    #[test]
    fn bundle_round_trip() {
        let p = params(3, 4, 11);
        let mut b = TensorBundle::new();
        p.write_bundle("dir0", &mut b);
        let back = SSMParams::read_bundle(&TensorBundle::from_bytes(&b.to_bytes()).unwrap(), "dir0").unwrap();
        assert_eq!(back, p);
    }
}
