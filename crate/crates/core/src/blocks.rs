//! Single-modality and cross-modal scan blocks and their stack.
//!
//! Single block: `F_in = avgpool(S) + maxpool(S)` onto the token grid, a
//! two-layer SiLU MLP with dropout, a positional embedding, four global scans
//! each through its own selective scan, reverse scans merged by summation,
//! and `F_in` added back as a shortcut.
//!
//! Cross block: both modalities are scanned along six directions (four
//! global, two local). For output 1 the second modality drives the state and
//! the first drives the skip term; output 2 swaps the roles.

use serde::{Deserialize, Serialize};

use crate::bundle::TensorBundle;
use crate::error::{Error, Result};
use crate::scanpaths::{apply_scan, check_window, merge_directions, reverse_scan, ScanDirection, ScanPlan};
use crate::ssm::{cs6_scan, s6_backward, s6_scan, SSMParams, ScanConfig};
use crate::tensors::{
    adaptive_pool, dropout, linear, sigmoid, silu_map, FeatureMap, Matrix, PoolMode, SeededRng, TokenSequence,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockConfig {
    /// Token grid `(H', W')` after adaptive pooling.
    pub target_grid: (usize, usize),
    pub channels: usize,
    /// MLP width; `2 × channels` when absent.
    pub hidden: Option<usize>,
    pub state_dim: usize,
    pub dropout: f64,
    /// Single blocks stacked per modality before the cross block.
    pub n_single: usize,
    /// Local scan window `(w_h, w_w)`.
    pub local_window: (usize, usize),
    pub scan: ScanConfig,
    /// Use one parameter set for every scan direction instead of one per direction.
    pub share_direction_params: bool,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            target_grid: (8, 8),
            channels: 64,
            hidden: None,
            state_dim: 16,
            dropout: 0.1,
            n_single: 3,
            local_window: (2, 2),
            scan: ScanConfig::default(),
            share_direction_params: false,
        }
    }
}

impl BlockConfig {
    pub fn hidden(&self) -> usize {
        self.hidden.unwrap_or(self.channels.saturating_mul(2))
    }

    pub fn tokens(&self) -> usize {
        self.target_grid.0 * self.target_grid.1
    }

    /// Validates every field; errors carry the field path under `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| format!("{prefix}.{name}");
        let (h, w) = self.target_grid;
        if h == 0 || w == 0 {
            return Err(Error::config(f("target_grid"), "must be positive"));
        }
        for (name, v) in [("channels", self.channels), ("state_dim", self.state_dim), ("hidden", self.hidden())] {
            if v == 0 {
                return Err(Error::config(f(name), "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(f("dropout"), format!("{} not in [0, 1)", self.dropout)));
        }
        check_window(h, w, self.local_window).map_err(|e| Error::config(f("local_window"), e.to_string()))?;
        Ok(())
    }
}

/// Weights of the `C → h → C` mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    /// `h × C`.
    pub up: Matrix,
    /// `C × h`.
    pub down: Matrix,
}

impl MlpWeights {
    pub fn init(channels: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let b_up = 1.0 / (channels as f64).sqrt();
        let b_down = 1.0 / (hidden as f64).sqrt();
        Self {
            up: Matrix::new(hidden, channels, rng.uniform_vec(hidden * channels, -b_up, b_up)).expect("shape"),
            down: Matrix::new(channels, hidden, rng.uniform_vec(hidden * channels, -b_down, b_down))
                .expect("shape"),
        }
    }
}

/// Learnable `L × C` positional embedding added to the flattened tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEmbedding {
    pub values: TokenSequence,
}

impl PositionalEmbedding {
    pub const INIT_BOUND: f64 = 0.02;

    pub fn init(len: usize, channels: usize, rng: &mut SeededRng) -> Self {
        let b = Self::INIT_BOUND;
        Self {
            values: TokenSequence::new(len, channels, rng.uniform_vec(len * channels, -b, b)).expect("shape"),
        }
    }

    pub fn zeros(len: usize, channels: usize) -> Self {
        Self {
            values: TokenSequence::zeros(len, channels),
        }
    }
}

fn direction_params(count: usize, cfg: &BlockConfig, rng: &mut SeededRng) -> Vec<SSMParams> {
    if cfg.share_direction_params {
        let p = SSMParams::init(cfg.channels, cfg.state_dim, rng);
        vec![p; count]
    } else {
        (0..count).map(|_| SSMParams::init(cfg.channels, cfg.state_dim, rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleBlockParams {
    pub mlp: MlpWeights,
    pub pos: PositionalEmbedding,
    /// One per global direction, in [`ScanDirection::GLOBAL`] order.
    pub ssm: Vec<SSMParams>,
}

impl SingleBlockParams {
    pub fn init(cfg: &BlockConfig, rng: &mut SeededRng) -> Self {
        Self {
            mlp: MlpWeights::init(cfg.channels, cfg.hidden(), rng),
            pos: PositionalEmbedding::init(cfg.tokens(), cfg.channels, rng),
            ssm: direction_params(ScanDirection::GLOBAL.len(), cfg, rng),
        }
    }

    pub fn write_bundle(&self, prefix: &str, out: &mut TensorBundle) {
        out.push_matrix(format!("{prefix}.mlp.up"), &self.mlp.up);
        out.push_matrix(format!("{prefix}.mlp.down"), &self.mlp.down);
        let (l, c) = self.pos.values.shape();
        out.push(format!("{prefix}.pos"), vec![l, c], self.pos.values.data().to_vec());
        for (i, p) in self.ssm.iter().enumerate() {
            p.write_bundle(&format!("{prefix}.ssm{i}"), out);
        }
    }

    pub fn read_bundle(bundle: &TensorBundle, prefix: &str) -> Result<Self> {
        let pos = bundle.matrix(&format!("{prefix}.pos"))?;
        Ok(Self {
            mlp: MlpWeights {
                up: bundle.matrix(&format!("{prefix}.mlp.up"))?,
                down: bundle.matrix(&format!("{prefix}.mlp.down"))?,
            },
            pos: PositionalEmbedding {
                values: TokenSequence::new(pos.rows(), pos.cols(), pos.data().to_vec())?,
            },
            ssm: (0..ScanDirection::GLOBAL.len())
                .map(|i| SSMParams::read_bundle(bundle, &format!("{prefix}.ssm{i}")))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossBlockParams {
    /// Scans producing the first output, in [`ScanDirection::CROSS`] order.
    pub first: Vec<SSMParams>,
    /// Scans producing the second output.
    pub second: Vec<SSMParams>,
}

impl CrossBlockParams {
    pub fn init(cfg: &BlockConfig, rng: &mut SeededRng) -> Self {
        Self {
            first: direction_params(ScanDirection::CROSS.len(), cfg, rng),
            second: direction_params(ScanDirection::CROSS.len(), cfg, rng),
        }
    }

    /// Same parameters for both outputs.
    pub fn shared(cfg: &BlockConfig, rng: &mut SeededRng) -> Self {
        let first = direction_params(ScanDirection::CROSS.len(), cfg, rng);
        Self {
            second: first.clone(),
            first,
        }
    }

    pub fn write_bundle(&self, prefix: &str, out: &mut TensorBundle) {
        for (i, p) in self.first.iter().enumerate() {
            p.write_bundle(&format!("{prefix}.first{i}"), out);
        }
        for (i, p) in self.second.iter().enumerate() {
            p.write_bundle(&format!("{prefix}.second{i}"), out);
        }
    }

    pub fn read_bundle(bundle: &TensorBundle, prefix: &str) -> Result<Self> {
        let read = |side: &str| {
            (0..ScanDirection::CROSS.len())
                .map(|i| SSMParams::read_bundle(bundle, &format!("{prefix}.{side}{i}")))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            first: read("first")?,
            second: read("second")?,
        })
    }
}

/// Parameters of the full interaction stack.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionParams {
    pub rgb: Vec<SingleBlockParams>,
    pub ir: Vec<SingleBlockParams>,
    pub cross: CrossBlockParams,
}

impl InteractionParams {
    /// Separate positional embeddings and scan parameters per modality.
    pub fn init(cfg: &BlockConfig, rng: &mut SeededRng) -> Self {
        Self {
            rgb: (0..cfg.n_single).map(|_| SingleBlockParams::init(cfg, rng)).collect(),
            ir: (0..cfg.n_single).map(|_| SingleBlockParams::init(cfg, rng)).collect(),
            cross: CrossBlockParams::init(cfg, rng),
        }
    }

    pub fn write_bundle(&self, prefix: &str, out: &mut TensorBundle) {
        for (i, p) in self.rgb.iter().enumerate() {
            p.write_bundle(&format!("{prefix}.rgb{i}"), out);
        }
        for (i, p) in self.ir.iter().enumerate() {
            p.write_bundle(&format!("{prefix}.ir{i}"), out);
        }
        self.cross.write_bundle(&format!("{prefix}.cross"), out);
    }

    pub fn read_bundle(bundle: &TensorBundle, prefix: &str, n_single: usize) -> Result<Self> {
        let stack = |m: &str| {
            (0..n_single)
                .map(|i| SingleBlockParams::read_bundle(bundle, &format!("{prefix}.{m}{i}")))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            rgb: stack("rgb")?,
            ir: stack("ir")?,
            cross: CrossBlockParams::read_bundle(bundle, &format!("{prefix}.cross"))?,
        })
    }
}

/// `F_in = avgpool(S_in) + maxpool(S_in)` onto the configured token grid.
pub fn pool_embed(s_in: &FeatureMap, cfg: &BlockConfig) -> Result<FeatureMap> {
    let (h, w) = cfg.target_grid;
    adaptive_pool(s_in, h, w, PoolMode::Avg)?.add(&adaptive_pool(s_in, h, w, PoolMode::Max)?)
}

/// `F_m = dropout(down(silu(up(F_in))))`, applied per cell.
pub fn mlp_drop(
    f_in: &FeatureMap,
    weights: &MlpWeights,
    cfg: &BlockConfig,
    rng: &mut SeededRng,
    training: bool,
) -> Result<FeatureMap> {
    let (h, w, c) = f_in.shape();
    if weights.up.cols() != c || weights.down.rows() != c || weights.up.rows() != weights.down.cols() {
        return Err(Error::dim(format!(
            "mlp weights {}x{} / {}x{} do not fit {c} channels",
            weights.up.rows(),
            weights.up.cols(),
            weights.down.rows(),
            weights.down.cols()
        )));
    }
    let hidden = silu_map(&linear(&f_in.to_tokens(), &weights.up)?);
    let mapped = linear(&hidden, &weights.down)?;
    dropout(&mapped, cfg.dropout, rng, training)?.into_grid(h, w)
}

fn check_ssm_count(params: &[SSMParams], expected: usize, what: &str) -> Result<()> {
    if params.len() != expected {
        return Err(Error::dim(format!(
            "{what} needs {expected} scan parameter sets, got {}",
            params.len()
        )));
    }
    Ok(())
}

/// Token grid entering the four scans: `flatten(mlp_drop(pool_embed(S))) + P`.
fn single_block_tokens(
    f_in: &FeatureMap,
    params: &SingleBlockParams,
    cfg: &BlockConfig,
    rng: &mut SeededRng,
    training: bool,
) -> Result<FeatureMap> {
    let f_m = mlp_drop(f_in, &params.mlp, cfg, rng, training)?;
    if params.pos.values.shape() != (f_m.height() * f_m.width(), f_m.channels()) {
        return Err(Error::dim(format!(
            "positional embedding {:?} does not match token grid {:?}",
            params.pos.values.shape(),
            f_m.shape()
        )));
    }
    f_m.to_tokens().add(&params.pos.values)?.into_grid(f_m.height(), f_m.width())
}

pub fn single_mamba_block(
    s_in: &FeatureMap,
    params: &SingleBlockParams,
    cfg: &BlockConfig,
    rng: &mut SeededRng,
    training: bool,
) -> Result<FeatureMap> {
    check_ssm_count(&params.ssm, ScanDirection::GLOBAL.len(), "single block")?;
    let f_in = pool_embed(s_in, cfg)?;
    let grid = single_block_tokens(&f_in, params, cfg, rng, training)?;
    let plans = ScanPlan::build_set(grid.height(), grid.width(), &ScanDirection::GLOBAL, cfg.local_window)?;
    let branches = plans
        .iter()
        .zip(&params.ssm)
        .map(|(plan, p)| reverse_scan(&s6_scan(&apply_scan(&grid, plan)?, p, cfg.scan)?, plan))
        .collect::<Result<Vec<_>>>()?;
    merge_directions(&branches)?.add(&f_in)
}

pub fn cross_mamba_block(
    f1: &FeatureMap,
    f2: &FeatureMap,
    params: &CrossBlockParams,
    cfg: &BlockConfig,
) -> Result<(FeatureMap, FeatureMap)> {
    if !f1.same_shape(f2) {
        return Err(Error::dim(format!(
            "cross block inputs {:?} and {:?} differ",
            f1.shape(),
            f2.shape()
        )));
    }
    check_ssm_count(&params.first, ScanDirection::CROSS.len(), "cross block")?;
    check_ssm_count(&params.second, ScanDirection::CROSS.len(), "cross block")?;
    let plans = ScanPlan::build_set(f1.height(), f1.width(), &ScanDirection::CROSS, cfg.local_window)?;
    let mut out1 = Vec::with_capacity(plans.len());
    let mut out2 = Vec::with_capacity(plans.len());
    for (i, plan) in plans.iter().enumerate() {
        let x1 = apply_scan(f1, plan)?;
        let x2 = apply_scan(f2, plan)?;
        out1.push(reverse_scan(&cs6_scan(&x2, &x1, &params.first[i], cfg.scan)?, plan)?);
        out2.push(reverse_scan(&cs6_scan(&x1, &x2, &params.second[i], cfg.scan)?, plan)?);
    }
    Ok((merge_directions(&out1)?, merge_directions(&out2)?))
}

/// `n_single` single blocks per modality, then one cross block.
pub fn mamba_interaction(
    f5_rgb: &FeatureMap,
    f5_ir: &FeatureMap,
    params: &InteractionParams,
    cfg: &BlockConfig,
    rng: &mut SeededRng,
    training: bool,
) -> Result<(FeatureMap, FeatureMap)> {
    if !f5_rgb.same_shape(f5_ir) {
        return Err(Error::dim("interaction inputs must share a shape"));
    }
    if params.rgb.len() != params.ir.len() {
        return Err(Error::dim("both modalities need the same number of single blocks"));
    }
    let mut rgb = f5_rgb.clone();
    let mut ir = f5_ir.clone();
    for (p_rgb, p_ir) in params.rgb.iter().zip(&params.ir) {
        rgb = single_mamba_block(&rgb, p_rgb, cfg, rng, training)?;
        ir = single_mamba_block(&ir, p_ir, cfg, rng, training)?;
    }
    cross_mamba_block(&rgb, &ir, &params.cross, cfg)
}

/// Gradients of `Σ upstream ⊙ single_mamba_block(S)` in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleBlockGrads {
    pub mlp: MlpWeights,
    pub pos: TokenSequence,
}

pub fn single_block_backward(
    s_in: &FeatureMap,
    params: &SingleBlockParams,
    cfg: &BlockConfig,
    upstream: &FeatureMap,
) -> Result<SingleBlockGrads> {
    check_ssm_count(&params.ssm, ScanDirection::GLOBAL.len(), "single block")?;
    let f_in = pool_embed(s_in, cfg)?;
    let (h, w, c) = f_in.shape();
    if upstream.shape() != (h, w, c) {
        return Err(Error::dim("upstream gradient does not match block output"));
    }
    let tok_in = f_in.to_tokens();
    let pre = linear(&tok_in, &params.mlp.up)?;
    let hidden = silu_map(&pre);
    // Dropout is the identity in eval mode, so the rng is never consumed.
    let grid = single_block_tokens(&f_in, params, cfg, &mut SeededRng::new(0), false)?;

    let plans = ScanPlan::build_set(h, w, &ScanDirection::GLOBAL, cfg.local_window)?;
    let mut d_grid = FeatureMap::zeros(h, w, c);
    for (plan, p) in plans.iter().zip(&params.ssm) {
        let dy = apply_scan(upstream, plan)?;
        let g = s6_backward(&apply_scan(&grid, plan)?, p, cfg.scan, &dy)?;
        d_grid = d_grid.add(&reverse_scan(&g.dx, plan)?)?;
    }
    let d_tokens = d_grid.to_tokens();

    let hdim = params.mlp.up.rows();
    let mut d_up = Matrix::zeros(hdim, c);
    let mut d_down = Matrix::zeros(c, hdim);
    for t in 0..tok_in.len() {
        let g_out = d_tokens.row(t);
        let hid = hidden.row(t);
        for r in 0..c {
            let row = &mut d_down.data_mut()[r * hdim..(r + 1) * hdim];
            for k in 0..hdim {
                row[k] += g_out[r] * hid[k];
            }
        }
        for k in 0..hdim {
            let d_hid: f64 = (0..c).map(|r| params.mlp.down.get(r, k) * g_out[r]).sum();
            let z = pre.get(t, k);
            let s = sigmoid(z);
            let d_pre = d_hid * s * (1.0 + z * (1.0 - s));
            let row = &mut d_up.data_mut()[k * c..(k + 1) * c];
            for (j, x) in tok_in.row(t).iter().enumerate() {
                row[j] += d_pre * x;
            }
        }
    }
    Ok(SingleBlockGrads {
        mlp: MlpWeights { up: d_up, down: d_down },
        pos: d_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::{silu, Dense};

    fn small_cfg() -> BlockConfig {
        BlockConfig {
            target_grid: (4, 4),
            channels: 3,
            hidden: None,
            state_dim: 2,
            dropout: 0.0,
            n_single: 1,
            local_window: (2, 2),
            scan: ScanConfig::selective(),
            share_direction_params: false,
        }
    }

    fn random_map(h: usize, w: usize, c: usize, rng: &mut SeededRng) -> FeatureMap {
        FeatureMap::new(h, w, c, rng.uniform_vec(h * w * c, -1.0, 1.0)).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = BlockConfig::default();
        cfg.validate("block").unwrap();
        assert_eq!(cfg.target_grid, (8, 8));
        assert_eq!(cfg.local_window, (2, 2));
        assert_eq!(cfg.n_single, 3);
        assert_eq!(cfg.hidden(), 128);
    }

    #[test]
    fn config_errors_name_the_field() {
        let cfg = BlockConfig {
            local_window: (4, 4),
            ..BlockConfig::default()
        };
        match cfg.validate("block") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "block.local_window"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pool_embed_identity_and_constant() {
        let cfg = small_cfg();
        let mut rng = SeededRng::new(1);
        let x = random_map(4, 4, 3, &mut rng);
        assert_eq!(pool_embed(&x, &cfg).unwrap(), x.scale(2.0));
        let k = pool_embed(&FeatureMap::filled(9, 7, 3, -0.5), &cfg).unwrap();
        assert!(k.data().iter().all(|&v| v == -1.0));
        assert!(matches!(
            pool_embed(&FeatureMap::zeros(3, 8, 3), &cfg),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn mlp_zero_weights_and_asymptote() {
        let cfg = BlockConfig {
            hidden: Some(3),
            ..small_cfg()
        };
        let mut rng = SeededRng::new(2);
        let x = random_map(4, 4, 3, &mut rng);
        let zero = MlpWeights {
            up: Matrix::zeros(3, 3),
            down: Matrix::zeros(3, 3),
        };
        let y = mlp_drop(&x, &zero, &cfg, &mut rng, false).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let ident = MlpWeights {
            up: Matrix::identity(3),
            down: Matrix::identity(3),
        };
        let big = x.map(|v| 20.0 + 10.0 * v.abs());
        let y = mlp_drop(&big, &ident, &cfg, &mut rng, false).unwrap();
        for (a, b) in big.data().iter().zip(y.data()) {
            assert!(((a - b) / a).abs() < 1e-6);
        }
        assert!(mlp_drop(&x, &MlpWeights { up: Matrix::zeros(3, 2), down: Matrix::zeros(2, 3) }, &cfg, &mut rng, false).is_err());
    }

    #[test]
    fn dead_scan_path_leaves_shortcut() {
        let cfg = small_cfg();
        let mut rng = SeededRng::new(3);
        let mut params = SingleBlockParams::init(&cfg, &mut rng);
        params.pos = PositionalEmbedding::zeros(16, 3);
        for p in &mut params.ssm {
            p.c_proj = Matrix::zeros(2, 3);
            p.d = vec![0.0; 3];
        }
        let s = random_map(8, 8, 3, &mut rng);
        let out = single_mamba_block(&s, &params, &cfg, &mut rng, false).unwrap();
        assert_eq!(out, pool_embed(&s, &cfg).unwrap());
    }

    #[test]
    fn cross_block_role_symmetry_and_asymmetry() {
        let cfg = small_cfg();
        let mut rng = SeededRng::new(4);
        let shared = CrossBlockParams::shared(&cfg, &mut rng);
        let f = random_map(4, 4, 3, &mut rng);
        let (y1, y2) = cross_mamba_block(&f, &f, &shared, &cfg).unwrap();
        assert_eq!(y1, y2);
        let g = random_map(4, 4, 3, &mut rng);
        let (y1, y2) = cross_mamba_block(&f, &g, &shared, &cfg).unwrap();
        assert!(y1.max_abs_diff(&y2) > 1e-9);
    }

    #[test]
    fn interaction_with_empty_stack_is_cross_block() {
        let cfg = BlockConfig {
            n_single: 0,
            ..small_cfg()
        };
        let mut rng = SeededRng::new(5);
        let params = InteractionParams::init(&cfg, &mut rng);
        let a = random_map(4, 4, 3, &mut rng);
        let b = random_map(4, 4, 3, &mut rng);
        let direct = cross_mamba_block(&a, &b, &params.cross, &cfg).unwrap();
        let stacked = mamba_interaction(&a, &b, &params, &cfg, &mut rng, false).unwrap();
        assert_eq!(direct, stacked);
    }

    #[test]
    fn training_mode_consumes_dropout_streams() {
        let cfg = BlockConfig {
            dropout: 0.5,
            ..small_cfg()
        };
        let mut rng = SeededRng::new(6);
        let params = SingleBlockParams::init(&cfg, &mut rng);
        let s = random_map(8, 8, 3, &mut rng);
        let before = rng.invocation();
        let eval = single_mamba_block(&s, &params, &cfg, &mut rng, false).unwrap();
        assert_eq!(rng.invocation(), before);
        let train = single_mamba_block(&s, &params, &cfg, &mut rng, true).unwrap();
        assert_eq!(rng.invocation(), before + 1);
        assert_ne!(eval, train);
    }

    #[test]
    fn mlp_gradient_directional_check() {
        let cfg = small_cfg();
        let mut rng = SeededRng::new(7);
        let params = SingleBlockParams::init(&cfg, &mut rng);
        let s = random_map(6, 6, 3, &mut rng);
        let w = random_map(4, 4, 3, &mut rng);
        let g = single_block_backward(&s, &params, &cfg, &w).unwrap();
        let loss = |p: &SingleBlockParams| -> f64 {
            let y = single_mamba_block(&s, p, &cfg, &mut SeededRng::new(0), false).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for (r, c) in [(0, 0), (5, 2), (3, 1)] {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.mlp.up.data_mut()[r * 3 + c] += eps;
            minus.mlp.up.data_mut()[r * 3 + c] -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let analytic = g.mlp.up.get(r, c);
            assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3), "{numeric} vs {analytic}");
        }
        assert!(silu(0.0) == 0.0);
    }

    #[test]
    fn interaction_bundle_round_trip() {
        let cfg = small_cfg();
        let params = InteractionParams::init(&cfg, &mut SeededRng::new(8));
        let mut b = TensorBundle::new();
        params.write_bundle("mib", &mut b);
        let back = InteractionParams::read_bundle(&b, "mib", 1).unwrap();
        assert_eq!(back, params);
    }
}
