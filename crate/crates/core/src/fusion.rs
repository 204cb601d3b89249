//! Guided dual-branch fusion and a small top-down / bottom-up neck.
//!
//! `ogf_unit` concatenates an aligned high-level feature with the two
//! low-level modality features and sums `N` branches of
//! `CB_i(x) + Rep(CB_i(x))`, where `CB` is a 3×3 conv + SiLU and `Rep` a
//! 1×1 conv. Low-level maps are never resampled against each other.

use serde::{Deserialize, Serialize};

use crate::bundle::TensorBundle;
use crate::error::{Error, Result};
use crate::tensors::{conv2d, resize_nearest, silu_map, upsample_nearest2x, FeatureMap, Kernel, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelPlan {
    pub c3: usize,
    pub c4: usize,
    pub c5: usize,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        Self { c3: 16, c4: 32, c5: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Branches summed inside each fusion unit.
    pub branch_count: usize,
    pub channels: ChannelPlan,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            branch_count: 2,
            channels: ChannelPlan::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.branch_count == 0 {
            return Err(Error::config(format!("{prefix}.branch_count"), "must be at least 1"));
        }
        let ChannelPlan { c3, c4, c5 } = self.channels;
        for (name, v) in [("c3", c3), ("c4", c4), ("c5", c5)] {
            if v == 0 {
                return Err(Error::config(format!("{prefix}.channels.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

fn uniform_kernel(k: usize, c_in: usize, c_out: usize, rng: &mut SeededRng) -> Kernel {
    let bound = 1.0 / ((k * k * c_in) as f64).sqrt();
    Kernel::new(k, k, c_in, c_out, rng.uniform_vec(k * k * c_in * c_out, -bound, bound)).expect("shape")
}

/// Odd-sized conv followed by SiLU; padding keeps the spatial size at stride 1.
pub fn conv_block(x: &FeatureMap, kernel: &Kernel, stride: usize) -> Result<FeatureMap> {
    let pad = kernel.dims().0 / 2;
    Ok(silu_map(&conv2d(x, kernel, stride, pad)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OgfWeights {
    /// One 3×3 kernel `(c_high + 2·c_low) → c_out` per branch.
    pub branches: Vec<Kernel>,
    /// 1×1 `c_out → c_out`.
    pub rep: Kernel,
}

impl OgfWeights {
    pub fn init(c_in: usize, c_out: usize, branch_count: usize, rng: &mut SeededRng) -> Self {
        Self {
            branches: (0..branch_count).map(|_| uniform_kernel(3, c_in, c_out, rng)).collect(),
            rep: uniform_kernel(1, c_out, c_out, rng),
        }
    }

    fn write_bundle(&self, prefix: &str, out: &mut TensorBundle) {
        for (i, k) in self.branches.iter().enumerate() {
            out.push_kernel(format!("{prefix}.branch{i}"), k);
        }
        out.push_kernel(format!("{prefix}.rep"), &self.rep);
    }

    fn read_bundle(bundle: &TensorBundle, prefix: &str, branch_count: usize) -> Result<Self> {
        Ok(Self {
            branches: (0..branch_count)
                .map(|i| bundle.kernel(&format!("{prefix}.branch{i}")))
                .collect::<Result<_>>()?,
            rep: bundle.kernel(&format!("{prefix}.rep"))?,
        })
    }
}

pub fn ogf_unit(f_high: &FeatureMap, s_rgb: &FeatureMap, s_ir: &FeatureMap, weights: &OgfWeights) -> Result<FeatureMap> {
    let dims = |m: &FeatureMap| (m.height(), m.width());
    if dims(f_high) != dims(s_rgb) || dims(s_rgb) != dims(s_ir) {
        return Err(Error::geom(format!(
            "fusion inputs are not aligned: high {:?}, rgb {:?}, ir {:?}",
            dims(f_high),
            dims(s_rgb),
            dims(s_ir)
        )));
    }
    if weights.branches.is_empty() {
        return Err(Error::param("fusion unit needs at least one branch"));
    }
    let x = FeatureMap::concat_channels(&[f_high, s_rgb, s_ir])?;
    let mut out: Option<FeatureMap> = None;
    for kernel in &weights.branches {
        let cb = conv_block(&x, kernel, 1)?;
        let branch = cb.add(&conv2d(&cb, &weights.rep, 1, 0)?)?;
        out = Some(match out {
            None => branch,
            Some(acc) => acc.add(&branch)?,
        });
    }
    Ok(out.expect("at least one branch"))
}

/// Per-modality multiscale features plus the interacted top-level pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSet {
    pub s3_rgb: FeatureMap,
    pub s3_ir: FeatureMap,
    pub s4_rgb: FeatureMap,
    pub s4_ir: FeatureMap,
    pub s5_rgb: FeatureMap,
    pub s5_ir: FeatureMap,
    /// Interacted top-level features at the S5 size.
    pub f5_rgb: FeatureMap,
    pub f5_ir: FeatureMap,
}

const PYRAMID_NAMES: [&str; 8] = ["s3_rgb", "s3_ir", "s4_rgb", "s4_ir", "s5_rgb", "s5_ir", "f5_rgb", "f5_ir"];

impl PyramidSet {
    /// Uses the raw S5 maps as the top-level pair.
    pub fn from_backbone(s3: (FeatureMap, FeatureMap), s4: (FeatureMap, FeatureMap), s5: (FeatureMap, FeatureMap)) -> Self {
        Self {
            f5_rgb: s5.0.clone(),
            f5_ir: s5.1.clone(),
            s3_rgb: s3.0,
            s3_ir: s3.1,
            s4_rgb: s4.0,
            s4_ir: s4.1,
            s5_rgb: s5.0,
            s5_ir: s5.1,
        }
    }

    /// `F5 = S5 + resize_nearest(interacted, S5 size)` per modality.
    pub fn attach_interaction(&mut self, rgb: &FeatureMap, ir: &FeatureMap) -> Result<()> {
        let (h, w) = (self.s5_rgb.height(), self.s5_rgb.width());
        self.f5_rgb = self.s5_rgb.add(&resize_nearest(rgb, h, w)?)?;
        self.f5_ir = self.s5_ir.add(&resize_nearest(ir, h, w)?)?;
        Ok(())
    }

    fn maps(&self) -> [&FeatureMap; 8] {
        [
            &self.s3_rgb,
            &self.s3_ir,
            &self.s4_rgb,
            &self.s4_ir,
            &self.s5_rgb,
            &self.s5_ir,
            &self.f5_rgb,
            &self.f5_ir,
        ]
    }

    /// Each scale halves the previous one, modalities agree, channels follow the plan.
    pub fn validate(&self, plan: &ChannelPlan) -> Result<()> {
        let pairs = [
            ("s3", &self.s3_rgb, &self.s3_ir, plan.c3),
            ("s4", &self.s4_rgb, &self.s4_ir, plan.c4),
            ("s5", &self.s5_rgb, &self.s5_ir, plan.c5),
            ("f5", &self.f5_rgb, &self.f5_ir, plan.c5),
        ];
        for (name, rgb, ir, ch) in pairs {
            if !rgb.same_shape(ir) {
                return Err(Error::geom(format!("{name}: modalities differ {:?} vs {:?}", rgb.shape(), ir.shape())));
            }
            if rgb.channels() != ch {
                return Err(Error::geom(format!("{name}: {} channels, plan says {ch}", rgb.channels())));
            }
        }
        let (h3, w3) = (self.s3_rgb.height(), self.s3_rgb.width());
        let expect = [(h3 / 2, w3 / 2), (h3 / 4, w3 / 4)];
        let got = [
            (self.s4_rgb.height(), self.s4_rgb.width()),
            (self.s5_rgb.height(), self.s5_rgb.width()),
        ];
        if h3 % 4 != 0 || w3 % 4 != 0 || h3 == 0 || w3 == 0 || got != expect {
            return Err(Error::geom(format!(
                "pyramid scales must halve: s3 {h3}x{w3}, s4 {:?}, s5 {:?}",
                got[0], got[1]
            )));
        }
        if !self.f5_rgb.same_shape(&self.s5_rgb) {
            return Err(Error::geom("interacted top-level maps must match the S5 size"));
        }
        Ok(())
    }

    pub fn to_bundle(&self) -> TensorBundle {
        let mut b = TensorBundle::new();
        for (name, m) in PYRAMID_NAMES.iter().zip(self.maps()) {
            b.push_map(*name, m);
        }
        b
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        let m = |i: usize| b.feature_map(PYRAMID_NAMES[i]);
        Ok(Self {
            s3_rgb: m(0)?,
            s3_ir: m(1)?,
            s4_rgb: m(2)?,
            s4_ir: m(3)?,
            s5_rgb: m(4)?,
            s5_ir: m(5)?,
            f5_rgb: m(6)?,
            f5_ir: m(7)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeckWeights {
    /// 3×3 `2·c5 → c5` merging the interacted pair.
    pub top: Kernel,
    pub ogf4: OgfWeights,
    pub ogf3: OgfWeights,
    /// Stride-2 3×3 `c3 → c3`.
    pub down3: Kernel,
    /// 3×3 `(c3 + c4) → c4`.
    pub merge4: Kernel,
    /// Stride-2 3×3 `c4 → c4`.
    pub down4: Kernel,
    /// 3×3 `(c4 + c5) → c5`.
    pub merge5: Kernel,
}

impl NeckWeights {
    pub fn init(cfg: &FusionConfig, rng: &mut SeededRng) -> Self {
        let ChannelPlan { c3, c4, c5 } = cfg.channels;
        let n = cfg.branch_count;
        Self {
            top: uniform_kernel(3, 2 * c5, c5, rng),
            ogf4: OgfWeights::init(c5 + 2 * c4, c4, n, rng),
            ogf3: OgfWeights::init(c4 + 2 * c3, c3, n, rng),
            down3: uniform_kernel(3, c3, c3, rng),
            merge4: uniform_kernel(3, c3 + c4, c4, rng),
            down4: uniform_kernel(3, c4, c4, rng),
            merge5: uniform_kernel(3, c4 + c5, c5, rng),
        }
    }

    pub fn write_bundle(&self, prefix: &str, out: &mut TensorBundle) {
        out.push_kernel(format!("{prefix}.top"), &self.top);
        self.ogf4.write_bundle(&format!("{prefix}.ogf4"), out);
        self.ogf3.write_bundle(&format!("{prefix}.ogf3"), out);
        for (name, k) in [
            ("down3", &self.down3),
            ("merge4", &self.merge4),
            ("down4", &self.down4),
            ("merge5", &self.merge5),
        ] {
            out.push_kernel(format!("{prefix}.{name}"), k);
        }
    }

    pub fn read_bundle(bundle: &TensorBundle, prefix: &str, branch_count: usize) -> Result<Self> {
        let k = |name: &str| bundle.kernel(&format!("{prefix}.{name}"));
        Ok(Self {
            top: k("top")?,
            ogf4: OgfWeights::read_bundle(bundle, &format!("{prefix}.ogf4"), branch_count)?,
            ogf3: OgfWeights::read_bundle(bundle, &format!("{prefix}.ogf3"), branch_count)?,
            down3: k("down3")?,
            merge4: k("merge4")?,
            down4: k("down4")?,
            merge5: k("merge5")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeckOutput {
    pub p3: FeatureMap,
    pub p4: FeatureMap,
    pub p5: FeatureMap,
}

/// Top-down guided fusion to the finest scale, then bottom-up aggregation.
pub fn neck_pipeline(pyr: &PyramidSet, weights: &NeckWeights, cfg: &FusionConfig) -> Result<NeckOutput> {
    pyr.validate(&cfg.channels)?;
    let g5 = conv_block(&FeatureMap::concat_channels(&[&pyr.f5_rgb, &pyr.f5_ir])?, &weights.top, 1)?;
    let p4_td = ogf_unit(&upsample_nearest2x(&g5), &pyr.s4_rgb, &pyr.s4_ir, &weights.ogf4)?;
    let p3 = ogf_unit(&upsample_nearest2x(&p4_td), &pyr.s3_rgb, &pyr.s3_ir, &weights.ogf3)?;
    let d3 = conv_block(&p3, &weights.down3, 2)?;
    let p4 = conv_block(&FeatureMap::concat_channels(&[&d3, &p4_td])?, &weights.merge4, 1)?;
    let d4 = conv_block(&p4, &weights.down4, 2)?;
    let p5 = conv_block(&FeatureMap::concat_channels(&[&d4, &g5])?, &weights.merge5, 1)?;
    Ok(NeckOutput { p3, p4, p5 })
}

/// Fixed random strided-conv stages standing in for a real backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneStub {
    /// Five stride-2 3×3 stages; outputs of stages 3, 4, 5 are S3, S4, S5.
    pub stages: Vec<Kernel>,
}

impl BackboneStub {
    pub fn init(in_channels: usize, plan: &ChannelPlan, rng: &mut SeededRng) -> Self {
        let stem = (plan.c3 / 2).max(1);
        let widths = [in_channels, stem, stem, plan.c3, plan.c4, plan.c5];
        Self {
            stages: widths.windows(2).map(|w| uniform_kernel(3, w[0], w[1], rng)).collect(),
        }
    }

    /// Returns `(S3, S4, S5)` at 1/8, 1/16 and 1/32 of the input size.
    pub fn forward(&self, image: &FeatureMap) -> Result<(FeatureMap, FeatureMap, FeatureMap)> {
        if image.height() % 32 != 0 || image.width() % 32 != 0 || image.height() == 0 || image.width() == 0 {
            return Err(Error::geom(format!(
                "backbone input {}x{} must be a positive multiple of 32",
                image.height(),
                image.width()
            )));
        }
        if self.stages.len() != 5 {
            return Err(Error::dim("backbone stub needs five stages"));
        }
        let mut x = image.clone();
        let mut outs = Vec::with_capacity(3);
        for (i, k) in self.stages.iter().enumerate() {
            x = conv_block(&x, k, 2)?;
            if i >= 2 {
                outs.push(x.clone());
            }
        }
        let s5 = outs.pop().expect("five stages");
        let s4 = outs.pop().expect("five stages");
        let s3 = outs.pop().expect("five stages");
        Ok((s3, s4, s5))
    }
}
