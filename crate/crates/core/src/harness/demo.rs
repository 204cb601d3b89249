use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::blocks::{mamba_interaction, InteractionParams};
use crate::bundle::TensorBundle;
use crate::error::Result;
use crate::fusion::{neck_pipeline, BackboneStub, NeckOutput, NeckWeights, PyramidSet};
use crate::ssm::ScanMode;
use crate::tensors::{Dense, FeatureMap, SeededRng};

// Fork tags keep every component on its own random stream.
const TAG_BACKBONE_RGB: u64 = 1;
const TAG_BACKBONE_IR: u64 = 2;
const TAG_INTERACTION: u64 = 3;
const TAG_NECK: u64 = 4;
const TAG_IMAGE_RGB: u64 = 10;
const TAG_IMAGE_IR: u64 = 11;
const TAG_DROPOUT: u64 = 20;

/// Every weight of the demo model.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub backbone_rgb: BackboneStub,
    pub backbone_ir: BackboneStub,
    pub interaction: InteractionParams,
    pub neck: NeckWeights,
}

impl Pipeline {
    pub fn init(cfg: &RunConfig) -> Self {
        let root = SeededRng::new(cfg.seed);
        let plan = &cfg.fusion.channels;
        Self {
            backbone_rgb: BackboneStub::init(cfg.image_channels, plan, &mut root.fork(TAG_BACKBONE_RGB)),
            backbone_ir: BackboneStub::init(cfg.image_channels, plan, &mut root.fork(TAG_BACKBONE_IR)),
            interaction: InteractionParams::init(&cfg.block, &mut root.fork(TAG_INTERACTION)),
            neck: NeckWeights::init(&cfg.fusion, &mut root.fork(TAG_NECK)),
        }
    }

    pub fn to_bundle(&self) -> TensorBundle {
        let mut b = TensorBundle::new();
        for (name, stub) in [("backbone_rgb", &self.backbone_rgb), ("backbone_ir", &self.backbone_ir)] {
            for (i, k) in stub.stages.iter().enumerate() {
                b.push_kernel(format!("{name}.stage{i}"), k);
            }
        }
        self.interaction.write_bundle("interaction", &mut b);
        self.neck.write_bundle("neck", &mut b);
        b
    }

    pub fn from_bundle(b: &TensorBundle, cfg: &RunConfig) -> Result<Self> {
        let stub = |name: &str| -> Result<BackboneStub> {
            Ok(BackboneStub {
                stages: (0..5).map(|i| b.kernel(&format!("{name}.stage{i}"))).collect::<Result<_>>()?,
            })
        };
        Ok(Self {
            backbone_rgb: stub("backbone_rgb")?,
            backbone_ir: stub("backbone_ir")?,
            interaction: InteractionParams::read_bundle(b, "interaction", cfg.block.n_single)?,
            neck: NeckWeights::read_bundle(b, "neck", cfg.fusion.branch_count)?,
        })
    }
}

/// Seeded uniform `[0, 1)` RGB and IR images at the configured size.
pub fn synthetic_images(cfg: &RunConfig) -> (FeatureMap, FeatureMap) {
    let (h, w) = cfg.image_size;
    let root = SeededRng::new(cfg.seed);
    let n = h * w * cfg.image_channels;
    let make = |tag| FeatureMap::new(h, w, cfg.image_channels, root.fork(tag).uniform_vec(n, 0.0, 1.0)).expect("shape");
    (make(TAG_IMAGE_RGB), make(TAG_IMAGE_IR))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub pyramid: PyramidSet,
    pub interacted_rgb: FeatureMap,
    pub interacted_ir: FeatureMap,
    pub neck: NeckOutput,
}

/// Backbone stubs, interaction stack on S5, residual resize back to the S5
/// size, then the neck. Always runs in eval mode.
pub fn run_pipeline(cfg: &RunConfig, model: &Pipeline) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (rgb, ir) = synthetic_images(cfg);
    let (s3_rgb, s4_rgb, s5_rgb) = model.backbone_rgb.forward(&rgb)?;
    let (s3_ir, s4_ir, s5_ir) = model.backbone_ir.forward(&ir)?;
    let mut dropout_rng = SeededRng::new(cfg.seed).fork(TAG_DROPOUT);
    let (interacted_rgb, interacted_ir) =
        mamba_interaction(&s5_rgb, &s5_ir, &model.interaction, &cfg.block, &mut dropout_rng, false)?;
    let mut pyramid = PyramidSet::from_backbone((s3_rgb, s3_ir), (s4_rgb, s4_ir), (s5_rgb, s5_ir));
    pyramid.attach_interaction(&interacted_rgb, &interacted_ir)?;
    let neck = neck_pipeline(&pyramid, &model.neck, &cfg.fusion)?;
    Ok(PipelineOutput {
        pyramid,
        interacted_rgb,
        interacted_ir,
        neck,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSummary {
    pub name: String,
    pub shape: Vec<usize>,
    pub l2_norm: f64,
    pub max_abs: f64,
    pub all_finite: bool,
}

impl TensorSummary {
    fn of(name: &str, m: &FeatureMap) -> Self {
        let (h, w, c) = m.shape();
        Self {
            name: name.into(),
            shape: vec![h, w, c],
            l2_norm: m.l2_norm(),
            max_abs: m.data().iter().fold(0.0f64, |a, v| a.max(v.abs())),
            all_finite: m.all_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub image_size: (usize, usize),
    pub seed: u64,
    pub scan_mode: ScanMode,
    pub tensors: Vec<TensorSummary>,
    pub all_finite: bool,
    /// SHA-256 over the shapes and little-endian values of P3, P4, P5.
    pub determinism_hash: String,
}

impl DemoReport {
    pub fn shape_of(&self, name: &str) -> Option<&[usize]> {
        self.tensors.iter().find(|t| t.name == name).map(|t| t.shape.as_slice())
    }
}

fn output_hash(maps: &[&FeatureMap]) -> String {
    let mut hasher = Sha256::new();
    for m in maps {
        let (h, w, c) = m.shape();
        for d in [h, w, c] {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in m.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// Demo with freshly initialised weights.
pub fn cmd_demo(cfg: &RunConfig) -> Result<DemoReport> {
    demo_report(cfg, &Pipeline::init(cfg))
}

pub fn demo_report(cfg: &RunConfig, model: &Pipeline) -> Result<DemoReport> {
    let out = run_pipeline(cfg, model)?;
    let p = &out.pyramid;
    let tensors = vec![
        TensorSummary::of("s3_rgb", &p.s3_rgb),
        TensorSummary::of("s4_rgb", &p.s4_rgb),
        TensorSummary::of("s5_rgb", &p.s5_rgb),
        TensorSummary::of("interacted_rgb", &out.interacted_rgb),
        TensorSummary::of("interacted_ir", &out.interacted_ir),
        TensorSummary::of("f5_rgb", &p.f5_rgb),
        TensorSummary::of("f5_ir", &p.f5_ir),
        TensorSummary::of("p3", &out.neck.p3),
        TensorSummary::of("p4", &out.neck.p4),
        TensorSummary::of("p5", &out.neck.p5),
    ];
    Ok(DemoReport {
        image_size: cfg.image_size,
        seed: cfg.seed,
        scan_mode: cfg.block.scan.mode,
        all_finite: tensors.iter().all(|t| t.all_finite),
        tensors,
        determinism_hash: output_hash(&[&out.neck.p3, &out.neck.p4, &out.neck.p5]),
    })
}
