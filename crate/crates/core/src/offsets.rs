//! Cross-modal misalignment: block overlap under a pixel offset, annotation
//! matching between modalities and offset-magnitude statistics.
//!
//! Annotation input is line-delimited JSON, one box per line:
//!
//! ```text
//! {"image_id": 17, "modality": "rgb", "object_id": "a", "x": 10, "y": 4, "w": 20, "h": 12, "class": "car"}
//! ```
//!
//! `x`, `y` are the top-left corner in pixels. `image_id`, `object_id` and
//! `class` may be strings or integers. Blank lines are skipped and unknown
//! fields are ignored.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaMode {
    /// `|w − dx| · |h − dy|`, which grows again once the offset exceeds the block.
    Literal,
    /// `max(w − |dx|, 0) · max(h − |dy|, 0)`.
    #[default]
    Clamped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeNorm {
    /// `max(|dx|, |dy|)`.
    #[default]
    Chebyshev,
    Euclidean,
}

impl MagnitudeNorm {
    pub fn magnitude(self, dx: f64, dy: f64) -> f64 {
        match self {
            Self::Chebyshev => dx.abs().max(dy.abs()),
            Self::Euclidean => dx.hypot(dy),
        }
    }
}

/// Overlap between a `w × h` block and its copy shifted by `(dx, dy)`.
pub fn intersection_area(w: f64, h: f64, dx: f64, dy: f64, mode: AreaMode) -> Result<f64> {
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::param(format!("block dims must be positive, got {w}x{h}")));
    }
    Ok(match mode {
        AreaMode::Literal => (w - dx).abs() * (h - dy).abs(),
        AreaMode::Clamped => (w - dx.abs()).max(0.0) * (h - dy.abs()).max(0.0),
    })
}

/// Clamped overlap fraction of square blocks of each size.
pub fn retention_by_level(dx: f64, dy: f64, levels: &[f64]) -> Result<Vec<f64>> {
    levels
        .iter()
        .map(|&b| Ok(intersection_area(b, b, dx, dy, AreaMode::Clamped)? / (b * b)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPx {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxPx {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Validation(format!(
                "box ({}, {}, {}, {}) needs finite coordinates and positive size",
                self.x, self.y, self.w, self.h
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub modality: String,
    pub object_id: Option<String>,
    pub bbox: BoxPx,
    pub class: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Ident {
    Text(String),
    Int(i64),
}

impl From<Ident> for String {
    fn from(id: Ident) -> String {
        match id {
            Ident::Text(s) => s,
            Ident::Int(i) => i.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: Ident,
    modality: String,
    #[serde(default)]
    object_id: Option<Ident>,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    class: Ident,
}

/// Parses line-delimited annotations; errors carry the 1-based line number.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnnotation = serde_json::from_str(line).map_err(|e| Error::parse(Some(i + 1), e.to_string()))?;
        out.push(Annotation {
            image_id: raw.image_id.into(),
            modality: raw.modality,
            object_id: raw.object_id.map(String::from),
            bbox: BoxPx {
                x: raw.x,
                y: raw.y,
                w: raw.w,
                h: raw.h,
            },
            class: raw.class.into(),
        });
    }
    Ok(out)
}

/// A matched pair; `dx`, `dy` are the center displacement `B − A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetRecord {
    pub image_id: String,
    pub object_id: Option<String>,
    pub class: String,
    pub index_a: usize,
    pub index_b: usize,
    pub box_a: BoxPx,
    pub box_b: BoxPx,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidRecord {
    /// `"a"` or `"b"`.
    pub side: String,
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub records: Vec<OffsetRecord>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
    pub invalid: Vec<InvalidRecord>,
}

/// Greedy one-to-one matching by center distance within each `(image, class)`
/// group. Pairs farther apart than `gate` never match; ties break on the
/// lower index in `a`, then in `b`.
pub fn match_annotations(a: &[Annotation], b: &[Annotation], gate: f64) -> MatchResult {
    let mut result = MatchResult::default();
    let mut groups: BTreeMap<(&str, &str), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (side, list) in [("a", a), ("b", b)] {
        for (i, ann) in list.iter().enumerate() {
            if let Err(e) = ann.bbox.validate() {
                result.invalid.push(InvalidRecord {
                    side: side.into(),
                    index: i,
                    message: e.to_string(),
                });
                continue;
            }
            let g = groups.entry((&ann.image_id, &ann.class)).or_default();
            if side == "a" {
                g.0.push(i);
            } else {
                g.1.push(i);
            }
        }
    }

    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    for (ia, ib) in groups.values() {
        let mut cands = Vec::new();
        for &i in ia {
            let (ax, ay) = a[i].bbox.center();
            for &j in ib {
                let (bx, by) = b[j].bbox.center();
                let d = (bx - ax).hypot(by - ay);
                if d <= gate {
                    cands.push((d, i, j));
                }
            }
        }
        cands.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(Ordering::Equal).then((x.1, x.2).cmp(&(y.1, y.2))));
        for (_, i, j) in cands {
            if used_a[i] || used_b[j] {
                continue;
            }
            used_a[i] = true;
            used_b[j] = true;
            let (ax, ay) = a[i].bbox.center();
            let (bx, by) = b[j].bbox.center();
            result.records.push(OffsetRecord {
                image_id: a[i].image_id.clone(),
                object_id: a[i].object_id.clone().or_else(|| b[j].object_id.clone()),
                class: a[i].class.clone(),
                index_a: i,
                index_b: j,
                box_a: a[i].bbox,
                box_b: b[j].bbox,
                dx: bx - ax,
                dy: by - ay,
            });
        }
    }
    result.records.sort_by_key(|r| r.index_a);
    let invalid_a: Vec<usize> = result.invalid.iter().filter(|r| r.side == "a").map(|r| r.index).collect();
    let invalid_b: Vec<usize> = result.invalid.iter().filter(|r| r.side == "b").map(|r| r.index).collect();
    result.unmatched_a = (0..a.len()).filter(|i| !used_a[*i] && !invalid_a.contains(i)).collect();
    result.unmatched_b = (0..b.len()).filter(|j| !used_b[*j] && !invalid_b.contains(j)).collect();
    result
}

pub const DEFAULT_EDGES: [f64; 7] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    /// `None` for the open-ended last bin.
    pub hi: Option<f64>,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetHistogram {
    pub norm: MagnitudeNorm,
    /// Half-open bins `[lo, hi)`.
    pub bins: Vec<HistogramBin>,
    pub total: usize,
    /// Objects with magnitude ≥ 1 px.
    pub misaligned: usize,
    pub misaligned_fraction: f64,
    /// Share of misaligned objects with magnitude in `[1, 5]`.
    pub one_to_five_share: f64,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Bins offset magnitudes. `edges` must start at 0 and increase; a final
/// open bin collects everything beyond the last edge.
pub fn offset_stats(records: &[OffsetRecord], norm: MagnitudeNorm, edges: &[f64]) -> Result<OffsetHistogram> {
    if edges.first() != Some(&0.0) || edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::param("histogram edges must start at 0 and strictly increase"));
    }
    let mut counts = vec![0usize; edges.len()];
    let (mut misaligned, mut one_to_five) = (0, 0);
    for r in records {
        let m = norm.magnitude(r.dx, r.dy);
        if !m.is_finite() {
            return Err(Error::Validation(format!("non-finite offset for object at index {}", r.index_a)));
        }
        let bin = edges.iter().rposition(|&e| m >= e).expect("magnitudes are non-negative");
        counts[bin] += 1;
        if m >= 1.0 {
            misaligned += 1;
            if m <= 5.0 {
                one_to_five += 1;
            }
        }
    }
    let total = records.len();
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            lo: edges[i],
            hi: edges.get(i + 1).copied(),
            count,
            fraction: ratio(count, total),
        })
        .collect();
    Ok(OffsetHistogram {
        norm,
        bins,
        total,
        misaligned,
        misaligned_fraction: ratio(misaligned, total),
        one_to_five_share: ratio(one_to_five, misaligned),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffsetOptions {
    pub reference_modality: String,
    pub other_modality: String,
    /// Maximum center distance for a match, pixels.
    pub gate: f64,
    pub norm: MagnitudeNorm,
    pub area_mode: AreaMode,
    /// Block sizes for the retention table, pixels.
    pub levels: Vec<f64>,
}

impl Default for OffsetOptions {
    fn default() -> Self {
        Self {
            reference_modality: "rgb".into(),
            other_modality: "ir".into(),
            gate: 20.0,
            norm: MagnitudeNorm::Chebyshev,
            area_mode: AreaMode::Clamped,
            levels: vec![8.0, 16.0, 32.0],
        }
    }
}

impl OffsetOptions {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.gate >= 0.0 && self.gate.is_finite()) {
            return Err(Error::config(format!("{prefix}.gate"), "must be finite and non-negative"));
        }
        if self.levels.is_empty() || self.levels.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::config(format!("{prefix}.levels"), "must be non-empty and positive"));
        }
        if self.reference_modality == self.other_modality {
            return Err(Error::config(format!("{prefix}.other_modality"), "must differ from the reference"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub block: f64,
    /// Mean overlap fraction across matched objects.
    pub mean_retention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetReport {
    pub reference_modality: String,
    pub other_modality: String,
    pub gate: f64,
    pub area_mode: AreaMode,
    /// True when the retention table uses the unclamped formula.
    pub literal_area: bool,
    pub annotations: usize,
    pub matched: usize,
    pub unmatched_reference: usize,
    pub unmatched_other: usize,
    pub ignored_modalities: usize,
    pub invalid: Vec<InvalidRecord>,
    pub histogram: OffsetHistogram,
    pub retention: Vec<RetentionRow>,
    pub warnings: Vec<String>,
}

/// Splits by modality, matches, bins and tabulates retention per level.
pub fn offset_report(annotations: &[Annotation], opts: &OffsetOptions) -> Result<OffsetReport> {
    opts.validate("offsets")?;
    let pick = |m: &str| annotations.iter().filter(|a| a.modality == m).cloned().collect::<Vec<_>>();
    let reference = pick(&opts.reference_modality);
    let other = pick(&opts.other_modality);
    let ignored = annotations.len() - reference.len() - other.len();
    let matched = match_annotations(&reference, &other, opts.gate);
    let histogram = offset_stats(&matched.records, opts.norm, &DEFAULT_EDGES)?;

    let mut retention = Vec::with_capacity(opts.levels.len());
    for &block in &opts.levels {
        let mut sum = 0.0;
        for r in &matched.records {
            sum += intersection_area(block, block, r.dx, r.dy, opts.area_mode)? / (block * block);
        }
        retention.push(RetentionRow {
            block,
            mean_retention: if matched.records.is_empty() {
                0.0
            } else {
                sum / matched.records.len() as f64
            },
        });
    }

    let mut warnings = Vec::new();
    if annotations.is_empty() {
        warnings.push("input contains no annotations; report is empty".to_string());
    } else if matched.records.is_empty() {
        warnings.push("no boxes were matched across modalities".to_string());
    }
    if ignored > 0 {
        warnings.push(format!("{ignored} annotations had an unrecognised modality"));
    }
    Ok(OffsetReport {
        reference_modality: opts.reference_modality.clone(),
        other_modality: opts.other_modality.clone(),
        gate: opts.gate,
        area_mode: opts.area_mode,
        literal_area: opts.area_mode == AreaMode::Literal,
        annotations: annotations.len(),
        matched: matched.records.len(),
        unmatched_reference: matched.unmatched_a.len(),
        unmatched_other: matched.unmatched_b.len(),
        ignored_modalities: ignored,
        invalid: matched.invalid,
        histogram,
        retention,
        warnings,
    })
}
