//! Named-tensor bundles: the on-disk format for parameters and pyramids.
//!
//! Two encodings carry the same content, a list of `(name, shape, values)`
//! entries with row-major values:
//!
//! JSON
//! ```json
//! {"format": "xmodal-tensors", "version": 1,
//!  "tensors": [{"name": "ssm.a", "shape": [4], "values": [-1, -2, -3, -4]}]}
//! ```
//!
//! Binary (all integers little-endian)
//! ```text
//! magic   b"XMTB"
//! version u32 = 1
//! count   u32
//! count × { name_len u32, name [u8; name_len] (UTF-8),
//!           rank u32 (<= 8), dims [u64; rank], values [f64; prod(dims)] }
//! ```
//! Trailing bytes after the last entry are rejected.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::{FeatureMap, Kernel, Matrix};

pub const FORMAT_TAG: &str = "xmodal-tensors";
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"XMTB";
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorBundle {
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonBundle {
    format: String,
    version: u32,
    tensors: Vec<NamedTensor>,
}

impl TensorBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Appends an entry. Panics on a shape/value mismatch or duplicate name,
    /// both of which are programming errors on the writer side.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        let entry = NamedTensor {
            name: name.into(),
            shape,
            values,
        };
        validate_entry(&entry).expect("bundle entry");
        assert!(
            self.find(&entry.name).is_none(),
            "duplicate bundle entry `{}`",
            entry.name
        );
        self.tensors.push(entry);
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, vec![], vec![value]);
    }

    pub fn push_vector(&mut self, name: impl Into<String>, values: &[f64]) {
        self.push(name, vec![values.len()], values.to_vec());
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &Matrix) {
        self.push(name, vec![m.rows(), m.cols()], m.data().to_vec());
    }

    pub fn push_map(&mut self, name: impl Into<String>, m: &FeatureMap) {
        let (h, w, c) = m.shape();
        self.push(name, vec![h, w, c], m.data().to_vec());
    }

    pub fn push_kernel(&mut self, name: impl Into<String>, k: &Kernel) {
        let (kh, kw, ci, co) = k.dims();
        self.push(name, vec![kh, kw, ci, co], k.data().to_vec());
    }

    fn find(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.find(name)
            .ok_or_else(|| Error::parse(None, format!("bundle has no tensor `{name}`")))
    }

    fn ranked(&self, name: &str, rank: usize) -> Result<&NamedTensor> {
        let t = self.get(name)?;
        if t.shape.len() != rank {
            return Err(Error::dim(format!(
                "tensor `{name}` has rank {}, expected {rank}",
                t.shape.len()
            )));
        }
        Ok(t)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.ranked(name, 0)?.values[0])
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.ranked(name, 1)?.values.clone())
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let t = self.ranked(name, 2)?;
        Matrix::new(t.shape[0], t.shape[1], t.values.clone())
    }

    pub fn feature_map(&self, name: &str) -> Result<FeatureMap> {
        let t = self.ranked(name, 3)?;
        FeatureMap::new(t.shape[0], t.shape[1], t.shape[2], t.values.clone())
    }

    pub fn kernel(&self, name: &str) -> Result<Kernel> {
        let t = self.ranked(name, 4)?;
        Kernel::new(t.shape[0], t.shape[1], t.shape[2], t.shape[3], t.values.clone())
    }

    fn from_entries(tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tensors {
            validate_entry(t)?;
            if !seen.insert(t.name.as_str()) {
                return Err(Error::parse(None, format!("duplicate tensor `{}`", t.name)));
            }
        }
        Ok(Self { tensors })
    }

    pub fn to_json_string(&self) -> String {
        let doc = JsonBundle {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            tensors: self.tensors.clone(),
        };
        serde_json::to_string(&doc).expect("bundle serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: JsonBundle =
            serde_json::from_str(s).map_err(|e| Error::parse(Some(e.line()), e.to_string()))?;
        if doc.format != FORMAT_TAG {
            return Err(Error::parse(None, format!("unknown format tag `{}`", doc.format)));
        }
        if doc.version != FORMAT_VERSION {
            return Err(Error::parse(None, format!("unsupported version {}", doc.version)));
        }
        Self::from_entries(doc.tensors)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::parse(None, "bad magic, expected XMTB"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::parse(None, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::parse(None, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank > MAX_RANK {
                return Err(Error::parse(None, format!("rank {rank} exceeds {MAX_RANK}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::parse(None, "dimension overflows usize"))?;
                shape.push(d);
            }
            let n = element_count(&shape)?;
            // Reject before allocating: the remaining input must hold n values.
            if n > r.remaining() / 8 {
                return Err(Error::parse(None, format!("tensor `{name}` truncated")));
            }
            let values = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        if r.remaining() != 0 {
            return Err(Error::parse(None, format!("{} trailing bytes", r.remaining())));
        }
        Self::from_entries(tensors)
    }

    /// Writes JSON when the path ends in `.json`, binary otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        if is_json(path) {
            std::fs::write(path, self.to_json_string())?;
        } else {
            std::fs::write(path, self.to_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if is_json(path) {
            Self::from_json_str(&std::fs::read_to_string(path)?)
        } else {
            Self::from_bytes(&std::fs::read(path)?)
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse(None, "shape product overflows"))
}

fn validate_entry(t: &NamedTensor) -> Result<()> {
    if t.name.is_empty() {
        return Err(Error::parse(None, "empty tensor name"));
    }
    if t.shape.len() > MAX_RANK {
        return Err(Error::parse(None, format!("tensor `{}` rank exceeds {MAX_RANK}", t.name)));
    }
    if t.shape.contains(&0) {
        return Err(Error::parse(None, format!("tensor `{}` has a zero dimension", t.name)));
    }
    let n = element_count(&t.shape)?;
    if n != t.values.len() {
        return Err(Error::parse(
            None,
            format!("tensor `{}` has {} values for shape {:?}", t.name, t.values.len(), t.shape),
        ));
    }
    if let Some(v) = t.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::parse(None, format!("tensor `{}` holds non-finite value {v}", t.name)));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::parse(None, "unexpected end of input"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
