//! Dense 64-bit tensor substrate.
//!
//! Three shapes cover everything the higher modules need:
//!
//! * [`FeatureMap`]: `height × width × channels`, row-major `(h, w, c)`.
//! * [`TokenSequence`]: `len × channels`, row-major `(t, c)`.
//! * [`Matrix`] / [`Kernel`]: linear-map and convolution weights.
//!
//! All types own their storage and every operation returns a fresh value.

mod ops;
mod rng;

pub use ops::{
    adaptive_pool, conv2d, dropout, linear, resize_nearest, sigmoid, silu, silu_map, softplus,
    upsample_nearest2x, PoolMode,
};
pub use rng::SeededRng;


use crate::error::{Error, Result};

/// Read/write access to the flat storage of a dense tensor.
pub trait Dense {
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];

    fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    fn l2_norm(&self) -> f64 {
        self.values().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn max_abs_diff(&self, other: &Self) -> f64
    where
        Self: Sized,
    {
        self.values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_len(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::dim(format!(
            "{what}: data length {got} does not match shape product {expected}"
        )));
    }
    Ok(())
}

/// A `height × width × channels` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::dim(format!(
                "feature map dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        check_len(height * width * channels, data.len(), "feature map")?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty feature map");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a map by evaluating `f(row, col, channel)` for every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut out = Self::zeros(height, width, channels);
        for i in 0..height {
            for j in 0..width {
                for k in 0..channels {
                    out.data[(i * width + j) * channels + k] = f(i, j, k);
                }
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    /// Channel vector of the cell at flat grid index `pos = row * width + col`.
    pub fn cell(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.channels..(pos + 1) * self.channels]
    }

    pub fn cell_mut(&mut self, pos: usize) -> &mut [f64] {
        &mut self.data[pos * self.channels..(pos + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(Error::dim(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(FeatureMap { data, ..*self })
    }

    pub fn scale(&self, factor: f64) -> FeatureMap {
        self.map(|v| v * factor)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> FeatureMap {
        FeatureMap {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Concatenates maps along the channel axis; spatial dims must agree.
    pub fn concat_channels(parts: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero feature maps"))?;
        let (h, w) = (first.height, first.width);
        if let Some(bad) = parts.iter().find(|p| p.height != h || p.width != w) {
            return Err(Error::geom(format!(
                "concat spatial mismatch: {h}x{w} vs {}x{}",
                bad.height, bad.width
            )));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for pos in 0..h * w {
            for p in parts {
                data.extend_from_slice(p.cell(pos));
            }
        }
        FeatureMap::new(h, w, channels, data)
    }

    /// Row-major flattening of the grid into `height * width` tokens.
    pub fn to_tokens(&self) -> TokenSequence {
        TokenSequence {
            len: self.height * self.width,
            channels: self.channels,
            data: self.data.clone(),
        }
    }
}

impl Dense for FeatureMap {
    fn values(&self) -> &[f64] {
        &self.data
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `len × channels` token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    len: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TokenSequence {
    pub fn new(len: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || channels == 0 {
            return Err(Error::dim(format!(
                "token sequence dims must be positive, got {len}x{channels}"
            )));
        }
        check_len(len * channels, data.len(), "token sequence")?;
        Ok(Self {
            len,
            channels,
            data,
        })
    }

    pub fn zeros(len: usize, channels: usize) -> Self {
        assert!(len > 0 && channels > 0, "empty token sequence");
        Self {
            len,
            channels,
            data: vec![0.0; len * channels],
        }
    }

    pub fn from_fn(len: usize, channels: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(len, channels);
        for t in 0..len {
            for c in 0..channels {
                out.data[t * channels + c] = f(t, c);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.len, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, value: f64) {
        self.data[t * self.channels + c] = value;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn add(&self, other: &TokenSequence) -> Result<TokenSequence> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "cannot add sequences {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(TokenSequence {
            len: self.len,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> TokenSequence {
        self.map(|v| v * factor)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> TokenSequence {
        TokenSequence {
            len: self.len,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Inverse of [`FeatureMap::to_tokens`]: reshapes row-major tokens into a grid.
    pub fn into_grid(self, height: usize, width: usize) -> Result<FeatureMap> {
        if height * width != self.len {
            return Err(Error::geom(format!(
                "cannot reshape {} tokens into a {height}x{width} grid",
                self.len
            )));
        }
        FeatureMap::new(height, width, self.channels, self.data)
    }
}

impl Dense for TokenSequence {
    fn values(&self) -> &[f64] {
        &self.data
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Row-major `rows × cols` matrix; as a linear map it sends `cols`-vectors to `rows`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim(format!(
                "matrix dims must be positive, got {rows}x{cols}"
            )));
        }
        check_len(rows * cols, data.len(), "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · v`; `v.len()` must equal `cols`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dim(format!(
                "matvec: matrix has {} cols, vector has {} entries",
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }
}

impl Dense for Matrix {
    fn values(&self) -> &[f64] {
        &self.data
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Convolution weights laid out row-major as `(kh, kw, c_in, c_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(kh: usize, kw: usize, c_in: usize, c_out: usize, data: Vec<f64>) -> Result<Self> {
        if kh == 0 || kw == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::dim(format!(
                "kernel dims must be positive, got {kh}x{kw}x{c_in}x{c_out}"
            )));
        }
        check_len(kh * kw * c_in * c_out, data.len(), "kernel")?;
        Ok(Self {
            kh,
            kw,
            c_in,
            c_out,
            data,
        })
    }

    pub fn zeros(kh: usize, kw: usize, c_in: usize, c_out: usize) -> Self {
        Self::new(kh, kw, c_in, c_out, vec![0.0; kh * kw * c_in * c_out]).expect("positive dims")
    }

    pub fn from_fn(
        kh: usize,
        kw: usize,
        c_in: usize,
        c_out: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut k = Self::zeros(kh, kw, c_in, c_out);
        for a in 0..kh {
            for b in 0..kw {
                for i in 0..c_in {
                    for o in 0..c_out {
                        let idx = k.index(a, b, i, o);
                        k.data[idx] = f(a, b, i, o);
                    }
                }
            }
        }
        k
    }

    /// A `size × size` kernel whose center tap is the channel identity.
    pub fn centered_identity(size: usize, channels: usize) -> Self {
        let mid = size / 2;
        Self::from_fn(size, size, channels, channels, |a, b, i, o| {
            if a == mid && b == mid && i == o {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.kh, self.kw, self.c_in, self.c_out)
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn index(&self, a: usize, b: usize, i: usize, o: usize) -> usize {
        ((a * self.kw + b) * self.c_in + i) * self.c_out + o
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, i: usize, o: usize) -> f64 {
        self.data[self.index(a, b, i, o)]
    }
}

impl Dense for Kernel {
    fn values(&self) -> &[f64] {
        &self.data
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}
