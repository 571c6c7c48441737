//! Compact little-endian binary formats and size accounting.
//!
//! `SCTE` holds a distilled model:
//!
//! ```text
//! "SCTE" | u16 version | u8 task | u32 d_in | u32 p | u32 n_layers
//! | u32 dims[n_layers + 1] | f32 means[d_in] | f32 stds[d_in]
//! | per layer: f32 weights[out * in] (row-major), f32 biases[out]
//! | f32 coefficients[p] | u32 crc32 of everything before it
//! ```
//!
//! `SCTF` holds the prediction-critical arrays of a tree ensemble:
//!
//! ```text
//! "SCTF" | u16 version | u8 kind | u32 n_features | u32 n_trees | f32 scale | f32 base
//! | per tree: u32 n_nodes, i32 feature[n], f32 threshold[n], i32 left[n],
//!   i32 right[n], f32 value[n]
//! | u32 crc32
//! ```

use ndarray::{Array1, Array2};

use crate::cart::{Tree, LEAF};
use crate::data::{ScalingStats, Task};
use crate::distill::DistilledModel;
use crate::ensemble::{Forest, GbmModel};
use crate::error::{Result, ScateError};
use crate::mlp::{self, Mlp};

pub const SCTE_MAGIC: &[u8; 4] = b"SCTE";
pub const SCTF_MAGIC: &[u8; 4] = b"SCTF";
pub const FORMAT_VERSION: u16 = 1;

/// Bytes of an `SCTF` file holding no trees.
pub const SCTF_EMPTY_SIZE: usize = 4 + 2 + 1 + 4 + 4 + 4 + 4 + 4;
/// Bytes per tree node in `SCTF`.
pub const SCTF_NODE_SIZE: usize = 4 * 5;

/// Serialized `SCTE` length for a network with these layer sizes.
pub fn scte_size(dims: &[usize]) -> usize {
    let d_in = dims[0];
    let p = *dims.last().unwrap();
    4 + 2 + 1 + 4 + 4 + 4 + 4 * dims.len() + 8 * d_in + 4 * mlp::param_count(dims) + 4 * p + 4
}

/// Serialized `SCTF` length for these trees.
pub fn forest_size(trees: &[Tree]) -> usize {
    SCTF_EMPTY_SIZE + trees.iter().map(|t| 4 + SCTF_NODE_SIZE * t.n_nodes()).sum::<usize>()
}

/// Anything with a defined on-disk footprint.
pub trait OnDiskSize {
    fn serialized_size(&self) -> usize;
}

impl OnDiskSize for DistilledModel {
    fn serialized_size(&self) -> usize {
        scte_size(&self.mlp.layer_dims)
    }
}

impl OnDiskSize for Forest {
    fn serialized_size(&self) -> usize {
        forest_size(&self.trees)
    }
}

impl OnDiskSize for GbmModel {
    fn serialized_size(&self) -> usize {
        forest_size(&self.trees)
    }
}

impl OnDiskSize for MinimalForest {
    fn serialized_size(&self) -> usize {
        SCTF_EMPTY_SIZE + self.trees.iter().map(|t| 4 + SCTF_NODE_SIZE * t.feature.len()).sum::<usize>()
    }
}

pub fn measure_size<T: OnDiskSize + ?Sized>(item: &T) -> usize {
    item.serialized_size()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.0);
        self.u32(crc);
        self.0
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ScateError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f32().map(f64::from)).collect()
    }
}

// Checks magic, CRC and version; returns a reader positioned after the version.
fn open<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Reader<'a>> {
    if bytes.len() < 4 {
        return Err(ScateError::Truncated);
    }
    if &bytes[..4] != magic {
        return Err(ScateError::BadMagic);
    }
    if bytes.len() < 4 + 2 + 4 {
        return Err(ScateError::Truncated);
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ScateError::CrcMismatch { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ScateError::UnsupportedVersion(version));
    }
    Ok(r)
}

fn task_code(task: Task) -> u8 {
    match task {
        Task::Regression => 0,
        Task::BinaryClassification => 1,
    }
}

/// Encodes a distilled model; parameters are stored as `f32`.
pub fn serialize(model: &DistilledModel) -> Vec<u8> {
    let dims = &model.mlp.layer_dims;
    let mut w = Writer(Vec::with_capacity(scte_size(dims)));
    w.0.extend_from_slice(SCTE_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u8(task_code(model.task));
    w.u32(dims[0] as u32);
    w.u32(model.coefficients.len() as u32);
    w.u32(model.mlp.n_layers() as u32);
    for &d in dims {
        w.u32(d as u32);
    }
    for &m in &model.scaling.means {
        w.f32(m);
    }
    for &s in &model.scaling.stds {
        w.f32(s);
    }
    for (wl, bl) in model.mlp.weights.iter().zip(&model.mlp.biases) {
        for &v in wl.iter() {
            w.f32(v);
        }
        for &v in bl.iter() {
            w.f32(v);
        }
    }
    for &c in model.coefficients.iter() {
        w.f32(c);
    }
    w.finish()
}

/// Decodes an `SCTE` buffer. The result carries no provenance.
pub fn deserialize(bytes: &[u8]) -> Result<DistilledModel> {
    let mut r = open(bytes, SCTE_MAGIC)?;
    let task = match r.u8()? {
        0 => Task::Regression,
        1 => Task::BinaryClassification,
        t => return Err(ScateError::InvalidParameter(format!("unknown task code {t}"))),
    };
    let d_in = r.u32()? as usize;
    let p = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 1 << 16 {
        return Err(ScateError::BadDims(vec![n_layers]));
    }
    let dims: Vec<usize> = (0..=n_layers).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
    if dims[0] != d_in || dims[n_layers] != p || dims.contains(&0) {
        return Err(ScateError::BadDims(dims));
    }
    // all remaining content is fixed by the dims; reject short buffers before allocating
    let expected = scte_size(&dims) - 4;
    if r.buf.len() < expected {
        return Err(ScateError::Truncated);
    }
    let means = r.f32s(d_in)?;
    let stds = r.f32s(d_in)?;
    let mut weights = Vec::with_capacity(n_layers);
    let mut biases = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (i, o) = (dims[l], dims[l + 1]);
        let w = Array2::from_shape_vec((o, i), r.f32s(o * i)?).expect("shape");
        weights.push(w);
        biases.push(Array1::from(r.f32s(o)?));
    }
    let coefficients = Array1::from(r.f32s(p)?);
    if r.pos != r.buf.len() {
        return Err(ScateError::InvalidParameter("trailing bytes after coefficients".into()));
    }
    Ok(DistilledModel {
        mlp: Mlp { layer_dims: dims, weights, biases },
        coefficients,
        scaling: ScalingStats { means, stds },
        task,
        p,
        provenance: None,
    })
}

/// Single-precision inference image of a distilled model, as it would run on device.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactModel {
    pub means: Vec<f32>,
    pub stds: Vec<f32>,
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
    pub dims: Vec<usize>,
    pub coefficients: Vec<f32>,
}

impl CompactModel {
    pub fn from_model(m: &DistilledModel) -> Self {
        let f = |v: &f64| *v as f32;
        CompactModel {
            means: m.scaling.means.iter().map(f).collect(),
            stds: m.scaling.stds.iter().map(f).collect(),
            weights: m.mlp.weights.iter().map(|w| w.iter().map(f).collect()).collect(),
            biases: m.mlp.biases.iter().map(|b| b.iter().map(f).collect()).collect(),
            dims: m.mlp.layer_dims.clone(),
            coefficients: m.coefficients.iter().map(f).collect(),
        }
    }

    pub fn predict(&self, x: &[f32]) -> Result<f32> {
        let d = self.dims[0];
        if x.len() != d {
            return Err(ScateError::DimensionMismatch { expected: d, got: x.len() });
        }
        let mut a: Vec<f32> = x
            .iter()
            .enumerate()
            .map(|(j, &v)| if self.stds[j] == 0.0 { v } else { (v - self.means[j]) / self.stds[j] })
            .collect();
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let w = &self.weights[l];
            let mut z = Vec::with_capacity(o);
            for r in 0..o {
                let mut acc = self.biases[l][r];
                for c in 0..i {
                    acc += w[r * i + c] * a[c];
                }
                z.push(if l == last { acc } else { acc / (1.0 + (-acc).exp()) });
            }
            a = z;
        }
        Ok(a.iter().zip(&self.coefficients).map(|(u, c)| u * c).sum())
    }
}

/// `f32` prediction for an `f64` model, matching what a deserialized copy computes.
pub fn predict_f32(model: &DistilledModel, x: &[f32]) -> Result<f32> {
    CompactModel::from_model(model).predict(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    /// Prediction is the mean of tree outputs.
    Average,
    /// Prediction is `base + scale * sum of tree outputs`.
    Boosted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalTree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f32>,
    pub left: Vec<i32>,
    pub right: Vec<i32>,
    pub value: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalForest {
    pub kind: EnsembleKind,
    pub n_features: usize,
    pub scale: f32,
    pub base: f32,
    pub trees: Vec<MinimalTree>,
}

impl MinimalTree {
    fn from_tree(t: &Tree) -> Self {
        MinimalTree {
            feature: t.feature.clone(),
            threshold: t.threshold.iter().map(|&v| v as f32).collect(),
            left: t.left.clone(),
            right: t.right.clone(),
            value: t.value.iter().map(|&v| v as f32).collect(),
        }
    }

    fn predict(&self, x: &[f32]) -> f32 {
        let mut node = 0usize;
        while self.feature[node] != LEAF {
            let f = self.feature[node] as usize;
            node = if x[f] <= self.threshold[node] { self.left[node] } else { self.right[node] } as usize;
        }
        self.value[node]
    }
}

impl MinimalForest {
    pub fn from_forest(f: &Forest) -> Self {
        MinimalForest {
            kind: EnsembleKind::Average,
            n_features: f.n_features(),
            scale: 1.0,
            base: 0.0,
            trees: f.trees.iter().map(MinimalTree::from_tree).collect(),
        }
    }

    pub fn from_gbm(g: &GbmModel) -> Self {
        MinimalForest {
            kind: EnsembleKind::Boosted,
            n_features: g.n_features,
            scale: g.learning_rate as f32,
            base: g.base_score as f32,
            trees: g.trees.iter().map(MinimalTree::from_tree).collect(),
        }
    }

    pub fn predict(&self, x: &[f32]) -> Result<f32> {
        if x.len() != self.n_features {
            return Err(ScateError::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        let total: f32 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(match self.kind {
            EnsembleKind::Average => total / self.trees.len().max(1) as f32,
            EnsembleKind::Boosted => self.base + self.scale * total,
        })
    }
}

pub fn serialize_forest(f: &MinimalForest) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(f.serialized_size()));
    w.0.extend_from_slice(SCTF_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u8(match f.kind {
        EnsembleKind::Average => 0,
        EnsembleKind::Boosted => 1,
    });
    w.u32(f.n_features as u32);
    w.u32(f.trees.len() as u32);
    w.f32(f.scale as f64);
    w.f32(f.base as f64);
    for t in &f.trees {
        w.u32(t.feature.len() as u32);
        t.feature.iter().for_each(|&v| w.i32(v));
        t.threshold.iter().for_each(|&v| w.0.extend_from_slice(&v.to_le_bytes()));
        t.left.iter().for_each(|&v| w.i32(v));
        t.right.iter().for_each(|&v| w.i32(v));
        t.value.iter().for_each(|&v| w.0.extend_from_slice(&v.to_le_bytes()));
    }
    w.finish()
}

pub fn deserialize_forest(bytes: &[u8]) -> Result<MinimalForest> {
    let mut r = open(bytes, SCTF_MAGIC)?;
    let kind = match r.u8()? {
        0 => EnsembleKind::Average,
        1 => EnsembleKind::Boosted,
        k => return Err(ScateError::InvalidParameter(format!("unknown ensemble kind {k}"))),
    };
    let n_features = r.u32()? as usize;
    let n_trees = r.u32()? as usize;
    let scale = r.f32()?;
    let base = r.f32()?;
    let mut trees = Vec::new();
    for _ in 0..n_trees {
        let n = r.u32()? as usize;
        if r.buf.len() - r.pos < n * SCTF_NODE_SIZE {
            return Err(ScateError::Truncated);
        }
        let feature = (0..n).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        let threshold = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let left = (0..n).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        let right = (0..n).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        let value = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        trees.push(MinimalTree { feature, threshold, left, right, value });
    }
    if r.pos != r.buf.len() {
        return Err(ScateError::InvalidParameter("trailing bytes after trees".into()));
    }
    Ok(MinimalForest { kind, n_features, scale, base, trees })
}
