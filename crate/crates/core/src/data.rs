//! Labeled datasets, class events and synthetic Gaussian mixtures.
//!
//! Two on-disk formats are supported:
//!
//! * CSV: one record per line, `label,x_1,...,x_d`, with an optional first
//!   header line starting with `#`.
//! * `fvec1`: little-endian binary. The magic bytes `FVEC1`, then `N: u64`,
//!   `d: u64`, then `N` records of `[label: u32, d x f32]`.
//!
//! Features are always held as `f64` in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, domain};

pub const FVEC1_MAGIC: &[u8; 5] = b"FVEC1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Fvec1,
}

impl Format {
    /// Guess from the file extension; anything other than `.fvec1` is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("fvec1") => Format::Fvec1,
            _ => Format::Csv,
        }
    }
}

/// `N x d` features with dense class labels `0..K`.
///
/// `label_map[k]` is the label that class `k` carried in the source file.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<u32>,
    label_map: Vec<u32>,
}

impl LabeledDataset {
    /// Builds a dataset from raw labels, remapping them to a contiguous range
    /// in increasing order of the original value.
    pub fn new(features: Array2<f64>, raw_labels: Vec<u32>) -> Result<Self> {
        if features.nrows() != raw_labels.len() {
            return Err(Error::data(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                raw_labels.len()
            )));
        }
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::data("dataset is empty"));
        }
        if let Some((idx, v)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let d = features.ncols();
            return Err(Error::data(format!(
                "non-finite value {v} at row {}, column {}",
                idx / d + 1,
                idx % d
            )));
        }
        let mut label_map = raw_labels.clone();
        label_map.sort_unstable();
        label_map.dedup();
        let labels = raw_labels
            .iter()
            .map(|l| label_map.binary_search(l).unwrap() as u32)
            .collect();
        Ok(LabeledDataset {
            features,
            labels,
            label_map,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_map(&self) -> &[u32] {
        &self.label_map
    }

    pub fn original_label(&self, class: usize) -> u32 {
        self.label_map[class]
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn count(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    /// Same labels, new features (e.g. a perturbed copy).
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(Error::domain("replacement features must keep the shape"));
        }
        let raw = self.labels.iter().map(|&l| self.label_map[l as usize]).collect();
        LabeledDataset::new(features, raw)
    }

    /// Rows of `rows`, in the given order, as a fresh matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), rows)
    }
}

/// Disjoint, exhaustive class events with their empirical probabilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventPartition {
    events: Vec<Vec<usize>>,
    class_probs: Vec<f64>,
}

impl EventPartition {
    /// Checks disjointness and coverage of `0..n` and computes `|event| / n`.
    pub fn new(events: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (k, ev) in events.iter().enumerate() {
            for &i in ev {
                if i >= n {
                    return Err(Error::domain(format!("event {k} holds index {i} >= {n}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::domain(format!("index {i} appears in more than one event")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::domain(format!("index {i} is not covered by any event")));
        }
        let class_probs = events.iter().map(|e| e.len() as f64 / n as f64).collect();
        Ok(EventPartition { events, class_probs })
    }

    pub fn events(&self) -> &[Vec<usize>] {
        &self.events
    }

    pub fn event(&self, k: usize) -> &[usize] {
        &self.events[k]
    }

    pub fn class_probs(&self) -> &[f64] {
        &self.class_probs
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

pub fn partition_by_label(ds: &LabeledDataset) -> EventPartition {
    let mut events = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        events[l as usize].push(i);
    }
    EventPartition::new(events, ds.count()).expect("labels induce a partition")
}

pub fn load_dataset(path: &Path, format: Format) -> Result<LabeledDataset> {
    let file = File::open(path)?;
    match format {
        Format::Csv => read_csv(BufReader::new(file)),
        Format::Fvec1 => read_fvec1(BufReader::new(file)),
    }
}

pub fn save_dataset(ds: &LabeledDataset, path: &Path, format: Format) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(ds, &mut w)?,
        Format::Fvec1 => write_fvec1(ds, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: BufRead>(reader: R) -> Result<LabeledDataset> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let row = lineno + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with('#')) {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label_field = fields.next().unwrap_or("");
        let label: u32 = label_field.parse().map_err(|_| Error::Parse {
            row,
            message: format!("label {label_field:?} is not a non-negative integer"),
        })?;
        let start = values.len();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                row,
                message: format!("feature {f:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!("non-finite value {v} at row {row}")));
            }
            values.push(v);
        }
        let width = values.len() - start;
        match dim {
            None if width == 0 => {
                return Err(Error::Parse {
                    row,
                    message: "record has no features".into(),
                })
            }
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {d} features, found {width}"),
                })
            }
            Some(_) => {}
        }
        labels.push(label);
    }
    let d = dim.ok_or_else(|| Error::data("no records in input"))?;
    let features = Array2::from_shape_vec((labels.len(), d), values).expect("shape checked per row");
    LabeledDataset::new(features, labels)
}

pub fn write_csv<W: Write>(ds: &LabeledDataset, w: &mut W) -> Result<()> {
    writeln!(w, "# label,{}", (0..ds.dim()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(","))?;
    for (row, &l) in ds.features.outer_iter().zip(&ds.labels) {
        write!(w, "{}", ds.label_map[l as usize])?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_fvec1<R: Read>(mut r: R) -> Result<LabeledDataset> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| Error::data("fvec1: truncated header"))?;
    if &magic != FVEC1_MAGIC {
        return Err(Error::data("fvec1: bad magic bytes"));
    }
    let (n, d) = read_fvec1_dims(&mut r)?;
    let (labels, values) = read_fvec1_records(&mut r, n, d)?;
    let features = Array2::from_shape_vec((n, d), values).expect("sized by header");
    LabeledDataset::new(features, labels)
}

pub(crate) fn read_fvec1_dims<R: Read>(r: &mut R) -> Result<(usize, usize)> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|_| Error::data("fvec1: truncated header"))?;
    let n = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf).map_err(|_| Error::data("fvec1: truncated header"))?;
    let d = u64::from_le_bytes(buf) as usize;
    if n == 0 || d == 0 {
        return Err(Error::data("fvec1: empty dataset"));
    }
    Ok((n, d))
}

pub(crate) fn read_fvec1_records<R: Read>(r: &mut R, n: usize, d: usize) -> Result<(Vec<u32>, Vec<f64>)> {
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * d);
    let mut rec = vec![0u8; 4 + 4 * d];
    for row in 0..n {
        r.read_exact(&mut rec)
            .map_err(|_| Error::data(format!("fvec1: truncated at record {}", row + 1)))?;
        labels.push(u32::from_le_bytes(rec[0..4].try_into().unwrap()));
        for j in 0..d {
            let o = 4 + 4 * j;
            let v = f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(Error::data(format!("non-finite value at record {}, column {j}", row + 1)));
            }
            values.push(v);
        }
    }
    Ok((labels, values))
}

pub(crate) fn write_fvec1_records<W: Write>(w: &mut W, features: ArrayView2<f64>, labels: impl Iterator<Item = u32>) -> Result<()> {
    for (row, label) in features.outer_iter().zip(labels) {
        w.write_all(&label.to_le_bytes())?;
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes `fvec1`. Features are narrowed to `f32`.
pub fn write_fvec1<W: Write>(ds: &LabeledDataset, w: &mut W) -> Result<()> {
    w.write_all(FVEC1_MAGIC)?;
    w.write_all(&(ds.count() as u64).to_le_bytes())?;
    w.write_all(&(ds.dim() as u64).to_le_bytes())?;
    write_fvec1_records(w, ds.features.view(), ds.labels.iter().map(|&l| ds.label_map[l as usize]))
}

/// One Gaussian class: `N(mean, Q diag(spectrum) Q^T)` with `Q` drawn from `rotation_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub mean: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub rotation_seed: u64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassSpec>,
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.spectrum.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::domain("synthetic spec needs at least one class"));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::domain("synthetic spec has zero dimension"));
        }
        for (k, c) in self.classes.iter().enumerate() {
            if c.spectrum.len() != d || c.mean.len() != d {
                return Err(Error::domain(format!("class {k}: mean/spectrum length must be {d}")));
            }
            if c.spectrum.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
                return Err(Error::domain(format!("class {k}: spectrum must be finite and non-negative")));
            }
            if c.spectrum.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::domain(format!("class {k}: spectrum must be non-increasing")));
            }
            if c.samples == 0 {
                return Err(Error::domain(format!("class {k}: needs at least one sample")));
            }
        }
        Ok(())
    }
}

/// Seeded orthogonal `d x d` matrix (modified Gram-Schmidt on a Gaussian matrix,
/// applied twice for orthogonality to machine precision).
pub fn random_orthogonal(d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, domain::SYNTH_ROTATION, d as u64, 0);
    let mut q = Array2::<f64>::zeros((d, d));
    for v in q.iter_mut() {
        *v = StandardNormal.sample(&mut r);
    }
    for _ in 0..2 {
        for j in 0..d {
            for k in 0..j {
                let dot = q.column(j).dot(&q.column(k));
                let ck = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-dot, &ck);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
    }
    q
}

/// Samples every class of `spec`. Row `i` of class `k` draws from the stream
/// `(seed, k, i)`, so the output does not depend on thread count.
pub fn synth_gaussian_mixture(spec: &SyntheticSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let d = spec.dim();
    let total: usize = spec.classes.iter().map(|c| c.samples).sum();
    let mut features = Array2::<f64>::zeros((total, d));
    let mut labels = Vec::with_capacity(total);
    let mut offset = 0;
    for (k, class) in spec.classes.iter().enumerate() {
        let q = random_orthogonal(d, class.rotation_seed);
        let scale: Array1<f64> = class.spectrum.iter().map(|l| l.sqrt()).collect();
        let block = features
            .slice_mut(ndarray::s![offset..offset + class.samples, ..])
            .into_slice()
            .expect("standard layout");
        par::for_each_chunk_mut(block, d * par::ROW_CHUNK, |chunk_idx, chunk| {
            let mut z = vec![0.0; d];
            for (r, row) in chunk.chunks_mut(d).enumerate() {
                let i = chunk_idx * par::ROW_CHUNK + r;
                let mut g = rng::stream(seed, domain::SYNTH_SAMPLE, k as u64, i as u64);
                for (zj, s) in z.iter_mut().zip(scale.iter()) {
                    let n: f64 = StandardNormal.sample(&mut g);
                    *zj = s * n;
                }
                for (a, out) in row.iter_mut().enumerate() {
                    let mut acc = class.mean[a];
                    for (b, zb) in z.iter().enumerate() {
                        acc += q[(a, b)] * zb;
                    }
                    *out = acc;
                }
            }
        });
        labels.extend(std::iter::repeat_n(k as u32, class.samples));
        offset += class.samples;
    }
    LabeledDataset::new(features, labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    GlobalUnitVariance,
    None,
}

/// Subtracts the global mean and scales every coordinate to unit
/// (population) variance.
pub fn standardize(ds: &LabeledDataset, mode: Standardization) -> Result<LabeledDataset> {
    if mode == Standardization::None {
        return Ok(ds.clone());
    }
    let n = ds.count() as f64;
    let mut out = ds.features.clone();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let vals: Vec<f64> = col.iter().copied().collect();
        let mean = par::pairwise_sum(&vals) / n;
        let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = par::pairwise_sum(&sq) / n;
        if !(var > 0.0) {
            return Err(Error::data(format!("coordinate {j} has zero variance")));
        }
        let inv = 1.0 / var.sqrt();
        col.mapv_inplace(|v| (v - mean) * inv);
    }
    Ok(LabeledDataset {
        features: out,
        labels: ds.labels.clone(),
        label_map: ds.label_map.clone(),
    })
}
