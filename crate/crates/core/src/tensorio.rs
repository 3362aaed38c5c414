//! Binary tensor container and dataset manifests.
//!
//! On-disk tensor layout (everything little-endian):
//!
//! ```text
//! offset  size          field
//! 0       4             magic, ASCII "MSB1"
//! 4       4             dtype code: 0 = f32, 1 = f64, 2 = i64
//! 8       4             ndim (u32, 1..=8)
//! 12      8 * ndim      shape, u64 per dimension
//! ...     product*size  payload, row-major
//! ```
//!
//! Round-trips are bit-identical, NaN payloads included; nothing is
//! canonicalized on read. Datasets are described by small JSON manifests
//! (`kind` = "latents" | "neural" | "judgements") whose `items[].path`
//! entries are resolved relative to the manifest file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"MSB1";
const MAX_NDIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::I64 => 2,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            2 => Some(Dtype::I64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

/// Dense row-major array. The in-memory mirror of one tensor file.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::validated(shape, TensorData::F32(data))
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::validated(shape, TensorData::F64(data))
    }

    pub fn from_i64(shape: Vec<usize>, data: Vec<i64>) -> Result<Self> {
        Self::validated(shape, TensorData::I64(data))
    }

    fn validated(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_NDIM {
            return Err(Error::InvalidArgument(format!(
                "tensor ndim must be 1..={MAX_NDIM}, got {}",
                shape.len()
            )));
        }
        let expect: usize = shape.iter().product();
        let got = match &data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        };
        if expect != got {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} implies {expect} elements, got {got}"
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::I64(_) => Dtype::I64,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Widen the payload to f64. Exact for f32; i64 magnitudes above 2^53
    /// would round, which no producer in this crate emits.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// View a 2-d tensor as a matrix, widening to f64.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.shape.len() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "expected 2-d tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(DMatrix::from_row_slice(
            self.shape[0],
            self.shape[1],
            &self.to_f64_vec(),
        ))
    }

    pub fn from_matrix_f32(m: &DMatrix<f64>) -> Tensor {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)] as f32);
            }
        }
        Tensor {
            shape: vec![r, c],
            data: TensorData::F32(data),
        }
    }

    pub fn from_matrix_f64(m: &DMatrix<f64>) -> Tensor {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Tensor {
            shape: vec![r, c],
            data: TensorData::F64(data),
        }
    }

    /// Bit-pattern equality: shape, dtype, and payload bits (NaN ≡ NaN).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
            }
            (TensorData::I64(a), TensorData::I64(b)) => a == b,
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC).map_err(io_err(path))?;
    w.write_all(&tensor.dtype().code().to_le_bytes())
        .map_err(io_err(path))?;
    w.write_all(&(tensor.shape.len() as u32).to_le_bytes())
        .map_err(io_err(path))?;
    for &dim in &tensor.shape {
        w.write_all(&(dim as u64).to_le_bytes()).map_err(io_err(path))?;
    }
    match &tensor.data {
        TensorData::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(io_err(path))?;
            }
        }
        TensorData::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(io_err(path))?;
            }
        }
        TensorData::I64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(io_err(path))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| fmt("file shorter than header".into()))?;
    if magic != MAGIC {
        return Err(fmt(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&MAGIC)
        )));
    }

    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| fmt("file shorter than header".into()))?;
    let dtype = Dtype::from_code(u32::from_le_bytes(u32buf))
        .ok_or_else(|| fmt(format!("unknown dtype code {}", u32::from_le_bytes(u32buf))))?;

    r.read_exact(&mut u32buf)
        .map_err(|_| fmt("file shorter than header".into()))?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(fmt(format!("ndim must be 1..={MAX_NDIM}, got {ndim}")));
    }

    let mut shape = Vec::with_capacity(ndim);
    let mut u64buf = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut u64buf)
            .map_err(|_| fmt("file shorter than declared shape".into()))?;
        shape.push(u64::from_le_bytes(u64buf) as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fmt(format!("shape {shape:?} overflows element count")))?;
    let expected = (count * dtype.size_bytes()) as u64;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io_err(path))?;
    if (payload.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len() as u64,
        });
    }
    if (payload.len() as u64) > expected {
        return Err(fmt(format!(
            "{} trailing bytes after payload",
            payload.len() as u64 - expected
        )));
    }

    let data = match dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::I64 => TensorData::I64(
            payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(Tensor { shape, data })
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
    /// Human proportion-hit for judgement manifests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proportion: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnimalMeta {
    pub name: String,
    pub n_units: usize,
}

/// The one manifest schema shared by all three dataset kinds. Which optional
/// fields must be present depends on `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_width_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub animals: Option<Vec<AnimalMeta>>,
    pub items: Vec<ManifestItem>,
}

fn read_manifest(path: &Path, want_kind: &str) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if manifest.kind != want_kind {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            reason: format!("kind is {:?}, expected {:?}", manifest.kind, want_kind),
        });
    }
    Ok(manifest)
}

fn manifest_err(path: &Path, reason: String) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        reason,
    }
}

fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(rel)
}

// ---------------------------------------------------------------------------
// Latents
// ---------------------------------------------------------------------------

/// One stimulus worth of encoder features, `[frames × d]`, widened to f64.
#[derive(Debug, Clone)]
pub struct LatentSequence {
    pub id: String,
    pub scenario: Option<String>,
    pub label: Option<i64>,
    pub latents: DMatrix<f64>,
}

impl LatentSequence {
    pub fn frames(&self) -> usize {
        self.latents.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct LatentDataset {
    pub d: usize,
    /// Temporal subsample factor of the upstream feature extraction.
    pub subsample: u32,
    pub items: Vec<LatentSequence>,
}

impl LatentDataset {
    pub fn min_frames(&self) -> usize {
        self.items.iter().map(|s| s.frames()).min().unwrap_or(0)
    }

    pub fn get(&self, id: &str) -> Option<&LatentSequence> {
        self.items.iter().find(|s| s.id == id)
    }
}

pub fn load_latent_dataset(manifest_path: &Path) -> Result<LatentDataset> {
    let manifest = read_manifest(manifest_path, "latents")?;
    let d = manifest
        .d
        .ok_or_else(|| manifest_err(manifest_path, "latents manifest requires \"d\"".into()))?;
    if manifest.items.is_empty() {
        return Err(Error::Empty(format!(
            "latents manifest {} lists no stimuli",
            manifest_path.display()
        )));
    }
    let subsample = manifest.subsample.unwrap_or(1);
    let mut items = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let rel = item.path.as_ref().ok_or_else(|| {
            manifest_err(manifest_path, format!("stimulus {:?} has no path", item.id))
        })?;
        let tensor_path = resolve(manifest_path, rel);
        let tensor = read_tensor(&tensor_path)?;
        if tensor.shape().len() != 2 {
            return Err(manifest_err(
                manifest_path,
                format!(
                    "stimulus {:?}: expected [frames × d] tensor, got shape {:?}",
                    item.id,
                    tensor.shape()
                ),
            ));
        }
        let (frames, cols) = (tensor.shape()[0], tensor.shape()[1]);
        if cols != d {
            return Err(Error::DimensionMismatch(format!(
                "stimulus {:?} in {}: d = {cols}, manifest declares {d}",
                item.id,
                tensor_path.display()
            )));
        }
        if frames < 2 {
            return Err(manifest_err(
                manifest_path,
                format!("stimulus {:?} has {frames} frames, need at least 2", item.id),
            ));
        }
        items.push(LatentSequence {
            id: item.id.clone(),
            scenario: item.scenario.clone(),
            label: item.label,
            latents: tensor.to_matrix()?,
        });
    }
    Ok(LatentDataset { d, subsample, items })
}

/// Write a latent dataset as one manifest + one tensor file per stimulus
/// (f32 payloads). Returns the manifest path.
pub fn save_latent_dataset(dataset: &LatentDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut items = Vec::with_capacity(dataset.items.len());
    for seq in &dataset.items {
        let file = format!("{}.msb", seq.id);
        write_tensor(&dir.join(&file), &Tensor::from_matrix_f32(&seq.latents))?;
        items.push(ManifestItem {
            id: seq.id.clone(),
            path: Some(file),
            scenario: seq.scenario.clone(),
            label: seq.label,
            proportion: None,
        });
    }
    let manifest = Manifest {
        kind: "latents".into(),
        d: Some(dataset.d),
        subsample: Some(dataset.subsample),
        bin_width_ms: None,
        animals: None,
        items,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Neural recordings
// ---------------------------------------------------------------------------

/// Per-condition response block, `[trials × bins × units]`, NaN marking
/// missing data. A trial is "usable" if any of its entries is finite.
#[derive(Debug, Clone)]
pub struct TrialTensor {
    pub trials: usize,
    pub bins: usize,
    pub units: usize,
    data: Vec<f64>,
}

impl TrialTensor {
    pub fn new(trials: usize, bins: usize, units: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != trials * bins * units {
            return Err(Error::DimensionMismatch(format!(
                "trial tensor {trials}×{bins}×{units} needs {} values, got {}",
                trials * bins * units,
                data.len()
            )));
        }
        Ok(TrialTensor { trials, bins, units, data })
    }

    #[inline]
    pub fn get(&self, trial: usize, bin: usize, unit: usize) -> f64 {
        self.data[(trial * self.bins + bin) * self.units + unit]
    }

    pub fn trial_matrix(&self, trial: usize) -> DMatrix<f64> {
        let start = trial * self.bins * self.units;
        DMatrix::from_row_slice(self.bins, self.units, &self.data[start..start + self.bins * self.units])
    }

    pub fn is_trial_usable(&self, trial: usize) -> bool {
        let start = trial * self.bins * self.units;
        self.data[start..start + self.bins * self.units]
            .iter()
            .any(|x| x.is_finite())
    }

    pub fn usable_trials(&self) -> usize {
        (0..self.trials).filter(|&t| self.is_trial_usable(t)).count()
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// NaN-aware per-(bin, unit) mean over the given trials.
    pub fn mean_over_trials(&self, trials: &[usize]) -> DMatrix<f64> {
        let mut sum = DMatrix::<f64>::zeros(self.bins, self.units);
        let mut count = DMatrix::<f64>::zeros(self.bins, self.units);
        for &t in trials {
            for b in 0..self.bins {
                for u in 0..self.units {
                    let v = self.get(t, b, u);
                    if v.is_finite() {
                        sum[(b, u)] += v;
                        count[(b, u)] += 1.0;
                    }
                }
            }
        }
        sum.zip_map(&count, |s, c| if c > 0.0 { s / c } else { f64::NAN })
    }
}

#[derive(Debug, Clone)]
pub struct NeuralCondition {
    pub id: String,
    pub responses: TrialTensor,
}

#[derive(Debug, Clone)]
pub struct NeuralDataset {
    pub animals: Vec<AnimalMeta>,
    pub bin_width_ms: f64,
    pub conditions: Vec<NeuralCondition>,
}

impl NeuralDataset {
    pub fn total_units(&self) -> usize {
        self.animals.iter().map(|a| a.n_units).sum()
    }

    /// Column range of one animal's units within the shared unit axis.
    pub fn animal_unit_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for a in &self.animals {
            if a.name == name {
                return Some(start..start + a.n_units);
            }
            start += a.n_units;
        }
        None
    }

    pub fn condition_ids(&self) -> Vec<String> {
        self.conditions.iter().map(|c| c.id.clone()).collect()
    }
}

pub fn load_neural_dataset(manifest_path: &Path) -> Result<NeuralDataset> {
    let manifest = read_manifest(manifest_path, "neural")?;
    let bin_width_ms = manifest.bin_width_ms.ok_or_else(|| {
        manifest_err(manifest_path, "neural manifest requires \"bin_width_ms\"".into())
    })?;
    if !(bin_width_ms.is_finite() && bin_width_ms > 0.0) {
        return Err(manifest_err(
            manifest_path,
            format!("bin_width_ms must be positive, got {bin_width_ms}"),
        ));
    }
    let animals = manifest
        .animals
        .clone()
        .filter(|a| !a.is_empty())
        .ok_or_else(|| {
            manifest_err(manifest_path, "neural manifest requires nonempty \"animals\"".into())
        })?;
    let total_units: usize = animals.iter().map(|a| a.n_units).sum();
    if manifest.items.is_empty() {
        return Err(Error::Empty(format!(
            "neural manifest {} lists no conditions",
            manifest_path.display()
        )));
    }

    let mut conditions = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let rel = item.path.as_ref().ok_or_else(|| {
            manifest_err(manifest_path, format!("condition {:?} has no path", item.id))
        })?;
        let tensor_path = resolve(manifest_path, rel);
        let tensor = read_tensor(&tensor_path)?;
        let shape = tensor.shape().to_vec();
        if shape.len() != 3 {
            return Err(manifest_err(
                manifest_path,
                format!(
                    "condition {:?}: expected [trials × bins × units] tensor, got shape {shape:?}",
                    item.id
                ),
            ));
        }
        if shape[2] != total_units {
            return Err(Error::DimensionMismatch(format!(
                "condition {:?} in {}: {} units, animals declare {total_units}",
                item.id,
                tensor_path.display(),
                shape[2]
            )));
        }
        let responses = TrialTensor::new(shape[0], shape[1], shape[2], tensor.to_f64_vec())?;
        if responses.usable_trials() == 0 {
            return Err(manifest_err(
                manifest_path,
                format!("condition {:?} has zero non-NaN trials", item.id),
            ));
        }
        conditions.push(NeuralCondition {
            id: item.id.clone(),
            responses,
        });
    }
    Ok(NeuralDataset {
        animals,
        bin_width_ms,
        conditions,
    })
}

/// Write a neural dataset as one manifest + one f64 tensor per condition.
pub fn save_neural_dataset(dataset: &NeuralDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut items = Vec::with_capacity(dataset.conditions.len());
    for cond in &dataset.conditions {
        let file = format!("{}.msb", cond.id);
        let t = &cond.responses;
        let tensor = Tensor::from_f64(vec![t.trials, t.bins, t.units], t.raw().to_vec())?;
        write_tensor(&dir.join(&file), &tensor)?;
        items.push(ManifestItem {
            id: cond.id.clone(),
            path: Some(file),
            scenario: None,
            label: None,
            proportion: None,
        });
    }
    let manifest = Manifest {
        kind: "neural".into(),
        d: None,
        subsample: None,
        bin_width_ms: Some(dataset.bin_width_ms),
        animals: Some(dataset.animals.clone()),
        items,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Human judgements
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct JudgementItem {
    pub id: String,
    pub scenario: String,
    /// Fraction of human responders judging "hit".
    pub proportion: f64,
    /// Ground-truth outcome.
    pub hit: bool,
}

#[derive(Debug, Clone)]
pub struct HumanJudgements {
    pub items: Vec<JudgementItem>,
}

impl HumanJudgements {
    /// Scenario labels in first-appearance order with their stimulus counts.
    /// Counts sum to the total stimulus count by construction.
    pub fn scenario_counts(&self) -> Vec<(String, usize)> {
        let mut order: Vec<String> = Vec::new();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for item in &self.items {
            if !counts.contains_key(&item.scenario) {
                order.push(item.scenario.clone());
            }
            *counts.entry(item.scenario.clone()).or_insert(0) += 1;
        }
        order.into_iter().map(|s| {
            let n = counts[&s];
            (s, n)
        }).collect()
    }

    pub fn get(&self, id: &str) -> Option<&JudgementItem> {
        self.items.iter().find(|i| i.id == id)
    }
}

pub fn load_human_judgements(manifest_path: &Path) -> Result<HumanJudgements> {
    let manifest = read_manifest(manifest_path, "judgements")?;
    if manifest.items.is_empty() {
        return Err(Error::Empty(format!(
            "judgements manifest {} lists no stimuli",
            manifest_path.display()
        )));
    }
    let mut items = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let proportion = item.proportion.ok_or_else(|| {
            manifest_err(manifest_path, format!("stimulus {:?} has no proportion", item.id))
        })?;
        if !(0.0..=1.0).contains(&proportion) {
            return Err(manifest_err(
                manifest_path,
                format!("stimulus {:?}: proportion {proportion} outside [0, 1]", item.id),
            ));
        }
        let label = item.label.ok_or_else(|| {
            manifest_err(manifest_path, format!("stimulus {:?} has no label", item.id))
        })?;
        let hit = match label {
            0 => false,
            1 => true,
            other => {
                return Err(manifest_err(
                    manifest_path,
                    format!("stimulus {:?}: label must be 0 or 1, got {other}", item.id),
                ))
            }
        };
        let scenario = item.scenario.clone().ok_or_else(|| {
            manifest_err(manifest_path, format!("stimulus {:?} has no scenario", item.id))
        })?;
        items.push(JudgementItem {
            id: item.id.clone(),
            scenario,
            proportion,
            hit,
        });
    }
    Ok(HumanJudgements { items })
}

pub fn save_human_judgements(judgements: &HumanJudgements, path: &Path) -> Result<()> {
    let items = judgements
        .items
        .iter()
        .map(|i| ManifestItem {
            id: i.id.clone(),
            path: None,
            scenario: Some(i.scenario.clone()),
            label: Some(i.hit as i64),
            proportion: Some(i.proportion),
        })
        .collect();
    let manifest = Manifest {
        kind: "judgements".into(),
        d: None,
        subsample: None,
        bin_width_ms: None,
        animals: None,
        items,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(io_err(path))
}
