//! Datasets: deterministic synthetic generators, CSV ingestion, batching,
//! and synthetic corruption synthesis for robustness evaluation.
//!
//! Features are min-max scaled to `[0, 1]` per dimension so that L∞ radii in
//! the 8/255 range stay meaningful; the pre-scaling extents are recorded so
//! tests can invert the map and check generator geometry analytically.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::seeding::stream_rng;
use crate::tensor::Tensor;

/// Per-dimension affine scaling provenance: raw extent before mapping to [0,1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleInfo {
    pub raw_lo: f64,
    pub raw_hi: f64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// `[n × d]` features, already scaled into `feature_range`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Clamp bounds used by attacks and corruption.
    pub feature_range: (f64, f64),
    pub scale_info: Vec<ScaleInfo>,
    pub name: String,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.shape()[1]
    }

    /// Rows `idx` gathered into a fresh `[len × d]` tensor plus labels.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dims();
        let src = self.features.data();
        let mut data = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        let x = Tensor::matrix(idx.len(), d, data).expect("gather of finite features");
        (x, labels)
    }

    /// Subset copy preserving provenance.
    pub fn subset(&self, idx: &[usize], name_suffix: &str) -> Dataset {
        let (features, labels) = self.gather(idx);
        Dataset {
            features,
            labels,
            num_classes: self.num_classes,
            feature_range: self.feature_range,
            scale_info: self.scale_info.clone(),
            name: format!("{}{}", self.name, name_suffix),
            seed: self.seed,
        }
    }

    /// Deterministic stratified split into (train, test).
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid("dataset.test_fraction", "must lie in [0, 1)"));
        }
        let mut rng = stream_rng(seed, "split");
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for class in 0..self.num_classes {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            shuffle(&mut members, &mut rng);
            let n_test = (members.len() as f64 * test_fraction).round() as usize;
            test_idx.extend_from_slice(&members[..n_test]);
            train_idx.extend_from_slice(&members[n_test..]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(Error::invalid("dataset.test_fraction", "split left an empty side"));
        }
        Ok((self.subset(&train_idx, "/train"), self.subset(&test_idx, "/test")))
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    // Fisher-Yates, fixed draw order.
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    TwoMoons,
    Spirals,
    Gaussians,
    Circles,
}

impl SyntheticKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(SyntheticKind::TwoMoons),
            "spirals" => Ok(SyntheticKind::Spirals),
            "gaussians" => Ok(SyntheticKind::Gaussians),
            "circles" => Ok(SyntheticKind::Circles),
            other => Err(Error::invalid(
                "dataset.kind",
                format!("unknown kind `{other}` (two_moons|spirals|gaussians|circles)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::TwoMoons => "two_moons",
            SyntheticKind::Spirals => "spirals",
            SyntheticKind::Gaussians => "gaussians",
            SyntheticKind::Circles => "circles",
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout obvious.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Evenly spaced values in `[lo, hi]` inclusive.
fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Generate a balanced two-class 2-D dataset, deterministic per seed, with
/// features min-max scaled into [0, 1] per dimension.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("dataset.n", "need at least two samples"));
    }
    if noise_std < 0.0 || !noise_std.is_finite() {
        return Err(Error::invalid("dataset.noise_std", "must be non-negative"));
    }
    let n0 = n.div_ceil(2);
    let n1 = n - n0;
    let mut rng = stream_rng(seed, &format!("data/{}", kind.name()));

    let mut raw: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut labels: Vec<usize> = Vec::with_capacity(n);
    match kind {
        SyntheticKind::TwoMoons => {
            for &t in &linspace(0.0, PI, n0) {
                raw.push([t.cos(), t.sin()]);
                labels.push(0);
            }
            for &t in &linspace(0.0, PI, n1.max(1))[..n1] {
                raw.push([1.0 - t.cos(), 0.5 - t.sin()]);
                labels.push(1);
            }
        }
        SyntheticKind::Circles => {
            for &t in &linspace(0.0, 2.0 * PI, n0) {
                raw.push([t.cos(), t.sin()]);
                labels.push(0);
            }
            for &t in &linspace(0.0, 2.0 * PI, n1.max(1))[..n1] {
                raw.push([0.5 * t.cos(), 0.5 * t.sin()]);
                labels.push(1);
            }
        }
        SyntheticKind::Gaussians => {
            for _ in 0..n0 {
                raw.push([-1.0, 0.0]);
                labels.push(0);
            }
            for _ in 0..n1 {
                raw.push([1.0, 0.0]);
                labels.push(1);
            }
        }
        SyntheticKind::Spirals => {
            for (class, count) in [(0usize, n0), (1usize, n1)] {
                let phase = class as f64 * PI;
                for &t in &linspace(0.25, 1.0, count.max(1))[..count] {
                    let theta = t * 3.0 * PI + phase;
                    raw.push([t * theta.cos(), t * theta.sin()]);
                    labels.push(class);
                }
            }
        }
    }

    // Additive Gaussian jitter; for the blob kind this IS the class spread.
    if noise_std > 0.0 {
        for p in raw.iter_mut() {
            p[0] += noise_std * gaussian(&mut rng);
            p[1] += noise_std * gaussian(&mut rng);
        }
    }

    let mut scale_info = Vec::with_capacity(2);
    let mut scaled = vec![0.0; n * 2];
    for dim in 0..2 {
        let lo = raw.iter().map(|p| p[dim]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|p| p[dim]).fold(f64::NEG_INFINITY, f64::max);
        scale_info.push(ScaleInfo { raw_lo: lo, raw_hi: hi });
        let range = hi - lo;
        for (i, p) in raw.iter().enumerate() {
            scaled[i * 2 + dim] = if range > 0.0 { (p[dim] - lo) / range } else { 0.0 };
        }
    }

    Ok(Dataset {
        features: Tensor::matrix(n, 2, scaled)?,
        labels,
        num_classes: 2,
        feature_range: (0.0, 1.0),
        scale_info,
        name: kind.name().to_string(),
        seed,
    })
}

/// Load a numeric CSV with a header row; the named label column must hold
/// integral values. Features are min-max scaled to [0, 1] per column.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let label = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(label.clone(), e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(label.clone(), e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::format(label.clone(), format!("no column named `{label_column}`")))?;
    let d = headers.len() - 1;
    if d == 0 {
        return Err(Error::format(label, "no feature columns"));
    }

    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        // +2: header is line 1, first record line 2
        let line = row_no + 2;
        let record = record.map_err(|e| Error::format(label.clone(), format!("row {line}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::format(
                label,
                format!("row {line}: expected {} fields, got {}", headers.len(), record.len()),
            ));
        }
        let mut features = Vec::with_capacity(d);
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(label.clone(), format!("row {line}: `{field}` is not a number")))?;
            if !value.is_finite() {
                return Err(Error::format(label, format!("row {line}: non-finite value")));
            }
            if col == label_idx {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::format(
                        label,
                        format!("row {line}: label `{field}` is not a non-negative integer"),
                    ));
                }
                labels.push(value as usize);
            } else {
                features.push(value);
            }
        }
        raw.push(features);
    }
    if raw.is_empty() {
        return Err(Error::format(label, "no data rows"));
    }
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    if num_classes < 2 {
        return Err(Error::format(label, "need at least two classes"));
    }

    let n = raw.len();
    let mut scale_info = Vec::with_capacity(d);
    let mut scaled = vec![0.0; n * d];
    for dim in 0..d {
        let lo = raw.iter().map(|r| r[dim]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|r| r[dim]).fold(f64::NEG_INFINITY, f64::max);
        scale_info.push(ScaleInfo { raw_lo: lo, raw_hi: hi });
        let range = hi - lo;
        for (i, r) in raw.iter().enumerate() {
            // degenerate (constant) columns map to the low bound
            scaled[i * d + dim] = if range > 0.0 { (r[dim] - lo) / range } else { 0.0 };
        }
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    Ok(Dataset {
        features: Tensor::matrix(n, d, scaled)?,
        labels,
        num_classes,
        feature_range: (0.0, 1.0),
        scale_info,
        name,
        seed: 0,
    })
}

/// Write a dataset as CSV (`f0..f{d-1},label`), the same layout `load_csv`
/// accepts.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let label = path.display().to_string();
    let mut out = String::new();
    let d = ds.dims();
    for j in 0..d {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    let data = ds.features.data();
    for i in 0..ds.len() {
        for j in 0..d {
            out.push_str(&format!("{},", data[i * d + j]));
        }
        out.push_str(&format!("{}\n", ds.labels[i]));
    }
    std::fs::write(path, out).map_err(|e| Error::io(label, e))
}

/// Mini-batches under a permutation deterministic in `(shuffle_seed, epoch)`.
/// Every sample appears exactly once; the last batch may be short.
pub fn batches(ds: &Dataset, batch_size: usize, shuffle_seed: u64, epoch: usize) -> Vec<(Tensor, Vec<usize>)> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = stream_rng(shuffle_seed, &format!("batches/epoch{epoch}"));
    shuffle(&mut order, &mut rng);
    order
        .chunks(batch_size)
        .map(|chunk| ds.gather(chunk))
        .collect()
}

/// Fixed-order batches for evaluation.
pub fn eval_batches(ds: &Dataset, batch_size: usize) -> Vec<(Tensor, Vec<usize>)> {
    let order: Vec<usize> = (0..ds.len()).collect();
    order.chunks(batch_size).map(|chunk| ds.gather(chunk)).collect()
}

// ── Corruption synthesis ─────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    SpeckleNoise,
    ShotNoise,
    Brightness,
    Contrast,
}

pub const ALL_CORRUPTIONS: [CorruptionKind; 6] = [
    CorruptionKind::GaussianNoise,
    CorruptionKind::ImpulseNoise,
    CorruptionKind::SpeckleNoise,
    CorruptionKind::ShotNoise,
    CorruptionKind::Brightness,
    CorruptionKind::Contrast,
];

impl CorruptionKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian_noise" => Ok(CorruptionKind::GaussianNoise),
            "impulse_noise" => Ok(CorruptionKind::ImpulseNoise),
            "speckle_noise" => Ok(CorruptionKind::SpeckleNoise),
            "shot_noise" => Ok(CorruptionKind::ShotNoise),
            "brightness" => Ok(CorruptionKind::Brightness),
            "contrast" => Ok(CorruptionKind::Contrast),
            other => Err(Error::invalid("corruption.kind", format!("unknown kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::SpeckleNoise => "speckle_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
        }
    }

    /// Noise parameter at severities 1..=5. Distortion grows with severity
    /// for every kind (for shot noise a smaller scale means more noise).
    pub fn severity_param(&self, severity: u8) -> f64 {
        let idx = severity as usize - 1;
        match self {
            CorruptionKind::GaussianNoise => [0.02, 0.04, 0.08, 0.12, 0.18][idx],
            CorruptionKind::ImpulseNoise => [0.01, 0.02, 0.04, 0.07, 0.10][idx],
            CorruptionKind::SpeckleNoise => [0.05, 0.10, 0.15, 0.22, 0.30][idx],
            CorruptionKind::ShotNoise => [60.0, 25.0, 12.0, 5.0, 3.0][idx],
            CorruptionKind::Brightness => [0.05, 0.10, 0.15, 0.22, 0.30][idx],
            CorruptionKind::Contrast => [0.85, 0.70, 0.55, 0.40, 0.25][idx],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::invalid("corruption.severity", "must be 1..=5"));
        }
        Ok(CorruptionSpec { kind, severity })
    }
}

/// Apply one corruption kind with a raw parameter. Exposed at param
/// granularity so the zero-parameter identity is testable directly.
fn apply_corruption(kind: CorruptionKind, param: f64, features: &mut [f64], rng: &mut impl Rng, d: usize) {
    match kind {
        CorruptionKind::GaussianNoise => {
            for v in features.iter_mut() {
                *v += param * gaussian(rng);
            }
        }
        CorruptionKind::ImpulseNoise => {
            for v in features.iter_mut() {
                // draw order fixed: flip decision then salt/pepper value
                let flip = rng.gen_range(0.0..1.0) < param;
                let salt = rng.gen_range(0.0..1.0) < 0.5;
                if flip {
                    *v = if salt { 1.0 } else { 0.0 };
                }
            }
        }
        CorruptionKind::SpeckleNoise => {
            for v in features.iter_mut() {
                *v += *v * param * gaussian(rng);
            }
        }
        CorruptionKind::ShotNoise => {
            // x' = Poisson(x·scale)/scale; zero intensity stays zero.
            for v in features.iter_mut() {
                let lambda = *v * param;
                if lambda > 0.0 {
                    let pois = Poisson::new(lambda).expect("positive lambda");
                    *v = pois.sample(rng) / param;
                }
            }
        }
        CorruptionKind::Brightness => {
            for v in features.iter_mut() {
                *v += param;
            }
        }
        CorruptionKind::Contrast => {
            if param == 1.0 {
                return;
            }
            // blend each sample toward its own feature mean
            for row in features.chunks_mut(d) {
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                for v in row.iter_mut() {
                    *v = mean + param * (*v - mean);
                }
            }
        }
    }
}

/// Corrupted copy of a dataset: features perturbed per kind/severity then
/// clamped to the feature range; labels untouched; deterministic per seed.
pub fn corrupt(ds: &Dataset, spec: CorruptionSpec, seed: u64) -> Result<Dataset> {
    CorruptionSpec::new(spec.kind, spec.severity)?;
    let param = spec.kind.severity_param(spec.severity);
    let mut rng = stream_rng(seed, &format!("corrupt/{}/{}", spec.kind.name(), spec.severity));
    let mut features = ds.features.data().to_vec();
    apply_corruption(spec.kind, param, &mut features, &mut rng, ds.dims());
    let (lo, hi) = ds.feature_range;
    for v in features.iter_mut() {
        *v = v.min(hi).max(lo);
    }
    Ok(Dataset {
        features: Tensor::matrix(ds.len(), ds.dims(), features)?,
        labels: ds.labels.clone(),
        num_classes: ds.num_classes,
        feature_range: ds.feature_range,
        scale_info: ds.scale_info.clone(),
        name: format!("{}/{}-s{}", ds.name, spec.kind.name(), spec.severity),
        seed,
    })
}

/// Classes present with their counts, for balance checks.
pub fn class_counts(ds: &Dataset) -> Vec<usize> {
    let mut counts = vec![0usize; ds.num_classes];
    for &l in &ds.labels {
        counts[l] += 1;
    }
    counts
}

#[allow(dead_code)]
fn classes_as_set(ds: &Dataset) -> BTreeSet<usize> {
    ds.labels.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_balanced_and_deterministic() {
        let a = gen_synthetic(SyntheticKind::TwoMoons, 101, 0.05, 3).unwrap();
        let b = gen_synthetic(SyntheticKind::TwoMoons, 101, 0.05, 3).unwrap();
        assert_eq!(a.features.data(), b.features.data());
        assert_eq!(a.labels, b.labels);
        let counts = class_counts(&a);
        assert_eq!(counts.iter().sum::<usize>(), 101);
        assert!(counts[0].abs_diff(counts[1]) <= 1, "counts {counts:?}");
    }

    #[test]
    fn noiseless_moons_lie_on_half_circles() {
        let ds = gen_synthetic(SyntheticKind::TwoMoons, 200, 0.0, 1).unwrap();
        let data = ds.features.data();
        for i in 0..ds.len() {
            // invert the recorded scaling back to raw coordinates
            let x = ds.scale_info[0].raw_lo + data[i * 2] * (ds.scale_info[0].raw_hi - ds.scale_info[0].raw_lo);
            let y = ds.scale_info[1].raw_lo + data[i * 2 + 1] * (ds.scale_info[1].raw_hi - ds.scale_info[1].raw_lo);
            let r2 = if ds.labels[i] == 0 {
                x * x + y * y
            } else {
                (x - 1.0).powi(2) + (y - 0.5).powi(2)
            };
            assert!((r2 - 1.0).abs() < 1e-9, "sample {i} off manifold: r² = {r2}");
            if ds.labels[i] == 0 {
                assert!(y > -1e-9);
            } else {
                assert!(y < 0.5 + 1e-9);
            }
        }
    }

    #[test]
    fn features_scaled_into_unit_box() {
        for kind in [
            SyntheticKind::TwoMoons,
            SyntheticKind::Spirals,
            SyntheticKind::Gaussians,
            SyntheticKind::Circles,
        ] {
            let ds = gen_synthetic(kind, 64, 0.2, 9).unwrap();
            assert!(ds.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn unknown_kind_named_in_error() {
        let err = SyntheticKind::parse("blobs").unwrap_err();
        assert!(err.to_string().contains("blobs"));
    }

    #[test]
    fn csv_round_trip_and_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(&path, "a,b,label\n0.0,10.0,0\n1.0,10.0,1\n2.0,10.0,0\n").unwrap();
        let ds = load_csv(&path, "label").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        // column a scales 0,1,2 → 0, .5, 1; constant column b → 0
        assert_eq!(ds.features.data(), &[0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn csv_errors_carry_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,label\n0.5,0\nnope,1\n").unwrap();
        let err = load_csv(&path, "label").unwrap_err().to_string();
        assert!(err.contains("row 3"), "got: {err}");

        std::fs::write(&path, "a,label\n0.5,0\n0.6,1.5\n").unwrap();
        let err = load_csv(&path, "label").unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("label"), "got: {err}");

        assert!(load_csv(Path::new("/nonexistent/x.csv"), "label").is_err());
    }

    #[test]
    fn write_then_load_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.csv");
        let ds = gen_synthetic(SyntheticKind::Circles, 50, 0.1, 4).unwrap();
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, "label").unwrap();
        assert_eq!(back.labels, ds.labels);
        // already in [0,1]; rescaling is idempotent up to float parsing
        for (a, b) in back.features.data().iter().zip(ds.features.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batches_partition_exactly() {
        let ds = gen_synthetic(SyntheticKind::Gaussians, 53, 0.2, 7).unwrap();
        let bs = batches(&ds, 16, 99, 0);
        assert_eq!(bs.len(), 4);
        assert_eq!(bs.last().unwrap().1.len(), 5);
        let total: usize = bs.iter().map(|(_, y)| y.len()).sum();
        assert_eq!(total, 53);
        // single big batch covers everything
        let one = batches(&ds, 100, 99, 0);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].1.len(), 53);
    }

    #[test]
    fn batches_deterministic_per_seed_epoch() {
        let ds = gen_synthetic(SyntheticKind::TwoMoons, 40, 0.1, 7).unwrap();
        let a = batches(&ds, 8, 4, 2);
        let b = batches(&ds, 8, 4, 2);
        let c = batches(&ds, 8, 4, 3);
        assert_eq!(a[0].1, b[0].1);
        assert_eq!(a[0].0.data(), b[0].0.data());
        assert_ne!(
            a.iter().flat_map(|(_, y)| y.clone()).collect::<Vec<_>>(),
            c.iter().flat_map(|(_, y)| y.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn corruption_preserves_labels_and_bounds() {
        let ds = gen_synthetic(SyntheticKind::TwoMoons, 80, 0.1, 5).unwrap();
        for kind in ALL_CORRUPTIONS {
            for severity in 1..=5 {
                let spec = CorruptionSpec::new(kind, severity).unwrap();
                let c = corrupt(&ds, spec, 11).unwrap();
                assert_eq!(c.labels, ds.labels, "{kind:?} changed labels");
                assert!(
                    c.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
                    "{kind:?} s{severity} escaped bounds"
                );
            }
        }
    }

    #[test]
    fn corruption_deterministic_and_zero_param_identity() {
        let ds = gen_synthetic(SyntheticKind::Circles, 60, 0.1, 5).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 3).unwrap();
        let a = corrupt(&ds, spec, 2).unwrap();
        let b = corrupt(&ds, spec, 2).unwrap();
        assert_eq!(a.features.data(), b.features.data());

        // zero-parameter corruption is the identity
        let mut feats = ds.features.data().to_vec();
        let mut rng = stream_rng(0, "identity");
        for kind in [
            CorruptionKind::GaussianNoise,
            CorruptionKind::SpeckleNoise,
            CorruptionKind::Brightness,
            CorruptionKind::ImpulseNoise,
        ] {
            apply_corruption(kind, 0.0, &mut feats, &mut rng, 2);
        }
        // contrast with factor 1 is also the identity
        apply_corruption(CorruptionKind::Contrast, 1.0, &mut feats, &mut rng, 2);
        assert_eq!(feats, ds.features.data());
    }

    #[test]
    fn brightness_table_arithmetic() {
        assert_eq!(CorruptionKind::Brightness.severity_param(1), 0.05);
        // x = 0.5 at severity 1 → 0.55 before clamping
        assert!((0.5 + CorruptionKind::Brightness.severity_param(1) - 0.55).abs() < 1e-15);
    }

    #[test]
    fn invalid_severity_rejected() {
        assert!(CorruptionSpec::new(CorruptionKind::Brightness, 0).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Brightness, 6).is_err());
    }

    #[test]
    fn gaussian_severity_monotone_mean_abs_perturbation() {
        // Monte-Carlo oracle: mean |δ| strictly grows with severity.
        let ds = gen_synthetic(SyntheticKind::TwoMoons, 5000, 0.1, 5).unwrap();
        let mut means = Vec::new();
        for severity in 1..=5 {
            let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, severity).unwrap();
            let c = corrupt(&ds, spec, 13).unwrap();
            let mean: f64 = c
                .features
                .data()
                .iter()
                .zip(ds.features.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / ds.features.numel() as f64;
            means.push(mean);
        }
        for w in means.windows(2) {
            assert!(w[1] > w[0], "severities not monotone: {means:?}");
        }
    }

    #[test]
    fn all_kinds_severity_monotone_l2() {
        // 5 seeds × 10k-ish entries per the distortion-monotonicity property.
        let ds = gen_synthetic(SyntheticKind::TwoMoons, 5000, 0.1, 5).unwrap();
        for kind in ALL_CORRUPTIONS {
            for seed in 0..5u64 {
                let mut dists = Vec::new();
                for severity in 1..=5 {
                    let spec = CorruptionSpec::new(kind, severity).unwrap();
                    let c = corrupt(&ds, spec, seed).unwrap();
                    let l2: f64 = c
                        .features
                        .data()
                        .iter()
                        .zip(ds.features.data())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    dists.push(l2);
                }
                for w in dists.windows(2) {
                    assert!(w[1] >= w[0], "{kind:?} seed {seed}: {dists:?}");
                }
            }
        }
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let ds = gen_synthetic(SyntheticKind::TwoMoons, 200, 0.1, 5).unwrap();
        let (tr1, te1) = ds.split(0.25, 42).unwrap();
        let (tr2, te2) = ds.split(0.25, 42).unwrap();
        assert_eq!(tr1.features.data(), tr2.features.data());
        assert_eq!(te1.labels, te2.labels);
        assert_eq!(tr1.len() + te1.len(), 200);
        let tc = class_counts(&te1);
        assert!(tc[0].abs_diff(tc[1]) <= 1);
    }
}
