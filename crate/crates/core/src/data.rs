//! Synthetic labelled datasets, CSV ingestion and vector augmentations.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngState};

/// Feature matrix plus optional ground-truth labels. Labels are only ever
/// used for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    /// Generator seed, when synthetic.
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        features.ensure_finite("Dataset::new")?;
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::contract(
                    "Dataset::new",
                    format!("{} labels for {} rows", l.len(), features.rows()),
                ));
            }
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// `max label + 1`, if labelled.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.iter().max().map(|m| m + 1))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            seed: self.seed,
        }
    }

    /// Per-feature mean and standard deviation (population), for
    /// standardizing inputs. Constant features get a unit scale.
    pub fn feature_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len().max(1) as f64;
        let mean: Vec<f64> = self.features.col_sums().iter().map(|s| s / n).collect();
        let mut var = vec![0.0; self.dim()];
        for r in 0..self.len() {
            for (c, v) in self.features.row(r).iter().enumerate() {
                var[c] += (v - mean[c]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        (mean, std)
    }

    /// Applies `(x - mean) / std` per feature.
    pub fn standardize_with(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        if mean.len() != self.dim() || std.len() != self.dim() {
            return Err(Error::contract("standardize", "moment length differs from feature width"));
        }
        for r in 0..self.len() {
            for (c, v) in self.features.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[c]) / std[c];
            }
        }
        Ok(())
    }

    /// Stratified split: `fraction` of every class goes to the second set.
    /// Unlabelled datasets are split uniformly.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::config("holdout", format!("{fraction} outside [0, 1)")));
        }
        let mut rng = RngState::with_stream(seed, 0x5_11_7);
        let groups: Vec<Vec<usize>> = match &self.labels {
            Some(l) => {
                let k = self.num_classes().unwrap_or(0);
                let mut g = vec![Vec::new(); k];
                for (i, &c) in l.iter().enumerate() {
                    g[c].push(i);
                }
                g
            }
            None => vec![(0..self.len()).collect()],
        };
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for mut g in groups {
            rng.shuffle(&mut g);
            let cut = (g.len() as f64 * fraction).round() as usize;
            test.extend_from_slice(&g[..cut]);
            train.extend_from_slice(&g[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
    /// Size ratio of the smallest to the largest class; 1 gives balanced
    /// classes, smaller values shrink later classes geometrically.
    pub imbalance: f64,
}

impl GmmSpec {
    pub fn new(clusters: usize, per_cluster: usize, dim: usize, separation: f64, seed: u64) -> Self {
        Self {
            clusters,
            per_cluster,
            dim,
            separation,
            seed,
            imbalance: 1.0,
        }
    }

    fn class_sizes(&self) -> Vec<usize> {
        (0..self.clusters)
            .map(|j| {
                if self.clusters == 1 || self.imbalance >= 1.0 {
                    self.per_cluster
                } else {
                    let f = self.imbalance.powf(j as f64 / (self.clusters - 1) as f64);
                    ((self.per_cluster as f64 * f).round() as usize).max(1)
                }
            })
            .collect()
    }
}

/// Isotropic unit-variance Gaussians centred at `separation · u_j` for
/// random unit directions `u_j`.
pub fn gen_gaussian_mixture(spec: &GmmSpec) -> Result<Dataset> {
    let mut issues = Vec::new();
    if spec.clusters < 2 {
        issues.push(crate::error::ConfigIssue::new("k", "need at least two clusters"));
    }
    if spec.per_cluster == 0 {
        issues.push(crate::error::ConfigIssue::new("n", "need at least one point per cluster"));
    }
    if spec.dim == 0 {
        issues.push(crate::error::ConfigIssue::new("d", "dimension must be positive"));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        issues.push(crate::error::ConfigIssue::new("sep", "separation must be finite and non-negative"));
    }
    if !(spec.imbalance > 0.0 && spec.imbalance <= 1.0) {
        issues.push(crate::error::ConfigIssue::new("imbalance", "ratio must lie in (0, 1]"));
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    let mut rng = RngState::new(spec.seed);
    let centres: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.iter().map(|x| spec.separation * x / norm).collect();
            }
        })
        .collect();
    let sizes = spec.class_sizes();
    let total: usize = sizes.iter().sum();
    let mut data = Vec::with_capacity(total * spec.dim);
    let mut labels = Vec::with_capacity(total);
    for (j, (&n, centre)) in sizes.iter().zip(&centres).enumerate() {
        for _ in 0..n {
            data.extend(centre.iter().map(|m| m + rng.normal()));
            labels.push(j);
        }
    }
    let mut ds = Dataset::new(
        format!("gmm-k{}-d{}-sep{}", spec.clusters, spec.dim, spec.separation),
        Matrix::from_vec(total, spec.dim, data)?,
        Some(labels),
    )?;
    ds.seed = Some(spec.seed);
    Ok(ds)
}

/// `clusters` concentric circles in 2-D with radii `1, 2, …, K`, `per_ring`
/// points each, radial Gaussian noise of standard deviation `noise`.
pub fn gen_rings(clusters: usize, per_ring: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if clusters < 2 {
        return Err(Error::config("k", "need at least two rings"));
    }
    if per_ring == 0 {
        return Err(Error::config("n", "need at least one point per ring"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config("noise", "noise must be finite and non-negative"));
    }
    let mut rng = RngState::new(seed);
    let mut data = Vec::with_capacity(clusters * per_ring * 2);
    let mut labels = Vec::with_capacity(clusters * per_ring);
    for j in 0..clusters {
        for _ in 0..per_ring {
            let theta = rng.uniform_range(0.0, std::f64::consts::TAU);
            let r = (j + 1) as f64 + noise * rng.normal();
            data.push(r * theta.cos());
            data.push(r * theta.sin());
            labels.push(j);
        }
    }
    let mut ds = Dataset::new(
        format!("rings-k{clusters}-noise{noise}"),
        Matrix::from_vec(clusters * per_ring, 2, data)?,
        Some(labels),
    )?;
    ds.seed = Some(seed);
    Ok(ds)
}

/// Metadata written next to a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Library version that wrote the file.
    #[serde(default)]
    pub version: String,
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub k_true: Option<usize>,
    pub seed: Option<u64>,
}

/// `data.csv` → `data.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes features (and labels as a final integer column) without a header.
/// Values use the shortest representation that parses back to the same
/// `f64`. Also writes the metadata sidecar.
pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_io)?;
    let mut record = Vec::with_capacity(ds.dim() + 1);
    for r in 0..ds.len() {
        record.clear();
        record.extend(ds.features.row(r).iter().map(|v| v.to_string()));
        if let Some(l) = &ds.labels {
            record.push(l[r].to_string());
        }
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    let meta = DatasetMeta {
        version: crate::VERSION.to_string(),
        name: ds.name.clone(),
        n: ds.len(),
        d: ds.dim(),
        k_true: ds.num_classes(),
        seed: ds.seed,
    };
    serde_json::to_writer_pretty(File::create(sidecar_path(path))?, &meta)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Reads a headerless numeric CSV (`#` starts a comment line); with `has_labels` the last column holds
/// non-negative integer labels. The sidecar, when present, supplies the
/// name and seed.
pub fn load_csv(path: &Path, has_labels: bool) -> Result<Dataset> {
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_io)?;
    let mut width: Option<usize> = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows + 1);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(parse_err(line, format!("expected {w} fields, found {}", record.len())));
            }
            Some(_) => {}
        }
        let n_feat = if has_labels { record.len() - 1 } else { record.len() };
        if n_feat == 0 {
            return Err(parse_err(line, "no feature columns".into()));
        }
        for (col, cell) in record.iter().take(n_feat).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: {cell:?} is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", col + 1)));
            }
            data.push(v);
        }
        if has_labels {
            let cell = &record[n_feat];
            let l: usize = cell
                .parse()
                .map_err(|_| parse_err(line, format!("label {cell:?} is not a non-negative integer")))?;
            labels.push(l);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| parse_err(0, "file has no rows".into()))?;
    let d = if has_labels { width - 1 } else { width };
    let features = Matrix::from_vec(rows, d, data)?;
    let sidecar = sidecar_path(path);
    let meta: Option<DatasetMeta> = if sidecar.exists() {
        Some(serde_json::from_reader(File::open(&sidecar)?)?)
    } else {
        None
    };
    let name = meta.as_ref().map(|m| m.name.clone()).unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".into())
    });
    let mut ds = Dataset::new(name, features, has_labels.then_some(labels))?;
    ds.seed = meta.and_then(|m| m.seed);
    log::info!("loaded {}: {} rows x {} features", path.display(), ds.len(), ds.dim());
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentationKind {
    Weak,
    Strong,
}

/// Vector analogue of image augmentation. Weak views add isotropic Gaussian
/// noise; strong views additionally rescale each sample by a factor drawn
/// from `1 ± jitter` and zero each feature with probability `dropout`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationPolicy {
    pub kind: AugmentationKind,
    pub sigma: f64,
    pub dropout: f64,
    pub jitter: f64,
}

impl AugmentationPolicy {
    pub fn weak(sigma: f64) -> Self {
        Self {
            kind: AugmentationKind::Weak,
            sigma,
            dropout: 0.0,
            jitter: 0.0,
        }
    }

    pub fn strong(sigma: f64) -> Self {
        Self {
            kind: AugmentationKind::Strong,
            sigma,
            dropout: 0.2,
            jitter: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            issues.push(crate::error::ConfigIssue::new("aug_sigma", "noise sigma must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            issues.push(crate::error::ConfigIssue::new("aug_dropout", "dropout must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            issues.push(crate::error::ConfigIssue::new("aug_jitter", "jitter must lie in [0, 1)"));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    /// One augmented copy of `x`, row order preserved.
    pub fn apply(&self, x: &Matrix, rng: &mut RngState) -> Matrix {
        let mut out = x.clone();
        let strong = self.kind == AugmentationKind::Strong;
        for r in 0..out.rows() {
            let scale = if strong && self.jitter > 0.0 {
                rng.uniform_range(1.0 - self.jitter, 1.0 + self.jitter)
            } else {
                1.0
            };
            for v in out.row_mut(r) {
                let mut y = *v * scale;
                if strong && self.dropout > 0.0 && rng.uniform() < self.dropout {
                    y = 0.0;
                }
                if self.sigma > 0.0 {
                    y += self.sigma * rng.normal();
                }
                *v = y;
            }
        }
        out
    }
}

/// Two independent augmentations of the same rows.
pub fn two_views(x: &Matrix, policy: &AugmentationPolicy, rng: &mut RngState) -> (Matrix, Matrix) {
    let q = policy.apply(x, rng);
    let k = policy.apply(x, rng);
    (q, k)
}
