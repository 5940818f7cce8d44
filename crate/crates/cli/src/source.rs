//! Data sources: a CSV path or an inline generator spec such as
//! `gmm:k=4,n=500,d=16,sep=10,seed=1`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use clc::data::{gen_gaussian_mixture, gen_rings, load_csv, sidecar_path, Dataset, DatasetMeta, GmmSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Gmm(GmmSpec),
    Rings { k: usize, n: usize, noise: f64, seed: u64 },
    Csv(PathBuf),
}

/// Whether the last CSV column holds labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelMode {
    /// Use the sidecar metadata when present, otherwise assume none.
    Auto,
    Yes,
    No,
}

fn options(body: &str) -> Result<Vec<(&str, &str)>, String> {
    body.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| format!("expected key=value, got {kv:?}"))
        })
        .collect()
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(body) = s.strip_prefix("gmm:") {
            let mut spec = GmmSpec::new(4, 500, 16, 10.0, 0);
            for (k, v) in options(body)? {
                match k {
                    "k" => spec.clusters = num(k, v)?,
                    "n" => spec.per_cluster = num(k, v)?,
                    "d" => spec.dim = num(k, v)?,
                    "sep" => spec.separation = num(k, v)?,
                    "seed" => spec.seed = num(k, v)?,
                    "imbalance" => spec.imbalance = num(k, v)?,
                    _ => return Err(format!("unknown gmm option {k:?}")),
                }
            }
            Ok(Self::Gmm(spec))
        } else if let Some(body) = s.strip_prefix("rings:") {
            let (mut k, mut n, mut noise, mut seed) = (3, 300, 0.1, 0);
            for (key, v) in options(body)? {
                match key {
                    "k" => k = num(key, v)?,
                    "n" => n = num(key, v)?,
                    "noise" => noise = num(key, v)?,
                    "seed" => seed = num(key, v)?,
                    _ => return Err(format!("unknown rings option {key:?}")),
                }
            }
            Ok(Self::Rings { k, n, noise, seed })
        } else if s.is_empty() {
            Err("empty data source".into())
        } else {
            Ok(Self::Csv(PathBuf::from(s)))
        }
    }
}

fn csv_has_labels(path: &Path) -> bool {
    let sidecar = sidecar_path(path);
    std::fs::File::open(sidecar)
        .ok()
        .and_then(|f| serde_json::from_reader::<_, DatasetMeta>(f).ok())
        .is_some_and(|m| m.k_true.is_some())
}

impl DataSource {
    pub fn load(&self, labels: LabelMode) -> clc::Result<Dataset> {
        let mut ds = match self {
            Self::Gmm(spec) => gen_gaussian_mixture(spec)?,
            Self::Rings { k, n, noise, seed } => gen_rings(*k, *n, *noise, *seed)?,
            Self::Csv(path) => {
                let has = match labels {
                    LabelMode::Yes => true,
                    LabelMode::No => false,
                    LabelMode::Auto => csv_has_labels(path),
                };
                return load_csv(path, has);
            }
        };
        if labels == LabelMode::No {
            ds.labels = None;
        }
        Ok(ds)
    }
}
