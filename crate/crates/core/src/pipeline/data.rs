//! Toy classification datasets.

use std::f32::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATA_HEADER: &str = "# qnn-data v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × dim` row-major features.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// Two unit-variance Gaussian blobs whose centers are `separation` apart
    /// along the diagonal; labels alternate so classes are balanced.
    Blobs {
        n: usize,
        dim: usize,
        separation: f32,
        seed: u64,
    },
    /// Two noisy concentric circles of radius 1 and 2 in the plane.
    Rings { n: usize, noise: f32, seed: u64 },
    /// Comma-separated feature columns followed by an integer label.
    File(PathBuf),
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape().get(1).copied().unwrap_or(0)
    }

    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, _) = features.dims2().ok_or_else(|| {
            Error::InvalidArgument(format!("features must be 2-D, got {:?}", features.shape()))
        })?;
        if n != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "Dataset::new",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.gather_rows(rows)?,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            classes: self.classes,
        })
    }

    /// Deterministic shuffled split; `train_fraction` of the rows go first.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (self.len() as f64 * train_fraction).round() as usize;
        let (a, b) = idx.split_at(cut);
        Ok((self.subset(a)?, self.subset(b)?))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{DATA_HEADER}\n");
        let d = self.dim();
        for (row, label) in self.features.data().chunks(d.max(1)).zip(&self.labels) {
            for v in row {
                write!(out, "{v},").unwrap();
            }
            writeln!(out, "{label}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        const WHAT: &str = "dataset";
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == DATA_HEADER => {}
            _ => return Err(Error::parse(WHAT, 1, format!("expected '{DATA_HEADER}'"))),
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for (i, line) in lines {
            if line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let (label, feats) = cols.split_last().unwrap();
            if feats.is_empty() {
                return Err(Error::parse(WHAT, i + 1, "row has no features"));
            }
            if *dim.get_or_insert(feats.len()) != feats.len() {
                return Err(Error::parse(WHAT, i + 1, "ragged row"));
            }
            for f in feats {
                let v: f32 = f
                    .parse()
                    .map_err(|_| Error::parse(WHAT, i + 1, format!("bad feature '{f}'")))?;
                if !v.is_finite() {
                    return Err(Error::parse(WHAT, i + 1, "non-finite feature"));
                }
                data.push(v);
            }
            labels.push(
                label
                    .parse()
                    .map_err(|_| Error::parse(WHAT, i + 1, format!("bad label '{label}'")))?,
            );
        }
        let dim = dim.ok_or_else(|| Error::parse(WHAT, 1, "no rows"))?;
        Dataset::new(Tensor::new(vec![labels.len(), dim], data)?, labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Blobs {
            n,
            dim,
            separation,
            seed,
        } => {
            if *n == 0 || *dim == 0 {
                return Err(Error::InvalidArgument("blobs need n > 0 and dim > 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let unit = Normal::new(0.0f32, 1.0).unwrap();
            let offset = separation / 2.0 / (*dim as f32).sqrt();
            let mut data = Vec::with_capacity(n * dim);
            let labels: Vec<usize> = (0..*n).map(|i| i % 2).collect();
            for &l in &labels {
                let c = if l == 0 { -offset } else { offset };
                data.extend((0..*dim).map(|_| c + unit.sample(&mut rng)));
            }
            Dataset::new(Tensor::new(vec![*n, *dim], data)?, labels)
        }
        DatasetSpec::Rings { n, noise, seed } => {
            if *n == 0 {
                return Err(Error::InvalidArgument("rings need n > 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let jitter = Normal::new(0.0f32, noise.max(0.0)).map_err(|e| {
                Error::InvalidArgument(format!("ring noise: {e}"))
            })?;
            let labels: Vec<usize> = (0..*n).map(|i| i % 2).collect();
            let mut data = Vec::with_capacity(n * 2);
            for &l in &labels {
                let r = (l + 1) as f32 + jitter.sample(&mut rng);
                let a = rng.random_range(0.0..TAU);
                data.push(r * a.cos());
                data.push(r * a.sin());
            }
            Dataset::new(Tensor::new(vec![*n, 2], data)?, labels)
        }
        DatasetSpec::File(path) => Dataset::load(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced() {
        let d = generate_dataset(&DatasetSpec::Blobs {
            n: 4,
            dim: 2,
            separation: 10.0,
            seed: 7,
        })
        .unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.labels.iter().filter(|&&l| l == 0).count(), 2);
    }

    #[test]
    fn split_is_deterministic_and_complete() {
        let d = generate_dataset(&DatasetSpec::Rings {
            n: 50,
            noise: 0.1,
            seed: 1,
        })
        .unwrap();
        let (a, b) = d.split(0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (40, 10));
        assert_eq!(d.split(0.8, 3).unwrap(), (a, b));
    }

    #[test]
    fn text_round_trip() {
        let d = generate_dataset(&DatasetSpec::Blobs {
            n: 9,
            dim: 3,
            separation: 1.5,
            seed: 2,
        })
        .unwrap();
        assert_eq!(Dataset::from_text(&d.to_text()).unwrap(), d);
        let bad = format!("{DATA_HEADER}\n1.0,2.0,0\n1.0,x,1\n");
        assert!(matches!(Dataset::from_text(&bad), Err(Error::Parse { line: 3, .. })));
    }
}
