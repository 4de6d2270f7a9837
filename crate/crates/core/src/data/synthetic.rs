//! Desk-scale embedding generator with known class structure.

use serde::{Deserialize, Serialize};

use super::{ArchiveManifest, EmbeddingRecord, EmbeddingSet, SessionSplit, ARCHIVE_VERSION};
use crate::error::{Error, Result};
use crate::numeric::{streams, DenseVector, RngState};
use crate::ClassId;

const MAX_CENTER_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum CenterRule {
    /// Random unit vectors, redrawn until every pairwise cosine is below `max_cosine`.
    RandomUnit { max_cosine: f64 },
    /// Random orthonormal basis; needs `num_classes <= dim`.
    Orthogonal,
}

impl Default for CenterRule {
    fn default() -> Self {
        CenterRule::RandomUnit { max_cosine: 0.5 }
    }
}

/// How classes and samples are laid out into sessions in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionLayout {
    /// Classes `0..base_classes` form session 0; `None` puts every class there.
    pub base_classes: Option<usize>,
    /// Classes per incremental session.
    pub way: usize,
    /// Leading samples of each class that go to train; the rest are test.
    /// `None` splits each class in half.
    pub train_per_class: Option<usize>,
}

impl Default for SessionLayout {
    fn default() -> Self {
        Self {
            base_classes: None,
            way: 5,
            train_per_class: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub intra_class_noise: f64,
    pub seed: u64,
    pub center_rule: CenterRule,
    pub layout: SessionLayout,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument(
                "num_classes, samples_per_class and dim must be >= 1".into(),
            ));
        }
        if !(self.intra_class_noise >= 0.0 && self.intra_class_noise.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise must be finite and >= 0, got {}",
                self.intra_class_noise
            )));
        }
        if let CenterRule::RandomUnit { max_cosine } = self.center_rule {
            if !(max_cosine > -1.0 && max_cosine <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "max_cosine must be in (-1, 1], got {max_cosine}"
                )));
            }
        }
        let base = self.layout.base_classes.unwrap_or(self.num_classes);
        if base == 0 || base > self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "base_classes {base} must be in 1..={}",
                self.num_classes
            )));
        }
        let rest = self.num_classes - base;
        if rest > 0 && (self.layout.way == 0 || !rest.is_multiple_of(self.layout.way)) {
            return Err(Error::InvalidArgument(format!(
                "{rest} incremental classes cannot be split into sessions of {} classes",
                self.layout.way
            )));
        }
        let train = self.train_per_class();
        if train == 0 || train >= self.samples_per_class {
            return Err(Error::InvalidArgument(format!(
                "train_per_class {train} must be in 1..{}",
                self.samples_per_class
            )));
        }
        Ok(())
    }

    fn train_per_class(&self) -> usize {
        self.layout
            .train_per_class
            .unwrap_or((self.samples_per_class / 2).max(1))
    }
}

fn random_unit(dim: usize, rng: &mut RngState) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn centers(spec: &SyntheticSpec, rng: &mut RngState) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    match spec.center_rule {
        CenterRule::Orthogonal => {
            if spec.num_classes > spec.dim {
                return Err(Error::Generation(format!(
                    "orthogonal rule cannot place {} classes in dim {}",
                    spec.num_classes, spec.dim
                )));
            }
            while out.len() < spec.num_classes {
                let mut attempts = 0;
                let v = loop {
                    attempts += 1;
                    if attempts > MAX_CENTER_ATTEMPTS {
                        return Err(Error::Generation("Gram-Schmidt kept degenerating".into()));
                    }
                    let mut v = random_unit(spec.dim, rng);
                    for c in &out {
                        let p = dot(&v, c);
                        v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
                    }
                    let n = dot(&v, &v).sqrt();
                    if n > 1e-6 {
                        break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
                    }
                };
                out.push(v);
            }
        }
        CenterRule::RandomUnit { max_cosine } => {
            while out.len() < spec.num_classes {
                let mut attempts = 0;
                let v = loop {
                    attempts += 1;
                    if attempts > MAX_CENTER_ATTEMPTS {
                        return Err(Error::Generation(format!(
                            "could not place class {} with pairwise cosine < {max_cosine} after {MAX_CENTER_ATTEMPTS} draws",
                            out.len()
                        )));
                    }
                    let v = random_unit(spec.dim, rng);
                    if out.iter().all(|c| dot(&v, c) < max_cosine) {
                        break v;
                    }
                };
                out.push(v);
            }
        }
    }
    Ok(out)
}

/// Class centers from the configured rule; each sample is its center plus
/// isotropic Gaussian noise, renormalized to unit length. Class `c` owns
/// sample ids `c·samples_per_class .. (c+1)·samples_per_class`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(EmbeddingSet, ArchiveManifest)> {
    spec.validate()?;
    let root = RngState::new(spec.seed);
    let centers = centers(spec, &mut root.derive(streams::SYNTH_CENTERS))?;
    let mut noise_rng = root.derive(streams::SYNTH_NOISE);

    let per = spec.samples_per_class;
    let mut set = EmbeddingSet::new(spec.dim)?;
    for (c, center) in centers.iter().enumerate() {
        for j in 0..per {
            let v = loop {
                let v: Vec<f64> = center
                    .iter()
                    .map(|x| x + spec.intra_class_noise * noise_rng.standard_normal())
                    .collect();
                let n = dot(&v, &v).sqrt();
                if n > 1e-12 {
                    break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
                }
            };
            set.push(EmbeddingRecord {
                sample_id: (c * per + j) as u64,
                class_id: c as ClassId,
                vector: DenseVector::new(v)?,
            })?;
        }
    }

    let base = spec.layout.base_classes.unwrap_or(spec.num_classes);
    let train_n = spec.train_per_class();
    let split_for = |classes: std::ops::Range<usize>| {
        let mut split = SessionSplit {
            train: Vec::new(),
            test: Vec::new(),
        };
        for c in classes {
            for j in 0..per {
                let id = (c * per + j) as u64;
                if j < train_n {
                    split.train.push(id);
                } else {
                    split.test.push(id);
                }
            }
        }
        split
    };
    let mut sessions = vec![split_for(0..base)];
    let mut start = base;
    while start < spec.num_classes {
        sessions.push(split_for(start..start + spec.layout.way));
        start += spec.layout.way;
    }
    let rule = match spec.center_rule {
        CenterRule::Orthogonal => "orthogonal".to_string(),
        CenterRule::RandomUnit { max_cosine } => format!("random-unit(max_cosine={max_cosine})"),
    };
    let manifest = ArchiveManifest {
        version: ARCHIVE_VERSION,
        dim: spec.dim as u32,
        classes: (0..spec.num_classes)
            .map(|c| (c as ClassId, format!("synthetic-{c}")))
            .collect(),
        sessions,
        provenance: format!(
            "synthetic: rule={rule} noise={} seed={}",
            spec.intra_class_noise, spec.seed
        ),
    };
    Ok((set, manifest))
}
