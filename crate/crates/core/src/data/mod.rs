//! Labeled embedding collections, the FCAE archive and synthetic data.

mod archive;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::numeric::DenseVector;
use crate::ClassId;

pub use archive::{
    decode_payload, encode_payload, fnv1a64, manifest_path, read_archive, write_archive, write_atomic,
    ArchiveManifest, SessionSplit, ARCHIVE_VERSION, MAGIC,
};
pub use synthetic::{generate_synthetic, CenterRule, SessionLayout, SyntheticSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub sample_id: u64,
    pub class_id: ClassId,
    pub vector: DenseVector,
}

/// Labeled vectors of a common dimension with unique sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    ids: HashSet<u64>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be >= 1".into()));
        }
        Ok(Self {
            dim,
            records: Vec::new(),
            ids: HashSet::new(),
        })
    }

    pub fn from_records(dim: usize, records: impl IntoIterator<Item = EmbeddingRecord>) -> Result<Self> {
        let mut set = Self::new(dim)?;
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        if record.vector.dim() != self.dim {
            return Err(Error::Shape(format!(
                "sample {} has dim {}, set dim is {}",
                record.sample_id,
                record.vector.dim(),
                self.dim
            )));
        }
        if !self.ids.insert(record.sample_id) {
            return Err(Error::Data(format!("duplicate sample id {}", record.sample_id)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmbeddingRecord> {
        self.records.iter()
    }

    pub fn contains(&self, sample_id: u64) -> bool {
        self.ids.contains(&sample_id)
    }

    pub fn class_ids(&self) -> BTreeSet<ClassId> {
        self.records.iter().map(|r| r.class_id).collect()
    }

    /// Record indices grouped by class, classes ascending, indices in insertion order.
    pub fn indices_by_class(&self) -> BTreeMap<ClassId, Vec<usize>> {
        let mut out: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            out.entry(r.class_id).or_default().push(i);
        }
        out
    }

    /// New set with the records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Self::new(self.dim)?;
        for &i in indices {
            let r = self.records.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("record index {i} out of range {}", self.len()))
            })?;
            out.push(r.clone())?;
        }
        Ok(out)
    }

    /// New set with the given sample ids, in the order given.
    pub fn select_ids(&self, sample_ids: &[u64]) -> Result<Self> {
        let pos: std::collections::HashMap<u64, usize> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.sample_id, i))
            .collect();
        let idx = sample_ids
            .iter()
            .map(|id| {
                pos.get(id)
                    .copied()
                    .ok_or_else(|| Error::Data(format!("unknown sample id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.select(&idx)
    }

    /// Concatenation; sample ids must stay unique.
    pub fn union<'a>(dim: usize, sets: impl IntoIterator<Item = &'a EmbeddingSet>) -> Result<Self> {
        let mut out = Self::new(dim)?;
        for s in sets {
            for r in s.iter() {
                out.push(r.clone())?;
            }
        }
        Ok(out)
    }

    /// Arithmetic mean of each class's vectors.
    pub fn class_means(&self) -> Result<BTreeMap<ClassId, DenseVector>> {
        let mut sums: BTreeMap<ClassId, (Vec<f64>, usize)> = BTreeMap::new();
        for r in &self.records {
            let (sum, n) = sums.entry(r.class_id).or_insert_with(|| (vec![0.0; self.dim], 0));
            for (s, v) in sum.iter_mut().zip(r.vector.as_slice()) {
                *s += v;
            }
            *n += 1;
        }
        sums.into_iter()
            .map(|(c, (sum, n))| {
                let mean: Vec<f64> = sum.into_iter().map(|s| s / n as f64).collect();
                if mean.iter().all(|v| *v == 0.0) {
                    return Err(Error::DegenerateInput(format!("class {c} has a zero-norm mean")));
                }
                Ok((c, DenseVector::new(mean)?))
            })
            .collect()
    }
}

impl<'a> IntoIterator for &'a EmbeddingSet {
    type Item = &'a EmbeddingRecord;
    type IntoIter = std::slice::Iter<'a, EmbeddingRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}
