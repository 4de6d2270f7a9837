//! FCAE binary embedding archive plus its JSON sidecar manifest.
//!
//! Payload layout, little-endian throughout:
//!
//! | field    | type      |
//! |----------|-----------|
//! | magic    | `b"FCAE"` |
//! | version  | u32 (= 1) |
//! | dim      | u32       |
//! | count    | u64       |
//! | checksum | u64, FNV-1a over all record bytes |
//!
//! followed by `count` records of `sample_id: u64`, `class_id: u32` and
//! `dim` × f32. Vectors are stored at single precision and widened to f64
//! on load.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{EmbeddingRecord, EmbeddingSet};
use crate::error::{Error, FormatError, Result};
use crate::numeric::DenseVector;
use crate::ClassId;

pub const MAGIC: [u8; 4] = *b"FCAE";
pub const ARCHIVE_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSplit {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveManifest {
    pub version: u32,
    pub dim: u32,
    /// Class catalog, class id → human-readable name.
    pub classes: BTreeMap<ClassId, String>,
    /// Session 0 is the base session.
    pub sessions: Vec<SessionSplit>,
    /// Which extractor (or generator) produced the vectors.
    pub provenance: String,
}

impl ArchiveManifest {
    /// Checks the manifest against the payload it describes: dimensions agree,
    /// every referenced sample exists, train/test of a session share a label
    /// set, no sample is reused, and session label sets are pairwise disjoint.
    pub fn validate(&self, set: &EmbeddingSet) -> Result<()> {
        if self.version != ARCHIVE_VERSION {
            return Err(FormatError::UnsupportedVersion(self.version).into());
        }
        if self.dim as usize != set.dim() {
            return Err(FormatError::Validation(format!(
                "manifest dim {} vs payload dim {}",
                self.dim,
                set.dim()
            ))
            .into());
        }
        let class_of: std::collections::HashMap<u64, ClassId> =
            set.iter().map(|r| (r.sample_id, r.class_id)).collect();
        let mut seen_ids = HashSet::new();
        let mut label_sets: Vec<BTreeSet<ClassId>> = Vec::with_capacity(self.sessions.len());
        for (m, split) in self.sessions.iter().enumerate() {
            let mut labels_of = |ids: &[u64], part: &str| -> Result<BTreeSet<ClassId>> {
                let mut labels = BTreeSet::new();
                for id in ids {
                    let c = class_of.get(id).ok_or_else(|| {
                        FormatError::Validation(format!(
                            "session {m} {part} references missing sample id {id}"
                        ))
                    })?;
                    if !seen_ids.insert(*id) {
                        return Err(FormatError::Validation(format!(
                            "sample id {id} referenced more than once (session {m} {part})"
                        ))
                        .into());
                    }
                    labels.insert(*c);
                }
                Ok(labels)
            };
            let train = labels_of(&split.train, "train")?;
            let test = labels_of(&split.test, "test")?;
            if !test.is_empty() && train != test {
                return Err(FormatError::Validation(format!(
                    "session {m}: train classes {train:?} differ from test classes {test:?}"
                ))
                .into());
            }
            label_sets.push(train.union(&test).copied().collect());
        }
        check_disjoint(&label_sets)
    }

    /// Label set of each session, from its training ids.
    pub fn session_labels(&self, set: &EmbeddingSet) -> Result<Vec<BTreeSet<ClassId>>> {
        self.sessions
            .iter()
            .map(|s| Ok(set.select_ids(&s.train)?.class_ids()))
            .collect()
    }
}

pub(crate) fn check_disjoint(label_sets: &[BTreeSet<ClassId>]) -> Result<()> {
    for (i, a) in label_sets.iter().enumerate() {
        for (j, b) in label_sets.iter().enumerate().skip(i + 1) {
            if let Some(c) = a.intersection(b).next() {
                return Err(FormatError::Disjointness {
                    class_id: *c,
                    first: i,
                    second: j,
                }
                .into());
            }
        }
    }
    Ok(())
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn encode_payload(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let dim = u32::try_from(set.dim())
        .map_err(|_| Error::InvalidArgument(format!("dim {} does not fit in u32", set.dim())))?;
    let mut body = Vec::with_capacity(set.len() * (12 + 4 * set.dim()));
    for r in set.iter() {
        body.extend_from_slice(&r.sample_id.to_le_bytes());
        body.extend_from_slice(&r.class_id.to_le_bytes());
        for &v in r.vector.as_slice() {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN as usize + body.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.extend_from_slice(&fnv1a64(&body).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_payload(bytes: &[u8]) -> Result<EmbeddingSet> {
    let found = bytes.len() as u64;
    if found < 4 {
        return Err(FormatError::Truncated { needed: HEADER_LEN, found }.into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic }.into());
    }
    if found < HEADER_LEN {
        return Err(FormatError::Truncated { needed: HEADER_LEN, found }.into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != ARCHIVE_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let dim = u32_at(8) as usize;
    if dim == 0 {
        return Err(FormatError::Validation("header declares dim 0".into()).into());
    }
    let count = u64_at(12);
    let checksum = u64_at(20);
    let record_len = 12 + 4 * dim as u64;
    let needed = count
        .checked_mul(record_len)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .unwrap_or(u64::MAX);
    if found < needed {
        return Err(FormatError::Truncated { needed, found }.into());
    }
    if found > needed {
        return Err(FormatError::TrailingBytes(found - needed).into());
    }
    let body = &bytes[HEADER_LEN as usize..];
    let actual = fnv1a64(body);
    if actual != checksum {
        return Err(FormatError::ChecksumMismatch {
            expected: checksum,
            actual,
        }
        .into());
    }
    let mut set = EmbeddingSet::new(dim)?;
    for chunk in body.chunks_exact(record_len as usize) {
        let sample_id = u64::from_le_bytes(chunk[0..8].try_into().expect("8 bytes"));
        let class_id = u32::from_le_bytes(chunk[8..12].try_into().expect("4 bytes"));
        let values = chunk[12..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        let vector = DenseVector::new(values).map_err(|e| {
            FormatError::Validation(format!("sample {sample_id}: {e}"))
        })?;
        set.push(EmbeddingRecord {
            sample_id,
            class_id,
            vector,
        })
        .map_err(|e| FormatError::Validation(e.to_string()))?;
    }
    Ok(set)
}

/// `foo.fcae` → `foo.manifest.json`.
pub fn manifest_path(archive: &Path) -> PathBuf {
    archive.with_extension("manifest.json")
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_archive(set: &EmbeddingSet, manifest: &ArchiveManifest, path: &Path) -> Result<()> {
    manifest.validate(set)?;
    let payload = encode_payload(set)?;
    let manifest_json = serde_json::to_vec_pretty(manifest)
        .map_err(|e| FormatError::Manifest(e.to_string()))?;
    write_atomic(path, &payload)?;
    write_atomic(&manifest_path(path), &manifest_json)
}

pub fn read_archive(path: &Path) -> Result<(EmbeddingSet, ArchiveManifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let set = decode_payload(&bytes)?;
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: ArchiveManifest =
        serde_json::from_str(&text).map_err(|e| FormatError::Manifest(e.to_string()))?;
    manifest.validate(&set)?;
    Ok((set, manifest))
}
