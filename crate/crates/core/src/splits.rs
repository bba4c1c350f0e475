//! Stratified k-fold assignment and fold materialization.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data_model::DatasetManifest;
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// A total mapping sample_id -> fold index in [0, k).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    map: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, sample_id: &str) -> Option<usize> {
        self.map.get(sample_id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.map.iter().map(|(id, &f)| (id.as_str(), f))
    }

    /// Rebuild from a mapping read back from disk, validating fold range.
    pub fn from_mapping(k: usize, seed: u64, map: BTreeMap<String, usize>) -> Result<Self> {
        for (id, &fold) in &map {
            if fold >= k {
                log::error!("sample {id} carries an out-of-range fold");
                return Err(Error::FoldOutOfRange { fold, k });
            }
        }
        Ok(FoldAssignment { k, seed, map })
    }
}

/// Shuffle each class by a seed-derived stream, then deal members to folds
/// round-robin with a cursor that carries across classes. Per-class per-fold
/// counts deviate from the ideal by at most one, and every fold is populated
/// whenever n >= k. Deterministic for fixed (manifest order, k, seed).
pub fn stratified_kfold(
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need k >= 2")));
    }
    let n = manifest.len();
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds sample count {n}"
        )));
    }

    let mut classes: Vec<(u8, Vec<&str>)> = Vec::new();
    for label in [0u8, 1u8] {
        let ids: Vec<&str> = manifest
            .records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.sample_id.as_str())
            .collect();
        if !ids.is_empty() {
            classes.push((label, ids));
        }
    }
    if classes.len() == 1 {
        log::warn!(
            "manifest contains a single class ({}); stratifying over it alone",
            classes[0].0
        );
    }

    let mut map = BTreeMap::new();
    let mut cursor = 0usize;
    for (label, mut ids) in classes {
        ids.shuffle(&mut derive_rng(seed, &format!("split/class/{label}")));
        for id in ids {
            map.insert(id.to_string(), cursor % k);
            cursor += 1;
        }
    }
    Ok(FoldAssignment { k, seed, map })
}

/// Split the manifest into (train_ids, val_ids) for one fold, both in
/// manifest order. The validation set is the fold itself; training is the
/// complement.
pub fn fold_split(
    manifest: &DatasetManifest,
    assignment: &FoldAssignment,
    fold: usize,
) -> Result<(Vec<String>, Vec<String>)> {
    if fold >= assignment.k {
        return Err(Error::FoldOutOfRange {
            fold,
            k: assignment.k,
        });
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for record in &manifest.records {
        let assigned =
            assignment
                .fold_of(&record.sample_id)
                .ok_or_else(|| Error::MissingAssignment {
                    sample_id: record.sample_id.clone(),
                })?;
        if assigned == fold {
            val.push(record.sample_id.clone());
        } else {
            train.push(record.sample_id.clone());
        }
    }
    Ok((train, val))
}

/// Write the assignment as `sample_id,fold`, with an optional fingerprint
/// comment, so the same folds can be reused across ablation arms.
pub fn save_assignment(
    assignment: &FoldAssignment,
    path: &Path,
    fingerprint: Option<&str>,
) -> Result<()> {
    let mut out = String::new();
    if let Some(fp) = fingerprint {
        out.push_str(&format!("# config_fingerprint={fp}\n"));
    }
    out.push_str("sample_id,fold\n");
    for (id, fold) in assignment.iter() {
        out.push_str(&format!("{id},{fold}\n"));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a `sample_id,fold` CSV back; returns the mapping and the embedded
/// fingerprint comment, if any.
pub fn read_assignment_csv(path: &Path) -> Result<(BTreeMap<String, usize>, Option<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut fingerprint = None;
    let mut map = BTreeMap::new();
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(fp) = comment.trim().strip_prefix("config_fingerprint=") {
                fingerprint = Some(fp.to_string());
            }
            continue;
        }
        if !header_seen {
            if line != "sample_id,fold" {
                return Err(Error::BadPredictionFile {
                    path: path.to_path_buf(),
                    reason: format!("expected header sample_id,fold, found {line:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        let (id, fold) = line.split_once(',').ok_or_else(|| Error::BadPredictionFile {
            path: path.to_path_buf(),
            reason: format!("line {}: malformed row {line:?}", lineno + 1),
        })?;
        let fold: usize = fold.trim().parse().map_err(|_| Error::BadPredictionFile {
            path: path.to_path_buf(),
            reason: format!("line {}: bad fold index {fold:?}", lineno + 1),
        })?;
        map.insert(id.trim().to_string(), fold);
    }
    if map.is_empty() {
        return Err(Error::EmptyManifest {
            path: path.to_path_buf(),
        });
    }
    Ok((map, fingerprint))
}
