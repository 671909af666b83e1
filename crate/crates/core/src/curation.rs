//! Near-duplicate slices with conflicting labels.
//!
//! Embeddings are compared pairwise by cosine similarity; any pair above the
//! threshold whose labels differ is reported, and the healthy-labelled member
//! is scheduled for removal unless it belongs to the test split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Label, SliceId, Split};

pub const DEFAULT_THRESHOLD: f64 = 0.95;

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

fn cosine_from_parts(dot_uv: f64, norm_u: f64, norm_v: f64) -> f64 {
    (dot_uv / (norm_u * norm_v)).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Invalid(format!("vector lengths differ: {} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(cosine_from_parts(dot(u, v), nu, nv))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<SliceId>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<SliceId>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::Invalid(format!("{} ids but {} vectors", ids.len(), vectors.len())));
        }
        let dim = vectors.first().map_or(1, Vec::len);
        if dim == 0 {
            return Err(Error::Invalid("embedding length must be >= 1".into()));
        }
        for (id, v) in ids.iter().zip(&vectors) {
            if v.len() != dim {
                return Err(Error::Invalid(format!("{id}: embedding length {} != {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!("{id}: non-finite embedding")));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::Invalid(format!("{id}: all-zero embedding")));
            }
        }
        Ok(Self { ids, vectors })
    }

    pub fn ids(&self) -> &[SliceId] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// CSV with header `patient_id,slice_index,e0,e1,...`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
        let expected_dims = headers.len().saturating_sub(2);
        let ok_header = headers.get(0) == Some("patient_id")
            && headers.get(1) == Some("slice_index")
            && expected_dims >= 1
            && headers.iter().skip(2).enumerate().all(|(i, h)| h == format!("e{i}"));
        if !ok_header {
            return Err(Error::format(path, "expected header patient_id,slice_index,e0,e1,..."));
        }
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", line + 1));
            let slice_index: u32 = rec[1].parse().map_err(|_| bad("slice_index"))?;
            let v: Vec<f64> =
                rec.iter().skip(2).map(|s| s.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("embedding value"))?;
            ids.push(SliceId::new(&rec[0], slice_index));
            vectors.push(v);
        }
        Self::new(ids, vectors).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let dim = self.vectors.first().map_or(0, Vec::len);
        let mut header = vec!["patient_id".to_string(), "slice_index".to_string()];
        header.extend((0..dim).map(|i| format!("e{i}")));
        w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            let mut row = vec![id.patient_id.clone(), id.slice_index.to_string()];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictPair {
    pub id_a: SliceId,
    pub id_b: SliceId,
    pub similarity: f64,
    pub label_a: Label,
    pub label_b: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub threshold: f64,
    pub pairs: Vec<ConflictPair>,
    pub removed_ids: Vec<SliceId>,
}

/// All cross-label pairs with similarity strictly above `threshold`.
pub fn find_conflicts(emb: &EmbeddingSet, manifest: &DatasetManifest, threshold: f64) -> Result<ConflictReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    let index = manifest.index();
    let meta: Vec<(Label, Split)> = emb
        .ids
        .iter()
        .map(|id| {
            index.get(id).map(|r| (r.label, r.split)).ok_or_else(|| Error::UnknownRecord {
                patient_id: id.patient_id.clone(),
                slice_index: id.slice_index,
            })
        })
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = emb.vectors.iter().map(|v| norm(v)).collect();

    let pairs: Vec<ConflictPair> = (0..emb.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (vectors, ids, meta, norms) = (&emb.vectors, &emb.ids, &meta, &norms);
            (i + 1..vectors.len()).filter_map(move |j| {
                if meta[i].0 == meta[j].0 {
                    return None;
                }
                let sim = cosine_from_parts(dot(&vectors[i], &vectors[j]), norms[i], norms[j]);
                (sim > threshold).then(|| ConflictPair {
                    id_a: ids[i].clone(),
                    id_b: ids[j].clone(),
                    similarity: sim,
                    label_a: meta[i].0,
                    label_b: meta[j].0,
                })
            })
        })
        .collect();

    let mut removed = BTreeSet::new();
    for p in &pairs {
        let healthy = if p.label_a == Label::Healthy { &p.id_a } else { &p.id_b };
        if index[healthy].split != Split::Test {
            removed.insert(healthy.clone());
        }
    }
    Ok(ConflictReport { threshold, pairs, removed_ids: removed.into_iter().collect() })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub records_before: usize,
    pub records_after: usize,
    pub removed_per_split: BTreeMap<Split, usize>,
}

/// Drops the report's `removed_ids` (all variants); tumor and test records are refused.
pub fn apply_curation(manifest: &DatasetManifest, report: &ConflictReport) -> Result<(DatasetManifest, CurationSummary)> {
    let index = manifest.index();
    let mut remove: HashSet<&SliceId> = HashSet::new();
    for id in &report.removed_ids {
        let rec = index.get(id).ok_or_else(|| Error::UnknownRecord {
            patient_id: id.patient_id.clone(),
            slice_index: id.slice_index,
        })?;
        if rec.label == Label::Tumor {
            return Err(Error::Invalid(format!("refusing to remove tumor-labelled slice {id}")));
        }
        if rec.split == Split::Test {
            return Err(Error::Invalid(format!("refusing to remove test-split slice {id}")));
        }
        remove.insert(id);
    }
    let mut summary = CurationSummary { records_before: manifest.len(), ..Default::default() };
    let mut kept = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        if remove.contains(&r.id()) {
            *summary.removed_per_split.entry(r.split).or_insert(0) += 1;
        } else {
            kept.push(r.clone());
        }
    }
    summary.records_after = kept.len();
    Ok((DatasetManifest { records: kept }, summary))
}
