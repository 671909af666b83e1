//! Slice-level dataset records with patient-level splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Healthy,
    Tumor,
}

impl Label {
    pub fn is_tumor(self) -> bool {
        self == Label::Tumor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

/// `(patient_id, slice_index)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SliceId {
    pub patient_id: String,
    pub slice_index: u32,
}

impl SliceId {
    pub fn new(patient_id: impl Into<String>, slice_index: u32) -> Self {
        Self { patient_id: patient_id.into(), slice_index }
    }
}

impl std::fmt::Display for SliceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.patient_id, self.slice_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub patient_id: String,
    pub slice_index: u32,
    pub image_path: PathBuf,
    pub label: Label,
    #[serde(default)]
    pub split: Split,
    /// 0 for an original slice, `k` for its k-th augmented copy.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub variant: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl Record {
    pub fn id(&self) -> SliceId {
        SliceId::new(self.patient_id.clone(), self.slice_index)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    /// Unique `(patient_id, slice_index, variant)` keys and one split per patient.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        let mut splits: HashMap<&str, Split> = HashMap::new();
        for r in &self.records {
            if !seen.insert((r.patient_id.as_str(), r.slice_index, r.variant)) {
                return Err(Error::Invalid(format!("duplicate record {}/{}", r.patient_id, r.slice_index)));
            }
            match splits.insert(&r.patient_id, r.split) {
                Some(prev) if prev != r.split => {
                    return Err(Error::Invalid(format!(
                        "patient {} appears in both {prev:?} and {:?}",
                        r.patient_id, r.split
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Original (variant 0) records keyed by slice id.
    pub fn index(&self) -> HashMap<SliceId, &Record> {
        self.records.iter().filter(|r| r.variant == 0).map(|r| (r.id(), r)).collect()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.split).or_insert(0) += 1;
        }
        counts
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        m.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
