//! Per-slice tumor probabilities and the `patient_id,slice_index,p_tumor` CSV.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSeries {
    pub patient_id: String,
    values: Vec<f64>,
}

fn check_probability(p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::ProbabilityOutOfRange(p))
    }
}

impl ConfidenceSeries {
    pub fn new(patient_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        for &v in &values {
            check_probability(v)?;
        }
        Ok(Self { patient_id: patient_id.into(), values })
    }

    /// Clamps into `[0, 1]`; for filter outputs that may drift by rounding.
    pub(crate) fn clamped(patient_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self { patient_id: patient_id.into(), values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    patient_id: String,
    slice_index: u32,
    p_tumor: f64,
}

/// All rows of a confidence CSV, grouped by patient then slice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfidenceTable {
    pub rows: BTreeMap<String, BTreeMap<u32, f64>>,
}

impl ConfidenceTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["patient_id", "slice_index", "p_tumor"] {
            return Err(Error::format(path, "expected header patient_id,slice_index,p_tumor"));
        }
        let mut table = Self::default();
        for (line, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::format(path, e.to_string()))?;
            check_probability(row.p_tumor).map_err(|e| Error::format(path, format!("row {}: {e}", line + 1)))?;
            table.rows.entry(row.patient_id).or_default().insert(row.slice_index, row.p_tumor);
        }
        Ok(table)
    }

    pub fn contains(&self, patient_id: &str) -> bool {
        self.rows.contains_key(patient_id)
    }

    /// Slices `0..n` for `patient_id`; a gap is an error.
    pub fn series(&self, patient_id: &str, n: usize) -> Result<ConfidenceSeries> {
        let rows = self.rows.get(patient_id);
        let values = (0..n as u32)
            .map(|i| {
                rows.and_then(|r| r.get(&i))
                    .copied()
                    .ok_or_else(|| Error::MissingSlice { patient_id: patient_id.to_string(), slice_index: i })
            })
            .collect::<Result<Vec<_>>>()?;
        ConfidenceSeries::new(patient_id, values)
    }
}

pub fn write_confidence_csv(series: &[ConfidenceSeries], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for s in series {
        for (i, &p) in s.values().iter().enumerate() {
            w.serialize(Row { patient_id: s.patient_id.clone(), slice_index: i as u32, p_tumor: p })
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
