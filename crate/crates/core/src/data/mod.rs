//! Labelled series datasets: on-disk format, validation and summaries.
//!
//! A dataset directory holds `manifest.json`
//! (`{"name": ..., "classes": [...], "length": n}`) and `data.csv` with
//! header `id,label,v1,...,vn`.

pub mod synth;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DataError, Error, Result};

pub use synth::{synth_generate, ClassGenerator, SynthSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Index into [`Dataset::classes`].
    pub label: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub classes: Vec<String>,
    pub length: Option<usize>,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub length: Option<usize>,
    pub samples: usize,
    pub classes: usize,
    pub per_class: Vec<(String, usize)>,
}

impl Dataset {
    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(DataError::Manifest("no classes declared".into()).into());
        }
        let mut counts = vec![0usize; self.classes.len()];
        for (row, s) in self.samples.iter().enumerate() {
            let row = row + 1;
            if s.label >= self.classes.len() {
                return Err(DataError::UnknownLabel { row, label: s.label.to_string() }.into());
            }
            counts[s.label] += 1;
            if s.values.is_empty() {
                return Err(DataError::EmptySeries.into());
            }
            if let Some(n) = self.length {
                if s.values.len() != n {
                    return Err(DataError::LengthMismatch { row, expected: n, found: s.values.len() }.into());
                }
            }
            if let Some((i, &v)) = s.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(DataError::NonFinite { row, column: i + 3, value: v }.into());
            }
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(DataError::EmptyClass(self.classes[i].clone()).into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn series(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.values.clone()).collect()
    }

    /// Subset in the given index order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            classes: self.classes.clone(),
            length: self.length,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Digest of the series values in order; labels and ids excluded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            h.update((s.values.len() as u64).to_le_bytes());
            for v in &s.values {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn describe(&self) -> DatasetSummary {
        let mut counts = vec![0usize; self.classes.len()];
        for s in &self.samples {
            if let Some(c) = counts.get_mut(s.label) {
                *c += 1;
            }
        }
        DatasetSummary {
            name: self.name.clone(),
            length: self.length.or_else(|| self.samples.first().map(|s| s.values.len())),
            samples: self.samples.len(),
            classes: self.classes.len(),
            per_class: self.classes.iter().cloned().zip(counts).collect(),
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest { name: self.name.clone(), classes: self.classes.clone(), length: self.length }
    }

    /// CSV text with shortest round-trip decimal values and LF endings.
    pub fn to_csv(&self) -> Result<String> {
        let width = self.samples.iter().map(|s| s.values.len()).max().unwrap_or(0);
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((1..=width).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![s.id.clone(), self.classes[s.label].clone()];
            rec.extend(s.values.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(DATA_FILE, e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

pub fn describe(dataset: &Dataset) -> DatasetSummary {
    dataset.describe()
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let data_path = dir.join(DATA_FILE);
    for p in [&manifest_path, &data_path] {
        if !p.is_file() {
            return Err(DataError::MissingFile(p.clone()).into());
        }
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
    let csv_text = fs::read_to_string(&data_path).map_err(|e| Error::io(&data_path, e))?;
    parse_dataset(&manifest, &csv_text)
}

/// Builds and validates a dataset from a manifest and CSV text.
pub fn parse_dataset(manifest: &Manifest, csv_text: &str) -> Result<Dataset> {
    if manifest.classes.is_empty() {
        return Err(DataError::Manifest("no classes declared".into()).into());
    }
    let mut index = HashMap::new();
    for (i, c) in manifest.classes.iter().enumerate() {
        if index.insert(c.as_str(), i).is_some() {
            return Err(DataError::Manifest(format!("class `{c}` declared twice")).into());
        }
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(csv_text.as_bytes());
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(DataError::Header("expected `id,label,v1,...`".into()).into());
    }
    for (i, h) in header.iter().skip(2).enumerate() {
        if h != format!("v{}", i + 1) {
            return Err(DataError::Header(format!("column {} is `{h}`, expected `v{}`", i + 3, i + 1)).into());
        }
    }
    let expected = manifest.length.unwrap_or(header.len() - 2);
    if header.len() - 2 != expected {
        return Err(DataError::Header(format!("{} value columns, manifest length {expected}", header.len() - 2)).into());
    }
    let mut samples = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let found = rec.len().saturating_sub(2);
        if found != expected {
            return Err(DataError::LengthMismatch { row, expected, found }.into());
        }
        let label = *index
            .get(&rec[1])
            .ok_or_else(|| DataError::UnknownLabel { row, label: rec[1].to_string() })?;
        let mut values = Vec::with_capacity(found);
        for (c, field) in rec.iter().enumerate().skip(2) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| DataError::NonNumeric { row, column: c + 1, text: field.to_string() })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row, column: c + 1, value: v }.into());
            }
            values.push(v);
        }
        samples.push(Sample { id: rec[0].to_string(), label, values });
    }
    let ds = Dataset { name: manifest.name.clone(), classes: manifest.classes.clone(), length: Some(expected), samples };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = serde_json::to_string_pretty(&dataset.manifest())? + "\n";
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
    let dp = dir.join(DATA_FILE);
    fs::write(&dp, dataset.to_csv()?).map_err(|e| Error::io(&dp, e))
}
