//! Newline-delimited dataset files and the schema file.
//!
//! One JSON object per line with keys `user_ids`, `item_ids`, `dense`,
//! `click` (0/1) and `duration_seconds`. Records violating the sample
//! invariant or the schema are rejected with their line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSchema, Sample};
use crate::error::{Error, Result};
use crate::Real;

/// Wire form of one dataset record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub user_ids: Vec<usize>,
    pub item_ids: Vec<usize>,
    pub dense: Vec<Real>,
    pub click: u8,
    pub duration_seconds: Real,
}

impl RawRecord {
    pub fn from_sample(sample: &Sample) -> Self {
        Self {
            user_ids: sample.user_ids.clone(),
            item_ids: sample.item_ids.clone(),
            dense: sample.dense.clone(),
            click: sample.clicked as u8,
            duration_seconds: sample.duration_seconds,
        }
    }
}

/// Read and validate a dataset file against a schema.
pub fn read_dataset(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    duration_threshold: Real,
) -> Result<Vec<Sample>> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::InvalidRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if raw.click > 1 {
            return Err(Error::InvalidRecord {
                line: line_no,
                reason: format!("click must be 0 or 1, got {}", raw.click),
            });
        }
        let sample = Sample::new(
            raw.user_ids,
            raw.item_ids,
            raw.dense,
            raw.click == 1,
            raw.duration_seconds,
            duration_threshold,
        )
        .map_err(|e| at_line(e, line_no))?;
        sample.check_against(schema).map_err(|e| at_line(e, line_no))?;
        samples.push(sample);
    }
    Ok(samples)
}

fn at_line(err: Error, line: usize) -> Error {
    match err {
        Error::InvalidRecord { reason, .. } => Error::InvalidRecord { line, reason },
        other => Error::InvalidRecord {
            line,
            reason: other.to_string(),
        },
    }
}

/// Write samples as newline-delimited JSON.
pub fn write_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, &RawRecord::from_sample(s))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schema(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, schema)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_schema(path: impl AsRef<Path>) -> Result<FeatureSchema> {
    let file = File::open(path.as_ref())?;
    let schema: FeatureSchema = serde_json::from_reader(BufReader::new(file))?;
    schema.validate()?;
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FieldSpec;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![FieldSpec::new("u", 4)],
            vec![FieldSpec::new("i", 5)],
            2,
            3,
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let samples = vec![
            Sample::new(vec![1], vec![2], vec![0.1, -0.2], true, 61.5, 50.0).unwrap(),
            Sample::new(vec![0], vec![4], vec![0.0, 0.0], false, 0.0, 50.0).unwrap(),
        ];
        write_dataset(&path, &samples).unwrap();
        let back = read_dataset(&path, &schema(), 50.0).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn invariant_violation_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"user_ids":[1],"item_ids":[2],"dense":[0.0,0.0],"click":1,"duration_seconds":10.0}"#,
                "\n",
                r#"{"user_ids":[1],"item_ids":[2],"dense":[0.0,0.0],"click":0,"duration_seconds":9.0}"#,
                "\n"
            ),
        )
        .unwrap();
        let err = read_dataset(&path, &schema(), 50.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("un-clicked"), "{msg}");
    }

    #[test]
    fn out_of_range_id_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            r#"{"user_ids":[9],"item_ids":[2],"dense":[0.0,0.0],"click":0,"duration_seconds":0.0}"#,
        )
        .unwrap();
        let err = read_dataset(&path, &schema(), 50.0).unwrap_err();
        assert!(err.to_string().contains('u'), "{err}");
    }

    #[test]
    fn schema_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        let s = schema();
        write_schema(&path, &s).unwrap();
        assert_eq!(read_schema(&path).unwrap(), s);
    }
}
