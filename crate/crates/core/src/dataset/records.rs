use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::nncore::RealMatrix;

/// One program/recording pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_text: Option<String>,
    pub code_embedding: Vec<f64>,
    pub audio_embedding: Vec<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl PairRecord {
    fn check(&self) -> Result<(), String> {
        if self.code_embedding.is_empty() || self.audio_embedding.is_empty() {
            return Err(format!("record {:?} has an empty embedding", self.id));
        }
        if self
            .code_embedding
            .iter()
            .chain(&self.audio_embedding)
            .any(|v| !v.is_finite())
        {
            return Err(format!(
                "record {:?} has a non-finite embedding value",
                self.id
            ));
        }
        Ok(())
    }
}

/// An ordered collection of records sharing both embedding widths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<PairRecord>,
}

impl Dataset {
    /// Validates every record. Errors report 1-based record positions.
    pub fn new(records: Vec<PairRecord>) -> Result<Self, DatasetError> {
        let mut widths: Option<(usize, usize)> = None;
        for (i, r) in records.iter().enumerate() {
            r.check().map_err(|message| DatasetError::Schema {
                line: i + 1,
                message,
            })?;
            let w = (r.code_embedding.len(), r.audio_embedding.len());
            match widths {
                None => widths = Some(w),
                Some(expect) if expect != w => {
                    return Err(DatasetError::Schema {
                        line: i + 1,
                        message: format!(
                            "embedding widths {}/{} differ from the dataset's {}/{}",
                            w.0, w.1, expect.0, expect.1
                        ),
                    })
                }
                _ => {}
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<PairRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn code_dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.code_embedding.len())
    }

    pub fn audio_dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.audio_embedding.len())
    }

    pub fn code_matrix(&self) -> RealMatrix {
        let rows: Vec<&[f64]> = self
            .records
            .iter()
            .map(|r| r.code_embedding.as_slice())
            .collect();
        RealMatrix::from_rows(&rows).expect("widths validated")
    }

    pub fn audio_matrix(&self) -> RealMatrix {
        let rows: Vec<&[f64]> = self
            .records
            .iter()
            .map(|r| r.audio_embedding.as_slice())
            .collect();
        RealMatrix::from_rows(&rows).expect("widths validated")
    }
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut widths: Option<(usize, usize)> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        rec.check().map_err(|message| DatasetError::Schema {
            line: line_no,
            message,
        })?;
        let w = (rec.code_embedding.len(), rec.audio_embedding.len());
        if let Some(expect) = widths {
            if expect != w {
                return Err(DatasetError::Schema {
                    line: line_no,
                    message: format!(
                        "embedding widths {}/{} differ from the dataset's {}/{}",
                        w.0, w.1, expect.0, expect.1
                    ),
                });
            }
        }
        widths = Some(w);
        records.push(rec);
    }
    Ok(Dataset { records })
}

/// Writes one JSON object per line; numbers use the shortest round-trip form.
pub fn save_records(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in &dataset.records {
        serde_json::to_writer(&mut out, r).map_err(|e| DatasetError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, c: usize, a: usize) -> PairRecord {
        PairRecord {
            id: id.into(),
            code_text: None,
            code_embedding: vec![0.5; c],
            audio_embedding: vec![-0.25; a],
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, "").unwrap();
        let d = load_records(&p).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.code_dim(), None);
    }

    #[test]
    fn width_change_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let a = serde_json::to_string(&rec("a", 768, 768)).unwrap();
        let b = serde_json::to_string(&rec("b", 768, 512)).unwrap();
        fs::write(&p, format!("{a}\n{b}\n")).unwrap();
        match load_records(&p) {
            Err(DatasetError::Schema { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let a = serde_json::to_string(&rec("a", 2, 2)).unwrap();
        fs::write(&p, format!("{a}\n{a}\n{{\"id\": 3\n")).unwrap();
        match load_records(&p) {
            Err(DatasetError::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_empty_embeddings_rejected() {
        let mut r = rec("a", 2, 2);
        r.code_embedding[1] = f64::NAN;
        assert!(Dataset::new(vec![r]).is_err());
        assert!(Dataset::new(vec![rec("a", 0, 2)]).is_err());
    }

    #[test]
    fn save_load_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let mut r = rec("x", 3, 2);
        r.code_text = Some("play 60\nsleep 0.5".into());
        r.code_embedding = vec![0.1, 1e-300, -3.0];
        r.meta.insert("template".into(), "compus".into());
        let d = Dataset::new(vec![r, rec("y", 3, 2)]).unwrap();
        save_records(&d, &p).unwrap();
        assert_eq!(load_records(&p).unwrap(), d);
    }
}
