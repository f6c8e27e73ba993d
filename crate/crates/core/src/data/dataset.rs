//! Line-delimited dataset records.
//!
//! One JSON object per line:
//! `{"image_id": "...", "features": [f64, ...], "captions": ["...", ...]}`.
//! Blank lines are ignored. The feature dimension is taken from the first
//! record and enforced on the rest.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize;
use crate::{Error, Result};

pub const MAX_CAPTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub image_id: String,
    pub features: Vec<f64>,
    #[serde(default)]
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionDataset {
    pub feature_dim: usize,
    pub records: Vec<Record>,
}

impl CaptionDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every caption of every record, tokenized, in file order.
    pub fn tokenized_captions(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .flat_map(|r| r.captions.iter().map(|c| tokenize(c)))
            .collect()
    }
}

/// Parse dataset text, requiring at least `min_captions` per record.
pub fn parse_records(text: &str, min_captions: usize) -> Result<CaptionDataset> {
    let mut records = Vec::new();
    let mut feature_dim = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let schema = |message: String| Error::Schema {
            line: line_no,
            message,
        };
        if record.features.is_empty() {
            return Err(schema("empty feature vector".into()));
        }
        let dim = *feature_dim.get_or_insert(record.features.len());
        if record.features.len() != dim {
            return Err(schema(format!(
                "feature vector has {} entries, expected {dim}",
                record.features.len()
            )));
        }
        if record.captions.len() < min_captions || record.captions.len() > MAX_CAPTIONS {
            return Err(schema(format!(
                "record '{}' has {} captions, expected {min_captions}..={MAX_CAPTIONS}",
                record.image_id,
                record.captions.len()
            )));
        }
        records.push(record);
    }
    match feature_dim {
        Some(feature_dim) => Ok(CaptionDataset {
            feature_dim,
            records,
        }),
        None => Err(Error::InvalidInput("dataset contains no records".into())),
    }
}

/// Load a captioned dataset (1 to 5 captions per record).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<CaptionDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, 1)
}

/// Load records whose captions are optional, e.g. images to be captioned.
pub fn load_feature_records(path: impl AsRef<Path>) -> Result<CaptionDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, 0)
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &CaptionDataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for record in &dataset.records {
        serde_json::to_writer(&mut out, record).map_err(|e| Error::InvalidInput(e.to_string()))?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_invalid_input() {
        assert!(matches!(parse_records("", 1), Err(Error::InvalidInput(_))));
        assert!(matches!(
            parse_records("\n\n", 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn two_records() {
        let text = r#"{"image_id":"a","features":[1.0,2.0],"captions":["x y"]}
{"image_id":"b","features":[3.0,4.5],"captions":["z","w"]}
"#;
        let ds = parse_records(text, 1).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim, 2);
        assert_eq!(ds.records[1].captions, ["z", "w"]);
    }

    #[test]
    fn six_captions_is_a_schema_error() {
        let text = r#"{"image_id":"a","features":[1.0],"captions":["1","2","3","4","5","6"]}"#;
        assert!(matches!(
            parse_records(text, 1),
            Err(Error::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn dim_mismatch_names_the_line() {
        let text = r#"{"image_id":"a","features":[1.0],"captions":["x"]}

{"image_id":"b","features":[1.0,2.0],"captions":["y"]}"#;
        assert!(matches!(
            parse_records(text, 1),
            Err(Error::Schema { line: 3, .. })
        ));
    }

    #[test]
    fn malformed_line_is_a_parse_error() {
        let text = "{\"image_id\":\"a\",\"features\":[1.0],\"captions\":[\"x\"]}\nnot json\n";
        assert!(matches!(
            parse_records(text, 1),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_captions() {
        let text = r#"{"image_id":"a","features":[1.0]}"#;
        assert!(matches!(parse_records(text, 1), Err(Error::Schema { .. })));
        assert_eq!(parse_records(text, 0).unwrap().records[0].captions.len(), 0);
    }

    proptest! {
        #[test]
        fn write_then_load_round_trips(
            feats in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..6),
            caps in prop::collection::vec(prop::collection::vec("[a-z .,\"]{0,12}", 1..=5), 6),
        ) {
            let records: Vec<Record> = feats
                .into_iter()
                .zip(caps)
                .enumerate()
                .map(|(i, (features, captions))| Record { image_id: format!("img{i}"), features, captions })
                .collect();
            let ds = CaptionDataset { feature_dim: 3, records };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.jsonl");
            write_dataset(&path, &ds).unwrap();
            prop_assert_eq!(load_dataset(&path).unwrap(), ds);
        }
    }
}
