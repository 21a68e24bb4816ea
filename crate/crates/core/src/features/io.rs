//! Feature table files: one CSV row per utterance, schema tag in the first
//! column.
//!
//! Header: `schema,sample_id,pitch_mean,...,mfcc_std_12`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{FeatureError, FeatureVector, DIM, DIMENSION_NAMES, FEATURE_SCHEMA};

pub fn csv_header() -> Vec<&'static str> {
    let mut h = vec!["schema", "sample_id"];
    h.extend(DIMENSION_NAMES);
    h
}

pub fn write_features_csv<W: Write>(out: W, rows: &[(String, FeatureVector)]) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header())?;
    for (id, v) in rows {
        let mut rec = vec![FEATURE_SCHEMA.to_string(), id.clone()];
        // `{:?}` on f64 prints the shortest representation that parses back
        // to the same bits.
        rec.extend(v.0.iter().map(|x| format!("{x:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<(String, FeatureVector)>, FeatureError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let expected = csv_header();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != *b) {
        return Err(FeatureError::Schema(
            "feature CSV header does not match the 37-dimension layout".into(),
        ));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        if &rec[0] != FEATURE_SCHEMA {
            return Err(FeatureError::Schema(format!(
                "row {row}: unsupported schema '{}'",
                &rec[0]
            )));
        }
        let mut v = [0.0; DIM];
        for (d, slot) in v.iter_mut().enumerate() {
            let cell = &rec[d + 2];
            *slot = cell.trim().parse().map_err(|_| {
                FeatureError::Schema(format!("row {row}: {} = '{cell}' is not a number", DIMENSION_NAMES[d]))
            })?;
        }
        rows.push((rec[1].to_string(), FeatureVector(v)));
    }
    Ok(rows)
}

pub fn save_features(path: impl AsRef<Path>, rows: &[(String, FeatureVector)]) -> Result<(), FeatureError> {
    write_features_csv(std::fs::File::create(path)?, rows)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<BTreeMap<String, FeatureVector>, FeatureError> {
    let rows = read_features_csv(std::fs::File::open(path)?)?;
    let mut map = BTreeMap::new();
    for (id, v) in rows {
        if map.insert(id.clone(), v).is_some() {
            return Err(FeatureError::Schema(format!("duplicate sample_id '{id}'")));
        }
    }
    Ok(map)
}
