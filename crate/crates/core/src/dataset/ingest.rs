use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{label_histogram, ClassLabel, FeatureMatrix, Stage};
use crate::error::{Error, Result};

/// Column mapping for a raw grade export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub id_column: String,
    pub final_grade_column: String,
    pub stage20_columns: Vec<String>,
    pub stage50_columns: Vec<String>,
    /// Maximum attainable raw mark per task column.
    pub task_max: IndexMap<String, f64>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }

    pub fn stage_columns(&self, stage: Stage) -> &[String] {
        match stage {
            Stage::Stage20 => &self.stage20_columns,
            Stage::Stage50 => &self.stage50_columns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub stage: Stage,
    pub feature_columns: Vec<String>,
    pub label_histogram: IndexMap<String, usize>,
    pub empty_cells_replaced: usize,
    pub cells_rounded: usize,
    pub dropped_all_empty_columns: Vec<String>,
    pub preprocessing: Vec<String>,
}

/// Maps a final grade percentage onto its class band.
pub fn label_targets(final_grade: i64) -> Result<ClassLabel> {
    match final_grade {
        70..=100 => Ok(ClassLabel::G),
        51..=69 => Ok(ClassLabel::F),
        0..=50 => Ok(ClassLabel::W),
        g => Err(Error::Validation(format!("final grade {g} outside 0..=100"))),
    }
}

/// Rescales a raw mark from `0..=task_max` onto `0..=100` and rounds to the
/// nearest integer, ties away from zero.
///
/// The scaled value is snapped to 9 decimals before rounding so decimal
/// inputs such as `1.335 / 2` land on their exact tie instead of a binary
/// neighbour.
pub fn rescale_mark(raw: f64, task_max: f64) -> u8 {
    let scaled = raw * 100.0 / task_max;
    let snapped = (scaled * 1e9).round() / 1e9;
    snapped.round().clamp(0.0, 100.0) as u8
}

pub fn load_dataset(path: &Path, schema: &Schema, stage: Stage) -> Result<(FeatureMatrix, IngestReport)> {
    let f = std::fs::File::open(path)?;
    load_dataset_from_reader(f, schema, stage)
}

/// Lines starting with `#` are skipped.
pub fn load_dataset_from_reader<R: Read>(
    reader: R,
    schema: &Schema,
    stage: Stage,
) -> Result<(FeatureMatrix, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in CSV header")))
    };

    let id_col = col(&schema.id_column)?;
    let grade_col = col(&schema.final_grade_column)?;
    let stage_cols = schema.stage_columns(stage);
    if stage_cols.is_empty() {
        return Err(Error::Schema(format!("schema lists no columns for {stage:?}")));
    }
    let mut features = Vec::with_capacity(stage_cols.len());
    for name in stage_cols {
        let idx = col(name)?;
        let max = *schema
            .task_max
            .get(name)
            .ok_or_else(|| Error::Schema(format!("no task maximum for column {name:?}")))?;
        if !(max.is_finite() && max > 0.0) {
            return Err(Error::Schema(format!("task maximum for {name:?} must be positive")));
        }
        features.push((name.clone(), idx, max));
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut raw_rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut empty_cells = 0usize;
    for (k, rec) in rdr.records().enumerate() {
        // data rows are numbered from 1, the header is row 0
        let row = k + 1;
        let rec = rec.map_err(|e| Error::Ingestion {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Ingestion {
                row,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let grade_text = &rec[grade_col];
        let grade: f64 = grade_text.parse().map_err(|_| Error::Ingestion {
            row,
            message: format!("final grade {grade_text:?} is not a number"),
        })?;
        if grade.fract() != 0.0 {
            return Err(Error::Validation(format!(
                "row {row}: final grade {grade} is not an integer percentage"
            )));
        }
        let label = label_targets(grade as i64)
            .map_err(|e| Error::Validation(format!("row {row}: {e}")))?;

        let mut marks = Vec::with_capacity(features.len());
        for (name, idx, max) in &features {
            let cell = &rec[*idx];
            if cell.is_empty() {
                empty_cells += 1;
                marks.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Ingestion {
                row,
                message: format!("column {name:?}: {cell:?} is not a number"),
            })?;
            if !(v.is_finite() && (0.0..=*max).contains(&v)) {
                return Err(Error::Validation(format!(
                    "row {row}, column {name:?}: mark {v} outside declared range 0..={max}"
                )));
            }
            marks.push(Some(v));
        }
        ids.push(rec[id_col].to_string());
        labels.push(label);
        raw_rows.push(marks);
    }

    // A column with no mark at all carries no information; drop it.
    let keep: Vec<usize> = (0..features.len())
        .filter(|&j| raw_rows.iter().any(|r| r[j].is_some()))
        .collect();
    let dropped: Vec<String> = (0..features.len())
        .filter(|j| !keep.contains(j))
        .map(|j| features[j].0.clone())
        .collect();
    if keep.is_empty() {
        return Err(Error::Validation("every feature column is empty".into()));
    }

    let mut cells_rounded = 0usize;
    let values: Vec<Vec<u8>> = raw_rows
        .iter()
        .map(|r| {
            keep.iter()
                .map(|&j| {
                    let raw = r[j].unwrap_or(0.0);
                    let scaled = raw * 100.0 / features[j].2;
                    if (scaled - scaled.round()).abs() > 1e-9 {
                        cells_rounded += 1;
                    }
                    rescale_mark(raw, features[j].2)
                })
                .collect()
        })
        .collect();
    let feature_names: Vec<String> = keep.iter().map(|&j| features[j].0.clone()).collect();

    let hist = label_histogram(&labels);
    let report = IngestReport {
        rows: ids.len(),
        stage,
        feature_columns: feature_names.clone(),
        label_histogram: ClassLabel::ALL
            .iter()
            .map(|c| (c.to_string(), hist[c.index()]))
            .collect(),
        empty_cells_replaced: empty_cells,
        cells_rounded,
        dropped_all_empty_columns: dropped,
        preprocessing: vec![
            "empty marks replaced with 0".into(),
            "marks rescaled linearly from the task maximum to 0..100".into(),
            "rescaled marks rounded to the nearest integer, ties away from zero (rescale first, then round)".into(),
            "final grade banded: >=70 G, 51..69 F, <=50 W".into(),
        ],
    };
    let m = FeatureMatrix::new(ids, feature_names, values, labels, stage)?;
    Ok((m, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        let mut task_max = IndexMap::new();
        task_max.insert("ES1.1".to_string(), 2.0);
        task_max.insert("ES1.2".to_string(), 3.0);
        task_max.insert("ES4.1".to_string(), 15.0);
        Schema {
            id_column: "id".into(),
            final_grade_column: "total".into(),
            stage20_columns: vec!["ES1.1".into(), "ES1.2".into()],
            stage50_columns: vec!["ES1.1".into(), "ES1.2".into(), "ES4.1".into()],
            task_max,
        }
    }

    fn load(csv: &str) -> Result<(FeatureMatrix, IngestReport)> {
        load_dataset_from_reader(csv.as_bytes(), &schema(), Stage::Stage20)
    }

    #[test]
    fn bands() {
        assert_eq!(label_targets(70).unwrap(), ClassLabel::G);
        assert_eq!(label_targets(100).unwrap(), ClassLabel::G);
        assert_eq!(label_targets(69).unwrap(), ClassLabel::F);
        assert_eq!(label_targets(51).unwrap(), ClassLabel::F);
        assert_eq!(label_targets(50).unwrap(), ClassLabel::W);
        assert_eq!(label_targets(0).unwrap(), ClassLabel::W);
        assert!(label_targets(101).is_err());
        assert!(label_targets(-1).is_err());
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_mark(1.0, 2.0), 50);
        // 66.75 -> 67
        assert_eq!(rescale_mark(1.335, 2.0), 67);
        // exact tie 12.5 -> 13
        assert_eq!(rescale_mark(1.0, 8.0), 13);
        assert_eq!(rescale_mark(2.0, 3.0), 67);
        assert_eq!(rescale_mark(0.0, 3.0), 0);
    }

    #[test]
    fn empty_cell_becomes_zero() {
        let (m, rep) = load("id,ES1.1,ES1.2,ES4.1,total\ns1,,3,10,80\ns2,2,1.5,,40\n").unwrap();
        assert_eq!(m.values, vec![vec![0, 100], vec![100, 50]]);
        assert_eq!(m.labels, vec![ClassLabel::G, ClassLabel::W]);
        assert_eq!(rep.empty_cells_replaced, 1);
        assert_eq!(rep.rows, 2);
    }

    #[test]
    fn malformed_row_is_named() {
        let err = load("id,ES1.1,ES1.2,ES4.1,total\ns1,1,1,1,80\ns2,1,1\n").unwrap_err();
        match err {
            Error::Ingestion { row, .. } => assert_eq!(row, 2),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn mark_out_of_range() {
        let err = load("id,ES1.1,ES1.2,ES4.1,total\ns1,3,1,1,80\n").unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("ES1.1")), "{err}");
    }

    #[test]
    fn unknown_schema_column() {
        let err = load("id,ES1.1,ES4.1,total\ns1,1,1,80\n").unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("ES1.2")), "{err}");
    }

    #[test]
    fn all_empty_column_dropped() {
        let (m, rep) = load("id,ES1.1,ES1.2,ES4.1,total\ns1,1,,1,80\ns2,2,,,55\n").unwrap();
        assert_eq!(m.feature_names, vec!["ES1.1"]);
        assert_eq!(rep.dropped_all_empty_columns, vec!["ES1.2"]);
    }

    #[test]
    fn non_integer_grade_rejected() {
        assert!(load("id,ES1.1,ES1.2,ES4.1,total\ns1,1,1,1,50.5\n").is_err());
    }

    #[test]
    fn preprocessing_is_idempotent() {
        let (m, rep) = load("id,ES1.1,ES1.2,ES4.1,total\ns1,1.335,,4,80\ns2,2,1,,55\ns3,0.5,2.5,,20\n").unwrap();
        // feed the preprocessed marks back in on a 0..100 scale
        let mut csv = String::from("id,ES1.1,ES1.2,total\n");
        let grades = ["80", "55", "20"];
        for (i, row) in m.values.iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", m.instance_ids[i], row[0], row[1], grades[i]));
        }
        let mut s = schema();
        s.task_max.insert("ES1.1".into(), 100.0);
        s.task_max.insert("ES1.2".into(), 100.0);
        let (again, rep2) = load_dataset_from_reader(csv.as_bytes(), &s, Stage::Stage20).unwrap();
        assert_eq!(again, m);
        assert_eq!(rep2.label_histogram, rep.label_histogram);
        assert_eq!(rep2.cells_rounded, 0);
    }
}
