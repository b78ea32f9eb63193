//! Subject label tables (`ID,MGMT_value` CSVs).

use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("header has no column named {0:?}")]
    MissingColumn(String),
    #[error("subject id {0:?} appears more than once")]
    DuplicateId(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// Column names used to locate the id and label fields.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CohortColumns {
    pub id: String,
    pub label: String,
    /// Optional column holding `train` / `val` / `test`.
    #[serde(default)]
    pub split: Option<String>,
}

impl Default for CohortColumns {
    fn default() -> Self {
        Self {
            id: "ID".into(),
            label: "MGMT_value".into(),
            split: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortRow {
    pub subject_id: String,
    /// 1 = methylated, 0 = unmethylated.
    pub label: u8,
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CohortTable {
    pub rows: Vec<CohortRow>,
    /// Rows dropped for a missing or non-binary label or an empty id.
    pub excluded: usize,
}

impl CohortTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label == 1).count()
    }

    pub fn label_of(&self, id: &str) -> Option<u8> {
        self.rows.iter().find(|r| r.subject_id == id).map(|r| r.label)
    }
}

fn parse_label(cell: &str) -> Option<u8> {
    let t = cell.trim();
    match t {
        "0" => Some(0),
        "1" => Some(1),
        _ => match t.parse::<f64>() {
            Ok(v) if v == 0.0 => Some(0),
            Ok(v) if v == 1.0 => Some(1),
            _ => None,
        },
    }
}

fn parse_split(cell: &str) -> Option<SplitTag> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "train" => Some(SplitTag::Train),
        "val" | "valid" | "validation" => Some(SplitTag::Val),
        "test" => Some(SplitTag::Test),
        _ => None,
    }
}

/// Parses a cohort CSV. Rows with a missing or invalid label are excluded
/// and counted rather than rejected.
pub fn read_cohort_csv(text: &str, columns: &CohortColumns) -> Result<CohortTable, CohortError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| CohortError::Csv(e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| CohortError::MissingColumn(name.to_string()))
    };
    let id_col = find(&columns.id)?;
    let label_col = find(&columns.label)?;
    let split_col = match &columns.split {
        Some(name) => Some(find(name)?),
        None => None,
    };

    let mut table = CohortTable::default();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CohortError::Csv(e.to_string()))?;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let id = record.get(id_col).unwrap_or("").to_string();
        let label = record.get(label_col).and_then(parse_label);
        let (false, Some(label)) = (id.is_empty(), label) else {
            table.excluded += 1;
            continue;
        };
        if !seen.insert(id.clone()) {
            return Err(CohortError::DuplicateId(id));
        }
        let split = split_col.and_then(|c| record.get(c)).and_then(parse_split);
        table.rows.push(CohortRow {
            subject_id: id,
            label,
            split,
        });
    }
    Ok(table)
}

/// Writes `ID,MGMT_value` rows with LF line endings.
pub fn write_cohort_csv(table: &CohortTable, columns: &CohortColumns) -> String {
    let mut out = format!("{},{}\n", columns.id, columns.label);
    for r in &table.rows {
        out.push_str(&format!("{},{}\n", r.subject_id, r.label));
    }
    out
}
