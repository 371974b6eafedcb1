//! Delimited dataset ingestion.
//!
//! Datasets are UTF-8 text with a header row; comma delimited by default,
//! tab accepted. The right limit accepts an empty field, `NA` or `Inf` for
//! right-censored subjects and serializes as `Inf`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, IntervalObservation};
use crate::error::{Error, Result};
use crate::model::CovariateProfile;

/// Column assignment for dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub left: String,
    pub right: String,
    pub event: String,
    /// Covariate columns for the incidence part (intercept is implicit).
    pub incidence: Vec<String>,
    /// Covariate columns for the latency part.
    pub latency: Vec<String>,
}

impl ColumnMapping {
    /// Default schema: `Timept1`/`Timept2`/`Relapse` limits and indicator,
    /// every remaining column a shared incidence/latency covariate.
    pub fn infer(headers: &[String]) -> Result<Self> {
        let canonical = ["Timept1", "Timept2", "Relapse"];
        if canonical.iter().all(|c| headers.iter().any(|h| h == c)) {
            let covs: Vec<String> = headers
                .iter()
                .filter(|h| !canonical.contains(&h.as_str()))
                .cloned()
                .collect();
            return Ok(Self {
                left: "Timept1".into(),
                right: "Timept2".into(),
                event: "Relapse".into(),
                incidence: covs.clone(),
                latency: covs,
            });
        }
        if headers.len() < 3 {
            return Err(Error::Parse(
                "cannot infer columns: need at least left, right and event columns".into(),
            ));
        }
        let covs: Vec<String> = headers[3..].to_vec();
        Ok(Self {
            left: headers[0].clone(),
            right: headers[1].clone(),
            event: headers[2].clone(),
            incidence: covs.clone(),
            latency: covs,
        })
    }
}

/// A rejected input row with its 1-based file line number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: usize,
    pub message: String,
}

/// Raw delimited table: headers plus string cells.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let delimiter = match text.lines().next() {
            Some(first) if first.contains('\t') => b'\t',
            Some(_) => b',',
            None => return Err(Error::Parse(format!("{} is empty", path.display()))),
        };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            rows.push(record.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "column '{name}' not found; available: {}",
                    self.headers.join(", ")
                ))
            })
    }

    /// Numeric values of one column over the given kept row indices.
    pub fn numeric_column(&self, name: &str, keep: &[usize]) -> Result<Vec<f64>> {
        let idx = self.column_index(name)?;
        keep.iter()
            .map(|&r| {
                self.rows[r][idx].parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "line {}: column '{name}' value '{}' is not numeric",
                        r + 2,
                        self.rows[r][idx]
                    ))
                })
            })
            .collect()
    }
}

fn parse_right_limit(cell: &str) -> Result<f64> {
    let lowered = cell.to_ascii_lowercase();
    if cell.is_empty() || lowered == "na" || lowered == "inf" || lowered == "infinity" {
        return Ok(f64::INFINITY);
    }
    cell.parse::<f64>()
        .map_err(|_| Error::Parse(format!("right limit '{cell}' is not numeric")))
}

fn parse_event(cell: &str) -> Result<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(Error::Parse(format!("event indicator '{other}' is not 0/1"))),
    }
}

/// Parsed dataset plus the indices of kept rows and per-row rejections.
#[derive(Debug, Clone)]
pub struct ParsedDataset {
    pub dataset: Dataset,
    pub kept_rows: Vec<usize>,
    pub issues: Vec<RowIssue>,
}

/// Builds a dataset from a raw table under a column mapping. Rows that fail
/// to parse or violate the interval invariants are rejected individually.
pub fn parse_dataset(table: &RawTable, mapping: &ColumnMapping) -> Result<ParsedDataset> {
    let left_idx = table.column_index(&mapping.left)?;
    let right_idx = table.column_index(&mapping.right)?;
    let event_idx = table.column_index(&mapping.event)?;
    let incidence_idx: Vec<usize> = mapping
        .incidence
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<_>>()?;
    let latency_idx: Vec<usize> = mapping
        .latency
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<_>>()?;

    let mut observations = Vec::with_capacity(table.rows.len());
    let mut kept_rows = Vec::with_capacity(table.rows.len());
    let mut issues = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        let line = r + 2; // 1-based, after the header
        let parsed = (|| -> Result<IntervalObservation> {
            let max_idx = [left_idx, right_idx, event_idx]
                .into_iter()
                .chain(incidence_idx.iter().copied())
                .chain(latency_idx.iter().copied())
                .max()
                .unwrap_or(0);
            if row.len() <= max_idx {
                return Err(Error::Parse(format!(
                    "{} fields but {} required",
                    row.len(),
                    max_idx + 1
                )));
            }
            let left: f64 = row[left_idx]
                .parse()
                .map_err(|_| Error::Parse(format!("left limit '{}' is not numeric", row[left_idx])))?;
            let right = parse_right_limit(&row[right_idx])?;
            let event = parse_event(&row[event_idx])?;
            let numeric = |idx: &usize| -> Result<f64> {
                row[*idx].parse().map_err(|_| {
                    Error::Parse(format!(
                        "covariate '{}' value '{}' is not numeric",
                        table.headers[*idx], row[*idx]
                    ))
                })
            };
            let z: Vec<f64> = incidence_idx.iter().map(numeric).collect::<Result<_>>()?;
            let x: Vec<f64> = latency_idx.iter().map(numeric).collect::<Result<_>>()?;
            IntervalObservation::new(left, right, event, CovariateProfile::from_covariates(&z, &x)?)
        })();
        match parsed {
            Ok(obs) => {
                observations.push(obs);
                kept_rows.push(r);
            }
            Err(err) => issues.push(RowIssue { line, message: err.to_string() }),
        }
    }
    if observations.is_empty() {
        return Err(Error::Parse(format!(
            "no usable rows ({} rejected)",
            issues.len()
        )));
    }
    Ok(ParsedDataset { dataset: Dataset::new(observations)?, kept_rows, issues })
}

/// Reads and parses a dataset file; `mapping = None` infers the schema.
pub fn read_dataset(
    path: &Path,
    mapping: Option<&ColumnMapping>,
) -> Result<(ParsedDataset, ColumnMapping)> {
    let table = RawTable::read(path)?;
    let mapping = match mapping {
        Some(m) => m.clone(),
        None => ColumnMapping::infer(&table.headers)?,
    };
    let parsed = parse_dataset(&table, &mapping)?;
    Ok((parsed, mapping))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_commas_and_infinite_right_limits() {
        let f = write_temp(
            "Timept1,Timept2,Relapse,Duration,F10Cigs,SI.UC\n\
             0.0,1.5,1,20,15,1\n\
             2.0,NA,0,25,30,0\n\
             3.0,Inf,0,28,10,1\n\
             1.0,,0,22,18,0\n",
        );
        let (parsed, mapping) = read_dataset(f.path(), None).unwrap();
        assert_eq!(parsed.dataset.len(), 4);
        assert_eq!(parsed.issues.len(), 0);
        assert_eq!(mapping.incidence, vec!["Duration", "F10Cigs", "SI.UC"]);
        assert_eq!(parsed.dataset.q1(), 3);
        let obs = parsed.dataset.observations();
        assert!(obs[1].right.is_infinite());
        assert!(obs[3].right.is_infinite());
        assert_eq!(obs[0].profile.z(), &[1.0, 20.0, 15.0, 1.0]);
    }

    #[test]
    fn rejects_inconsistent_rows_with_line_numbers() {
        let f = write_temp(
            "Timept1,Timept2,Relapse,Duration\n\
             0.0,1.5,1,20\n\
             2.0,1.0,1,25\n\
             2.0,3.0,0,25\n\
             abc,3.0,1,30\n\
             0.5,2.0,1,31\n",
        );
        let (parsed, _) = read_dataset(f.path(), None).unwrap();
        assert_eq!(parsed.dataset.len(), 2);
        let lines: Vec<usize> = parsed.issues.iter().map(|i| i.line).collect();
        // line 3: left >= right, line 4: indicator says event but right finite
        // is fine — it is rejected because event=0 with finite right; line 5
        // has a non-numeric left limit
        assert_eq!(lines, vec![3, 4, 5]);
        assert_eq!(
            parsed.dataset.len() + parsed.issues.len(),
            5,
            "row-count conservation"
        );
    }

    #[test]
    fn accepts_tab_delimited_files() {
        let f = write_temp("left\tright\tevent\tage\n0.0\t2.0\t1\t40\n1.0\tNA\t0\t50\n");
        let (parsed, mapping) = read_dataset(f.path(), None).unwrap();
        assert_eq!(mapping.left, "left");
        assert_eq!(parsed.dataset.len(), 2);
    }

    #[test]
    fn missing_column_is_an_input_error() {
        let f = write_temp("a,b\n1,2\n");
        let mapping = ColumnMapping {
            left: "left".into(),
            right: "right".into(),
            event: "event".into(),
            incidence: vec![],
            latency: vec![],
        };
        let err = read_dataset(f.path(), Some(&mapping)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
