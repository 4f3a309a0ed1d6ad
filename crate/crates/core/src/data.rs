//! Rectangular datasets with an explicit per-cell missingness mask.
//!
//! Values are stored column-major. A missing cell keeps a NaN payload so that
//! any accidental read of it poisons downstream arithmetic; all code paths
//! consult the mask before touching a value.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Covariate,
    Exposure,
    Outcome,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

impl ColumnMeta {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
        }
    }
}

/// Column roles and kinds, as read from a schema file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnMeta>,
}

impl Schema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn get(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<ColumnMeta>,
    values: Vec<Vec<f64>>,
    missing: Vec<Vec<bool>>,
    nrows: usize,
}

/// Missing-indicator matrix, `1` where the cell is missing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingPattern {
    nrows: usize,
    ncols: usize,
    indicators: Vec<u8>,
}

impl MissingPattern {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.indicators[row * self.ncols + col]
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn column_means(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| {
                let s: usize = (0..self.nrows).map(|i| self.get(i, j) as usize).sum();
                s as f64 / self.nrows.max(1) as f64
            })
            .collect()
    }

    /// Fraction of cells that are missing.
    pub fn proportion_missing(&self) -> f64 {
        let s: usize = self.indicators.iter().map(|&m| m as usize).sum();
        s as f64 / self.indicators.len().max(1) as f64
    }

    /// Fraction of rows with at least one missing cell.
    pub fn proportion_incomplete(&self) -> f64 {
        let incomplete = (0..self.nrows)
            .filter(|&i| (0..self.ncols).any(|j| self.get(i, j) == 1))
            .count();
        incomplete as f64 / self.nrows.max(1) as f64
    }
}

impl Dataset {
    /// Builds a dataset from column-major values and a missing mask.
    ///
    /// Missing payloads are overwritten with NaN.
    pub fn new(
        columns: Vec<ColumnMeta>,
        mut values: Vec<Vec<f64>>,
        missing: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if values.len() != columns.len() || missing.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} column descriptors for {} value columns and {} mask columns",
                columns.len(),
                values.len(),
                missing.len()
            )));
        }
        let nrows = values.first().map_or(0, Vec::len);
        for (j, meta) in columns.iter().enumerate() {
            if values[j].len() != nrows || missing[j].len() != nrows {
                return Err(Error::Schema(format!("column `{}` has wrong length", meta.name)));
            }
            for i in 0..nrows {
                if missing[j][i] {
                    values[j][i] = f64::NAN;
                    continue;
                }
                let v = values[j][i];
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: i,
                        column: meta.name.clone(),
                        message: format!("non-finite observed value {v}"),
                    });
                }
                if meta.kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(Error::NotBinary {
                        column: meta.name.clone(),
                        row: i,
                        value: v,
                    });
                }
            }
        }
        let exposures = columns
            .iter()
            .filter(|c| c.role == ColumnRole::Exposure)
            .count();
        let outcomes = columns
            .iter()
            .filter(|c| c.role == ColumnRole::Outcome)
            .count();
        if exposures != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one exposure column, found {exposures}"
            )));
        }
        if outcomes > 1 {
            return Err(Error::Schema(format!(
                "expected at most one outcome column, found {outcomes}"
            )));
        }
        Ok(Self {
            columns,
            values,
            missing,
            nrows,
        })
    }

    /// Builds a fully observed dataset.
    pub fn complete(columns: Vec<ColumnMeta>, values: Vec<Vec<f64>>) -> Result<Self> {
        let missing = values.iter().map(|c| vec![false; c.len()]).collect();
        Self::new(columns, values, missing)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn meta(&self, col: usize) -> &ColumnMeta {
        &self.columns[col]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn exposure_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Exposure)
            .expect("validated at construction")
    }

    pub fn outcome_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.role == ColumnRole::Outcome)
    }

    pub fn covariate_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Covariate)
            .map(|(j, _)| j)
            .collect()
    }

    /// Raw payload of a column. Missing cells hold NaN; consult [`Dataset::missing_column`].
    pub fn column(&self, col: usize) -> &[f64] {
        &self.values[col]
    }

    pub fn missing_column(&self, col: usize) -> &[bool] {
        &self.missing[col]
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[col][row]
    }

    /// Observed value of a cell, `None` if missing.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if self.missing[col][row] {
            None
        } else {
            Some(self.values[col][row])
        }
    }

    /// Values of a column that must be fully observed.
    pub fn observed_column(&self, col: usize) -> Result<&[f64]> {
        if self.missing[col].iter().any(|&m| m) {
            return Err(Error::InvalidArgument(format!(
                "column `{}` has missing cells",
                self.columns[col].name
            )));
        }
        Ok(&self.values[col])
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|c| c.iter().any(|&m| m))
    }

    pub fn column_has_missing(&self, col: usize) -> bool {
        self.missing[col].iter().any(|&m| m)
    }

    pub fn row_is_complete(&self, row: usize) -> bool {
        self.missing.iter().all(|c| !c[row])
    }

    /// Marks a cell missing.
    pub fn set_missing(&mut self, row: usize, col: usize) {
        self.missing[col][row] = true;
        self.values[col][row] = f64::NAN;
    }

    /// Fills a currently missing cell. Observed cells are never overwritten.
    pub(crate) fn fill_missing(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(self.missing[col][row], "attempt to overwrite an observed cell");
        if self.missing[col][row] {
            self.values[col][row] = value;
            self.missing[col][row] = false;
        }
    }

    /// Rows in the given order (duplicates allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let values = self
            .values
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        let missing = self
            .missing
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        Dataset {
            columns: self.columns.clone(),
            values,
            missing,
            nrows: rows.len(),
        }
    }

    /// Rows without any missing cell, in original order.
    pub fn complete_cases(&self) -> Result<Dataset> {
        let rows: Vec<usize> = (0..self.nrows).filter(|&i| self.row_is_complete(i)).collect();
        if rows.is_empty() {
            return Err(Error::NoCompleteRows);
        }
        Ok(self.select_rows(&rows))
    }

    pub fn missing_indicators(&self) -> MissingPattern {
        let ncols = self.ncols();
        let mut indicators = vec![0u8; self.nrows * ncols];
        for j in 0..ncols {
            for i in 0..self.nrows {
                if self.missing[j][i] {
                    indicators[i * ncols + j] = 1;
                }
            }
        }
        MissingPattern {
            nrows: self.nrows,
            ncols,
            indicators,
        }
    }

    /// Reads a CSV with a header row. Empty fields and `NA` are missing; lines
    /// starting with `#` are skipped.
    pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut columns = Vec::with_capacity(header.len());
        for name in &header {
            let meta = schema
                .get(name)
                .ok_or_else(|| Error::Schema(format!("column `{name}` not in schema")))?;
            columns.push(meta.clone());
        }
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        let mut missing: Vec<Vec<bool>> = vec![Vec::new(); header.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::Parse {
                    row,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            for (j, field) in record.iter().enumerate() {
                if field.is_empty() || field == "NA" {
                    values[j].push(f64::NAN);
                    missing[j].push(true);
                } else {
                    let v: f64 = field.parse().map_err(|_| Error::Parse {
                        row,
                        column: header[j].clone(),
                        message: format!("cannot parse `{field}` as a number"),
                    })?;
                    values[j].push(v);
                    missing[j].push(false);
                }
            }
        }
        Dataset::new(columns, values, missing)
    }

    pub fn read_csv_path(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
        Self::read_csv(std::fs::File::open(path)?, schema)
    }

    /// Writes the dataset as CSV, preceded by `#`-prefixed comment lines.
    ///
    /// Observed values use the shortest representation that parses back to
    /// the same bits; missing cells are written as `NA`.
    pub fn write_csv<W: Write>(&self, mut writer: W, comments: &[String]) -> Result<()> {
        for line in comments {
            writeln!(writer, "# {line}")?;
        }
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        let mut record = Vec::with_capacity(self.ncols());
        for i in 0..self.nrows {
            record.clear();
            for j in 0..self.ncols() {
                record.push(match self.get(i, j) {
                    Some(v) => format!("{v}"),
                    None => "NA".to_owned(),
                });
            }
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self.columns.clone(),
        }
    }
}
