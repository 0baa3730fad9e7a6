//! Feature table and its CSV format.
//!
//! Header: `subject_id,site,group,age,sex,<extra...>,<feature...>`. Columns
//! after `sex` whose name contains `__` are features and must follow the
//! [naming grammar](super::names); any other column is an opaque demographic
//! carried through untouched. UTF-8, LF line endings, `.` decimal separator.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::datamodel::{FeatureName, Group, RecordMeta, Sex};
use crate::error::{Error, Result};
use crate::stats::median;

const MANDATORY: [&str; 5] = ["subject_id", "site", "group", "age", "sex"];

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Impute missing feature cells with the per-feature median instead of
    /// rejecting the file. Imputed cells are listed by
    /// [`FeatureTable::imputed`].
    pub allow_missing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    records: Vec<RecordMeta>,
    extra_names: Vec<String>,
    extra: Vec<Vec<String>>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    imputed: Vec<(usize, usize)>,
}

impl FeatureTable {
    /// Builds a table from column-major feature values, checking every
    /// invariant.
    pub fn new(
        records: Vec<RecordMeta>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = records.len();
        let table = Self {
            extra: vec![Vec::new(); n],
            records,
            extra_names: Vec::new(),
            names,
            columns,
            imputed: Vec::new(),
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            r.validate()?;
            if !ids.insert(r.subject_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "duplicate subject_id `{}`",
                    r.subject_id
                )));
            }
        }
        if self.names.len() != self.columns.len() {
            return Err(Error::Schema(format!(
                "{} feature names for {} columns",
                self.names.len(),
                self.columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in self.names.iter().chain(&self.extra_names) {
            if !seen.insert(name.as_str()) || MANDATORY.contains(&name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{name}`")));
            }
        }
        for name in &self.names {
            name.parse::<FeatureName>()?;
        }
        for (name, col) in self.names.iter().zip(&self.columns) {
            if col.len() != self.records.len() {
                return Err(Error::Schema(format!(
                    "feature `{name}` has {} values for {} records",
                    col.len(),
                    self.records.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "feature `{name}` is not finite for record `{}`",
                    self.records[i].subject_id
                )));
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[RecordMeta] {
        &self.records
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.feature_index(name).map(|j| self.column(j))
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn n_rows(&self) -> usize {
        self.records.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn extra_names(&self) -> &[String] {
        &self.extra_names
    }

    pub fn extra_row(&self, i: usize) -> &[String] {
        &self.extra[i]
    }

    /// `(row, feature)` cells that were imputed at load time.
    pub fn imputed(&self) -> &[(usize, usize)] {
        &self.imputed
    }

    /// HC = 0, ACr = 1.
    pub fn labels(&self) -> Vec<usize> {
        super::class_labels(&self.records)
    }

    pub fn group_rows(&self, group: Group) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| self.records[i].group == group)
            .collect()
    }

    /// Rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        let remap: Vec<Option<usize>> = {
            let mut m = vec![None; self.n_rows()];
            for (new, &old) in rows.iter().enumerate() {
                m[old] = Some(new);
            }
            m
        };
        FeatureTable {
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
            extra_names: self.extra_names.clone(),
            extra: rows.iter().map(|&i| self.extra[i].clone()).collect(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            imputed: self
                .imputed
                .iter()
                .filter_map(|&(r, c)| remap[r].map(|nr| (nr, c)))
                .collect(),
        }
    }

    /// Features in the given order.
    pub fn select_features(&self, features: &[usize]) -> FeatureTable {
        FeatureTable {
            records: self.records.clone(),
            extra_names: self.extra_names.clone(),
            extra: self.extra.clone(),
            names: features.iter().map(|&j| self.names[j].clone()).collect(),
            columns: features.iter().map(|&j| self.columns[j].clone()).collect(),
            imputed: self
                .imputed
                .iter()
                .filter_map(|&(r, c)| features.iter().position(|&j| j == c).map(|nc| (r, nc)))
                .collect(),
        }
    }

    pub fn select_features_by_name(&self, names: &[String]) -> Result<FeatureTable> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| Error::Schema(format!("feature `{n}` not in table")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_features(&idx))
    }

    /// Same rows and names, new values.
    pub fn with_columns(&self, columns: Vec<Vec<f64>>) -> Result<FeatureTable> {
        let t = FeatureTable {
            columns,
            ..self.clone()
        };
        t.validate()?;
        Ok(t)
    }

    /// Serializes to the CSV format. Output is byte-stable: loading and
    /// re-writing yields identical bytes.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = MANDATORY
            .iter()
            .copied()
            .chain(self.extra_names.iter().map(String::as_str))
            .chain(self.names.iter().map(String::as_str))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (i, r) in self.records.iter().enumerate() {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                r.subject_id,
                r.site,
                r.group,
                fmt_f64(r.age),
                r.sex
            );
            for e in &self.extra[i] {
                out.push(',');
                out.push_str(e);
            }
            for c in &self.columns {
                out.push(',');
                out.push_str(&fmt_f64(c[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str, opts: LoadOptions) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
            .iter()
            .map(str::to_owned)
            .collect();
        for m in MANDATORY {
            if !header.iter().any(|h| h == m) {
                return Err(Error::MissingColumn(m.into()));
            }
        }
        let pos = |name: &str| header.iter().position(|h| h == name).unwrap();
        let (c_id, c_site, c_group, c_age, c_sex) = (
            pos("subject_id"),
            pos("site"),
            pos("group"),
            pos("age"),
            pos("sex"),
        );
        let mut extra_cols = Vec::new();
        let mut feature_cols = Vec::new();
        for (j, h) in header.iter().enumerate() {
            if MANDATORY.contains(&h.as_str()) {
                continue;
            }
            if h.contains("__") {
                feature_cols.push(j);
            } else {
                extra_cols.push(j);
            }
        }

        let mut records = Vec::new();
        let mut extra = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); feature_cols.len()];
        let mut missing = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                row: row + 1,
                column: String::new(),
                message: e.to_string(),
            })?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let parse_err = |j: usize, message: String| Error::Parse {
                row: row + 1,
                column: header[j].clone(),
                message,
            };
            let group: Group = field(c_group).parse().map_err(|m| parse_err(c_group, m))?;
            let sex: Sex = field(c_sex).parse().map_err(|m| parse_err(c_sex, m))?;
            let age: f64 = field(c_age)
                .parse()
                .map_err(|_| parse_err(c_age, format!("`{}` is not a number", field(c_age))))?;
            records.push(RecordMeta {
                subject_id: field(c_id).to_owned(),
                site: field(c_site).to_owned(),
                group,
                age,
                sex,
            });
            extra.push(extra_cols.iter().map(|&j| field(j).to_owned()).collect());
            for (k, &j) in feature_cols.iter().enumerate() {
                let cell = field(j).trim();
                if cell.is_empty() || matches!(cell, "NA" | "nan" | "NaN") {
                    if !opts.allow_missing {
                        return Err(parse_err(
                            j,
                            "missing value (use allow-missing to impute)".into(),
                        ));
                    }
                    missing.push((row, k));
                    columns[k].push(f64::NAN);
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(j, format!("`{cell}` is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(j, format!("`{cell}` is not finite")));
                }
                columns[k].push(v);
            }
        }

        for &(row, k) in &missing {
            let observed: Vec<f64> = columns[k]
                .iter()
                .copied()
                .filter(|v| v.is_finite())
                .collect();
            if observed.is_empty() {
                return Err(Error::Validation(format!(
                    "feature `{}` has no observed values to impute from",
                    header[feature_cols[k]]
                )));
            }
            columns[k][row] = median(&observed);
        }

        let table = FeatureTable {
            records,
            extra_names: extra_cols.iter().map(|&j| header[j].clone()).collect(),
            extra,
            names: feature_cols.iter().map(|&j| header[j].clone()).collect(),
            columns,
            imputed: missing,
        };
        table.validate()?;
        Ok(table)
    }
}

pub fn load_feature_table(path: impl AsRef<Path>, opts: LoadOptions) -> Result<FeatureTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FeatureTable::from_csv_str(&text, opts)
}

pub fn write_feature_table(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, table.to_csv_string()).map_err(|e| Error::io(path, e))
}
