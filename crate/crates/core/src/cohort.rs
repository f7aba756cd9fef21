//! Typed tabular cohorts with explicit missingness, CSV ingestion and fold
//! planning.
//!
//! Cells are stored row-major as `f64`: numeric cells hold their value and
//! categorical cells hold the index of their label in the column's declared
//! category list. Missing cells hold `NaN` and are flagged in `mask`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub units: String,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
            units: String::new(),
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            units: String::new(),
        }
    }

    /// Binary `{"0", "1"}` categorical column.
    pub fn binary(name: impl Into<String>) -> Self {
        Self::categorical(name, ["0", "1"])
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }

    pub fn n_levels(&self) -> usize {
        self.categories.len()
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            ColumnKind::Numeric if !self.categories.is_empty() => Err(Error::Schema(format!(
                "numeric column {:?} declares categories",
                self.name
            ))),
            ColumnKind::Categorical => {
                let mut seen = std::collections::HashSet::new();
                for c in &self.categories {
                    if !seen.insert(c) {
                        return Err(Error::Schema(format!(
                            "column {:?} repeats category {:?}",
                            self.name, c
                        )));
                    }
                }
                if seen.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical column {:?} needs at least 2 categories",
                        self.name
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSchema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub outcome_cols: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment_col: Option<String>,
}

impl CohortSchema {
    pub fn new(
        columns: Vec<ColumnSpec>,
        outcome_cols: Vec<String>,
        treatment_col: Option<String>,
    ) -> Result<Self> {
        let schema = CohortSchema {
            columns,
            outcome_cols,
            treatment_col,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for col in &self.columns {
            col.validate()?;
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {:?}", col.name)));
            }
        }
        let binary_role = |name: &str, role: &str| -> Result<()> {
            let col = self
                .column(name)
                .ok_or_else(|| Error::Schema(format!("{role} column {name:?} is not declared")))?;
            if !col.is_categorical() || col.n_levels() != 2 {
                return Err(Error::Schema(format!(
                    "{role} column {name:?} must be categorical with exactly 2 categories"
                )));
            }
            Ok(())
        };
        for o in &self.outcome_cols {
            binary_role(o, "outcome")?;
        }
        if let Some(t) = &self.treatment_col {
            binary_role(t, "treatment")?;
            if self.outcome_cols.contains(t) {
                return Err(Error::Schema(format!("{t:?} is both outcome and treatment")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let schema: CohortSchema = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to TOML")
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| Error::SchemaMismatch {
            column: name.to_string(),
            problem: "is not in the schema".into(),
        })
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn primary_outcome(&self) -> Option<&str> {
        self.outcome_cols.first().map(String::as_str)
    }

    pub fn is_role_column(&self, name: &str) -> bool {
        self.outcome_cols.iter().any(|o| o == name) || self.treatment_col.as_deref() == Some(name)
    }

    /// Indices of predictor columns: everything except outcomes and treatment.
    pub fn feature_indices(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| !self.is_role_column(&self.columns[i].name))
            .collect()
    }

    pub fn feature_columns(&self) -> Vec<ColumnSpec> {
        self.feature_indices()
            .into_iter()
            .map(|i| self.columns[i].clone())
            .collect()
    }

    /// Schema restricted to `names`, in the given order. Roles survive only
    /// for retained columns.
    pub fn project(&self, names: &[&str]) -> Result<CohortSchema> {
        let mut columns = Vec::with_capacity(names.len());
        for n in names {
            columns.push(self.columns[self.require(n)?].clone());
        }
        let outcome_cols = self
            .outcome_cols
            .iter()
            .filter(|o| names.contains(&o.as_str()))
            .cloned()
            .collect();
        let treatment_col = self
            .treatment_col
            .clone()
            .filter(|t| names.contains(&t.as_str()));
        CohortSchema::new(columns, outcome_cols, treatment_col)
    }
}

/// Stable fingerprint of an ordered column list (names, kinds, categories).
pub fn fingerprint(columns: &[ColumnSpec]) -> String {
    let mut hasher = Sha256::new();
    for c in columns {
        hasher.update(c.name.as_bytes());
        hasher.update([0u8]);
        hasher.update(match c.kind {
            ColumnKind::Numeric => b"n",
            ColumnKind::Categorical => b"c",
        });
        for cat in &c.categories {
            hasher.update(cat.as_bytes());
            hasher.update([1u8]);
        }
        hasher.update([2u8]);
    }
    hasher
        .finalize()
        .iter()
        .take(12)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Row ids at or above this value mark synthetic rows.
pub const SYNTHETIC_ROW_BASE: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    schema: CohortSchema,
    n_rows: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    row_ids: Vec<u64>,
}

impl Cohort {
    /// Build from row-major values; `NaN` cells are treated as missing.
    pub fn from_values(schema: CohortSchema, n_rows: usize, values: Vec<f64>) -> Result<Self> {
        let mask = values.iter().map(|v| v.is_nan()).collect();
        Self::new(schema, n_rows, values, mask)
    }

    pub fn new(schema: CohortSchema, n_rows: usize, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let p = schema.n_cols();
        if values.len() != n_rows * p || mask.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "cohort buffer sizes {} / {} do not match {} x {}",
                values.len(),
                mask.len(),
                n_rows,
                p
            )));
        }
        for r in 0..n_rows {
            for (c, col) in schema.columns.iter().enumerate() {
                let i = r * p + c;
                if mask[i] {
                    values[i] = f64::NAN;
                    continue;
                }
                let v = values[i];
                let ok = match col.kind {
                    ColumnKind::Numeric => v.is_finite(),
                    ColumnKind::Categorical => {
                        v >= 0.0 && v.fract() == 0.0 && (v as usize) < col.n_levels()
                    }
                };
                if !ok {
                    return Err(Error::InvalidArgument(format!(
                        "row {r}, column {:?}: invalid cell value {v}",
                        col.name
                    )));
                }
            }
        }
        Ok(Cohort {
            schema,
            n_rows,
            values,
            mask,
            row_ids: (0..n_rows as u64).collect(),
        })
    }

    pub fn empty(schema: CohortSchema) -> Self {
        Cohort {
            schema,
            n_rows: 0,
            values: Vec::new(),
            mask: Vec::new(),
            row_ids: Vec::new(),
        }
    }

    pub fn schema(&self) -> &CohortSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.n_cols()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn with_row_ids(mut self, ids: Vec<u64>) -> Self {
        assert_eq!(ids.len(), self.n_rows);
        self.row_ids = ids;
        self
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    #[inline]
    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.n_cols() + col]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        (!self.is_missing(row, col)).then(|| self.value(row, col))
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[row * p..(row + 1) * p]
    }

    /// Copy of one column (missing cells are `NaN`).
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.value(r, col)).collect()
    }

    pub fn missing_count(&self, col: usize) -> usize {
        (0..self.n_rows).filter(|&r| self.is_missing(r, col)).count()
    }

    pub fn is_complete(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Overwrite a cell, clearing its missing flag.
    pub(crate) fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = row * self.n_cols() + col;
        self.values[i] = value;
        self.mask[i] = false;
    }

    pub fn select_rows(&self, rows: &[usize]) -> Cohort {
        let p = self.n_cols();
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut mask = Vec::with_capacity(rows.len() * p);
        let mut row_ids = Vec::with_capacity(rows.len());
        for &r in rows {
            values.extend_from_slice(&self.values[r * p..(r + 1) * p]);
            mask.extend_from_slice(&self.mask[r * p..(r + 1) * p]);
            row_ids.push(self.row_ids[r]);
        }
        Cohort {
            schema: self.schema.clone(),
            n_rows: rows.len(),
            values,
            mask,
            row_ids,
        }
    }

    pub fn select_columns(&self, names: &[&str]) -> Result<Cohort> {
        let schema = self.schema.project(names)?;
        let idx: Vec<usize> = names.iter().map(|n| self.schema.require(n)).collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(self.n_rows * idx.len());
        let mut mask = Vec::with_capacity(self.n_rows * idx.len());
        for r in 0..self.n_rows {
            for &c in &idx {
                values.push(self.value(r, c));
                mask.push(self.is_missing(r, c));
            }
        }
        Ok(Cohort {
            schema,
            n_rows: self.n_rows,
            values,
            mask,
            row_ids: self.row_ids.clone(),
        })
    }

    /// Rows where `col` is observed.
    pub fn observed_rows(&self, col: usize) -> Vec<usize> {
        (0..self.n_rows).filter(|&r| !self.is_missing(r, col)).collect()
    }

    /// Rows where the categorical `col` equals category `level`.
    pub fn rows_with_level(&self, col: usize, level: usize) -> Vec<usize> {
        (0..self.n_rows)
            .filter(|&r| self.get(r, col) == Some(level as f64))
            .collect()
    }

    /// Append rows of `other`, which must share this schema.
    pub fn append(&mut self, other: &Cohort) -> Result<()> {
        if other.schema != self.schema {
            return Err(Error::InvalidArgument("appending cohort with a different schema".into()));
        }
        self.values.extend_from_slice(&other.values);
        self.mask.extend_from_slice(&other.mask);
        self.row_ids.extend_from_slice(&other.row_ids);
        self.n_rows += other.n_rows;
        Ok(())
    }

    /// Render one cell as it appears on disk.
    pub fn format_cell(&self, row: usize, col: usize) -> String {
        match self.get(row, col) {
            None => String::new(),
            Some(v) => match self.schema.columns[col].kind {
                ColumnKind::Numeric => format!("{v}"),
                ColumnKind::Categorical => self.schema.columns[col].categories[v as usize].clone(),
            },
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..self.n_rows {
            w.write_record((0..self.n_cols()).map(|c| self.format_cell(r, c)))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Load a comma-separated cohort file against `schema`. Empty cells are
/// missing; categorical cells must match a declared label exactly.
pub fn load_cohort(path: impl AsRef<Path>, schema: &CohortSchema) -> Result<Cohort> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(file, schema, &path.display().to_string())
}

/// Parse cohort CSV from any reader; `source` labels error messages.
pub fn read_cohort<R: Read>(reader: R, schema: &CohortSchema, source: &str) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();

    let mut file_pos: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if schema.index_of(h).is_none() {
            return Err(Error::SchemaMismatch {
                column: h.to_string(),
                problem: "appears in the file header but not in the schema".into(),
            });
        }
        if file_pos.insert(h, i).is_some() {
            return Err(Error::SchemaMismatch {
                column: h.to_string(),
                problem: "appears more than once in the file header".into(),
            });
        }
    }
    let mut layout = Vec::with_capacity(schema.n_cols());
    for col in &schema.columns {
        let pos = *file_pos.get(col.name.as_str()).ok_or_else(|| Error::SchemaMismatch {
            column: col.name.clone(),
            problem: "is missing from the file header".into(),
        })?;
        let lookup: HashMap<&str, usize> = col
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        layout.push((pos, lookup));
    }

    let p = schema.n_cols();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut n_rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // line 1 is the header
        let line = i + 2;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                path: source.to_string(),
                row: line,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (col, (pos, lookup)) in schema.columns.iter().zip(&layout) {
            let cell = &record[*pos];
            if cell.is_empty() {
                values.push(f64::NAN);
                mask.push(true);
                continue;
            }
            let parse_err = |problem: String| Error::Parse {
                path: source.to_string(),
                row: line,
                column: col.name.clone(),
                problem,
            };
            let v = match col.kind {
                ColumnKind::Numeric => {
                    let v: f64 = cell
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(format!("unparseable numeric value {cell:?}")))?;
                    if !v.is_finite() {
                        return Err(parse_err(format!("non-finite numeric value {cell:?}")));
                    }
                    v
                }
                ColumnKind::Categorical => *lookup
                    .get(cell)
                    .ok_or_else(|| parse_err(format!("undeclared category {cell:?}")))?
                    as f64,
            };
            values.push(v);
            mask.push(false);
        }
        n_rows += 1;
    }
    debug_assert_eq!(values.len(), n_rows * p);
    Cohort::new(schema.clone(), n_rows, values, mask)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n_rows(&self) -> usize {
        self.assignments.len()
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&r| self.assignments[r] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&r| self.assignments[r] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Plan `k` folds, stratified on the schema's primary outcome when present.
pub fn split_folds(cohort: &Cohort, k: usize, seed: u64) -> Result<FoldPlan> {
    let target = cohort.schema().primary_outcome().map(str::to_string);
    split_folds_by(cohort, k, seed, target.as_deref())
}

/// Plan `k` folds stratified on `target` (or unstratified when `None`).
///
/// Each stratum is shuffled and the strata are dealt round-robin in one pass,
/// so fold sizes and per-fold stratum counts each differ by at most one.
pub fn split_folds_by(cohort: &Cohort, k: usize, seed: u64, target: Option<&str>) -> Result<FoldPlan> {
    let n = cohort.n_rows();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("fold count {k} < 2")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("fold count {k} exceeds row count {n}")));
    }
    let mut strata: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    match target {
        Some(name) => {
            let c = cohort.schema().require(name)?;
            if cohort.missing_count(c) == n {
                return Err(Error::NoObservedValues(name.to_string()));
            }
            for r in 0..n {
                let key = cohort.get(r, c).map_or(-1, |v| v as i64);
                strata.entry(key).or_default().push(r);
            }
        }
        None => {
            strata.insert(0, (0..n).collect());
        }
    }
    let mut rng = seed::rng(seed);
    let mut assignments = vec![0; n];
    let mut pos = 0;
    // larger strata first keeps the per-fold counts of the minority class flat
    let mut groups: Vec<Vec<usize>> = strata.into_values().collect();
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    for mut rows in groups {
        rows.shuffle(&mut rng);
        for r in rows {
            assignments[r] = pos % k;
            pos += 1;
        }
    }
    Ok(FoldPlan { k, assignments, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> CohortSchema {
        CohortSchema::new(
            vec![
                ColumnSpec::numeric("Age"),
                ColumnSpec::binary("Sex"),
                ColumnSpec::numeric("CRP"),
                ColumnSpec::binary("SFCR"),
            ],
            vec!["SFCR".into()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn loads_and_masks_empty_cells() {
        let csv = "Age,Sex,CRP,SFCR\n20,1,3.5,1\n21,0,,0\n22.5,1,1e1,1\n19,0,0,0\n";
        let c = read_cohort(csv.as_bytes(), &schema(), "mem").unwrap();
        assert_eq!(c.n_rows(), 4);
        let missing: Vec<_> = c.mask().iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        assert_eq!(missing, vec![4 + 2]);
        assert_eq!(c.get(2, 2), Some(10.0));
        assert_eq!(c.get(0, 1), Some(1.0));
    }

    #[test]
    fn header_missing_column_is_named() {
        let csv = "Age,CRP,SFCR\n20,3.5,1\n";
        let err = read_cohort(csv.as_bytes(), &schema(), "mem").unwrap_err();
        match err {
            Error::SchemaMismatch { column, .. } => assert_eq!(column, "Sex"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_column_rejected() {
        let csv = "Age,Sex,CRP,SFCR,Height\n20,1,3.5,1,150\n";
        assert!(matches!(
            read_cohort(csv.as_bytes(), &schema(), "mem"),
            Err(Error::SchemaMismatch { column, .. }) if column == "Height"
        ));
    }

    #[test]
    fn undeclared_category_reports_position() {
        let csv = "Age,Sex,CRP,SFCR\n20,1,3.5,1\n20,Maybe,3.5,1\n";
        match read_cohort(csv.as_bytes(), &schema(), "mem").unwrap_err() {
            Error::Parse { row, column, problem, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "Sex");
                assert!(problem.contains("Maybe"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn categorical_match_is_case_sensitive() {
        let s = CohortSchema::new(vec![ColumnSpec::categorical("g", ["a", "b"])], vec![], None).unwrap();
        assert!(read_cohort("g\nA\n".as_bytes(), &s, "mem").is_err());
        assert!(read_cohort("g\na\n".as_bytes(), &s, "mem").is_ok());
    }

    #[test]
    fn bad_numeric_and_ragged_rows() {
        let csv = "Age,Sex,CRP,SFCR\n20,1,abc,1\n";
        assert!(matches!(
            read_cohort(csv.as_bytes(), &schema(), "mem"),
            Err(Error::Parse { row: 2, .. })
        ));
        let csv = "Age,Sex,CRP,SFCR\n20,1,3\n";
        assert!(matches!(
            read_cohort(csv.as_bytes(), &schema(), "mem"),
            Err(Error::RaggedRow { row: 2, expected: 4, found: 3, .. })
        ));
    }

    #[test]
    fn schema_invariants() {
        assert!(CohortSchema::new(vec![ColumnSpec::categorical("x", ["a"])], vec![], None).is_err());
        assert!(CohortSchema::new(
            vec![ColumnSpec::numeric("x"), ColumnSpec::numeric("x")],
            vec![],
            None
        )
        .is_err());
        assert!(CohortSchema::new(vec![ColumnSpec::numeric("y")], vec!["y".into()], None).is_err());
        assert!(CohortSchema::new(vec![ColumnSpec::binary("y")], vec!["z".into()], None).is_err());
        assert!(CohortSchema::new(
            vec![ColumnSpec::categorical("t", ["a", "b", "c"])],
            vec![],
            Some("t".into())
        )
        .is_err());
    }

    #[test]
    fn schema_toml_round_trip() {
        let s = schema();
        assert_eq!(CohortSchema::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }

    fn toy(n: usize, events: usize) -> Cohort {
        let s = schema();
        let mut values = Vec::new();
        for r in 0..n {
            values.extend([r as f64, (r % 2) as f64, 1.0, (r < events) as u8 as f64]);
        }
        Cohort::from_values(s, n, values).unwrap()
    }

    #[test]
    fn ten_rows_five_folds() {
        let plan = split_folds(&toy(10, 5), 5, 3).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 5]);
        for f in 0..5 {
            let events = plan.test_rows(f).iter().filter(|&&r| r < 5).count();
            assert_eq!(events, 1);
        }
        assert_eq!(plan, split_folds(&toy(10, 5), 5, 3).unwrap());
    }

    #[test]
    fn fold_errors() {
        assert!(split_folds(&toy(4, 2), 5, 0).is_err());
        assert!(split_folds(&toy(4, 2), 1, 0).is_err());
        let s = schema();
        let values = (0..4).flat_map(|r| [r as f64, 0.0, 1.0, f64::NAN]).collect();
        let c = Cohort::from_values(s, 4, values).unwrap();
        assert!(matches!(split_folds(&c, 2, 0), Err(Error::NoObservedValues(_))));
    }

    proptest! {
        #[test]
        fn fold_partition_and_stratification(n in 2usize..80, ev_frac in 0.0f64..1.0, seed in any::<u64>(), kf in 0.0f64..1.0) {
            let k = 2 + ((n - 2) as f64 * kf) as usize;
            let events = (n as f64 * ev_frac) as usize;
            let c = toy(n, events);
            let plan = split_folds(&c, k, seed).unwrap();
            let sizes = plan.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let prevalence = events as f64 / n as f64;
            for f in 0..k {
                let test = plan.test_rows(f);
                let ev = test.iter().filter(|&&r| r < events).count() as f64;
                prop_assert!((ev - test.len() as f64 * prevalence).abs() < 1.0 + 1e-9);
            }
        }

        #[test]
        fn csv_round_trip(rows in proptest::collection::vec((any::<Option<i16>>(), any::<Option<bool>>(), any::<Option<f64>>()), 0..20)) {
            let s = CohortSchema::new(
                vec![ColumnSpec::numeric("a"), ColumnSpec::binary("b"), ColumnSpec::numeric("c")],
                vec![],
                None,
            ).unwrap();
            let mut values = Vec::new();
            for (a, b, c) in &rows {
                values.push(a.map_or(f64::NAN, |v| v as f64 / 7.0));
                values.push(b.map_or(f64::NAN, |v| v as u8 as f64));
                values.push(c.filter(|v| v.is_finite()).unwrap_or(f64::NAN));
            }
            let cohort = Cohort::from_values(s.clone(), rows.len(), values).unwrap();
            let mut buf = Vec::new();
            cohort.write_csv(&mut buf).unwrap();
            let back = read_cohort(buf.as_slice(), &s, "mem").unwrap();
            prop_assert_eq!(back.mask(), cohort.mask());
            for (x, y) in back.values().iter().zip(cohort.values()) {
                prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }
}
