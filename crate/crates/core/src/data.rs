//! Typed tabular data: column schema, validation, standardization and CSV I/O.
//!
//! A [`Table`] is an `n × d` matrix of reals with one [`ColumnSchema`] per
//! column. Columns are either continuous or binary; multi-class categoricals
//! enter as one-hot binary blocks (see [`one_hot_encode`]).
//!
//! Standard deviations use the sample convention (denominator `n − 1`)
//! everywhere in the crate.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Present when the column currently holds standardized values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

impl ColumnSchema {
    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnSchema { name: name.into(), kind: ColumnKind::Continuous, standardization: None }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        ColumnSchema { name: name.into(), kind: ColumnKind::Binary, standardization: None }
    }

    pub fn is_binary(&self) -> bool {
        self.kind == ColumnKind::Binary
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Real,
    BaseSynthetic,
    Corrected,
    Oracle,
}

/// Immutable, validated table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Vec<ColumnSchema>,
    rows: DMatrix<f64>,
    provenance: Provenance,
    relaxed_binary: bool,
}

impl Table {
    /// Build and validate a table. Binary columns must hold only 0/1.
    pub fn new(schema: Vec<ColumnSchema>, rows: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let t = Table { schema, rows, provenance, relaxed_binary: false };
        validate_table(&t)?;
        Ok(t)
    }

    /// Build a base-synthetic table whose binary columns may carry relaxed
    /// values in `[0, 1]` (e.g. probabilities emitted by an external generator).
    pub fn new_relaxed(schema: Vec<ColumnSchema>, rows: DMatrix<f64>) -> Result<Self> {
        let t = Table { schema, rows, provenance: Provenance::BaseSynthetic, relaxed_binary: true };
        validate_table(&t)?;
        Ok(t)
    }

    /// Build a table inferring each column's kind from its values.
    pub fn from_inferred(names: Vec<String>, rows: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let report = inspect(&names, &rows)?;
        report.reject_problems()?;
        let schema = report
            .columns
            .iter()
            .map(|c| ColumnSchema { name: c.name.clone(), kind: c.inferred_kind, standardization: None })
            .collect();
        Table::new(schema, rows, provenance)
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn into_rows(self) -> DMatrix<f64> {
        self.rows
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn relaxed_binary(&self) -> bool {
        self.relaxed_binary
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.ncols()
    }

    pub fn names(&self) -> Vec<String> {
        self.schema.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.column(j).iter().copied().collect()
    }

    /// Same schema, new rows and provenance.
    pub fn with_rows(&self, rows: DMatrix<f64>, provenance: Provenance) -> Result<Table> {
        Table::new(self.schema.clone(), rows, provenance)
    }

    /// Rows selected by index (with repetition allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Table {
        let d = self.n_cols();
        let rows = DMatrix::from_fn(idx.len(), d, |i, j| self.rows[(idx[i], j)]);
        Table { schema: self.schema.clone(), rows, provenance: self.provenance, relaxed_binary: self.relaxed_binary }
    }

    pub fn schema_hash(&self) -> String {
        schema_hash(&self.schema)
    }
}

/// Hash of column names and kinds, used to pair checkpoints with data.
pub fn schema_hash(schema: &[ColumnSchema]) -> String {
    let mut h = Sha256::new();
    for c in schema {
        h.update(c.name.as_bytes());
        h.update(match c.kind {
            ColumnKind::Continuous => b":c;",
            ColumnKind::Binary => b":b;",
        });
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn is_binary_value(v: f64) -> bool {
    v == 0.0 || v == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnReport {
    pub name: String,
    pub inferred_kind: ColumnKind,
    pub nonfinite: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_rows: usize,
    pub columns: Vec<ColumnReport>,
}

impl ValidationReport {
    fn reject_problems(&self) -> Result<()> {
        if self.n_rows == 0 {
            return Err(Error::validation("no rows"));
        }
        let bad: Vec<String> = self
            .columns
            .iter()
            .filter(|c| c.nonfinite > 0)
            .map(|c| format!("{} ({} non-finite)", c.name, c.nonfinite))
            .collect();
        if !bad.is_empty() {
            return Err(Error::validation(format!("NaN/Inf entries in columns: {}", bad.join(", "))));
        }
        Ok(())
    }
}

/// Per-column kind inference, non-finite counts and constant-column flags.
/// Only fails on a name/width mismatch.
pub fn inspect(names: &[String], rows: &DMatrix<f64>) -> Result<ValidationReport> {
    if names.len() != rows.ncols() {
        return Err(Error::SchemaMismatch(format!(
            "{} column names for {} columns",
            names.len(),
            rows.ncols()
        )));
    }
    let columns = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = rows.column(j);
            let nonfinite = col.iter().filter(|v| !v.is_finite()).count();
            let binary = col.iter().all(|&v| is_binary_value(v));
            let first = col.iter().next().copied();
            let degenerate = first.is_some_and(|f| col.iter().all(|&v| v == f));
            ColumnReport {
                name: name.clone(),
                inferred_kind: if binary && !col.is_empty() { ColumnKind::Binary } else { ColumnKind::Continuous },
                nonfinite,
                degenerate,
            }
        })
        .collect();
    Ok(ValidationReport { n_rows: rows.nrows(), columns })
}

/// Validate a table: non-empty, finite, schema width matches, binary columns in {0,1}.
pub fn validate_table(table: &Table) -> Result<ValidationReport> {
    let names = table.names();
    let report = inspect(&names, &table.rows)?;
    report.reject_problems()?;
    for (j, c) in table.schema.iter().enumerate() {
        if !c.is_binary() {
            continue;
        }
        let col = table.rows.column(j);
        let ok = if table.relaxed_binary {
            col.iter().all(|&v| (0.0..=1.0).contains(&v))
        } else {
            col.iter().all(|&v| is_binary_value(v))
        };
        if !ok {
            return Err(Error::validation(format!(
                "binary column '{}' holds values outside {}",
                c.name,
                if table.relaxed_binary { "[0,1]" } else { "{0,1}" }
            )));
        }
    }
    Ok(report)
}

/// Fitted per-column statistics, kept for the inverse transform and for
/// calibrating binary marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStat {
    pub kind: ColumnKind,
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub columns: Vec<ColumnStat>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (denominator `n − 1`).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl ColumnStats {
    pub fn fit(table: &Table) -> ColumnStats {
        let columns = table
            .schema
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let col = table.column(j);
                let m = mean(&col);
                let s = sample_std(&col);
                ColumnStat { kind: c.kind, mean: m, std: s, degenerate: !(s > 1e-12 * m.abs().max(1.0)) }
            })
            .collect();
        ColumnStats { columns }
    }

    fn scales(&self, j: usize) -> bool {
        let c = &self.columns[j];
        c.kind == ColumnKind::Continuous && !c.degenerate
    }

    /// Map raw values into the standardized space.
    pub fn apply(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rows.clone();
        for j in 0..out.ncols() {
            if self.scales(j) {
                let c = &self.columns[j];
                out.column_mut(j).apply(|v| *v = (*v - c.mean) / c.std);
            }
        }
        out
    }

    /// Map standardized values back to the raw scale.
    pub fn invert(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rows.clone();
        for j in 0..out.ncols() {
            if self.scales(j) {
                let c = &self.columns[j];
                out.column_mut(j).apply(|v| *v = *v * c.std + c.mean);
            }
        }
        out
    }
}

/// Standardize continuous columns to sample mean 0 and sample std 1.
///
/// Binary columns are untouched. A constant continuous column is an error
/// unless `pass_degenerate` is set, in which case it is left as is.
pub fn standardize(table: &Table, pass_degenerate: bool) -> Result<(Table, ColumnStats)> {
    let stats = ColumnStats::fit(table);
    for (c, s) in table.schema.iter().zip(&stats.columns) {
        if c.kind == ColumnKind::Continuous && s.degenerate && !pass_degenerate {
            return Err(Error::validation(format!("column '{}' is constant and cannot be standardized", c.name)));
        }
    }
    let rows = stats.apply(&table.rows);
    let schema = table
        .schema
        .iter()
        .zip(&stats.columns)
        .map(|(c, s)| ColumnSchema {
            standardization: (c.kind == ColumnKind::Continuous && !s.degenerate)
                .then_some(Standardization { mean: s.mean, std: s.std }),
            ..c.clone()
        })
        .collect();
    Ok((Table { schema, rows, provenance: table.provenance, relaxed_binary: table.relaxed_binary }, stats))
}

/// Inverse of [`standardize`].
pub fn destandardize(table: &Table, stats: &ColumnStats) -> Result<Table> {
    let rows = stats.invert(&table.rows);
    let schema = table.schema.iter().map(|c| ColumnSchema { standardization: None, ..c.clone() }).collect();
    Ok(Table { schema, rows, provenance: table.provenance, relaxed_binary: table.relaxed_binary })
}

/// Format for numeric CSV cells: 17 significant digits, scientific.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a table as CSV with a header row.
pub fn write_csv(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(table.schema.iter().map(|c| c.name.as_str()))?;
    for i in 0..table.n_rows() {
        w.write_record(table.rows.row(i).iter().map(|v| format_value(*v)))?;
    }
    w.flush()?;
    Ok(())
}

fn read_raw(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::validation("no rows"));
    }
    let mut records = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::validation(format!("malformed row: {e}")))?;
        records.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    if records.is_empty() {
        return Err(Error::validation("no rows"));
    }
    Ok((header, records))
}

fn parse_cell(s: &str, row: usize, col: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse { line: row + 2, msg: format!("column '{col}': '{s}' is not a number") })
}

fn numeric_matrix(header: &[String], records: &[Vec<String>]) -> Result<DMatrix<f64>> {
    let d = header.len();
    let mut rows = DMatrix::zeros(records.len(), d);
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != d {
            return Err(Error::validation(format!("row {} has {} fields, expected {d}", i + 2, rec.len())));
        }
        for (j, cell) in rec.iter().enumerate() {
            rows[(i, j)] = parse_cell(cell, i, &header[j])?;
        }
    }
    Ok(rows)
}

/// Read a numeric CSV, inferring column kinds from the values.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Table> {
    let (header, records) = read_raw(path.as_ref())?;
    let rows = numeric_matrix(&header, &records)?;
    Table::from_inferred(header, rows, Provenance::Real)
}

/// Read a CSV whose columns must match `schema` by name and order.
pub fn read_csv_with_schema(
    path: impl AsRef<Path>,
    schema: &[ColumnSchema],
    provenance: Provenance,
    relaxed_binary: bool,
) -> Result<Table> {
    let (header, records) = read_raw(path.as_ref())?;
    let expected: Vec<&str> = schema.iter().map(|c| c.name.as_str()).collect();
    if header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::SchemaMismatch(format!("CSV header {header:?} does not match schema {expected:?}")));
    }
    let rows = numeric_matrix(&header, &records)?;
    let schema = schema.iter().map(|c| ColumnSchema { standardization: None, ..c.clone() }).collect();
    if relaxed_binary {
        Table::new_relaxed(schema, rows)
    } else {
        Table::new(schema, rows, provenance)
    }
}

/// Read a CSV in which the named columns hold category labels; each such
/// column is expanded into one binary indicator per observed category
/// (`name=category`, categories sorted).
pub fn read_csv_with_categoricals(path: impl AsRef<Path>, categorical: &[&str]) -> Result<Table> {
    let (header, records) = read_raw(path.as_ref())?;
    let n = records.len();
    let mut schema = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (j, name) in header.iter().enumerate() {
        let cells: Vec<String> = records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.get(j).cloned().ok_or_else(|| Error::validation(format!("row {} has too few fields", i + 2)))
            })
            .collect::<Result<_>>()?;
        if categorical.contains(&name.as_str()) {
            let (block_schema, block, _) = one_hot_encode(name, &cells);
            for (k, c) in block_schema.into_iter().enumerate() {
                schema.push(c);
                cols.push(block.column(k).iter().copied().collect());
            }
        } else {
            let vals = cells.iter().enumerate().map(|(i, s)| parse_cell(s, i, name)).collect::<Result<Vec<_>>>()?;
            schema.push(ColumnSchema::continuous(name.clone()));
            cols.push(vals);
        }
    }
    let rows = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let report = inspect(&schema.iter().map(|c| c.name.clone()).collect::<Vec<_>>(), &rows)?;
    for (c, r) in schema.iter_mut().zip(&report.columns) {
        c.kind = r.inferred_kind;
    }
    Table::new(schema, rows, Provenance::Real)
}

/// Expand category labels into binary indicator columns. Returns the block
/// schema, the `n × k` indicator matrix and the sorted category list.
pub fn one_hot_encode(name: &str, values: &[String]) -> (Vec<ColumnSchema>, DMatrix<f64>, Vec<String>) {
    let mut cats: Vec<String> = values.to_vec();
    cats.sort();
    cats.dedup();
    let index: BTreeMap<&str, usize> = cats.iter().enumerate().map(|(k, c)| (c.as_str(), k)).collect();
    let mut block = DMatrix::zeros(values.len(), cats.len());
    for (i, v) in values.iter().enumerate() {
        block[(i, index[v.as_str()])] = 1.0;
    }
    let schema = cats.iter().map(|c| ColumnSchema::binary(format!("{name}={c}"))).collect();
    (schema, block, cats)
}

/// Decode a (possibly relaxed) one-hot block by row-wise argmax.
pub fn one_hot_decode(block: &DMatrix<f64>) -> Vec<usize> {
    (0..block.nrows())
        .map(|i| {
            let row = block.row(i);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// JSON sidecar stored next to a CSV so downstream tools know column kinds
/// and can de-standardize corrected samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSidecar {
    pub format_version: u32,
    pub columns: Vec<ColumnSchema>,
    pub provenance: Provenance,
    #[serde(default)]
    pub relaxed_binary: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<ColumnStats>,
}

pub const SIDECAR_VERSION: u32 = 1;

pub fn sidecar_path(csv: impl AsRef<Path>) -> PathBuf {
    let mut s = csv.as_ref().as_os_str().to_owned();
    s.push(".schema.json");
    PathBuf::from(s)
}

/// Write CSV plus schema sidecar.
pub fn write_table(table: &Table, path: impl AsRef<Path>, stats: Option<&ColumnStats>) -> Result<()> {
    write_csv(table, path.as_ref())?;
    let sidecar = SchemaSidecar {
        format_version: SIDECAR_VERSION,
        columns: table.schema.clone(),
        provenance: table.provenance,
        relaxed_binary: table.relaxed_binary,
        stats: stats.cloned(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Read a CSV, using its schema sidecar when present and inferring kinds otherwise.
pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let side = sidecar_path(path.as_ref());
    if side.exists() {
        let sidecar: SchemaSidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
        if sidecar.format_version != SIDECAR_VERSION {
            return Err(Error::validation(format!("unsupported sidecar version {}", sidecar.format_version)));
        }
        read_csv_with_schema(path, &sidecar.columns, sidecar.provenance, sidecar.relaxed_binary)
    } else {
        read_csv(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(vals.len(), 1, vals)
    }

    #[test]
    fn detects_binary_and_continuous() {
        let r = inspect(&["a".into()], &col(&[0.0, 1.0, 1.0])).unwrap();
        assert_eq!(r.columns[0].inferred_kind, ColumnKind::Binary);
        let r = inspect(&["a".into()], &col(&[0.0, 0.5, 1.0])).unwrap();
        assert_eq!(r.columns[0].inferred_kind, ColumnKind::Continuous);
        let r = inspect(&["a".into()], &col(&[2.0, 2.0, 2.0])).unwrap();
        assert_eq!(r.columns[0].inferred_kind, ColumnKind::Continuous);
        assert!(r.columns[0].degenerate);
    }

    #[test]
    fn rejects_nan_empty_and_width() {
        let t = Table::from_inferred(vec!["a".into()], col(&[1.0, f64::NAN]), Provenance::Real);
        assert!(matches!(t, Err(Error::Validation(_))));
        let t = Table::from_inferred(vec!["a".into()], DMatrix::zeros(0, 1), Provenance::Real);
        assert!(t.unwrap_err().to_string().contains("no rows"));
        let t = Table::from_inferred(vec!["a".into(), "b".into()], col(&[1.0]), Provenance::Real);
        assert!(matches!(t, Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn binary_columns_must_be_zero_one() {
        let schema = vec![ColumnSchema::binary("b")];
        assert!(Table::new(schema.clone(), col(&[0.0, 0.37]), Provenance::Real).is_err());
        assert!(Table::new_relaxed(schema.clone(), col(&[0.0, 0.37])).is_ok());
        assert!(Table::new_relaxed(schema, col(&[0.0, 1.2])).is_err());
    }

    #[test]
    fn standardize_uses_sample_std() {
        let t = Table::new(
            vec![ColumnSchema::continuous("x"), ColumnSchema::binary("b")],
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 3.0, 0.0]),
            Provenance::Real,
        )
        .unwrap();
        let (s, stats) = standardize(&t, false).unwrap();
        // (x - 2) / 1 with the n-1 std of {1,2,3} equal to 1.
        let expected = [-1.0, 0.0, 1.0];
        for i in 0..3 {
            assert!((s.rows()[(i, 0)] - expected[i]).abs() < 1e-15);
        }
        assert_eq!(s.column(1), vec![0.0, 1.0, 0.0]);
        assert_eq!(stats.columns[0].std, 1.0);
    }

    #[test]
    fn degenerate_column_needs_pass_through() {
        let t = Table::from_inferred(vec!["c".into()], col(&[2.0, 2.0, 2.0]), Provenance::Real).unwrap();
        assert!(standardize(&t, false).is_err());
        let (s, _) = standardize(&t, true).unwrap();
        assert_eq!(s.column(0), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn restandardizing_is_idempotent() {
        let t = Table::from_inferred(vec!["x".into()], col(&[0.3, -1.2, 5.5, 2.0, 0.0]), Provenance::Real).unwrap();
        let (s, _) = standardize(&t, false).unwrap();
        let (s2, _) = standardize(&s, false).unwrap();
        let c = s2.column(0);
        assert!(mean(&c).abs() < 1e-12);
        assert!((sample_std(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_header_only_csv_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        fs::write(&p, "").unwrap();
        assert!(read_csv(&p).unwrap_err().to_string().contains("no rows"));
        fs::write(&p, "a,b\n").unwrap();
        assert!(read_csv(&p).unwrap_err().to_string().contains("no rows"));
        fs::write(&p, "a,b\n1,2\n3\n").unwrap();
        assert!(read_csv(&p).is_err());
        fs::write(&p, "a,b\n1,x\n").unwrap();
        assert!(matches!(read_csv(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn sidecar_round_trip_keeps_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        // A binary-declared column that happens to be all zeros stays binary.
        let t = Table::new(
            vec![ColumnSchema::continuous("x"), ColumnSchema::binary("b")],
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.5, 0.0]),
            Provenance::Corrected,
        )
        .unwrap();
        write_table(&t, &p, None).unwrap();
        let back = read_table(&p).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn one_hot_round_trip() {
        let vals: Vec<String> = ["b", "a", "c", "a"].iter().map(|s| s.to_string()).collect();
        let (schema, block, cats) = one_hot_encode("g", &vals);
        assert_eq!(cats, vec!["a", "b", "c"]);
        assert_eq!(schema[1].name, "g=b");
        assert!(schema.iter().all(|c| c.is_binary()));
        let decoded: Vec<&str> = one_hot_decode(&block).into_iter().map(|k| cats[k].as_str()).collect();
        assert_eq!(decoded, vec!["b", "a", "c", "a"]);
    }

    #[test]
    fn categorical_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        fs::write(&p, "age,race\n30,x\n40,y\n50,x\n").unwrap();
        let t = read_csv_with_categoricals(&p, &["race"]).unwrap();
        assert_eq!(t.names(), vec!["age", "race=x", "race=y"]);
        assert!(t.schema()[1].is_binary());
        assert_eq!(t.column(2), vec![0.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 2..40)) {
            let n = vals.len() / 2;
            let rows = DMatrix::from_row_slice(n, 2, &vals[..2 * n]);
            let t = Table::new(
                vec![ColumnSchema::continuous("a"), ColumnSchema::continuous("b")],
                rows,
                Provenance::Real,
            ).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.csv");
            write_csv(&t, &p).unwrap();
            let back = read_csv_with_schema(&p, t.schema(), Provenance::Real, false).unwrap();
            for (a, b) in t.rows().iter().zip(back.rows().iter()) {
                prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
            }
        }

        #[test]
        fn standardize_inverts(vals in proptest::collection::vec(-1e3f64..1e3, 3..50)) {
            let t = Table::from_inferred(vec!["x".into()], DMatrix::from_column_slice(vals.len(), 1, &vals), Provenance::Real).unwrap();
            prop_assume!(!inspect(&t.names(), t.rows()).unwrap().columns[0].degenerate);
            prop_assume!(t.schema()[0].kind == ColumnKind::Continuous);
            let (s, stats) = standardize(&t, false).unwrap();
            let back = destandardize(&s, &stats).unwrap();
            for (a, b) in t.rows().iter().zip(back.rows().iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn binary_detection_permutation_invariant(bits in proptest::collection::vec(0u8..2, 1..30), extra in proptest::bool::ANY, seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut vals: Vec<f64> = bits.iter().map(|&b| b as f64).collect();
            if extra { vals.push(0.5); }
            let kind = inspect(&["a".into()], &DMatrix::from_column_slice(vals.len(), 1, &vals)).unwrap().columns[0].inferred_kind;
            vals.shuffle(&mut crate::rng::seeded(seed));
            let kind2 = inspect(&["a".into()], &DMatrix::from_column_slice(vals.len(), 1, &vals)).unwrap().columns[0].inferred_kind;
            prop_assert_eq!(kind, kind2);
        }
    }
}
