//! Columnar observations and CSV ingestion.
//!
//! A [`Dataset`] holds the outcome `y`, the exposure `x`, one or more
//! instrument columns `z` and the raw covariates (no intercept; every model
//! lists its intercept explicitly through its [`crate::basis::BasisSpec`]).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the mapped CSV columns, in dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub y: String,
    pub x: String,
    pub z: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl ColumnMapping {
    pub fn new(y: &str, x: &str, z: &[&str], covariates: &[&str]) -> Self {
        Self {
            y: y.to_string(),
            x: x.to_string(),
            z: z.iter().map(|s| s.to_string()).collect(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DVector<f64>,
    z: DMatrix<f64>,
    c_raw: DMatrix<f64>,
    names: ColumnMapping,
}

impl Dataset {
    /// Builds a dataset with default column names (`y`, `x`, `z`, `z2`, ..., `v`, `v2`, ...).
    pub fn new(y: DVector<f64>, x: DVector<f64>, z: DMatrix<f64>, c_raw: DMatrix<f64>) -> Result<Self> {
        let names = ColumnMapping {
            y: "y".into(),
            x: "x".into(),
            z: default_names("z", z.ncols()),
            covariates: default_names("v", c_raw.ncols()),
        };
        Self::with_names(y, x, z, c_raw, names)
    }

    pub fn with_names(
        y: DVector<f64>,
        x: DVector<f64>,
        z: DMatrix<f64>,
        c_raw: DMatrix<f64>,
        names: ColumnMapping,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no observations".into()));
        }
        if x.len() != n || z.nrows() != n || c_raw.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "column lengths disagree: y={}, x={}, z={}, covariates={}",
                n,
                x.len(),
                z.nrows(),
                c_raw.nrows()
            )));
        }
        if z.ncols() == 0 {
            return Err(Error::InvalidInput("at least one instrument column is required".into()));
        }
        if names.z.len() != z.ncols() || names.covariates.len() != c_raw.ncols() {
            return Err(Error::InvalidInput("column names do not match column counts".into()));
        }
        let all_finite = y
            .iter()
            .chain(x.iter())
            .chain(z.iter())
            .chain(c_raw.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Self { y, x, z, c_raw, names })
    }

    /// Convenience constructor for a single instrument and slices of covariates.
    pub fn from_columns(y: &[f64], x: &[f64], z: &[f64], covariates: &[&[f64]]) -> Result<Self> {
        let n = y.len();
        let mut c = DMatrix::zeros(n, covariates.len());
        for (j, col) in covariates.iter().enumerate() {
            if col.len() != n {
                return Err(Error::InvalidInput("covariate column length mismatch".into()));
            }
            c.set_column(j, &DVector::from_column_slice(col));
        }
        if z.len() != n {
            return Err(Error::InvalidInput("instrument column length mismatch".into()));
        }
        Self::new(
            DVector::from_column_slice(y),
            DVector::from_column_slice(x),
            DMatrix::from_column_slice(n, 1, z),
            c,
        )
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of instrument columns.
    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// Number of raw covariate columns.
    pub fn r(&self) -> usize {
        self.c_raw.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.c_raw
    }

    pub fn names(&self) -> &ColumnMapping {
        &self.names
    }

    /// The single instrument column; errors when the dataset has several.
    pub fn scalar_instrument(&self) -> Result<DVector<f64>> {
        if self.q() != 1 {
            return Err(Error::Unsupported(format!(
                "this operation needs a single instrument column, dataset has {}",
                self.q()
            )));
        }
        Ok(self.z.column(0).into_owned())
    }

    /// True when every instrument entry is 0 or 1 and there is exactly one instrument.
    pub fn has_binary_instrument(&self) -> bool {
        self.q() == 1 && self.z.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Replaces the outcome column (used for equivariance checks and transformed fits).
    pub fn with_outcome(&self, y: DVector<f64>) -> Result<Self> {
        Self::with_names(
            y,
            self.x.clone(),
            self.z.clone(),
            self.c_raw.clone(),
            self.names.clone(),
        )
    }

    /// Copy of the dataset with every instrument cell set to `value`.
    pub fn with_constant_instruments(&self, value: f64) -> Self {
        let mut out = self.clone();
        out.z.fill(value);
        out
    }

    /// Rows selected (with repetition allowed) in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick_vec = |v: &DVector<f64>| DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]));
        let pick_mat = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)]);
        Self {
            y: pick_vec(&self.y),
            x: pick_vec(&self.x),
            z: pick_mat(&self.z),
            c_raw: pick_mat(&self.c_raw),
            names: self.names.clone(),
        }
    }
}

fn default_names(stem: &str, count: usize) -> Vec<String> {
    (0..count)
        .map(|j| {
            if j == 0 {
                stem.to_string()
            } else {
                format!("{stem}{}", j + 1)
            }
        })
        .collect()
}

/// Reads the mapped columns of a headed CSV file.
pub fn load_csv<P: AsRef<Path>>(path: P, mapping: &ColumnMapping) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let locate = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            column: name.to_string(),
        })
    };

    let mut wanted = vec![mapping.y.as_str(), mapping.x.as_str()];
    wanted.extend(mapping.z.iter().map(String::as_str));
    wanted.extend(mapping.covariates.iter().map(String::as_str));
    let indices = wanted.iter().map(|name| locate(name)).collect::<Result<Vec<_>>>()?;

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (k, &col) in indices.iter().enumerate() {
            let cell = record.get(col).unwrap_or("");
            let parsed = parse_cell(cell).map_err(|message| Error::Parse {
                row: row + 1,
                column: wanted[k].to_string(),
                message,
            })?;
            columns[k].push(parsed);
        }
    }

    let n = columns[0].len();
    if n == 0 {
        return Err(Error::InvalidInput("CSV file has no data rows".into()));
    }
    let q = mapping.z.len();
    let r = mapping.covariates.len();
    let y = DVector::from_vec(columns[0].clone());
    let x = DVector::from_vec(columns[1].clone());
    let z = DMatrix::from_fn(n, q, |i, j| columns[2 + j][i]);
    let c = DMatrix::from_fn(n, r, |i, j| columns[2 + q + j][i]);
    Dataset::with_names(y, x, z, c, mapping.clone())
}

fn parse_cell(cell: &str) -> std::result::Result<f64, String> {
    if cell.is_empty() {
        return Err("empty cell".into());
    }
    let value: f64 = cell.parse().map_err(|_| format!("`{cell}` is not a number"))?;
    if !value.is_finite() {
        return Err(format!("`{cell}` is not finite"));
    }
    Ok(value)
}

/// Writes all columns with a header row; values use the shortest round-trip representation.
pub fn write_csv<P: AsRef<Path>>(data: &Dataset, path: P) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let names = data.names();
    let mut header = vec![names.y.clone(), names.x.clone()];
    header.extend(names.z.iter().cloned());
    header.extend(names.covariates.iter().cloned());
    writer.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![data.y[i].to_string(), data.x[i].to_string()];
        row.extend((0..data.q()).map(|j| data.z[(i, j)].to_string()));
        row.extend((0..data.r()).map(|j| data.c_raw[(i, j)].to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_four_rows() {
        let f = write_tmp("y,x,z,v\n1,2,0,5\n2,3,1,6\n3,4,0,7\n4,5,1,8\n");
        let data = load_csv(f.path(), &ColumnMapping::new("y", "x", &["z"], &["v"])).unwrap();
        assert_eq!((data.n(), data.q(), data.r()), (4, 1, 1));
        assert_eq!(data.x()[3], 5.0);
        assert_eq!(data.covariates()[(2, 0)], 7.0);
    }

    #[test]
    fn shuffled_physical_order_gives_identical_dataset() {
        let a = write_tmp("y,x,z,v\n1,2,0,5\n2,3,1,6\n3,4,0,7\n4,5,1,8\n");
        let b = write_tmp("v,z,y,x\n5,0,1,2\n6,1,2,3\n7,0,3,4\n8,1,4,5\n");
        let m = ColumnMapping::new("y", "x", &["z"], &["v"]);
        assert_eq!(load_csv(a.path(), &m).unwrap(), load_csv(b.path(), &m).unwrap());
    }

    #[test]
    fn blank_cell_reports_row() {
        let f = write_tmp("y,x,z,v\n1,2,0,5\n2,,1,6\n");
        let err = load_csv(f.path(), &ColumnMapping::new("y", "x", &["z"], &["v"])).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_tmp("y,x,z\n1,2,0\n");
        let err = load_csv(f.path(), &ColumnMapping::new("y", "x", &["z"], &["age"])).unwrap_err();
        assert!(matches!(err, Error::Schema { ref column } if column == "age"));
    }

    #[test]
    fn non_finite_cell_rejected() {
        let f = write_tmp("y,x,z\n1,inf,0\n");
        let err = load_csv(f.path(), &ColumnMapping::new("y", "x", &["z"], &[])).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }));
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let x = DVector::from_vec(vec![1.0]);
        let z = DMatrix::zeros(2, 1);
        let c = DMatrix::zeros(2, 0);
        assert!(Dataset::new(y.clone(), x, z.clone(), c.clone()).is_err());
        assert!(Dataset::new(y.clone(), y.clone(), DMatrix::zeros(2, 0), c.clone()).is_err());
        let mut bad = y.clone();
        bad[0] = f64::NAN;
        assert!(Dataset::new(bad, y, z, c).is_err());
    }
}
