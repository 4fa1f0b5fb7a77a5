//! Covariate and response containers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch {
                expected: nrows * ncols,
                found: data.len(),
            });
        }
        Ok(Matrix { nrows, ncols, data })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Matrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    /// Builds from rows; an empty list gives a `0 × 0` matrix.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let nrows = rows.len();
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            if r.len() != ncols {
                return Err(Error::DimensionMismatch {
                    expected: ncols,
                    found: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(Matrix { nrows, ncols, data })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Kind of a covariate column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    /// Values are level indices into `levels`.
    Categorical {
        levels: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn continuous(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical { levels },
        }
    }

    pub fn n_levels(&self) -> Option<usize> {
        match &self.kind {
            ColumnKind::Continuous => None,
            ColumnKind::Categorical { levels } => Some(levels.len()),
        }
    }
}

/// Covariate table stored column-major. Categorical cells hold level indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    n: usize,
    columns: Vec<Column>,
    values: Vec<Vec<f64>>,
}

impl Covariates {
    pub fn new(columns: Vec<Column>, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(columns, values, false)
    }

    /// Like [`Covariates::new`], but a categorical cell may also hold the
    /// index one past the last level, standing for a level unseen in
    /// training. Splits send such cells left.
    pub fn with_unseen_levels(columns: Vec<Column>, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(columns, values, true)
    }

    fn build(columns: Vec<Column>, values: Vec<Vec<f64>>, allow_unseen: bool) -> Result<Self> {
        if columns.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: columns.len(),
                found: values.len(),
            });
        }
        let n = values.first().map_or(0, Vec::len);
        for (col, vals) in columns.iter().zip(&values) {
            if vals.len() != n {
                return Err(Error::InvalidData(format!(
                    "column '{}' has {} rows, expected {n}",
                    col.name,
                    vals.len()
                )));
            }
            match &col.kind {
                ColumnKind::Continuous => {
                    if vals.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidData(format!(
                            "column '{}' has a missing or non-finite value",
                            col.name
                        )));
                    }
                }
                ColumnKind::Categorical { levels } => {
                    if levels.is_empty() {
                        return Err(Error::InvalidData(format!(
                            "categorical column '{}' has no levels",
                            col.name
                        )));
                    }
                    let l = levels.len() as f64 + if allow_unseen { 1.0 } else { 0.0 };
                    if vals
                        .iter()
                        .any(|&v| !(v >= 0.0 && v < l && v.fract() == 0.0))
                    {
                        return Err(Error::InvalidData(format!(
                            "categorical column '{}' has an invalid level index",
                            col.name
                        )));
                    }
                }
            }
        }
        Ok(Covariates { n, columns, values })
    }

    /// All-continuous table from rows.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        let mut values = vec![Vec::with_capacity(rows.len()); p];
        for r in rows {
            if r.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: r.len(),
                });
            }
            for (c, &v) in r.iter().enumerate() {
                values[c].push(v);
            }
        }
        let columns = names.into_iter().map(Column::continuous).collect();
        Self::new(columns, values)
    }

    /// Empty table sharing this table's schema.
    pub fn empty_like(&self) -> Covariates {
        Covariates {
            n: 0,
            columns: self.columns.clone(),
            values: vec![Vec::new(); self.columns.len()],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    #[inline]
    pub fn column(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    #[inline]
    pub fn value(&self, row: usize, c: usize) -> f64 {
        self.values[c][row]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|col| col[i]).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Rows reordered so that new row `i` is old row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Covariates {
        let values = self
            .values
            .iter()
            .map(|col| perm.iter().map(|&i| col[i]).collect())
            .collect();
        Covariates {
            n: perm.len(),
            columns: self.columns.clone(),
            values,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Covariates {
        Covariates {
            n: self.n,
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            values: cols.iter().map(|&c| self.values[c].clone()).collect(),
        }
    }

    /// Appends columns from another table with the same row count.
    pub fn append(&self, other: &Covariates) -> Result<Covariates> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let mut columns = self.columns.clone();
        columns.extend(other.columns.iter().cloned());
        let mut values = self.values.clone();
        values.extend(other.values.iter().cloned());
        Ok(Covariates {
            n: self.n,
            columns,
            values,
        })
    }

    pub fn head(&self, rows: usize) -> Covariates {
        self.slice_rows(0, rows)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Covariates {
        Covariates {
            n: end - start,
            columns: self.columns.clone(),
            values: self.values.iter().map(|c| c[start..end].to_vec()).collect(),
        }
    }

    /// Whether `other` has the same column names and kinds.
    pub fn same_schema(&self, other: &Covariates) -> bool {
        self.columns == other.columns
    }
}

/// Paired covariates `X` (n × p) and responses `Y` (n × q).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Covariates,
    y: Matrix,
    response_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Covariates, y: Matrix, response_names: Vec<String>) -> Result<Self> {
        if x.n() != y.nrows() {
            return Err(Error::InvalidData(format!(
                "covariates have {} rows but responses have {}",
                x.n(),
                y.nrows()
            )));
        }
        if y.nrows() < 2 {
            return Err(Error::InvalidData("at least 2 rows are required".into()));
        }
        if x.p() == 0 || y.ncols() == 0 {
            return Err(Error::InvalidData(
                "at least one covariate and one response are required".into(),
            ));
        }
        if response_names.len() != y.ncols() {
            return Err(Error::DimensionMismatch {
                expected: y.ncols(),
                found: response_names.len(),
            });
        }
        if y.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "responses contain a missing or non-finite value".into(),
            ));
        }
        Ok(Dataset {
            x,
            y,
            response_names,
        })
    }

    /// Dataset with default response names `y1..yq`.
    pub fn with_default_names(x: Covariates, y: Matrix) -> Result<Self> {
        let names = (1..=y.ncols()).map(|j| format!("y{j}")).collect();
        Self::new(x, y, names)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.x.p()
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &Covariates {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn response_names(&self) -> &[String] {
        &self.response_names
    }

    /// Same responses, covariate rows permuted jointly.
    pub fn permute_x(&self, perm: &[usize]) -> Dataset {
        Dataset {
            x: self.x.permute_rows(perm),
            y: self.y.clone(),
            response_names: self.response_names.clone(),
        }
    }

    /// Same responses, a subset of covariate columns.
    pub fn with_columns(&self, cols: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(cols),
            y: self.y.clone(),
            response_names: self.response_names.clone(),
        }
    }

    pub fn with_x(&self, x: Covariates) -> Result<Dataset> {
        Dataset::new(x, self.y.clone(), self.response_names.clone())
    }
}
