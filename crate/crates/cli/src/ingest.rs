//! CSV ingestion for covariate and response tables.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use covrf::{Column, ColumnKind, Covariates, Matrix};

use crate::failure::{Failure, Kind};

/// Header plus raw string cells, row-major.
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_table(path: &Path) -> Result<RawTable, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_failure(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_failure(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Failure::new(
            Kind::Ingest,
            format!("{}: missing header", path.display()),
        ));
    }
    let mut seen = HashSet::new();
    for h in &header {
        if h.is_empty() || !seen.insert(h) {
            return Err(Failure::new(
                Kind::Ingest,
                format!("{}: empty or duplicated column name '{h}'", path.display()),
            ));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_failure(path, e))?;
        if rec.len() != header.len() {
            return Err(Failure::new(
                Kind::Ingest,
                format!(
                    "{}: row {} has {} cells, expected {}",
                    path.display(),
                    i + 1,
                    rec.len(),
                    header.len()
                ),
            ));
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(RawTable { header, rows })
}

fn csv_failure(path: &Path, e: csv::Error) -> Failure {
    let kind = if e.is_io_error() {
        Kind::Io
    } else {
        Kind::Ingest
    };
    Failure::new(kind, format!("{}: {e}", path.display()))
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL")
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn missing(path: &Path, row: usize, col: &str) -> Failure {
    Failure::new(
        Kind::Ingest,
        format!(
            "{}: missing value in column '{col}' at row {}",
            path.display(),
            row + 1
        ),
    )
}

/// Covariates from a CSV file. Columns named in `categorical` are
/// categorical, as is any column holding a non-numeric cell. Levels are
/// sorted lexicographically.
pub fn read_covariates(path: &Path, categorical: &[String]) -> Result<Covariates, Failure> {
    let t = read_table(path)?;
    for c in categorical {
        if !t.header.contains(c) {
            return Err(Failure::new(
                Kind::Schema,
                format!("{}: categorical column '{c}' not found", path.display()),
            ));
        }
    }
    let mut columns = Vec::with_capacity(t.header.len());
    let mut values = Vec::with_capacity(t.header.len());
    for (c, name) in t.header.iter().enumerate() {
        for (i, row) in t.rows.iter().enumerate() {
            if is_missing(&row[c]) {
                return Err(missing(path, i, name));
            }
        }
        let numeric: Option<Vec<f64>> = t.rows.iter().map(|r| parse_number(&r[c])).collect();
        match numeric {
            Some(v) if !categorical.contains(name) => {
                columns.push(Column::continuous(name.clone()));
                values.push(v);
            }
            _ => {
                let levels: Vec<String> = t
                    .rows
                    .iter()
                    .map(|r| r[c].clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                values.push(
                    t.rows
                        .iter()
                        .map(|r| levels.binary_search(&r[c]).expect("level present") as f64)
                        .collect(),
                );
                columns.push(Column::categorical(name.clone(), levels));
            }
        }
    }
    Covariates::new(columns, values).map_err(|e| Failure::new(Kind::Ingest, e.to_string()))
}

/// Covariates encoded against a stored schema. Columns are matched by name;
/// unseen categorical levels are kept with a warning on stderr.
pub fn read_covariates_like(path: &Path, schema: &Covariates) -> Result<Covariates, Failure> {
    let t = read_table(path)?;
    let mut values = Vec::with_capacity(schema.p());
    for col in schema.columns() {
        let c = t
            .header
            .iter()
            .position(|h| *h == col.name)
            .ok_or_else(|| {
                Failure::new(
                    Kind::Schema,
                    format!("{}: column '{}' is missing", path.display(), col.name),
                )
            })?;
        let mut v = Vec::with_capacity(t.rows.len());
        let mut unseen = BTreeSet::new();
        for (i, row) in t.rows.iter().enumerate() {
            let cell = &row[c];
            if is_missing(cell) {
                return Err(missing(path, i, &col.name));
            }
            match &col.kind {
                ColumnKind::Continuous => v.push(parse_number(cell).ok_or_else(|| {
                    Failure::new(
                        Kind::Schema,
                        format!(
                            "{}: column '{}' is continuous but row {} holds '{cell}'",
                            path.display(),
                            col.name,
                            i + 1
                        ),
                    )
                })?),
                ColumnKind::Categorical { levels } => match levels.iter().position(|l| l == cell) {
                    Some(k) => v.push(k as f64),
                    None => {
                        unseen.insert(cell.clone());
                        v.push(levels.len() as f64);
                    }
                },
            }
        }
        if !unseen.is_empty() {
            let list: Vec<_> = unseen.into_iter().collect();
            eprintln!(
                "warning: column '{}' has levels not seen in training ({}); they follow the left branch of every split on '{}'",
                col.name,
                list.join(", "),
                col.name
            );
        }
        values.push(v);
    }
    if t.header.len() != schema.p() {
        let extra: Vec<_> = t
            .header
            .iter()
            .filter(|h| schema.column_index(h).is_none())
            .cloned()
            .collect();
        return Err(Failure::new(
            Kind::Schema,
            format!(
                "{}: unexpected columns {}",
                path.display(),
                extra.join(", ")
            ),
        ));
    }
    if t.rows.is_empty() {
        return Ok(schema.empty_like());
    }
    Covariates::with_unseen_levels(schema.columns().to_vec(), values)
        .map_err(|e| Failure::new(Kind::Ingest, e.to_string()))
}

/// Numeric response table and its column names.
pub fn read_responses(path: &Path) -> Result<(Matrix, Vec<String>), Failure> {
    let t = read_table(path)?;
    let mut data = Vec::with_capacity(t.rows.len() * t.header.len());
    for (i, row) in t.rows.iter().enumerate() {
        for (cell, name) in row.iter().zip(&t.header) {
            if is_missing(cell) {
                return Err(missing(path, i, name));
            }
            data.push(parse_number(cell).ok_or_else(|| {
                Failure::new(
                    Kind::Ingest,
                    format!(
                        "{}: response '{name}' at row {} is not numeric: '{cell}'",
                        path.display(),
                        i + 1
                    ),
                )
            })?);
        }
    }
    let m = Matrix::new(t.rows.len(), t.header.len(), data)
        .map_err(|e| Failure::new(Kind::Ingest, e.to_string()))?;
    Ok((m, t.header))
}
