//! Typed columnar table with explicit nulls, plus delimited-text I/O.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numerical,
    Categorical,
    Target,
    FoldKey,
}

impl ColumnKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnKind::Numerical | ColumnKind::Target)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_null(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
        }
    }

    fn select(&self, idx: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Text(v) => ColumnData::Text(idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, kind: ColumnKind, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.into(),
            kind,
            data: ColumnData::Numeric(values),
        }
    }

    pub fn text(name: impl Into<String>, kind: ColumnKind, values: Vec<Option<String>>) -> Self {
        Self {
            name: name.into(),
            kind,
            data: ColumnData::Text(values),
        }
    }

    pub fn as_numeric(&self) -> Result<&[Option<f64>]> {
        match &self.data {
            ColumnData::Numeric(v) => Ok(v),
            ColumnData::Text(_) => Err(Error::invalid(format!("column `{}` is not numeric", self.name))),
        }
    }

    pub fn as_text(&self) -> Result<&[Option<String>]> {
        match &self.data {
            ColumnData::Text(v) => Ok(v),
            ColumnData::Numeric(_) => Err(Error::invalid(format!("column `{}` is not text", self.name))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    columns: Vec<Column>,
    n_rows: usize,
}

impl FeatureTable {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map(|c| c.data.len()).unwrap_or(0);
        for c in &columns {
            if c.data.len() != n_rows {
                return Err(Error::dim(format!(
                    "column `{}` has {} rows, expected {n_rows}",
                    c.name,
                    c.data.len()
                )));
            }
            let numeric = matches!(c.data, ColumnData::Numeric(_));
            if numeric != c.kind.is_numeric() {
                return Err(Error::invalid(format!("column `{}` storage does not match kind {:?}", c.name, c.kind)));
            }
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::invalid(format!("duplicate column `{}`", c.name)));
            }
        }
        if columns.iter().filter(|c| c.kind == ColumnKind::Target).count() > 1 {
            return Err(Error::invalid("more than one target column"));
        }
        Ok(Self { columns, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| Error::invalid(format!("missing column `{name}`")))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target(&self) -> Option<&Column> {
        self.columns.iter().find(|c| c.kind == ColumnKind::Target)
    }

    pub fn fold_key(&self) -> Option<&Column> {
        self.columns.iter().find(|c| c.kind == ColumnKind::FoldKey)
    }

    /// `true` where a cell is null, one inner vector per column.
    pub fn null_mask(&self) -> Vec<Vec<bool>> {
        self.columns
            .iter()
            .map(|c| (0..self.n_rows).map(|r| c.data.is_null(r)).collect())
            .collect()
    }

    pub fn null_count(&self) -> usize {
        self.null_mask().iter().flatten().filter(|b| **b).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    kind: c.kind,
                    data: c.data.select(idx),
                })
                .collect(),
            n_rows: idx.len(),
        }
    }

    pub fn into_columns(self) -> Vec<Column> {
        self.columns
    }
}

/// Column names and kinds the ingest step expects, in output order.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub columns: Vec<(String, ColumnKind)>,
    pub delimiter: u8,
    pub null_sentinel: Option<String>,
}

fn parse_error(path: &str, message: String) -> Error {
    Error::Parse {
        path: path.to_string(),
        message,
    }
}

fn read_table<R: std::io::Read>(reader: R, schema: &Schema, origin: &str) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(parse_error(origin, "missing header row".into()));
    }
    let mut positions = Vec::with_capacity(schema.columns.len());
    for (name, _) in &schema.columns {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_error(origin, format!("missing declared column `{name}`")))?;
        positions.push(pos);
    }
    let mut numeric: Vec<Vec<Option<f64>>> = vec![Vec::new(); schema.columns.len()];
    let mut text: Vec<Vec<Option<String>>> = vec![Vec::new(); schema.columns.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (c, ((name, kind), &pos)) in schema.columns.iter().zip(&positions).enumerate() {
            let raw = record.get(pos).unwrap_or("");
            let is_null = raw.is_empty() || schema.null_sentinel.as_deref() == Some(raw);
            if kind.is_numeric() {
                let value = if is_null {
                    None
                } else {
                    match raw.parse::<f64>() {
                        Ok(v) if v.is_finite() => Some(v),
                        _ => {
                            return Err(parse_error(
                                origin,
                                format!("row {}, column `{name}`: cannot parse `{raw}` as a number", row + 1),
                            ))
                        }
                    }
                };
                numeric[c].push(value);
            } else {
                text[c].push(if is_null { None } else { Some(raw.to_string()) });
            }
        }
    }
    let columns = schema
        .columns
        .iter()
        .enumerate()
        .map(|(c, (name, kind))| {
            if kind.is_numeric() {
                Column::numeric(name.clone(), *kind, std::mem::take(&mut numeric[c]))
            } else {
                Column::text(name.clone(), *kind, std::mem::take(&mut text[c]))
            }
        })
        .collect();
    FeatureTable::new(columns)
}

/// Reads a delimited file with a header row. Only the schema's columns are
/// kept; empty fields and the null sentinel become nulls.
pub fn ingest_path(path: &Path, schema: &Schema) -> Result<FeatureTable> {
    let origin = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| parse_error(&origin, e.to_string()))?;
    read_table(file, schema, &origin)
}

pub fn ingest_str(text: &str, schema: &Schema) -> Result<FeatureTable> {
    read_table(text.as_bytes(), schema, "<memory>")
}

/// Writes every column; nulls become empty fields and numbers use the
/// shortest representation that parses back to the same value.
pub fn export_table(table: &FeatureTable, delimiter: u8) -> Result<String> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(Vec::new());
    w.write_record(table.columns().iter().map(|c| c.name.as_str()))?;
    for r in 0..table.n_rows() {
        let row: Vec<String> = table
            .columns()
            .iter()
            .map(|c| match &c.data {
                ColumnData::Numeric(v) => v[r].map(|x| x.to_string()).unwrap_or_default(),
                ColumnData::Text(v) => v[r].clone().unwrap_or_default(),
            })
            .collect();
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub fn export_table_path(table: &FeatureTable, path: &Path, delimiter: u8) -> Result<()> {
    std::fs::write(path, export_table(table, delimiter)?)?;
    Ok(())
}
