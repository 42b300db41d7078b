use std::path::Path;

use crate::algebra::{Attribute, Catalog, ScalarType, Schema};

use super::{Database, EvalError, Table, Value};

/// Reads a CSV file with a header row naming exactly the schema's columns,
/// in order. Empty cells are rejected: the data model has no nulls.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Table, EvalError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let io = |e: csv::Error| EvalError::Io { path: shown.clone(), message: e.to_string() };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(io)?;
    let header: Vec<String> = reader.headers().map_err(io)?.iter().map(|h| h.trim().to_string()).collect();
    let expected: Vec<String> = schema.attrs.iter().map(|a| a.name.clone()).collect();
    if header != expected {
        return Err(EvalError::Header { path: shown, expected, found: header });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(io)?;
        let row = record
            .iter()
            .zip(&schema.attrs)
            .map(|(cell, attr)| {
                parse_cell(cell, attr).map_err(|message| EvalError::Csv {
                    path: shown.clone(),
                    row: i + 1,
                    column: attr.name.clone(),
                    message,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table::new(schema.clone(), rows))
}

fn parse_cell(cell: &str, attr: &Attribute) -> Result<Value, String> {
    let raw = cell;
    let cell = cell.trim();
    if cell.is_empty() && attr.ty != ScalarType::String {
        return Err("empty cell".to_string());
    }
    match attr.ty {
        ScalarType::Int => cell.parse().map(Value::Int).map_err(|_| format!("'{cell}' is not an integer")),
        ScalarType::Real => cell
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Value::Real)
            .ok_or_else(|| format!("'{cell}' is not a real number")),
        ScalarType::Boolean => match cell.to_ascii_lowercase().as_str() {
            "true" | "t" | "1" => Ok(Value::Bool(true)),
            "false" | "f" | "0" => Ok(Value::Bool(false)),
            _ => Err(format!("'{cell}' is not a boolean")),
        },
        ScalarType::String => Ok(Value::Str(raw.to_string())),
    }
}

/// Loads `<dir>/<table>.csv` for every catalog table.
pub fn load_database(dir: impl AsRef<Path>, catalog: &Catalog) -> Result<Database, EvalError> {
    let mut db = Database::new();
    for t in catalog.tables() {
        let schema = Schema {
            attrs: t
                .columns
                .iter()
                .map(|c| Attribute { qualifier: Some(t.name.clone()), name: c.name.clone(), ty: c.ty })
                .collect(),
        };
        let table = load_csv(dir.as_ref().join(format!("{}.csv", t.name)), &schema)?;
        db.insert(t.name.clone(), table);
    }
    Ok(db)
}
