use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ScalarType;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed catalog: {0}")]
    Malformed(String),
    #[error("catalog must declare exactly one protected table, found {0}")]
    ProtectedCount(usize),
    #[error("duplicate table '{0}'")]
    DuplicateTable(String),
    #[error("duplicate column '{column}' in table '{table}'")]
    DuplicateColumn { table: String, column: String },
    #[error("primary key column '{column}' is not a column of '{table}'")]
    UnknownKeyColumn { table: String, column: String },
    #[error("column {table}.{column}: {reason}")]
    InvalidMetadata { table: String, column: String, reason: String },
    #[error("domain source {table}.{column} referenced by {from} does not exist")]
    UnknownDomainSource { from: String, table: String, column: String },
}

/// Bound on how many rows of the other side a single key value can join.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinCap {
    One,
    Capped(u64),
    Many,
}

impl JoinCap {
    /// Numeric bound, `None` for unbounded.
    pub fn bound(self) -> Option<u64> {
        match self {
            JoinCap::One => Some(1),
            JoinCap::Capped(k) => Some(k),
            JoinCap::Many => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSource {
    pub table: String,
    pub column: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ScalarType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_frequency: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join_multiplicity_cap: Option<JoinCap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_source: Option<DomainSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default)]
    pub primary_key: Vec<String>,
    #[serde(default)]
    pub protected: bool,
    /// Known number of rows, used where a mechanism needs the database
    /// size (subsample count, default delta).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_count: Option<u64>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    fn is_single_key(&self, column: &str) -> bool {
        self.primary_key.len() == 1 && self.primary_key[0] == column
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    tables: Vec<TableDef>,
}

/// Table schemas plus the privacy metadata consumed by sensitivity
/// analysis and histogram completion. Read-only once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    tables: Vec<TableDef>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(tables: Vec<TableDef>) -> Result<Self, CatalogError> {
        let mut index = HashMap::new();
        for (i, t) in tables.iter().enumerate() {
            if index.insert(t.name.clone(), i).is_some() {
                return Err(CatalogError::DuplicateTable(t.name.clone()));
            }
        }
        let protected = tables.iter().filter(|t| t.protected).count();
        if protected != 1 {
            return Err(CatalogError::ProtectedCount(protected));
        }
        let catalog = Catalog { tables, index };
        catalog.check()?;
        Ok(catalog)
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| CatalogError::Malformed(e.to_string()))?;
        Catalog::new(file.tables)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| CatalogError::Io { path: path.display().to_string(), source })?;
        Catalog::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CatalogFile { tables: self.tables.clone() })
            .expect("catalog serializes")
    }

    fn check(&self) -> Result<(), CatalogError> {
        for t in &self.tables {
            let mut seen = std::collections::HashSet::new();
            for c in &t.columns {
                if !seen.insert(c.name.as_str()) {
                    return Err(CatalogError::DuplicateColumn {
                        table: t.name.clone(),
                        column: c.name.clone(),
                    });
                }
                let bad = |reason: &str| CatalogError::InvalidMetadata {
                    table: t.name.clone(),
                    column: c.name.clone(),
                    reason: reason.to_string(),
                };
                if c.max_frequency == Some(0) {
                    return Err(bad("maxFrequency must be at least 1"));
                }
                if c.join_multiplicity_cap == Some(JoinCap::Capped(0)) {
                    return Err(bad("capped joinMultiplicityCap must be at least 1"));
                }
                if t.is_single_key(&c.name) {
                    if matches!(c.max_frequency, Some(f) if f != 1) {
                        return Err(bad("primary key column must have maxFrequency 1"));
                    }
                    if matches!(c.join_multiplicity_cap, Some(cap) if cap != JoinCap::One) {
                        return Err(bad("primary key column must have joinMultiplicityCap one"));
                    }
                }
                if let Some(d) = &c.domain_source {
                    let Some(dt) = self.table(&d.table).filter(|dt| dt.column(&d.column).is_some()) else {
                        return Err(CatalogError::UnknownDomainSource {
                            from: format!("{}.{}", t.name, c.name),
                            table: d.table.clone(),
                            column: d.column.clone(),
                        });
                    };
                    if dt.protected {
                        return Err(bad("domain source table must not be protected"));
                    }
                    if !dt.is_single_key(&d.column) {
                        return Err(bad("domain source column must be the primary key of its table"));
                    }
                }
            }
            for k in &t.primary_key {
                if t.column(k).is_none() {
                    return Err(CatalogError::UnknownKeyColumn {
                        table: t.name.clone(),
                        column: k.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.index.get(name).map(|&i| &self.tables[i])
    }

    pub fn tables(&self) -> &[TableDef] {
        &self.tables
    }

    pub fn protected_table(&self) -> &TableDef {
        self.tables.iter().find(|t| t.protected).expect("validated on construction")
    }

    pub fn is_protected(&self, table: &str) -> bool {
        self.table(table).map(|t| t.protected).unwrap_or(false)
    }

    /// Declared max frequency. A single-column primary key implies 1.
    pub fn max_frequency(&self, table: &str, column: &str) -> Option<u64> {
        let t = self.table(table)?;
        let c = t.column(column)?;
        c.max_frequency.or_else(|| t.is_single_key(column).then_some(1))
    }

    /// Declared join cap; absent metadata means unbounded, except that a
    /// single-column primary key is always `one`.
    pub fn join_cap(&self, table: &str, column: &str) -> JoinCap {
        let Some(t) = self.table(table) else { return JoinCap::Many };
        if t.is_single_key(column) {
            return JoinCap::One;
        }
        t.column(column).and_then(|c| c.join_multiplicity_cap).unwrap_or(JoinCap::Many)
    }

    pub fn row_count(&self, table: &str) -> Option<u64> {
        self.table(table)?.row_count
    }

    pub fn domain_source(&self, table: &str, column: &str) -> Option<&DomainSource> {
        self.table(table)?.column(column)?.domain_source.as_ref()
    }
}
