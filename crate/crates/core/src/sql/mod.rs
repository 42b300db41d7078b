//! SQL front end: parses the supported subset into the algebra and emits
//! standard SQL for any (possibly rewritten) query.

mod bind;
mod emit;
mod lexer;
mod syntax;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{
    schema_of, validate_query, AlgebraError, Catalog, Provenance, QueryExpr, ValidationFailure,
};

use bind::{Binder, Mode};

pub use emit::{emit_relation, emit_sql};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    #[default]
    Ansi,
    Postgres,
}

impl FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ansi" => Ok(Dialect::Ansi),
            "postgres" | "postgresql" => Ok(Dialect::Postgres),
            other => Err(format!("unknown dialect '{other}'")),
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::Ansi => "ansi",
            Dialect::Postgres => "postgres",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SqlText {
    pub text: String,
    pub dialect: Dialect,
}

impl fmt::Display for SqlText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SqlError {
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unsupported feature '{feature}' at byte {position}")]
    Unsupported { feature: String, position: usize },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("invalid query: {}", .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ValidationFailure>),
}

impl SqlError {
    pub(crate) fn parse(position: usize, message: impl Into<String>) -> Self {
        SqlError::Parse { position, message: message.into() }
    }

    pub(crate) fn unsupported(feature: &str, position: usize) -> Self {
        SqlError::Unsupported { feature: feature.to_string(), position }
    }
}

/// Parses untrusted analyst SQL into a validated statistical query.
///
/// Both dialects accept the same surface syntax; the parameter is kept so
/// callers state which dialect the text was written for.
pub fn parse_sql(text: &str, _dialect: Dialect, catalog: &Catalog) -> Result<QueryExpr, SqlError> {
    let stmt = syntax::parse_statement(text)?;
    let top = Binder { catalog, mode: Mode::Analyst }.statement(&stmt, &[], true)?;
    let q = QueryExpr::new(top)?;
    let report = validate_query(&q, catalog);
    if !report.is_valid() {
        return Err(SqlError::Invalid(report.failures));
    }
    Ok(q)
}

/// Parses SQL produced by [`emit_sql`] for a rewritten query. Accepts the
/// constructs rewrite rules introduce (random values, right joins, inline
/// bin lists) and does not require an outermost aggregation. Queries
/// rewritten with Sample & Aggregate are emitted through a fixed template
/// and cannot be parsed back.
pub fn parse_rewritten(text: &str, catalog: &Catalog) -> Result<QueryExpr, SqlError> {
    let stmt = syntax::parse_statement(text)?;
    let top = Binder { catalog, mode: Mode::Rewritten }.statement(&stmt, &[], true)?;
    schema_of(&top, catalog)?;
    Ok(QueryExpr::derived(top, Provenance::Intermediate))
}
