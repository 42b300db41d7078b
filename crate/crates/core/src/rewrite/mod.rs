//! Query-to-query transformations. Every rule is a pure function over the
//! algebra and preserves the output schema, the number of output rows and
//! the values of logical attributes once its randomness is pinned to the
//! zero-noise point.

mod histogram;
mod laplace;
mod metadata;
mod subsample;

use serde::Serialize;
use thiserror::Error;

use crate::algebra::{schema_of, AggregationKind, Aggregation, AlgebraError, Catalog, QueryExpr, RelExpr};

pub use histogram::{complete_histogram_bins, complete_with_bins};
pub use laplace::{laplace_rewrite, laplace_rewrite_column_scale, UNIFORM_SHRINK};
pub use metadata::{merge_join_update, metadata_rewrite, JoinParts, MetadataFns};
pub(crate) use metadata::rename_metadata;
pub use subsample::{subsample_rewrite, SubsampleAssignment, SUBSAMPLE_ATTR};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RewriteError {
    #[error("output column '{column}' is not numeric and cannot receive noise")]
    NonNumericOutput { column: String },
    #[error("expected an aggregation at the top of the query, found {node}")]
    NotAggregation { node: String },
    #[error("unsupported {node}: {reason}")]
    UnsupportedConstruct { node: String, reason: String },
    #[error("outermost aggregation is {found}, expected {expected}")]
    AggregationMismatch { expected: AggregationKind, found: AggregationKind },
    #[error("no domain source for grouping column '{column}'")]
    NoDomainSource { column: String },
    #[error("noise scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("subsample count must be at least 1")]
    InvalidSubsamples,
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

impl RewriteError {
    pub(crate) fn unsupported(node: &str, reason: impl Into<String>) -> Self {
        RewriteError::UnsupportedConstruct { node: node.to_string(), reason: reason.into() }
    }
}

/// Laplace scale in the units of the query output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseScale(f64);

impl NoiseScale {
    pub fn new(value: f64) -> Result<Self, RewriteError> {
        if value > 0.0 && value.is_finite() {
            Ok(NoiseScale(value))
        } else {
            Err(RewriteError::InvalidScale(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Swaps the outermost aggregation function, keeping the grouping columns
/// and the output attribute name.
pub fn replace_aggregation(
    q: &QueryExpr,
    from: AggregationKind,
    to: Aggregation,
    catalog: &Catalog,
) -> Result<QueryExpr, RewriteError> {
    let RelExpr::Aggregate { func, group_by, input, .. } = &q.top else {
        return Err(RewriteError::NotAggregation { node: q.top.kind_name().to_string() });
    };
    if func.kind() != from {
        return Err(RewriteError::AggregationMismatch { expected: from, found: func.kind() });
    }
    if !matches!(to, Aggregation::Count | Aggregation::Sum(_)) {
        return Err(RewriteError::unsupported("aggregation", format!("cannot replace with {}", to.kind())));
    }
    if let Some(c) = to.column() {
        schema_of(input, catalog)?.resolve(c, "aggregation")?;
    }
    let name = q.top.aggregate_output().expect("aggregate");
    let top = RelExpr::aggregate_named(to, group_by.clone(), name, (**input).clone());
    Ok(QueryExpr::derived(top, q.provenance))
}

#[cfg(test)]
pub(crate) fn fixture_catalog() -> Catalog {
    Catalog::from_json(
        r#"{"tables":[
        {"name":"trips","protected":true,"primaryKey":["trip_id"],
         "columns":[{"name":"trip_id","type":"int"},{"name":"driver_id","type":"int","maxFrequency":3},
                    {"name":"city_id","type":"int","domainSource":{"table":"cities","column":"city_id"}},
                    {"name":"distance","type":"real"},{"name":"kind","type":"string"}]},
        {"name":"drivers","primaryKey":["id"],
         "columns":[{"name":"id","type":"int"},{"name":"city_id","type":"int"},{"name":"rating","type":"real"}]},
        {"name":"cities","primaryKey":["city_id"],
         "columns":[{"name":"city_id","type":"int"},{"name":"name","type":"string"}]}]}"#,
    )
    .unwrap()
}
