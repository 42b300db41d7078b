use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    schema_of, AggregationKind, AlgebraError, AttrExpr, Catalog, JoinKind, Provenance, QueryExpr,
    RelExpr, Schema, ValueExpr,
};

/// Syntactic property of a query consulted by mechanism selection.
///
/// The first group is extracted from the AST alone. The second group
/// (`all-joins-capped`, `many-to-many-join`) also reads catalog metadata and
/// is filled in by the selection module, never from row data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    Count,
    CountDistinct,
    Sum,
    Avg,
    Median,
    /// `count` or `count-distinct` at the top level.
    Counting,
    /// `sum`, `avg` or `median` at the top level.
    Estimator,
    NoJoin,
    InnerJoin,
    Grouped,
    Selection,
    SubqueryAggregation,
    AllJoinsCapped,
    ManyToManyJoin,
}

impl Feature {
    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Count => "count",
            Feature::CountDistinct => "count-distinct",
            Feature::Sum => "sum",
            Feature::Avg => "avg",
            Feature::Median => "median",
            Feature::Counting => "counting",
            Feature::Estimator => "estimator",
            Feature::NoJoin => "no-join",
            Feature::InnerJoin => "inner-join",
            Feature::Grouped => "grouped",
            Feature::Selection => "selection",
            Feature::SubqueryAggregation => "subquery-aggregation",
            Feature::AllJoinsCapped => "all-joins-capped",
            Feature::ManyToManyJoin => "many-to-many-join",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ValidationFailure {
    NotStatistical { node: String },
    TypeCheck { message: String },
    /// A node kind only rewrite rules may introduce.
    RewriteOnly { node: String },
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationFailure::NotStatistical { node } => {
                write!(f, "not a statistical query: outermost node is a {node}")
            }
            ValidationFailure::TypeCheck { message } => f.write_str(message),
            ValidationFailure::RewriteOnly { node } => {
                write!(f, "{node} may not appear in an original query")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub failures: Vec<ValidationFailure>,
    pub features: BTreeSet<Feature>,
    pub schema: Option<Schema>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn has(&self, f: Feature) -> bool {
        self.features.contains(&f)
    }
}

/// Type-checks a query, checks the statistical-query restriction and
/// extracts its feature set. Rewritten queries skip the checks that only
/// apply to analyst input.
pub fn validate_query(q: &QueryExpr, catalog: &Catalog) -> ValidationReport {
    let mut failures = Vec::new();
    let original = q.provenance == Provenance::Original;
    if original && !matches!(q.top, RelExpr::Aggregate { .. }) {
        failures.push(ValidationFailure::NotStatistical { node: q.top.kind_name().to_string() });
    }
    if original {
        rewrite_only_nodes(&q.top, &mut failures);
    }
    let schema = match schema_of(&q.top, catalog) {
        Ok(s) => Some(s),
        Err(e) => {
            failures.push(ValidationFailure::TypeCheck { message: e.to_string() });
            None
        }
    };
    ValidationReport { failures, features: features_of(&q.top), schema }
}

impl From<AlgebraError> for ValidationFailure {
    fn from(e: AlgebraError) -> Self {
        match e {
            AlgebraError::NotStatistical { node } => ValidationFailure::NotStatistical { node },
            other => ValidationFailure::TypeCheck { message: other.to_string() },
        }
    }
}

fn rewrite_only_nodes(expr: &RelExpr, out: &mut Vec<ValidationFailure>) {
    let bad_value = |v: &ValueExpr| v.is_random() || v.uses_row_number() || v.has_coalesce();
    let flagged = match expr {
        RelExpr::Join { kind: JoinKind::RightOuter, .. }
        | RelExpr::Bins { .. }
        | RelExpr::SubsampleAggregate { .. } => true,
        RelExpr::Project { attrs, .. } => attrs.iter().any(|a| match a {
            AttrExpr::Named { value, .. } => bad_value(value),
            AttrExpr::Column(_) => false,
        }),
        RelExpr::Select { predicate, .. } => bad_value(&predicate.left) || bad_value(&predicate.right),
        _ => false,
    };
    if flagged {
        out.push(ValidationFailure::RewriteOnly { node: expr.kind_name().to_string() });
    }
    for c in expr.children() {
        rewrite_only_nodes(c, out);
    }
}

/// AST-only features; pure function of the tree.
pub fn features_of(top: &RelExpr) -> BTreeSet<Feature> {
    let mut f = BTreeSet::new();
    if let RelExpr::Aggregate { func, group_by, input, .. } = top {
        let kind = func.kind();
        f.insert(match kind {
            AggregationKind::Count => Feature::Count,
            AggregationKind::CountDistinct => Feature::CountDistinct,
            AggregationKind::Sum => Feature::Sum,
            AggregationKind::Avg => Feature::Avg,
            AggregationKind::Median => Feature::Median,
        });
        f.insert(if kind.is_counting() { Feature::Counting } else { Feature::Estimator });
        if !group_by.is_empty() {
            f.insert(Feature::Grouped);
        }
        walk(input, &mut f);
    } else {
        walk(top, &mut f);
    }
    if !f.contains(&Feature::InnerJoin) {
        f.insert(Feature::NoJoin);
    }
    f
}

fn walk(expr: &RelExpr, f: &mut BTreeSet<Feature>) {
    match expr {
        RelExpr::Join { kind: JoinKind::Inner, .. } => {
            f.insert(Feature::InnerJoin);
        }
        RelExpr::Select { .. } => {
            f.insert(Feature::Selection);
        }
        RelExpr::Aggregate { .. } | RelExpr::SubsampleAggregate { .. } => {
            f.insert(Feature::SubqueryAggregation);
        }
        _ => {}
    }
    for c in expr.children() {
        walk(c, f);
    }
}
