use serde::{Deserialize, Serialize};

use crate::algebra::{AggregatorPlan, BinaryOp, Catalog, ColumnRef, QueryExpr, RelExpr, ValueExpr};

use super::metadata::{propagate, MetadataFns};
use super::RewriteError;

/// Name of the subsample id attribute.
pub const SUBSAMPLE_ATTR: &str = "samp";

/// How base rows are assigned to subsamples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SubsampleAssignment {
    /// `ROW_NUMBER() MOD n`: deterministic, balanced.
    #[default]
    RowNumberMod,
    /// Independent uniform id per row.
    RandInt,
}

/// Splits the rows of the (join-free) query input into `plan.subsamples`
/// disjoint parts, runs the original aggregation on each part, and
/// combines the per-part answers with `plan`.
pub fn subsample_rewrite(
    q: &QueryExpr,
    plan: AggregatorPlan,
    assignment: SubsampleAssignment,
    catalog: &Catalog,
) -> Result<QueryExpr, RewriteError> {
    let RelExpr::Aggregate { func, group_by, input, .. } = &q.top else {
        return Err(RewriteError::NotAggregation { node: q.top.kind_name().to_string() });
    };
    let n = plan.subsamples;
    if n == 0 {
        return Err(RewriteError::InvalidSubsamples);
    }
    let init = match assignment {
        SubsampleAssignment::RowNumberMod => {
            ValueExpr::binary(BinaryOp::Mod, ValueExpr::RowNumber, ValueExpr::int(n as i64))
        }
        SubsampleAssignment::RandInt => ValueExpr::RandInt(n),
    };
    let fns = MetadataFns { name: SUBSAMPLE_ATTR.to_string(), init, join: None, count: None };
    let mut needed = group_by.clone();
    needed.extend(func.column().cloned());
    let assigned = propagate(input, &needed, &fns, catalog)?;

    let output = q.top.aggregate_output().expect("aggregate");
    let samp = ColumnRef::new(SUBSAMPLE_ATTR);
    let mut per_part_groups = group_by.clone();
    per_part_groups.push(samp.clone());
    let per_part = RelExpr::aggregate_named(func.clone(), per_part_groups, output.clone(), assigned);
    let top = RelExpr::SubsampleAggregate {
        plan,
        group_by: group_by.clone(),
        subsample: samp,
        value: ColumnRef::new(output.clone()),
        output,
        input: Box::new(per_part),
    };
    Ok(QueryExpr::derived(top, q.provenance))
}
