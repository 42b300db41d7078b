use crate::algebra::{Aggregation, AttrExpr, ColumnRef, Literal, RelExpr, ValueExpr};
use crate::rewrite::{JoinParts, MetadataFns};

/// Name of the per-row weight attribute.
pub const WEIGHT_ATTR: &str = "weight";

pub(crate) fn weight_fns() -> MetadataFns {
    MetadataFns {
        name: WEIGHT_ATTR.to_string(),
        init: ValueExpr::lit(Literal::Real(1.0)),
        join: Some(weighted_join),
        count: None,
    }
}

fn helper(base: &str, index: usize) -> String {
    if index == 1 {
        base.to_string()
    } else {
        format!("{base}_{index}")
    }
}

fn norm_name(key: &ColumnRef, side: &str, other: &ColumnRef, index: usize) -> String {
    let table = match (&key.qualifier, &other.qualifier) {
        (Some(a), Some(b)) if a != b => a.clone(),
        _ => side.to_string(),
    };
    helper(&format!("dp_norm_{table}"), index)
}

/// Attaches to every row of `rel` the total weight of the rows sharing its
/// key value, and renames the row weight to `weight_as`.
fn with_norm(
    rel: RelExpr,
    keep: &[ColumnRef],
    key: &ColumnRef,
    weight: &str,
    weight_as: &str,
    key_as: &str,
    norm: &str,
) -> RelExpr {
    let totals = RelExpr::aggregate_named(
        Aggregation::Sum(ColumnRef::new(weight)),
        vec![key.clone()],
        norm,
        rel.clone(),
    );
    let totals = RelExpr::project(
        vec![
            AttrExpr::named(key_as, ValueExpr::col(key.clone())),
            AttrExpr::Column(ColumnRef::new(norm)),
        ],
        totals,
    );
    let rows = crate::rewrite::rename_metadata(rel, keep, weight, weight_as);
    let mut attrs: Vec<AttrExpr> = keep.iter().cloned().map(AttrExpr::Column).collect();
    attrs.push(AttrExpr::Column(ColumnRef::new(weight_as)));
    attrs.push(AttrExpr::Column(ColumnRef::new(norm)));
    RelExpr::project(attrs, RelExpr::join(rows, totals, key.clone(), ColumnRef::new(key_as)))
}

/// Join update that rescales the weight of each joined row to
/// `w_left * w_right / (norm_left + norm_right)`, where the norms are the
/// total weights of each side's rows with the joined key value. Adding or
/// removing one unit of weight on either side then changes the total
/// output weight by at most one.
fn weighted_join(p: JoinParts<'_>) -> RelExpr {
    let i = p.index;
    let (wl, wr) = (helper("dp_wl", i), helper("dp_wr", i));
    let (kl, kr) = (helper("dp_kl", i), helper("dp_kr", i));
    let nl = norm_name(p.left_key, "l", p.right_key, i);
    let nr = norm_name(p.right_key, "r", p.left_key, i);
    let left = with_norm(p.left, &p.left_keep, p.left_key, p.metadata, &wl, &kl, &nl);
    let right = with_norm(p.right, &p.right_keep, p.right_key, p.metadata, &wr, &kr, &nr);
    let joined = RelExpr::join(left, right, p.left_key.clone(), p.right_key.clone());

    let col = |n: &str| ValueExpr::col(ColumnRef::new(n));
    let weight = ValueExpr::div(ValueExpr::mul(col(&wl), col(&wr)), ValueExpr::add(col(&nl), col(&nr)));
    let mut attrs: Vec<AttrExpr> = p.output.iter().cloned().map(AttrExpr::Column).collect();
    attrs.push(AttrExpr::named(p.metadata, weight));
    RelExpr::project(attrs, joined)
}
