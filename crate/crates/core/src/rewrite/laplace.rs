use crate::algebra::{
    logical_outputs, schema_of, AttrExpr, Catalog, ColumnRef, QueryExpr, RelExpr, ValueExpr,
    NOISE_SCALE_ATTR,
};

use super::{NoiseScale, RewriteError};

/// Factor applied to `rand() - 0.5` so that `|u| <= 0.5 - 1e-12` and the
/// logarithm's argument stays positive in floating point.
pub const UNIFORM_SHRINK: f64 = 0.999999999998;

/// Adds Laplace noise of scale `gamma` to every non-logical numeric output
/// attribute. The result has the same schema and rows as `q`; with the
/// random source pinned at 0.5 it also has the same values.
pub fn laplace_rewrite(q: &QueryExpr, gamma: NoiseScale, catalog: &Catalog) -> Result<QueryExpr, RewriteError> {
    let scale = ValueExpr::lit(crate::algebra::Literal::number(gamma.get()));
    rewrite(q, scale, false, catalog)
}

/// Like [`laplace_rewrite`], but the scale of each row is read from the
/// `dp_noise_scale` attribute produced by the Winsorized subsample
/// aggregator. That attribute is dropped from the output.
pub fn laplace_rewrite_column_scale(q: &QueryExpr, catalog: &Catalog) -> Result<QueryExpr, RewriteError> {
    rewrite(q, ValueExpr::col(ColumnRef::new(NOISE_SCALE_ATTR)), true, catalog)
}

fn rewrite(q: &QueryExpr, scale: ValueExpr, scale_column: bool, catalog: &Catalog) -> Result<QueryExpr, RewriteError> {
    if !matches!(q.top, RelExpr::Aggregate { .. } | RelExpr::SubsampleAggregate { .. } | RelExpr::Project { .. }) {
        return Err(RewriteError::NotAggregation { node: q.top.kind_name().to_string() });
    }
    let schema = schema_of(&q.top, catalog)?;
    let logical = logical_outputs(&q.top, catalog)?;
    if scale_column && !schema.attrs.iter().any(|a| a.qualifier.is_none() && a.name == NOISE_SCALE_ATTR) {
        return Err(RewriteError::unsupported(q.top.kind_name(), format!("no {NOISE_SCALE_ATTR} attribute")));
    }

    let mut noised = Vec::new();
    for (attr, is_logical) in schema.attrs.iter().zip(&logical) {
        if *is_logical || (scale_column && attr.name == NOISE_SCALE_ATTR) {
            continue;
        }
        if !attr.ty.is_numeric() {
            return Err(RewriteError::NonNumericOutput { column: attr.name.clone() });
        }
        noised.push(attr);
    }
    let uniform_name = |x: &str| if noised.len() == 1 { "u".to_string() } else { format!("u_{x}") };
    for a in &noised {
        let u = uniform_name(&a.name);
        if schema.attrs.iter().any(|b| b.name == u) {
            return Err(RewriteError::unsupported(q.top.kind_name(), format!("output already has an attribute named {u}")));
        }
    }

    let mut unif: Vec<AttrExpr> = schema.attrs.iter().map(|a| AttrExpr::Column(a.column_ref())).collect();
    for a in &noised {
        let centered = ValueExpr::sub(ValueExpr::Rand, ValueExpr::real(0.5));
        unif.push(AttrExpr::named(uniform_name(&a.name), ValueExpr::mul(centered, ValueExpr::real(UNIFORM_SHRINK))));
    }

    let mut lap = Vec::new();
    for attr in &schema.attrs {
        if scale_column && attr.name == NOISE_SCALE_ATTR && attr.qualifier.is_none() {
            continue;
        }
        if !noised.iter().any(|n| n.name == attr.name && n.qualifier == attr.qualifier) {
            lap.push(AttrExpr::Column(attr.column_ref()));
            continue;
        }
        let u = || ValueExpr::col(ColumnRef::new(uniform_name(&attr.name)));
        // x - scale * sign(u) * ln(1 - 2|u|)
        let magnitude = ValueExpr::ln(ValueExpr::sub(ValueExpr::int(1), ValueExpr::mul(ValueExpr::int(2), ValueExpr::abs(u()))));
        let noise = ValueExpr::mul(ValueExpr::mul(scale.clone(), ValueExpr::sign(u())), magnitude);
        lap.push(AttrExpr::named(attr.name.clone(), ValueExpr::sub(ValueExpr::col(attr.column_ref()), noise)));
    }

    let top = RelExpr::project(lap, RelExpr::project(unif, q.top.clone()));
    Ok(QueryExpr::derived(top, q.provenance))
}
