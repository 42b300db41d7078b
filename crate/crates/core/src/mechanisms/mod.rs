//! The four mechanisms as compositions of rewrite rules, plus syntax-based
//! selection among them.

mod selection;
mod wpinq;

use serde::Serialize;
use thiserror::Error;

use crate::algebra::{
    Aggregation, AggregationKind, AggregatorPlan, Catalog, Literal, MechanismId, Provenance,
    QueryExpr, Winsorize,
};
use crate::rewrite::{
    complete_histogram_bins, complete_with_bins, laplace_rewrite, laplace_rewrite_column_scale,
    metadata_rewrite, replace_aggregation, subsample_rewrite, NoiseScale, RewriteError,
    SubsampleAssignment,
};
use crate::sensitivity::{
    restricted_sensitivity, smooth_elastic_sensitivity, SensitivityError, SensitivityResult,
};

pub use selection::{
    assess, default_rules, load_rules, query_features, rules_from_json, select_mechanism, Assessment, Selection,
    SelectionRule, Verdict, TIE_ORDER,
};
pub use wpinq::WEIGHT_ATTR;

/// Floor on the Winsorized range width, used when all subsample answers
/// fall in a degenerate interquartile range.
pub const SAA_FLOOR_WIDTH: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum MechanismError {
    #[error("{mechanism} does not support this query: {reason}")]
    Unsupported { mechanism: MechanismId, reason: String },
    #[error("{mechanism}: {source}")]
    Sensitivity {
        mechanism: MechanismId,
        #[source]
        source: SensitivityError,
    },
    #[error("{mechanism}: {source}")]
    Rewrite {
        mechanism: MechanismId,
        #[source]
        source: RewriteError,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("database size unknown: pass it explicitly or declare rowCount for the protected table")]
    UnknownDbSize,
    #[error("no mechanism supports this query ({})", .reasons.iter().map(|(m, r)| format!("{m}: {r}")).collect::<Vec<_>>().join("; "))]
    NoMechanismSupports { reasons: Vec<(MechanismId, String)> },
    #[error("invalid rule set: {0}")]
    Rules(String),
}

impl MechanismError {
    /// The underlying reason, without the mechanism prefix.
    pub fn reason(&self) -> String {
        match self {
            MechanismError::Unsupported { reason, .. } => reason.clone(),
            MechanismError::Sensitivity { source, .. } => source.to_string(),
            MechanismError::Rewrite { source, .. } => source.to_string(),
            other => other.to_string(),
        }
    }
}

/// Caller-supplied parameters shared by all mechanisms.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismParams {
    pub epsilon: f64,
    /// Elastic sensitivity only; defaults to [`default_delta`].
    pub delta: Option<f64>,
    /// Overrides the protected table's declared row count.
    pub db_size: Option<u64>,
    /// Explicit histogram bins for grouping columns without a domain table.
    pub bins: Option<Vec<Literal>>,
    pub assignment: SubsampleAssignment,
}

impl MechanismParams {
    pub fn new(epsilon: f64) -> Self {
        MechanismParams { epsilon, delta: None, db_size: None, bins: None, assignment: SubsampleAssignment::default() }
    }

    fn validate(&self) -> Result<(), MechanismError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(MechanismError::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let Some(d) = self.delta {
            if !(0.0..1.0).contains(&d) {
                return Err(MechanismError::InvalidParameter(format!("delta must be in [0, 1), got {d}")));
            }
        }
        Ok(())
    }

    fn db_size(&self, catalog: &Catalog) -> Option<u64> {
        self.db_size.or_else(|| catalog.protected_table().row_count)
    }
}

/// How a grouped query was completed.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum HistogramMode {
    DomainTable,
    Bins { count: usize },
}

/// Parameters a mechanism chose for one query.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MechanismPlan {
    pub mechanism: MechanismId,
    /// Laplace scale; absent for Sample & Aggregate, whose scale is
    /// computed per row from the subsample answers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub epsilon: f64,
    /// Delta charged to the budget.
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsamples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramMode>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rewritten {
    pub query: QueryExpr,
    pub plan: MechanismPlan,
}

/// `n^(-epsilon ln n)`.
pub fn default_delta(epsilon: f64, n: u64) -> f64 {
    let n = n as f64;
    n.powf(-epsilon * n.ln())
}

/// Number of subsamples for a database of `n` rows: `round(n^0.4)`.
pub fn subsample_count(n: u64) -> u64 {
    (n as f64).powf(0.4).round() as u64
}

pub fn apply(mechanism: MechanismId, q: &QueryExpr, catalog: &Catalog, params: &MechanismParams) -> Result<Rewritten, MechanismError> {
    match mechanism {
        MechanismId::Elastic => apply_elastic(q, catalog, params),
        MechanismId::Restricted => apply_restricted(q, catalog, params),
        MechanismId::Wpinq => apply_wpinq(q, catalog, params),
        MechanismId::Saa => apply_saa(q, catalog, params),
    }
}

fn rewrite_err(mechanism: MechanismId) -> impl Fn(RewriteError) -> MechanismError {
    move |source| MechanismError::Rewrite { mechanism, source }
}

fn sensitivity_err(mechanism: MechanismId) -> impl Fn(SensitivityError) -> MechanismError {
    move |source| MechanismError::Sensitivity { mechanism, source }
}

fn require_counting(mechanism: MechanismId, q: &QueryExpr) -> Result<AggregationKind, MechanismError> {
    let kind = q.aggregation().map(|(f, _)| f.kind()).ok_or_else(|| MechanismError::Unsupported {
        mechanism,
        reason: format!("outermost node is a {}", q.top.kind_name()),
    })?;
    if !kind.is_counting() {
        return Err(MechanismError::Unsupported { mechanism, reason: format!("{kind} is not a counting aggregation") });
    }
    Ok(kind)
}

/// Histogram completion for grouped queries, then Laplace noise.
fn complete_and_noise(
    mechanism: MechanismId,
    q: &QueryExpr,
    gamma: f64,
    catalog: &Catalog,
    params: &MechanismParams,
) -> Result<(QueryExpr, Option<HistogramMode>), MechanismError> {
    let err = rewrite_err(mechanism);
    let (completed, mode) = if !q.is_grouped() {
        (q.clone(), None)
    } else if let Some(bins) = &params.bins {
        (complete_with_bins(q, bins, catalog).map_err(&err)?, Some(HistogramMode::Bins { count: bins.len() }))
    } else {
        (complete_histogram_bins(q, catalog).map_err(&err)?, Some(HistogramMode::DomainTable))
    };
    let scale = NoiseScale::new(gamma).map_err(&err)?;
    let mut out = laplace_rewrite(&completed, scale, catalog).map_err(&err)?;
    out.provenance = Provenance::Rewritten(mechanism);
    Ok((out, mode))
}

/// Laplace noise scaled to the smoothed elastic sensitivity.
pub fn apply_elastic(q: &QueryExpr, catalog: &Catalog, params: &MechanismParams) -> Result<Rewritten, MechanismError> {
    let m = MechanismId::Elastic;
    params.validate()?;
    require_counting(m, q)?;
    let n = params.db_size(catalog);
    let delta = match (params.delta, n) {
        (Some(d), _) => d,
        (None, Some(n)) => default_delta(params.epsilon, n),
        (None, None) => return Err(MechanismError::UnknownDbSize),
    };
    if delta <= 0.0 {
        return Err(MechanismError::InvalidParameter("elastic sensitivity needs delta > 0".into()));
    }
    let s = smooth_elastic_sensitivity(q, catalog, params.epsilon, delta, n.unwrap_or(u64::MAX)).map_err(sensitivity_err(m))?;
    let gamma = s.value / params.epsilon;
    let (query, histogram) = complete_and_noise(m, q, gamma, catalog, params)?;
    let plan = MechanismPlan {
        mechanism: m,
        gamma: Some(gamma),
        epsilon: params.epsilon,
        delta,
        subsamples: None,
        sensitivity: Some(s),
        histogram,
    };
    Ok(Rewritten { query, plan })
}

/// Laplace noise scaled to the sensitivity under declared join caps.
pub fn apply_restricted(q: &QueryExpr, catalog: &Catalog, params: &MechanismParams) -> Result<Rewritten, MechanismError> {
    let m = MechanismId::Restricted;
    params.validate()?;
    require_counting(m, q)?;
    let s = restricted_sensitivity(q, catalog).map_err(sensitivity_err(m))?;
    let gamma = s.value / params.epsilon;
    let (query, histogram) = complete_and_noise(m, q, gamma, catalog, params)?;
    let plan = MechanismPlan {
        mechanism: m,
        gamma: Some(gamma),
        epsilon: params.epsilon,
        delta: 0.0,
        subsamples: None,
        sensitivity: Some(s),
        histogram,
    };
    Ok(Rewritten { query, plan })
}

/// Weighted counting: every row carries a weight, joins rescale weights so
/// the weighted count has sensitivity one, and the count becomes a sum of
/// weights.
pub fn apply_wpinq(q: &QueryExpr, catalog: &Catalog, params: &MechanismParams) -> Result<Rewritten, MechanismError> {
    let m = MechanismId::Wpinq;
    params.validate()?;
    if require_counting(m, q)? == AggregationKind::CountDistinct {
        return Err(MechanismError::Unsupported { mechanism: m, reason: "COUNT(DISTINCT ...) has no weighted form".into() });
    }
    if !q.top.referenced_tables().contains(&catalog.protected_table().name) {
        return Err(MechanismError::Unsupported { mechanism: m, reason: "query does not reference the protected table".into() });
    }
    let err = rewrite_err(m);
    let weighted = metadata_rewrite(&q.top, &wpinq::weight_fns(), catalog).map_err(&err)?;
    let weighted = QueryExpr { top: weighted, provenance: q.provenance };
    let summed = replace_aggregation(
        &weighted,
        AggregationKind::Count,
        Aggregation::Sum(crate::algebra::ColumnRef::new(WEIGHT_ATTR)),
        catalog,
    )
    .map_err(&err)?;
    let gamma = 1.0 / params.epsilon;
    let (query, histogram) = complete_and_noise(m, &summed, gamma, catalog, params)?;
    let plan = MechanismPlan {
        mechanism: m,
        gamma: Some(gamma),
        epsilon: params.epsilon,
        delta: 0.0,
        subsamples: None,
        sensitivity: None,
        histogram,
    };
    Ok(Rewritten { query, plan })
}

/// Runs the query on `round(n^0.4)` disjoint subsamples and releases a
/// noisy Widened Winsorized mean of the answers.
pub fn apply_saa(q: &QueryExpr, catalog: &Catalog, params: &MechanismParams) -> Result<Rewritten, MechanismError> {
    let m = MechanismId::Saa;
    params.validate()?;
    let Some((func, group_by)) = q.aggregation() else {
        return Err(MechanismError::Unsupported { mechanism: m, reason: format!("outermost node is a {}", q.top.kind_name()) });
    };
    let unsupported = |reason: &str| MechanismError::Unsupported { mechanism: m, reason: reason.to_string() };
    if !group_by.is_empty() {
        return Err(unsupported("grouped queries are not supported"));
    }
    let kind = func.kind();
    if kind == AggregationKind::CountDistinct {
        return Err(unsupported("COUNT(DISTINCT ...) does not decompose over subsamples"));
    }
    if !q.top.referenced_tables().contains(&catalog.protected_table().name) {
        return Err(unsupported("query does not reference the protected table"));
    }
    let n = params.db_size(catalog).ok_or(MechanismError::UnknownDbSize)?;
    let subsamples = subsample_count(n);
    if subsamples < 2 {
        return Err(MechanismError::InvalidParameter(format!("database of {n} rows is too small to split")));
    }
    // Counts and sums over one part estimate 1/subsamples of the total.
    let additive = matches!(kind, AggregationKind::Count | AggregationKind::Sum);
    let plan = AggregatorPlan {
        subsamples,
        scale: if additive { subsamples as f64 } else { 1.0 },
        zero_fill: additive,
        winsorize: Some(Winsorize { epsilon: params.epsilon, floor_width: SAA_FLOOR_WIDTH }),
    };
    let err = rewrite_err(m);
    let split = subsample_rewrite(q, plan, params.assignment, catalog).map_err(&err)?;
    let mut query = laplace_rewrite_column_scale(&split, catalog).map_err(&err)?;
    query.provenance = Provenance::Rewritten(m);
    let plan = MechanismPlan {
        mechanism: m,
        gamma: None,
        epsilon: params.epsilon,
        delta: 0.0,
        subsamples: Some(subsamples),
        sensitivity: None,
        histogram: None,
    };
    Ok(Rewritten { query, plan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::schema_of;
    use crate::eval::{eval_query, RandomSource, Table, Value};
    use crate::rewrite::fixture_catalog;
    use crate::rewrite::testing::fixture_db;
    use crate::sql::{emit_sql, parse_sql, Dialect};

    fn parse(sql: &str) -> QueryExpr {
        parse_sql(sql, Dialect::Ansi, &fixture_catalog()).unwrap()
    }

    fn params(epsilon: f64) -> MechanismParams {
        MechanismParams { db_size: Some(10), ..MechanismParams::new(epsilon) }
    }

    fn run(q: &QueryExpr, rng: &mut RandomSource) -> Table {
        eval_query(q, &fixture_db(), rng).unwrap()
    }

    fn scalar(t: &Table) -> f64 {
        t.rows[0].last().unwrap().as_f64().unwrap()
    }

    #[test]
    fn elastic_count_scale() {
        let cat = fixture_catalog();
        let r = apply_elastic(&parse("SELECT COUNT(*) FROM trips"), &cat, &params(0.1)).unwrap();
        assert_eq!(r.plan.gamma, Some(10.0));
        assert!(r.plan.delta > 0.0 && r.plan.delta < 1.0);
        assert!(emit_sql(&r.query, Dialect::Ansi).text.contains("count-10*SIGN(u)*LN(1-2*ABS(u))"));
        assert!(apply_elastic(&parse("SELECT AVG(distance) FROM trips"), &cat, &params(0.1)).is_err());
    }

    #[test]
    fn default_delta_shrinks_with_n() {
        assert!(default_delta(0.1, 10_000) < default_delta(0.1, 100));
        assert!((default_delta(1.0, 10) - 10f64.powf(-(10f64.ln()))).abs() < 1e-15);
    }

    #[test]
    fn restricted_scale_and_many_to_many() {
        let cat = fixture_catalog();
        let q = parse("SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id");
        assert_eq!(apply_restricted(&q, &cat, &params(0.1)).unwrap().plan.gamma, Some(10.0));
        assert_eq!(apply_restricted(&parse("SELECT COUNT(*) FROM trips"), &cat, &params(1.0)).unwrap().plan.gamma, Some(1.0));
        let q = parse("SELECT COUNT(*) FROM drivers JOIN trips ON drivers.city_id = trips.city_id");
        assert!(matches!(
            apply_restricted(&q, &cat, &params(0.1)),
            Err(MechanismError::Sensitivity { source: SensitivityError::ManyToManyJoin { .. }, .. })
        ));
    }

    #[test]
    fn zero_noise_identity() {
        let cat = fixture_catalog();
        for sql in [
            "SELECT COUNT(*) FROM trips",
            "SELECT COUNT(*) FROM trips WHERE distance > 4",
            "SELECT COUNT(DISTINCT driver_id) FROM trips",
        ] {
            let q = parse(sql);
            let want = scalar(&run(&q, &mut RandomSource::zero_noise()));
            for m in [MechanismId::Elastic, MechanismId::Restricted, MechanismId::Wpinq] {
                let Ok(r) = apply(m, &q, &cat, &params(0.5)) else { continue };
                let got = run(&r.query, &mut RandomSource::zero_noise());
                assert_eq!(scalar(&got), want, "{m} {sql}");
                assert!(got.schema.same_shape(&schema_of(&q.top, &cat).unwrap()));
            }
        }
    }

    #[test]
    fn grouped_count_lists_every_city() {
        let cat = fixture_catalog();
        let q = parse("SELECT city_id, COUNT(*) FROM trips GROUP BY city_id");
        for m in [MechanismId::Elastic, MechanismId::Restricted, MechanismId::Wpinq] {
            let r = apply(m, &q, &cat, &params(0.1)).unwrap();
            assert_eq!(r.plan.histogram, Some(HistogramMode::DomainTable));
            let t = run(&r.query, &mut RandomSource::zero_noise());
            let mut got: Vec<(i64, f64)> = t
                .rows
                .iter()
                .map(|r| match &r[0] {
                    Value::Int(c) => (*c, r[1].as_f64().unwrap()),
                    other => panic!("{other:?}"),
                })
                .collect();
            got.sort_by(|a, b| a.0.cmp(&b.0));
            assert_eq!(got, vec![(1, 4.0), (2, 2.0), (3, 4.0), (4, 0.0), (5, 0.0)], "{m}");
        }
    }

    #[test]
    fn grouped_without_domain_needs_bins() {
        let cat = fixture_catalog();
        let q = parse("SELECT kind, COUNT(*) FROM trips GROUP BY kind");
        assert!(apply_elastic(&q, &cat, &params(0.1)).is_err());
        let p = MechanismParams { bins: Some(vec![Literal::Str("pool".into()), Literal::Str("xl".into())]), ..params(0.1) };
        let r = apply_elastic(&q, &cat, &p).unwrap();
        assert_eq!(r.plan.histogram, Some(HistogramMode::Bins { count: 2 }));
        assert_eq!(run(&r.query, &mut RandomSource::zero_noise()).rows.len(), 2);
    }

    /// Trips 0..9 use drivers i % 4: drivers 0 and 1 have 3 trips, 2 and 3
    /// have 2, and each driver row has weight 1. Eq. weight per key is
    /// `a * 1 / (a + 1)`.
    #[test]
    fn wpinq_join_weights() {
        let cat = fixture_catalog();
        let q = parse("SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id");
        let r = apply_wpinq(&q, &cat, &params(0.1)).unwrap();
        assert_eq!(r.plan.gamma, Some(10.0));
        let got = scalar(&run(&r.query, &mut RandomSource::zero_noise()));
        let want = 2.0 * 3.0 / 4.0 + 2.0 * 2.0 / 3.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        let text = emit_sql(&r.query, Dialect::Ansi).text;
        assert!(text.contains("dp_norm_trips AS (SELECT"), "{text}");
        assert!(text.contains("SUM(weight)"), "{text}");
        assert!(apply_wpinq(&parse("SELECT COUNT(DISTINCT driver_id) FROM trips"), &cat, &params(0.1)).is_err());
    }

    #[test]
    fn wpinq_plain_count_shape() {
        let cat = fixture_catalog();
        let r = apply_wpinq(&parse("SELECT COUNT(*) FROM trips"), &cat, &params(0.1)).unwrap();
        let text = emit_sql(&r.query, Dialect::Ansi).text;
        assert!(text.starts_with("WITH dp_q AS (SELECT 1.0 AS weight FROM trips),\norig AS (SELECT SUM(weight) AS count FROM dp_q)"), "{text}");
    }

    #[test]
    fn saa_avg() {
        let cat = fixture_catalog();
        let q = parse("SELECT AVG(distance) FROM trips");
        let r = apply_saa(&q, &cat, &MechanismParams { db_size: Some(10_000), ..MechanismParams::new(1.0) }).unwrap();
        assert_eq!(r.plan.subsamples, Some(40));
        let r = apply_saa(&q, &cat, &params(1.0)).unwrap();
        assert_eq!(r.plan.subsamples, Some(3));
        let t = run(&r.query, &mut RandomSource::zero_noise());
        assert!(t.schema.same_shape(&schema_of(&q.top, &cat).unwrap()));
        assert_eq!(t.rows.len(), 1);
        let join = parse("SELECT AVG(distance) FROM trips JOIN drivers ON trips.driver_id = drivers.id");
        assert!(matches!(apply_saa(&join, &cat, &params(1.0)), Err(MechanismError::Rewrite { .. })));
        assert!(apply_saa(&parse("SELECT kind, AVG(distance) FROM trips GROUP BY kind"), &cat, &params(1.0)).is_err());
    }

    #[test]
    fn saa_constant_column() {
        let cat = fixture_catalog();
        let q = parse("SELECT AVG(trip_id) FROM trips WHERE trip_id = 4");
        let r = apply_saa(&q, &cat, &params(1.0)).unwrap();
        let mut db = fixture_db();
        for row in &mut db.get_mut("trips").unwrap().rows {
            row[0] = Value::Int(4);
        }
        let t = eval_query(&r.query, &db, &mut RandomSource::zero_noise()).unwrap();
        assert_eq!(t.rows[0][0].as_f64(), Some(4.0));
    }

    #[test]
    fn unknown_db_size() {
        let cat = fixture_catalog();
        let q = parse("SELECT COUNT(*) FROM trips");
        assert_eq!(apply_elastic(&q, &cat, &MechanismParams::new(0.1)).unwrap_err(), MechanismError::UnknownDbSize);
        let p = MechanismParams { delta: Some(1e-6), ..MechanismParams::new(0.1) };
        assert!(apply_elastic(&q, &cat, &p).is_ok());
    }
}
