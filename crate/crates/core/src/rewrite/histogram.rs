use crate::algebra::{
    schema_of, AttrExpr, Catalog, ColumnRef, JoinKind, Literal, QueryExpr, RelExpr, ScalarType,
    ValueExpr, BINS_QUALIFIER,
};

use super::RewriteError;

/// Makes a grouped query output exactly one row per value of the grouping
/// column's declared domain, with aggregate 0 for values no input row
/// produced.
pub fn complete_histogram_bins(q: &QueryExpr, catalog: &Catalog) -> Result<QueryExpr, RewriteError> {
    let group = single_group(q)?;
    let source = group
        .qualifier
        .as_deref()
        .and_then(|t| catalog.domain_source(t, &group.name))
        .ok_or_else(|| RewriteError::NoDomainSource { column: group.to_string() })?;
    let domain = RelExpr::table(source.table.clone());
    let key = ColumnRef::qualified(source.table.clone(), source.column.clone());
    complete_against(q, domain, key, catalog)
}

/// Like [`complete_histogram_bins`] with an explicit list of bins instead
/// of a domain table. Duplicate bins are dropped.
pub fn complete_with_bins(q: &QueryExpr, bins: &[Literal], catalog: &Catalog) -> Result<QueryExpr, RewriteError> {
    let group = single_group(q)?;
    let mut values: Vec<Literal> = Vec::new();
    for b in bins {
        if !values.contains(b) {
            values.push(b.clone());
        }
    }
    if values.is_empty() {
        return Err(RewriteError::unsupported("bins", "at least one bin is required"));
    }
    let ty = if values.iter().all(|v| v.scalar_type().is_numeric()) {
        if values.iter().any(|v| v.scalar_type() == ScalarType::Real) {
            ScalarType::Real
        } else {
            ScalarType::Int
        }
    } else {
        values[0].scalar_type()
    };
    let domain = RelExpr::Bins { column: group.name.clone(), ty, values };
    let key = ColumnRef::qualified(BINS_QUALIFIER, group.name.clone());
    complete_against(q, domain, key, catalog)
}

fn single_group(q: &QueryExpr) -> Result<&ColumnRef, RewriteError> {
    let RelExpr::Aggregate { group_by, .. } = &q.top else {
        return Err(RewriteError::NotAggregation { node: q.top.kind_name().to_string() });
    };
    match group_by.as_slice() {
        [g] => Ok(g),
        [] => Err(RewriteError::unsupported("aggregation", "histogram completion needs a grouped query")),
        _ => Err(RewriteError::NoDomainSource { column: group_by.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", ") }),
    }
}

fn complete_against(q: &QueryExpr, domain: RelExpr, key: ColumnRef, catalog: &Catalog) -> Result<QueryExpr, RewriteError> {
    let group = single_group(q)?.clone();
    let schema = schema_of(&q.top, catalog)?;
    let domain_schema = schema_of(&domain, catalog)?;
    let key_ty = domain_schema.attr(&key, "bins")?.ty;
    let group_ty = schema.attr(&group, "aggregation")?.ty;
    if !key_ty.comparable(group_ty) {
        return Err(RewriteError::unsupported("bins", format!("bins of type {key_ty} for column {group} of type {group_ty}")));
    }
    let output = q.top.aggregate_output().expect("aggregate");

    let group_attr = if key.name == group.name {
        AttrExpr::Column(key.clone())
    } else {
        AttrExpr::named(group.name.clone(), ValueExpr::col(key.clone()))
    };
    let filled = AttrExpr::named(
        output.clone(),
        ValueExpr::Coalesce(Box::new(ValueExpr::col(ColumnRef::new(output))), Literal::Int(0)),
    );
    let joined = RelExpr::Join {
        left: Box::new(q.top.clone()),
        right: Box::new(domain),
        left_key: group,
        right_key: key,
        kind: JoinKind::RightOuter,
    };
    Ok(QueryExpr::derived(RelExpr::project(vec![group_attr, filled], joined), q.provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{eval_query, RandomSource, Value};
    use crate::rewrite::fixture_catalog;
    use crate::rewrite::testing::fixture_db;
    use crate::sql::{emit_sql, parse_sql, Dialect};

    fn parse(sql: &str) -> QueryExpr {
        parse_sql(sql, Dialect::Ansi, &fixture_catalog()).unwrap()
    }

    #[test]
    fn domain_table_listing() {
        let cat = fixture_catalog();
        let q = parse("SELECT city_id, COUNT(*) FROM trips GROUP BY city_id");
        let r = complete_histogram_bins(&q, &cat).unwrap();
        assert_eq!(
            emit_sql(&r, Dialect::Ansi).text,
            "WITH orig AS (SELECT city_id, COUNT(*) AS count FROM trips GROUP BY city_id)\n\
             SELECT cities.city_id, CASE WHEN orig.count IS NULL THEN 0 ELSE orig.count END AS count \
             FROM orig RIGHT JOIN cities ON orig.city_id = cities.city_id"
        );
    }

    #[test]
    fn missing_bins_are_zero() {
        let cat = fixture_catalog();
        let db = fixture_db();
        let q = parse("SELECT city_id, COUNT(*) FROM trips GROUP BY city_id");
        let r = complete_histogram_bins(&q, &cat).unwrap();
        let t = eval_query(&r, &db, &mut RandomSource::zero_noise()).unwrap();
        let got: Vec<(i64, i64)> = t
            .rows
            .iter()
            .map(|r| match (&r[0], &r[1]) {
                (Value::Int(a), Value::Int(b)) => (*a, *b),
                other => panic!("{other:?}"),
            })
            .collect();
        let mut got = got;
        got.sort();
        assert_eq!(got, vec![(1, 4), (2, 2), (3, 4), (4, 0), (5, 0)]);
    }

    #[test]
    fn explicit_bins() {
        let cat = fixture_catalog();
        let db = fixture_db();
        let q = parse("SELECT kind, SUM(distance) FROM trips GROUP BY kind");
        assert!(matches!(complete_histogram_bins(&q, &cat), Err(RewriteError::NoDomainSource { .. })));
        let bins = [Literal::Str("pool".into()), Literal::Str("solo".into()), Literal::Str("xl".into()), Literal::Str("xl".into())];
        let r = complete_with_bins(&q, &bins, &cat).unwrap();
        let t = eval_query(&r, &db, &mut RandomSource::zero_noise()).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert!(t.rows.iter().any(|r| r[0] == Value::Str("xl".into()) && r[1].as_f64() == Some(0.0)));
        assert!(complete_with_bins(&q, &[Literal::Int(1)], &cat).is_err());
    }

    #[test]
    fn multi_column_grouping_has_no_domain() {
        let cat = fixture_catalog();
        let q = parse("SELECT city_id, kind, COUNT(*) FROM trips GROUP BY city_id, kind");
        assert!(matches!(complete_histogram_bins(&q, &cat), Err(RewriteError::NoDomainSource { .. })));
    }
}
