//! Name resolution: turns a syntax tree into relational algebra.
//!
//! WITH clauses and FROM subqueries are inlined. Every column reference is
//! resolved to the attribute it denotes, so the algebra never depends on
//! the aliases used in the text.

use crate::algebra::{
    schema_of, AlgebraError, AttrExpr, Aggregation, BinaryOp, Catalog, ColumnRef, JoinKind,
    Literal, Predicate, RelExpr, ScalarType, Schema, ValueExpr,
};

use super::syntax::{Condition, Cte, Expr, FromSource, JoinType, SelectCore, SelectItem, Statement};
use super::SqlError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Untrusted analyst input: the statistical-query subset.
    Analyst,
    /// Text produced by the emitter for a rewritten query.
    Rewritten,
}

pub(crate) struct Binder<'a> {
    pub catalog: &'a Catalog,
    pub mode: Mode,
}

struct ScopeItem {
    alias: String,
    rel: RelExpr,
    schema: Schema,
}

const AGGREGATES: [&str; 4] = ["count", "sum", "avg", "median"];

fn is_aggregate_call(e: &Expr) -> bool {
    matches!(e, Expr::Call { name, over: false, .. } if AGGREGATES.contains(&name.as_str()))
}

fn contains_aggregate(e: &Expr) -> bool {
    match e {
        Expr::Call { args, .. } => is_aggregate_call(e) || args.iter().any(contains_aggregate),
        Expr::Neg(x, _) => contains_aggregate(x),
        Expr::Binary { left, right, .. } => contains_aggregate(left) || contains_aggregate(right),
        Expr::CaseNull { test, then, otherwise, .. } => {
            contains_aggregate(test) || contains_aggregate(then) || contains_aggregate(otherwise)
        }
        _ => false,
    }
}

impl Binder<'_> {
    pub fn statement(&self, stmt: &Statement, outer: &[(String, RelExpr)], top: bool) -> Result<RelExpr, SqlError> {
        let mut env: Vec<(String, RelExpr)> = outer.to_vec();
        for cte in &stmt.ctes {
            match cte {
                Cte::Query { name, stmt } => {
                    let rel = self.statement(stmt, &env, false)?;
                    env.push((name.clone(), rel));
                }
                Cte::Values { name, column, values, pos } => {
                    let rel = bins(column, values, *pos)?;
                    env.push((name.clone(), rel));
                }
            }
        }
        self.core(&stmt.body, &env, top)
    }

    fn schema(&self, rel: &RelExpr) -> Result<Schema, SqlError> {
        Ok(schema_of(rel, self.catalog)?)
    }

    fn core(&self, core: &SelectCore, env: &[(String, RelExpr)], top: bool) -> Result<RelExpr, SqlError> {
        let mut scope: Vec<ScopeItem> = Vec::new();
        for entry in &core.from {
            let (rel, default_alias) = match &entry.source {
                FromSource::Table(name) => {
                    let rel = match env.iter().rev().find(|(n, _)| n == name) {
                        Some((_, rel)) => rel.clone(),
                        None if self.catalog.table(name).is_some() => RelExpr::table(name.clone()),
                        None => return Err(AlgebraError::UnknownTable { table: name.clone() }.into()),
                    };
                    (rel, name.clone())
                }
                FromSource::Subquery(stmt) => (self.statement(stmt, env, false)?, String::new()),
            };
            let alias = entry.alias.clone().unwrap_or(default_alias);
            if !alias.is_empty() && scope.iter().any(|s| s.alias == alias) {
                return Err(SqlError::parse(entry.pos, format!("'{alias}' appears twice in FROM")));
            }
            let schema = self.schema(&rel)?;
            scope.push(ScopeItem { alias, rel, schema });
        }

        let mut pending: Vec<Option<&Condition>> = core.conjuncts.iter().map(Some).collect();
        let mut current = scope[0].rel.clone();
        for k in 1..scope.len() {
            let entry = &core.from[k];
            let (left_key, right_key, kind) = match &entry.join {
                Some(spec) => {
                    let kind = match spec.kind {
                        JoinType::Inner => JoinKind::Inner,
                        JoinType::Right if self.mode == Mode::Rewritten => JoinKind::RightOuter,
                        JoinType::Right => return Err(SqlError::unsupported("outer-join", entry.pos)),
                    };
                    let (l, r) = self
                        .join_keys(&spec.on, &scope[..=k], k, true)?
                        .ok_or_else(|| SqlError::parse(spec.on.pos, "join condition must equate a column of each side"))?;
                    (l, r, kind)
                }
                None => {
                    let mut found = None;
                    for slot in pending.iter_mut() {
                        let Some(c) = *slot else { continue };
                        if let Some(keys) = self.join_keys(c, &scope, k, false)? {
                            found = Some(keys);
                            *slot = None;
                            break;
                        }
                    }
                    let (l, r) = found.ok_or_else(|| SqlError::unsupported("cross-join", entry.pos))?;
                    (l, r, JoinKind::Inner)
                }
            };
            current = RelExpr::Join {
                left: Box::new(current),
                right: Box::new(scope[k].rel.clone()),
                left_key,
                right_key,
                kind,
            };
        }
        for c in pending.into_iter().flatten() {
            let predicate = Predicate::new(
                self.value(&c.left, &scope)?,
                c.op,
                self.value(&c.right, &scope)?,
            );
            current = RelExpr::select(predicate, current);
        }

        let agg_items: Vec<usize> = core
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| matches!(it, SelectItem::Expr { expr, .. } if is_aggregate_call(expr)))
            .map(|(i, _)| i)
            .collect();
        for it in &core.items {
            if let SelectItem::Expr { expr, .. } = it {
                if !is_aggregate_call(expr) && contains_aggregate(expr) {
                    return Err(SqlError::unsupported("aggregate-expression", expr.pos()));
                }
            }
        }
        if agg_items.is_empty() {
            if let Some(g) = core.group_by.first() {
                return Err(SqlError::unsupported("group-without-aggregate", g.pos()));
            }
            if top && self.mode == Mode::Analyst {
                return Err(SqlError::unsupported("raw-rows", core.pos));
            }
            return self.projection(core, &scope, current);
        }
        self.aggregate(core, &scope, current, &agg_items)
    }

    /// Join keys for joining scope item `k` to items `0..k`, when the
    /// condition is an equality between one column of each.
    fn join_keys(
        &self,
        c: &Condition,
        scope: &[ScopeItem],
        k: usize,
        explicit: bool,
    ) -> Result<Option<(ColumnRef, ColumnRef)>, SqlError> {
        let (Expr::Column { .. }, Expr::Column { .. }) = (&c.left, &c.right) else {
            if explicit {
                return Err(SqlError::unsupported("computed-join-key", c.pos));
            }
            return Ok(None);
        };
        let (li, lref) = resolve(&c.left, scope)?;
        let (ri, rref) = resolve(&c.right, scope)?;
        let ok = |a: usize, b: usize| a < k && b == k;
        if c.op != crate::algebra::CmpOp::Eq {
            if explicit && (ok(li, ri) || ok(ri, li)) {
                return Err(SqlError::unsupported("non-equijoin", c.pos));
            }
            return Ok(None);
        }
        if ok(li, ri) {
            Ok(Some((lref, rref)))
        } else if ok(ri, li) {
            Ok(Some((rref, lref)))
        } else {
            Ok(None)
        }
    }

    fn projection(&self, core: &SelectCore, scope: &[ScopeItem], input: RelExpr) -> Result<RelExpr, SqlError> {
        if let [SelectItem::Star(_)] = core.items.as_slice() {
            return Ok(input);
        }
        let mut attrs = Vec::new();
        for it in &core.items {
            match it {
                SelectItem::Star(_) => {
                    let schema = self.schema(&input)?;
                    attrs.extend(schema.attrs.iter().map(|a| AttrExpr::Column(a.column_ref())));
                }
                SelectItem::Expr { expr: e @ Expr::Column { .. }, alias: None } => {
                    attrs.push(AttrExpr::Column(resolve(e, scope)?.1));
                }
                SelectItem::Expr { expr, alias: Some(a) } => {
                    attrs.push(AttrExpr::named(a.clone(), self.value(expr, scope)?));
                }
                SelectItem::Expr { expr, alias: None } => {
                    return Err(SqlError::unsupported("unnamed-expression", expr.pos()));
                }
            }
        }
        Ok(RelExpr::project(attrs, input))
    }

    fn aggregate(
        &self,
        core: &SelectCore,
        scope: &[ScopeItem],
        input: RelExpr,
        agg_items: &[usize],
    ) -> Result<RelExpr, SqlError> {
        if agg_items.len() > 1 {
            return Err(SqlError::unsupported("multiple-aggregates", core.pos));
        }
        let ai = agg_items[0];
        if ai + 1 != core.items.len() {
            return Err(SqlError::unsupported("aggregate-not-last", core.pos));
        }
        let mut group_by = Vec::new();
        for it in &core.items[..ai] {
            match it {
                SelectItem::Expr { expr: e @ Expr::Column { name, pos, .. }, alias } => {
                    if alias.as_ref().is_some_and(|a| a != name) {
                        return Err(SqlError::unsupported("group-column-alias", *pos));
                    }
                    group_by.push(resolve(e, scope)?.1);
                }
                SelectItem::Star(p) => return Err(SqlError::parse(*p, "'*' next to an aggregate")),
                SelectItem::Expr { expr, .. } => {
                    return Err(SqlError::unsupported("computed-group-column", expr.pos()))
                }
            }
        }
        let mut grouped = Vec::new();
        for g in &core.group_by {
            if !matches!(g, Expr::Column { .. }) {
                return Err(SqlError::unsupported("computed-group-column", g.pos()));
            }
            grouped.push(resolve(g, scope)?.1);
        }
        for g in &group_by {
            if !grouped.contains(g) {
                return Err(SqlError::parse(core.pos, format!("column {g} must appear in GROUP BY")));
            }
        }
        if let Some(g) = grouped.iter().find(|g| !group_by.contains(g)) {
            let _ = g;
            return Err(SqlError::unsupported("unselected-group-column", core.group_by[0].pos()));
        }

        let SelectItem::Expr { expr: Expr::Call { name, args, star, distinct, pos, .. }, alias } = &core.items[ai]
        else {
            unreachable!("checked by is_aggregate_call")
        };
        let column = |args: &[Expr]| -> Result<ColumnRef, SqlError> {
            match args {
                [e @ Expr::Column { .. }] => Ok(resolve(e, scope)?.1),
                [e] => Err(SqlError::unsupported("aggregate-expression", e.pos())),
                _ => Err(SqlError::parse(*pos, format!("{} takes one argument", name.to_uppercase()))),
            }
        };
        let func = match name.as_str() {
            "count" if *star => Aggregation::Count,
            "count" if *distinct => Aggregation::CountDistinct(column(args)?),
            "count" => {
                column(args)?;
                Aggregation::Count
            }
            _ if *distinct => return Err(SqlError::unsupported("distinct-aggregate", *pos)),
            _ if *star => return Err(SqlError::parse(*pos, format!("{}(*) is not valid", name.to_uppercase()))),
            "sum" => Aggregation::Sum(column(args)?),
            "avg" => Aggregation::Avg(column(args)?),
            "median" => Aggregation::Median(column(args)?),
            _ => unreachable!(),
        };
        let name = alias.clone().unwrap_or_else(|| func.default_name());
        Ok(RelExpr::aggregate_named(func, group_by, name, input))
    }

    fn value(&self, e: &Expr, scope: &[ScopeItem]) -> Result<ValueExpr, SqlError> {
        Ok(match e {
            Expr::Column { .. } => ValueExpr::Column(resolve(e, scope)?.1),
            Expr::Number { text, pos } => ValueExpr::Literal(number(text, *pos)?),
            Expr::Str(s) => ValueExpr::lit(Literal::Str(s.clone())),
            Expr::Bool(b) => ValueExpr::lit(Literal::Bool(*b)),
            Expr::Neg(inner, pos) => match inner.as_ref() {
                Expr::Number { text, .. } => ValueExpr::Literal(match number(text, *pos)? {
                    Literal::Int(v) => Literal::Int(-v),
                    Literal::Real(v) => Literal::Real(-v),
                    other => other,
                }),
                other => ValueExpr::sub(ValueExpr::int(0), self.value(other, scope)?),
            },
            Expr::Binary { op, left, right } => {
                ValueExpr::binary(*op, self.value(left, scope)?, self.value(right, scope)?)
            }
            Expr::CaseNull { test, then, otherwise, pos } => {
                let t = self.value(test, scope)?;
                if self.value(otherwise, scope)? != t {
                    return Err(SqlError::unsupported("case", *pos));
                }
                match self.value(then, scope)? {
                    ValueExpr::Literal(l) => ValueExpr::Coalesce(Box::new(t), l),
                    _ => return Err(SqlError::unsupported("case", *pos)),
                }
            }
            Expr::Call { name, args, star, distinct, over, pos } => {
                let pos = *pos;
                if AGGREGATES.contains(&name.as_str()) {
                    return Err(SqlError::unsupported("aggregate-expression", pos));
                }
                if *star || *distinct {
                    return Err(SqlError::parse(pos, format!("unexpected argument list for {name}")));
                }
                if *over && name != "row_number" {
                    return Err(SqlError::unsupported("window-function", pos));
                }
                let arity = |n: usize| {
                    if args.len() == n {
                        Ok(())
                    } else {
                        Err(SqlError::parse(pos, format!("{} takes {n} argument(s)", name.to_uppercase())))
                    }
                };
                match name.as_str() {
                    "random" | "rand" => {
                        arity(0)?;
                        ValueExpr::Rand
                    }
                    "row_number" => {
                        arity(0)?;
                        if !over {
                            return Err(SqlError::parse(pos, "ROW_NUMBER needs OVER ()"));
                        }
                        ValueExpr::RowNumber
                    }
                    "ln" => {
                        arity(1)?;
                        ValueExpr::ln(self.value(&args[0], scope)?)
                    }
                    "abs" => {
                        arity(1)?;
                        ValueExpr::abs(self.value(&args[0], scope)?)
                    }
                    "sign" => {
                        arity(1)?;
                        ValueExpr::sign(self.value(&args[0], scope)?)
                    }
                    "mod" => {
                        arity(2)?;
                        ValueExpr::binary(
                            BinaryOp::Mod,
                            self.value(&args[0], scope)?,
                            self.value(&args[1], scope)?,
                        )
                    }
                    "coalesce" => {
                        arity(2)?;
                        match self.value(&args[1], scope)? {
                            ValueExpr::Literal(l) => {
                                ValueExpr::Coalesce(Box::new(self.value(&args[0], scope)?), l)
                            }
                            _ => return Err(SqlError::unsupported("coalesce-expression", pos)),
                        }
                    }
                    "floor" => {
                        arity(1)?;
                        match self.value(&args[0], scope)? {
                            ValueExpr::Binary { op: BinaryOp::Mul, left, right }
                                if *left == ValueExpr::Rand =>
                            {
                                match *right {
                                    ValueExpr::Literal(Literal::Int(n)) if n > 0 => ValueExpr::RandInt(n as u64),
                                    _ => return Err(SqlError::unsupported("function floor", pos)),
                                }
                            }
                            _ => return Err(SqlError::unsupported("function floor", pos)),
                        }
                    }
                    other => return Err(SqlError::unsupported(&format!("function {other}"), pos)),
                }
            }
        })
    }
}

fn number(text: &str, pos: usize) -> Result<Literal, SqlError> {
    if text.contains(['.', 'e', 'E']) {
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Literal::Real)
            .ok_or_else(|| SqlError::parse(pos, format!("invalid number {text}")))
    } else {
        text.parse::<i64>()
            .map(Literal::Int)
            .map_err(|_| SqlError::parse(pos, format!("integer {text} out of range")))
    }
}

fn bins(column: &str, values: &[Expr], pos: usize) -> Result<RelExpr, SqlError> {
    let mut lits = Vec::with_capacity(values.len());
    for v in values {
        let lit = match v {
            Expr::Number { text, pos } => number(text, *pos)?,
            Expr::Neg(inner, p) => match inner.as_ref() {
                Expr::Number { text, .. } => match number(text, *p)? {
                    Literal::Int(x) => Literal::Int(-x),
                    Literal::Real(x) => Literal::Real(-x),
                    other => other,
                },
                _ => return Err(SqlError::parse(*p, "VALUES entries must be literals")),
            },
            Expr::Str(s) => Literal::Str(s.clone()),
            Expr::Bool(b) => Literal::Bool(*b),
            other => return Err(SqlError::parse(other.pos(), "VALUES entries must be literals")),
        };
        lits.push(lit);
    }
    let types: Vec<ScalarType> = lits.iter().map(Literal::scalar_type).collect();
    let ty = if types.iter().all(|t| t.is_numeric()) {
        if types.contains(&ScalarType::Real) {
            ScalarType::Real
        } else {
            ScalarType::Int
        }
    } else if types.iter().all(|t| *t == types[0]) {
        types[0]
    } else {
        return Err(SqlError::parse(pos, "VALUES entries must share one type"));
    };
    Ok(RelExpr::Bins { column: column.to_string(), ty, values: lits })
}

/// Resolves a column expression against the FROM scope, returning the
/// index of the scope item and the canonical reference.
fn resolve(e: &Expr, scope: &[ScopeItem]) -> Result<(usize, ColumnRef), SqlError> {
    let Expr::Column { qualifier, name, .. } = e else { unreachable!() };
    let shown = match qualifier {
        Some(q) => format!("{q}.{name}"),
        None => name.clone(),
    };
    let mut hits = Vec::new();
    for (i, item) in scope.iter().enumerate() {
        if qualifier.as_ref().is_some_and(|q| *q != item.alias) {
            continue;
        }
        for a in &item.schema.attrs {
            if a.name == *name {
                hits.push((i, a.column_ref()));
            }
        }
    }
    match hits.len() {
        1 => Ok(hits.pop().unwrap()),
        0 => Err(AlgebraError::UnknownColumn { column: shown, node: "query".into() }.into()),
        _ => Err(AlgebraError::AmbiguousColumn { column: shown, node: "query".into() }.into()),
    }
}
