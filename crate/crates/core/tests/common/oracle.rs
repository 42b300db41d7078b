//! Reference answers computed without the rewriter.

use std::collections::BTreeMap;

use dpsql_core::algebra::{
    Aggregation, AttrExpr, BinaryOp, Catalog, CmpOp, ColumnRef, JoinKind, Literal, Predicate, QueryExpr, RelExpr,
    ValueExpr,
};
use dpsql_core::eval::{eval, eval_query, Database, RandomSource, Value};

/// A bag of rows, each carrying a real weight.
#[derive(Clone, Debug)]
pub struct Weighted {
    cols: Vec<(Option<String>, String)>,
    pub rows: Vec<(Vec<Value>, f64)>,
}

impl Weighted {
    fn position(&self, c: &ColumnRef) -> usize {
        let hits: Vec<usize> = (0..self.cols.len())
            .filter(|&i| {
                let (q, n) = &self.cols[i];
                n == &c.name && (c.qualifier.is_none() || c.qualifier == *q)
            })
            .collect();
        assert_eq!(hits.len(), 1, "column {c:?} in {:?}", self.cols);
        hits[0]
    }
}

fn number(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v:?}"))
}

fn value(e: &ValueExpr, rel: &Weighted, row: &[Value]) -> Value {
    match e {
        ValueExpr::Column(c) => row[rel.position(c)].clone(),
        ValueExpr::Literal(Literal::Int(v)) => Value::Int(*v),
        ValueExpr::Literal(Literal::Real(v)) => Value::Real(*v),
        ValueExpr::Literal(Literal::Str(v)) => Value::Str(v.clone()),
        ValueExpr::Literal(Literal::Bool(v)) => Value::Bool(*v),
        ValueExpr::Binary { op, left, right } => {
            let (l, r) = (value(left, rel, row), value(right, rel, row));
            match (op, &l, &r) {
                (BinaryOp::Add, Value::Int(a), Value::Int(b)) => Value::Int(a + b),
                (BinaryOp::Sub, Value::Int(a), Value::Int(b)) => Value::Int(a - b),
                (BinaryOp::Mul, Value::Int(a), Value::Int(b)) => Value::Int(a * b),
                (BinaryOp::Mod, Value::Int(a), Value::Int(b)) => Value::Int(a % b),
                (BinaryOp::Add, _, _) => Value::Real(number(&l) + number(&r)),
                (BinaryOp::Sub, _, _) => Value::Real(number(&l) - number(&r)),
                (BinaryOp::Mul, _, _) => Value::Real(number(&l) * number(&r)),
                (BinaryOp::Div, _, _) => Value::Real(number(&l) / number(&r)),
                (BinaryOp::Mod, _, _) => panic!("real modulo"),
            }
        }
        other => panic!("oracle does not evaluate {other:?}"),
    }
}

fn holds(p: &Predicate, rel: &Weighted, row: &[Value]) -> bool {
    let (l, r) = (value(&p.left, rel, row), value(&p.right, rel, row));
    let ord = match (&l, &r) {
        (Value::Str(a), Value::Str(b)) => a.cmp(b),
        (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
        _ => number(&l).partial_cmp(&number(&r)).unwrap(),
    };
    match p.op {
        CmpOp::Lt => ord.is_lt(),
        CmpOp::Le => ord.is_le(),
        CmpOp::Eq => ord.is_eq(),
        CmpOp::Ne => ord.is_ne(),
        CmpOp::Ge => ord.is_ge(),
        CmpOp::Gt => ord.is_gt(),
    }
}

fn key(v: &Value) -> String {
    match v {
        Value::Int(i) => format!("n{}", *i as f64),
        Value::Real(r) => format!("n{}", r + 0.0),
        other => format!("{other:?}"),
    }
}

/// Total weight of the rows of `rel` per value of column `at`, summed in
/// row order.
fn norms(rel: &Weighted, at: usize) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (row, w) in &rel.rows {
        *out.entry(key(&row[at])).or_insert(0.0) += w;
    }
    out
}

/// Weighted evaluation: base rows weigh 1 and each inner equijoin
/// rescales a joined pair to `wl * wr / (norm_l + norm_r)`.
pub fn weighted(expr: &RelExpr, db: &Database) -> Weighted {
    match expr {
        RelExpr::Table(name) => {
            let t = &db[name];
            Weighted {
                cols: t.schema.attrs.iter().map(|a| (Some(name.clone()), a.name.clone())).collect(),
                rows: t.rows.iter().map(|r| (r.clone(), 1.0)).collect(),
            }
        }
        RelExpr::Select { predicate, input } => {
            let mut rel = weighted(input, db);
            let rows = std::mem::take(&mut rel.rows);
            rel.rows = rows.into_iter().filter(|(r, _)| holds(predicate, &rel, r)).collect();
            rel
        }
        RelExpr::Project { attrs, input } => {
            let rel = weighted(input, db);
            let cols = attrs
                .iter()
                .map(|a| match a {
                    AttrExpr::Column(c) => rel.cols[rel.position(c)].clone(),
                    AttrExpr::Named { name, .. } => (None, name.clone()),
                })
                .collect();
            let rows = rel
                .rows
                .iter()
                .map(|(r, w)| {
                    let vals = attrs
                        .iter()
                        .map(|a| match a {
                            AttrExpr::Column(c) => r[rel.position(c)].clone(),
                            AttrExpr::Named { value: v, .. } => value(v, &rel, r),
                        })
                        .collect();
                    (vals, *w)
                })
                .collect();
            Weighted { cols, rows }
        }
        RelExpr::Join { left, right, left_key, right_key, kind: JoinKind::Inner } => {
            let (l, r) = (weighted(left, db), weighted(right, db));
            let (li, ri) = (l.position(left_key), r.position(right_key));
            let (nl, nr) = (norms(&l, li), norms(&r, ri));
            let mut rows = Vec::new();
            for (lrow, wl) in &l.rows {
                for (rrow, wr) in &r.rows {
                    if key(&lrow[li]) == key(&rrow[ri]) {
                        let k = key(&lrow[li]);
                        let mut joined = lrow.clone();
                        joined.extend(rrow.iter().cloned());
                        rows.push((joined, wl * wr / (nl[&k] + nr[&k])));
                    }
                }
            }
            let mut cols = l.cols.clone();
            cols.extend(r.cols.iter().cloned());
            Weighted { cols, rows }
        }
        other => panic!("oracle does not evaluate {}", other.kind_name()),
    }
}

/// Weighted count of a counting query: one row per group, group values
/// followed by the summed weight.
pub fn weighted_count(q: &QueryExpr, db: &Database) -> Vec<Vec<Value>> {
    let RelExpr::Aggregate { func: Aggregation::Count, group_by, input, .. } = &q.top else {
        panic!("weighted count needs a COUNT(*) query");
    };
    let rel = weighted(input, db);
    let idx: Vec<usize> = group_by.iter().map(|g| rel.position(g)).collect();
    let mut groups: Vec<(Vec<Value>, f64)> = Vec::new();
    for (row, w) in &rel.rows {
        let k: Vec<Value> = idx.iter().map(|&i| row[i].clone()).collect();
        match groups.iter_mut().find(|(g, _)| g == &k) {
            Some((_, total)) => *total += w,
            None => groups.push((k, *w)),
        }
    }
    if group_by.is_empty() && groups.is_empty() {
        groups.push((Vec::new(), 0.0));
    }
    groups
        .into_iter()
        .map(|(mut k, w)| {
            k.push(Value::Real(w));
            k
        })
        .collect()
}

/// Winsorized mean over the widened interquartile range, with quantiles by
/// linear interpolation.
pub fn winsorized(answers: &[f64]) -> f64 {
    let mut s = answers.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (s.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(s.len() - 1);
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    let (q1, q3) = (q(0.25), q(0.75));
    let (lo, hi) = (q1 - (q3 - q1), q3 + (q3 - q1));
    answers.iter().map(|v| v.clamp(lo, hi)).sum::<f64>() / answers.len() as f64
}

/// Pre-noise answer of an ungrouped query under subsampling: protected
/// base row `i` (1-based) goes to part `i mod parts`; each nonempty part
/// answers the original query; counts and sums are scaled by `parts` and
/// padded with zeros for empty parts.
pub fn subsampled(q: &QueryExpr, db: &Database, protected: &str, parts: u64) -> f64 {
    let RelExpr::Aggregate { func, group_by, input, .. } = &q.top else { panic!("not an aggregation") };
    assert!(group_by.is_empty());
    let additive = matches!(func, Aggregation::Count | Aggregation::Sum(_));
    let mut answers = Vec::new();
    for part in 0..parts {
        let mut sub = db.clone();
        let t = sub.get_mut(protected).unwrap();
        t.rows = t.rows.iter().enumerate().filter(|(i, _)| (*i as u64 + 1) % parts == part).map(|(_, r)| r.clone()).collect();
        let mut rng = RandomSource::zero_noise();
        if eval(input, &sub, &mut rng).unwrap().is_empty() {
            continue;
        }
        let out = eval_query(q, &sub, &mut rng).unwrap();
        let v = number(&out.rows[0][0]);
        answers.push(if additive { v * parts as f64 } else { v });
    }
    if additive {
        answers.resize(parts as usize, 0.0);
    }
    winsorized(&answers)
}

/// Adds a zero-count row for every value of `domain` missing from the
/// single grouping column of `rows`.
pub fn complete(rows: &[Vec<Value>], domain: &[Value]) -> Vec<Vec<Value>> {
    let mut out: Vec<Vec<Value>> = rows.iter().filter(|r| domain.iter().any(|d| key(d) == key(&r[0]))).cloned().collect();
    for d in domain {
        if !rows.iter().any(|r| key(&r[0]) == key(d)) {
            out.push(vec![d.clone(), Value::Int(0)]);
        }
    }
    out
}

/// Distinct values of the domain source of a grouping column.
pub fn domain_of(catalog: &Catalog, db: &Database, table: &str, column: &str) -> Vec<Value> {
    let src = catalog.domain_source(table, column).unwrap_or_else(|| panic!("{table}.{column} has no domain source"));
    let mut vals: Vec<Value> = Vec::new();
    for v in db[&src.table].column(&src.column).unwrap() {
        if !vals.contains(v) {
            vals.push(v.clone());
        }
    }
    vals
}

/// Rows as comparable strings, numbers rendered as reals, sorted.
pub fn canonical(rows: &[Vec<Value>]) -> Vec<String> {
    let mut out: Vec<String> = rows.iter().map(|r| r.iter().map(key).collect::<Vec<_>>().join("|")).collect();
    out.sort();
    out
}
