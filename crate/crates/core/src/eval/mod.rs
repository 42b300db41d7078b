//! In-memory reference executor for the relational algebra.
//!
//! Bag semantics throughout. Randomness is drawn from a [`RandomSource`]
//! in row-major order: rows of a projection are processed in input order
//! and, within a row, attributes left to right.

mod data;
mod random;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::algebra::{
    node_schema, AggregatorPlan, Aggregation, AlgebraError, AttrExpr, Attribute, BinaryOp, CmpOp,
    ColumnRef, JoinKind, Literal, QueryExpr, RelExpr, Schema, ValueExpr,
};

pub use data::{load_csv, load_database};
pub use random::RandomSource;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
    Bool(bool),
    /// Only produced for the unmatched side of a right-outer join.
    Null,
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Total order used for sorting group keys: nulls, booleans, numbers,
    /// strings.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Bool(_) => 1,
                Value::Int(_) | Value::Real(_) => 2,
                Value::Str(_) => 3,
            }
        }
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (a, b) if rank(a) == 2 && rank(b) == 2 => {
                a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap())
            }
            (a, b) => rank(a).cmp(&rank(b)),
        }
    }

    /// Numeric values compare by value regardless of integer or real
    /// representation.
    pub fn same(&self, other: &Value) -> bool {
        match (self.as_f64(), other.as_f64()) {
            (Some(a), Some(b)) => a == b,
            _ => self == other,
        }
    }

    fn key(&self) -> Key {
        match self {
            Value::Int(v) => Key::Num((*v as f64 + 0.0).to_bits()),
            Value::Real(v) => Key::Num((*v + 0.0).to_bits()),
            Value::Str(s) => Key::Str(s.clone()),
            Value::Bool(b) => Key::Bool(*b),
            Value::Null => Key::Null,
        }
    }
}

impl From<&Literal> for Value {
    fn from(l: &Literal) -> Self {
        match l {
            Literal::Int(v) => Value::Int(*v),
            Literal::Real(v) => Value::Real(*v),
            Literal::Str(s) => Value::Str(s.clone()),
            Literal::Bool(b) => Value::Bool(*b),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Null => f.write_str("NULL"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Key {
    Num(u64),
    Str(String),
    Bool(bool),
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Self {
        Table { schema, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of the column with the given bare name.
    pub fn column(&self, name: &str) -> Option<Vec<&Value>> {
        let i = self.schema.attrs.iter().position(|a| a.name == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }
}

pub type Database = BTreeMap<String, Table>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("null value reaches {node} at row {row}")]
    Null { node: &'static str, row: usize },
    #[error("ln of nonpositive value {value} at row {row}")]
    LnDomain { value: f64, row: usize },
    #[error("division by zero at row {row}")]
    DivisionByZero { row: usize },
    #[error("integer overflow at row {row}")]
    Overflow { row: usize },
    #[error("type error in {node} at row {row}: {detail}")]
    Type { node: &'static str, row: usize, detail: String },
    #[error("{func} over an empty input")]
    EmptyAggregate { func: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: header {found:?} does not match schema {expected:?}")]
    Header { path: String, expected: Vec<String>, found: Vec<String> },
    #[error("{path}: row {row}, column '{column}': {message}")]
    Csv { path: String, row: usize, column: String, message: String },
}

/// Evaluates a query. Nulls may not reach the final output.
pub fn eval_query(q: &QueryExpr, db: &Database, rng: &mut RandomSource) -> Result<Table, EvalError> {
    let out = eval(&q.top, db, rng)?;
    for (row, r) in out.rows.iter().enumerate() {
        if r.iter().any(Value::is_null) {
            return Err(EvalError::Null { node: "output", row });
        }
    }
    Ok(out)
}

pub fn eval(expr: &RelExpr, db: &Database, rng: &mut RandomSource) -> Result<Table, EvalError> {
    let inputs = expr
        .children()
        .into_iter()
        .map(|c| eval(c, db, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let schemas: Vec<Schema> = inputs.iter().map(|t| t.schema.clone()).collect();
    let schema = node_schema(expr, &schemas, &|name| base_schema(db, name))?;
    let node = expr.kind_name();
    let mut inputs = inputs.into_iter();
    let rows = match expr {
        RelExpr::Table(name) => db[name.as_str()].rows.clone(),
        RelExpr::Bins { values, .. } => values.iter().map(|v| vec![Value::from(v)]).collect(),
        RelExpr::Join { left_key, right_key, kind, .. } => {
            let l = inputs.next().unwrap();
            let r = inputs.next().unwrap();
            join(&l, &r, left_key, right_key, *kind, node)?
        }
        RelExpr::Project { attrs, .. } => {
            let input = inputs.next().unwrap();
            let ctx = Ctx { schema: &input.schema, node };
            let mut out = Vec::with_capacity(input.rows.len());
            for (i, row) in input.rows.iter().enumerate() {
                let mut o = Vec::with_capacity(attrs.len());
                for a in attrs {
                    o.push(match a {
                        AttrExpr::Column(c) => row[ctx.resolve(c)?].clone(),
                        AttrExpr::Named { value, .. } => ctx.value(value, row, i, rng)?,
                    });
                }
                out.push(o);
            }
            out
        }
        RelExpr::Select { predicate, .. } => {
            let input = inputs.next().unwrap();
            let ctx = Ctx { schema: &input.schema, node };
            let mut out = Vec::new();
            for (i, row) in input.rows.into_iter().enumerate() {
                let l = ctx.value(&predicate.left, &row, i, rng)?;
                let r = ctx.value(&predicate.right, &row, i, rng)?;
                if compare(&l, predicate.op, &r, node, i)? {
                    out.push(row);
                }
            }
            out
        }
        RelExpr::Aggregate { func, group_by, .. } => {
            let input = inputs.next().unwrap();
            aggregate(&input, func, group_by, node)?
        }
        RelExpr::SubsampleAggregate { plan, group_by, subsample, value, .. } => {
            let input = inputs.next().unwrap();
            subsample_aggregate(&input, plan, group_by, subsample, value, node)?
        }
    };
    Ok(Table { schema, rows })
}

fn base_schema(db: &Database, name: &str) -> Result<Schema, AlgebraError> {
    let t = db.get(name).ok_or_else(|| AlgebraError::UnknownTable { table: name.to_string() })?;
    Ok(Schema {
        attrs: t
            .schema
            .attrs
            .iter()
            .map(|a| Attribute { qualifier: Some(name.to_string()), name: a.name.clone(), ty: a.ty })
            .collect(),
    })
}

struct Ctx<'a> {
    schema: &'a Schema,
    node: &'static str,
}

impl Ctx<'_> {
    fn resolve(&self, c: &ColumnRef) -> Result<usize, EvalError> {
        Ok(self.schema.resolve(c, self.node)?)
    }

    fn value(&self, e: &ValueExpr, row: &[Value], i: usize, rng: &mut RandomSource) -> Result<Value, EvalError> {
        let node = self.node;
        let num = |v: Value| -> Result<Value, EvalError> {
            match v {
                Value::Int(_) | Value::Real(_) => Ok(v),
                Value::Null => Err(EvalError::Null { node, row: i }),
                other => Err(EvalError::Type { node, row: i, detail: format!("{other} is not numeric") }),
            }
        };
        Ok(match e {
            ValueExpr::Column(c) => row[self.resolve(c)?].clone(),
            ValueExpr::Literal(l) => Value::from(l),
            ValueExpr::Binary { op, left, right } => {
                let l = num(self.value(left, row, i, rng)?)?;
                let r = num(self.value(right, row, i, rng)?)?;
                arith(*op, l, r, i)?
            }
            ValueExpr::Rand => Value::Real(rng.draw()),
            ValueExpr::RandInt(n) => Value::Int(rng.draw_int(*n) as i64),
            ValueExpr::RowNumber => Value::Int(i as i64 + 1),
            ValueExpr::Ln(v) => {
                let x = num(self.value(v, row, i, rng)?)?.as_f64().unwrap();
                if x <= 0.0 {
                    return Err(EvalError::LnDomain { value: x, row: i });
                }
                Value::Real(x.ln())
            }
            ValueExpr::Abs(v) => match num(self.value(v, row, i, rng)?)? {
                Value::Int(x) => Value::Int(x.checked_abs().ok_or(EvalError::Overflow { row: i })?),
                Value::Real(x) => Value::Real(x.abs()),
                _ => unreachable!(),
            },
            ValueExpr::Sign(v) => match num(self.value(v, row, i, rng)?)? {
                Value::Int(x) => Value::Int(x.signum()),
                Value::Real(x) => Value::Real(if x == 0.0 { 0.0 } else { x.signum() }),
                _ => unreachable!(),
            },
            ValueExpr::Coalesce(v, default) => match self.value(v, row, i, rng)? {
                Value::Null => Value::from(default),
                other => other,
            },
        })
    }
}

fn arith(op: BinaryOp, l: Value, r: Value, row: usize) -> Result<Value, EvalError> {
    let overflow = EvalError::Overflow { row };
    if let BinaryOp::Div = op {
        let (a, b) = (l.as_f64().unwrap(), r.as_f64().unwrap());
        if b == 0.0 {
            return Err(EvalError::DivisionByZero { row });
        }
        return Ok(Value::Real(a / b));
    }
    Ok(match (l, r) {
        (Value::Int(a), Value::Int(b)) => Value::Int(match op {
            BinaryOp::Add => a.checked_add(b).ok_or(overflow)?,
            BinaryOp::Sub => a.checked_sub(b).ok_or(overflow)?,
            BinaryOp::Mul => a.checked_mul(b).ok_or(overflow)?,
            BinaryOp::Mod => {
                if b == 0 {
                    return Err(EvalError::DivisionByZero { row });
                }
                a % b
            }
            BinaryOp::Div => unreachable!(),
        }),
        (l, r) => {
            let (a, b) = (l.as_f64().unwrap(), r.as_f64().unwrap());
            Value::Real(match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Mod => {
                    if b == 0.0 {
                        return Err(EvalError::DivisionByZero { row });
                    }
                    a % b
                }
                BinaryOp::Div => unreachable!(),
            })
        }
    })
}

fn compare(l: &Value, op: CmpOp, r: &Value, node: &'static str, row: usize) -> Result<bool, EvalError> {
    if l.is_null() || r.is_null() {
        return Err(EvalError::Null { node, row });
    }
    let ord = match (l, r) {
        (Value::Str(_), Value::Str(_)) | (Value::Bool(_), Value::Bool(_)) => l.total_cmp(r),
        _ if l.as_f64().is_some() && r.as_f64().is_some() => l.total_cmp(r),
        _ => {
            return Err(EvalError::Type { node, row, detail: format!("cannot compare {l} with {r}") })
        }
    };
    Ok(match op {
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Ge => ord != Ordering::Less,
        CmpOp::Gt => ord == Ordering::Greater,
    })
}

fn join(
    l: &Table,
    r: &Table,
    left_key: &ColumnRef,
    right_key: &ColumnRef,
    kind: JoinKind,
    node: &'static str,
) -> Result<Vec<Vec<Value>>, EvalError> {
    let li = l.schema.resolve(left_key, node)?;
    let ri = r.schema.resolve(right_key, node)?;
    let mut out = Vec::new();
    match kind {
        JoinKind::Inner => {
            let mut index: HashMap<Key, Vec<usize>> = HashMap::new();
            for (j, row) in r.rows.iter().enumerate() {
                if !row[ri].is_null() {
                    index.entry(row[ri].key()).or_default().push(j);
                }
            }
            for row in &l.rows {
                if row[li].is_null() {
                    continue;
                }
                for &j in index.get(&row[li].key()).into_iter().flatten() {
                    let mut o = row.clone();
                    o.extend(r.rows[j].iter().cloned());
                    out.push(o);
                }
            }
        }
        JoinKind::RightOuter => {
            let mut index: HashMap<Key, Vec<usize>> = HashMap::new();
            for (j, row) in l.rows.iter().enumerate() {
                if !row[li].is_null() {
                    index.entry(row[li].key()).or_default().push(j);
                }
            }
            for row in &r.rows {
                let matches = if row[ri].is_null() { None } else { index.get(&row[ri].key()) };
                match matches {
                    Some(js) => {
                        for &j in js {
                            let mut o = l.rows[j].clone();
                            o.extend(row.iter().cloned());
                            out.push(o);
                        }
                    }
                    None => {
                        let mut o = vec![Value::Null; l.schema.len()];
                        o.extend(row.iter().cloned());
                        out.push(o);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Groups rows by the given columns. Groups come back sorted by key; with
/// no grouping columns there is exactly one (possibly empty) group.
fn groups<'a>(
    input: &'a Table,
    group_by: &[ColumnRef],
    node: &'static str,
) -> Result<(Vec<usize>, Vec<Vec<&'a Vec<Value>>>), EvalError> {
    let idx = group_by
        .iter()
        .map(|g| input.schema.resolve(g, node))
        .collect::<Result<Vec<_>, _>>()?;
    if idx.is_empty() {
        return Ok((idx, vec![input.rows.iter().collect()]));
    }
    let mut slot: HashMap<Vec<Key>, usize> = HashMap::new();
    let mut out: Vec<Vec<&Vec<Value>>> = Vec::new();
    for (row_no, row) in input.rows.iter().enumerate() {
        if idx.iter().any(|&i| row[i].is_null()) {
            return Err(EvalError::Null { node, row: row_no });
        }
        let key: Vec<Key> = idx.iter().map(|&i| row[i].key()).collect();
        let n = out.len();
        let s = *slot.entry(key).or_insert(n);
        if s == n {
            out.push(Vec::new());
        }
        out[s].push(row);
    }
    out.sort_by(|a, b| {
        idx.iter()
            .map(|&i| a[0][i].total_cmp(&b[0][i]))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    Ok((idx, out))
}

fn numeric_column(rows: &[&Vec<Value>], i: usize, node: &'static str) -> Result<Vec<f64>, EvalError> {
    rows.iter()
        .enumerate()
        .map(|(row, r)| match &r[i] {
            Value::Null => Err(EvalError::Null { node, row }),
            v => v.as_f64().ok_or_else(|| EvalError::Type { node, row, detail: format!("{v} is not numeric") }),
        })
        .collect()
}

fn aggregate(
    input: &Table,
    func: &Aggregation,
    group_by: &[ColumnRef],
    node: &'static str,
) -> Result<Vec<Vec<Value>>, EvalError> {
    let (idx, groups) = groups(input, group_by, node)?;
    let col = func.column().map(|c| input.schema.resolve(c, node)).transpose()?;
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let mut row: Vec<Value> = match g.first() {
            Some(first) => idx.iter().map(|&i| first[i].clone()).collect(),
            None => Vec::new(),
        };
        let v = match func {
            Aggregation::Count => Value::Int(g.len() as i64),
            Aggregation::CountDistinct(_) => {
                let i = col.unwrap();
                let mut seen = HashSet::new();
                for (row_no, r) in g.iter().enumerate() {
                    if r[i].is_null() {
                        return Err(EvalError::Null { node, row: row_no });
                    }
                    seen.insert(r[i].key());
                }
                Value::Int(seen.len() as i64)
            }
            Aggregation::Sum(_) => {
                let i = col.unwrap();
                if input.schema.attrs[i].ty == crate::algebra::ScalarType::Int {
                    let mut acc: i64 = 0;
                    for (row_no, r) in g.iter().enumerate() {
                        match &r[i] {
                            Value::Int(v) => {
                                acc = acc.checked_add(*v).ok_or(EvalError::Overflow { row: row_no })?
                            }
                            _ => return Err(EvalError::Null { node, row: row_no }),
                        }
                    }
                    Value::Int(acc)
                } else {
                    Value::Real(numeric_column(&g, i, node)?.iter().sum())
                }
            }
            Aggregation::Avg(_) => {
                let xs = numeric_column(&g, col.unwrap(), node)?;
                if xs.is_empty() {
                    return Err(EvalError::EmptyAggregate { func: "AVG".into() });
                }
                Value::Real(xs.iter().sum::<f64>() / xs.len() as f64)
            }
            Aggregation::Median(_) => {
                let mut xs = numeric_column(&g, col.unwrap(), node)?;
                if xs.is_empty() {
                    return Err(EvalError::EmptyAggregate { func: "MEDIAN".into() });
                }
                xs.sort_by(f64::total_cmp);
                Value::Real(quantile(&xs, 0.5))
            }
        };
        row.push(v);
        out.push(row);
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted data (the `PERCENTILE_CONT`
/// definition).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Result of combining subsample answers with the Winsorized mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WinsorizedMean {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub noise_scale: f64,
}

/// Clamps `answers` to the widened interquartile range and averages them.
/// `answers` must be nonempty.
pub fn winsorized_mean(answers: &[f64], epsilon: f64, floor_width: f64) -> WinsorizedMean {
    let mut sorted = answers.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let (lo, hi) = (q1 - (q3 - q1), q3 + (q3 - q1));
    let mean = answers.iter().map(|v| v.clamp(lo, hi)).sum::<f64>() / answers.len() as f64;
    let noise_scale = (hi - lo).max(floor_width) / (answers.len() as f64 * epsilon);
    WinsorizedMean { mean, lo, hi, noise_scale }
}

fn subsample_aggregate(
    input: &Table,
    plan: &AggregatorPlan,
    group_by: &[ColumnRef],
    subsample: &ColumnRef,
    value: &ColumnRef,
    node: &'static str,
) -> Result<Vec<Vec<Value>>, EvalError> {
    let (idx, groups) = groups(input, group_by, node)?;
    let vi = input.schema.resolve(value, node)?;
    input.schema.resolve(subsample, node)?;
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let mut answers: Vec<f64> =
            numeric_column(&g, vi, node)?.into_iter().map(|v| v * plan.scale).collect();
        if plan.zero_fill {
            answers.resize(answers.len().max(plan.subsamples as usize), 0.0);
        }
        if answers.is_empty() {
            return Err(EvalError::EmptyAggregate { func: "subsample aggregator".into() });
        }
        let mut row: Vec<Value> = match g.first() {
            Some(first) => idx.iter().map(|&i| first[i].clone()).collect(),
            None => Vec::new(),
        };
        match &plan.winsorize {
            None => row.push(Value::Real(answers.iter().sum::<f64>() / answers.len() as f64)),
            Some(w) => {
                let m = winsorized_mean(&answers, w.epsilon, w.floor_width);
                row.push(Value::Real(m.mean));
                row.push(Value::Real(m.noise_scale));
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Databases at distance one from `db`: every removal of one protected
/// row, followed by every addition of one row from `pool`.
pub fn neighbors<'a>(
    db: &'a Database,
    protected: &'a str,
    pool: &'a [Vec<Value>],
) -> impl Iterator<Item = Database> + 'a {
    let n = db.get(protected).map(|t| t.rows.len()).unwrap_or(0);
    let removals = (0..n).map(move |i| {
        let mut d = db.clone();
        d.get_mut(protected).unwrap().rows.remove(i);
        d
    });
    let additions = pool.iter().map(move |row| {
        let mut d = db.clone();
        if let Some(t) = d.get_mut(protected) {
            t.rows.push(row.clone());
        }
        d
    });
    removals.chain(additions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{Predicate, ScalarType};

    fn attr(name: &str, ty: ScalarType) -> Attribute {
        Attribute { qualifier: None, name: name.into(), ty }
    }

    fn trips(city_ids: &[i64]) -> Database {
        let schema = Schema { attrs: vec![attr("city_id", ScalarType::Int), attr("distance", ScalarType::Real)] };
        let rows = city_ids
            .iter()
            .enumerate()
            .map(|(i, c)| vec![Value::Int(*c), Value::Real(10.0 * i as f64)])
            .collect();
        let cities = Schema { attrs: vec![attr("city_id", ScalarType::Int)] };
        let mut db = Database::new();
        db.insert("trips".into(), Table::new(schema, rows));
        db.insert(
            "cities".into(),
            Table::new(cities, (1..=5).map(|c| vec![Value::Int(c)]).collect()),
        );
        db
    }

    #[test]
    fn count_five_rows() {
        let db = trips(&[1, 1, 2, 3, 3]);
        let t = eval(&RelExpr::count(RelExpr::table("trips")), &db, &mut RandomSource::zero_noise()).unwrap();
        assert_eq!(t.rows, vec![vec![Value::Int(5)]]);
    }

    #[test]
    fn count_of_empty_is_zero_row() {
        let db = trips(&[]);
        let t = eval(&RelExpr::count(RelExpr::table("trips")), &db, &mut RandomSource::zero_noise()).unwrap();
        assert_eq!(t.rows, vec![vec![Value::Int(0)]]);
        let g = RelExpr::grouped_count(vec![ColumnRef::new("city_id")], RelExpr::table("trips"));
        assert!(eval(&g, &db, &mut RandomSource::zero_noise()).unwrap().rows.is_empty());
    }

    #[test]
    fn grouped_count_sorted_by_key() {
        let db = trips(&[3, 1, 3, 2, 1, 3]);
        let g = RelExpr::grouped_count(vec![ColumnRef::new("city_id")], RelExpr::table("trips"));
        let t = eval(&g, &db, &mut RandomSource::zero_noise()).unwrap();
        let want: Vec<Vec<Value>> =
            [(1, 2), (2, 1), (3, 3)].iter().map(|(k, c)| vec![Value::Int(*k), Value::Int(*c)]).collect();
        assert_eq!(t.rows, want);
    }

    #[test]
    fn selection_filters() {
        let db = trips(&[1, 1, 2, 3, 3]);
        let q = RelExpr::count(RelExpr::select(
            Predicate::new(ValueExpr::col(ColumnRef::new("distance")), CmpOp::Gt, ValueExpr::int(15)),
            RelExpr::table("trips"),
        ));
        let t = eval(&q, &db, &mut RandomSource::zero_noise()).unwrap();
        assert_eq!(t.rows, vec![vec![Value::Int(3)]]);
    }

    #[test]
    fn right_join_keeps_unmatched_with_nulls() {
        let db = trips(&[1, 1, 3]);
        let q = RelExpr::Join {
            left: Box::new(RelExpr::grouped_count(vec![ColumnRef::new("city_id")], RelExpr::table("trips"))),
            right: Box::new(RelExpr::table("cities")),
            left_key: ColumnRef::qualified("trips", "city_id"),
            right_key: ColumnRef::qualified("cities", "city_id"),
            kind: JoinKind::RightOuter,
        };
        let t = eval(&q, &db, &mut RandomSource::zero_noise()).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.rows[1], vec![Value::Null, Value::Null, Value::Int(2)]);
        assert_eq!(t.rows[0], vec![Value::Int(1), Value::Int(2), Value::Int(1)]);
    }

    #[test]
    fn ln_of_zero_is_an_error() {
        let db = trips(&[1]);
        let q = RelExpr::project(
            vec![AttrExpr::named("x", ValueExpr::ln(ValueExpr::int(0)))],
            RelExpr::table("trips"),
        );
        assert!(matches!(eval(&q, &db, &mut RandomSource::zero_noise()), Err(EvalError::LnDomain { .. })));
    }

    #[test]
    fn division_yields_real() {
        let db = trips(&[1]);
        let q = RelExpr::project(
            vec![AttrExpr::named("x", ValueExpr::div(ValueExpr::int(1), ValueExpr::int(3)))],
            RelExpr::table("trips"),
        );
        let t = eval(&q, &db, &mut RandomSource::zero_noise()).unwrap();
        assert_eq!(t.rows[0][0], Value::Real(1.0 / 3.0));
    }

    #[test]
    fn row_number_is_one_based() {
        let db = trips(&[4, 4, 4]);
        let q = RelExpr::project(vec![AttrExpr::named("n", ValueExpr::RowNumber)], RelExpr::table("trips"));
        let t = eval(&q, &db, &mut RandomSource::zero_noise()).unwrap();
        assert_eq!(t.column("n").unwrap(), vec![&Value::Int(1), &Value::Int(2), &Value::Int(3)]);
    }

    #[test]
    fn median_and_quantiles() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn winsorized_mean_clamps_outliers() {
        let mut xs = vec![10.0; 9];
        xs.push(1000.0);
        xs[0] = 9.0;
        let m = winsorized_mean(&xs, 1.0, 0.0);
        assert!(m.hi < 1000.0);
        assert!((m.mean - 10.0).abs() < 0.2);
    }

    #[test]
    fn winsorized_mean_degenerate_range_uses_floor() {
        let m = winsorized_mean(&[17.0; 40], 0.5, 1.0);
        assert_eq!(m.mean, 17.0);
        assert_eq!(m.noise_scale, 1.0 / (40.0 * 0.5));
    }

    #[test]
    fn neighbor_counts() {
        let db = trips(&[1, 2, 3, 4]);
        assert_eq!(neighbors(&db, "trips", &[]).count(), 4);
        let pool = vec![vec![Value::Int(9), Value::Real(1.0)], vec![Value::Int(8), Value::Real(2.0)]];
        assert_eq!(neighbors(&db, "trips", &pool).count(), 6);
        assert_eq!(neighbors(&trips(&[]), "trips", &[]).count(), 0);
    }
}
