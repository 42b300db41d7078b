//! Sensitivity of counting queries, computed by a dataflow pass over the
//! query and the catalog's join metadata.
//!
//! Both analyses track, for every relation, its stability (how many output
//! rows one protected row can affect) and a bound on how often each value
//! of each column occurs. Elastic sensitivity uses declared max
//! frequencies widened by the distance `k` on protected-derived relations;
//! restricted sensitivity uses declared join multiplicity caps.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::algebra::{
    AggregationKind, AlgebraError, AttrExpr, Catalog, ColumnRef, JoinCap, JoinKind, QueryExpr,
    RelExpr, ValueExpr,
};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SensitivityError {
    #[error("unsupported: {reason}")]
    Unsupported { reason: String },
    #[error("many-to-many join on {left} = {right}")]
    ManyToManyJoin { left: String, right: String },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

fn unsupported(reason: impl Into<String>) -> SensitivityError {
    SensitivityError::Unsupported { reason: reason.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityKind {
    ElasticSmooth,
    Restricted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub depth: usize,
    pub node: String,
    pub detail: String,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:indent$}{}: {}", "", self.node, self.detail, indent = 2 * self.depth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityResult {
    /// Sensitivity in units of the query output.
    pub value: f64,
    pub kind: SensitivityKind,
    pub trace: Vec<TraceEntry>,
    /// Smoothing parameter; 0 for restricted sensitivity.
    pub beta: f64,
    /// Last distance examined; 0 for restricted sensitivity.
    pub k_max: u64,
    /// Distance at which the smoothed maximum was attained.
    pub argmax_k: u64,
}

/// Frequency bound of one column, with the number of factors of the form
/// `mf + k` it contains.
#[derive(Clone, Copy, Debug)]
struct Bound {
    value: f64,
    degree: u32,
}

struct Rel {
    stability: f64,
    degree: u32,
    protected: bool,
    columns: Vec<(ColumnRef, Option<Bound>)>,
}

impl Rel {
    fn bound(&self, c: &ColumnRef) -> Option<Bound> {
        let exact = self.columns.iter().find(|(r, _)| r == c);
        let by_name = || self.columns.iter().find(|(r, _)| c.qualifier.is_none() && r.name == c.name);
        exact.or_else(by_name).and_then(|(_, b)| *b)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Analysis {
    Elastic { k: u64 },
    Restricted,
}

struct Analyzer<'a> {
    catalog: &'a Catalog,
    analysis: Analysis,
    trace: Vec<TraceEntry>,
}

impl Analyzer<'_> {
    fn note(&mut self, depth: usize, node: &str, detail: String) {
        self.trace.push(TraceEntry { depth, node: node.to_string(), detail });
    }

    fn base_bound(&self, table: &str, column: &str, protected: bool) -> Option<Bound> {
        match self.analysis {
            Analysis::Elastic { k } => self.catalog.max_frequency(table, column).map(|mf| {
                if protected {
                    Bound { value: (mf + k) as f64, degree: 1 }
                } else {
                    Bound { value: mf as f64, degree: 0 }
                }
            }),
            Analysis::Restricted => match self.catalog.join_cap(table, column) {
                JoinCap::Many => None,
                cap => cap.bound().map(|b| Bound { value: b as f64, degree: 0 }),
            },
        }
    }

    fn query(&mut self, q: &QueryExpr) -> Result<Rel, SensitivityError> {
        let RelExpr::Aggregate { func, group_by, input, .. } = &q.top else {
            return Err(unsupported(format!("outermost node is a {}", q.top.kind_name())));
        };
        if !func.kind().is_counting() {
            return Err(unsupported(format!("{} is not a counting aggregation", func.kind())));
        }
        let rel = self.rel(input, 1)?;
        let what = if func.kind() == AggregationKind::CountDistinct { "count distinct" } else { "count" };
        let grouping = if group_by.is_empty() { String::new() } else { ", per group".to_string() };
        self.note(0, "aggregation", format!("{what}{grouping}: sensitivity {}", rel.stability));
        if !rel.protected {
            return Err(unsupported("query does not reference the protected table"));
        }
        Ok(rel)
    }

    fn rel(&mut self, r: &RelExpr, depth: usize) -> Result<Rel, SensitivityError> {
        let at = self.trace.len();
        let out = match r {
            RelExpr::Table(t) => {
                let def = self.catalog.table(t).ok_or_else(|| AlgebraError::UnknownTable { table: t.clone() })?;
                let protected = def.protected;
                let columns = def
                    .columns
                    .iter()
                    .map(|c| (ColumnRef::qualified(t.clone(), c.name.clone()), self.base_bound(t, &c.name, protected)))
                    .collect();
                let stability = if protected { 1.0 } else { 0.0 };
                let role = if protected { "protected" } else { "public" };
                self.trace.insert(at, TraceEntry { depth, node: format!("table {t}"), detail: format!("{role}, stability {stability}") });
                return Ok(Rel { stability, degree: 0, protected, columns });
            }
            RelExpr::Select { input, .. } => {
                let rel = self.rel(input, depth + 1)?;
                self.trace.insert(at, TraceEntry { depth, node: "selection".into(), detail: format!("stability {}", rel.stability) });
                return Ok(rel);
            }
            RelExpr::Project { attrs, input } => {
                let rel = self.rel(input, depth + 1)?;
                let columns = attrs
                    .iter()
                    .map(|a| match a {
                        AttrExpr::Column(c) => (c.clone(), rel.bound(c)),
                        AttrExpr::Named { name, value: ValueExpr::Column(c) } => (ColumnRef::new(name.clone()), rel.bound(c)),
                        AttrExpr::Named { name, .. } => (ColumnRef::new(name.clone()), None),
                    })
                    .collect();
                self.trace.insert(at, TraceEntry { depth, node: "projection".into(), detail: format!("stability {}", rel.stability) });
                Rel { columns, ..rel }
            }
            RelExpr::Join { left, right, left_key, right_key, kind } => {
                if *kind != JoinKind::Inner {
                    return Err(unsupported("outer join"));
                }
                let l = self.rel(left, depth + 1)?;
                let r = self.rel(right, depth + 1)?;
                if l.protected && r.protected {
                    return Err(unsupported("both sides of a join reference the protected table"));
                }
                let lb = l.bound(left_key);
                let rb = r.bound(right_key);
                let missing = |c: &ColumnRef| match self.analysis {
                    Analysis::Elastic { .. } => unsupported(format!("no maxFrequency for join key {c}")),
                    Analysis::Restricted => SensitivityError::ManyToManyJoin {
                        left: left_key.to_string(),
                        right: right_key.to_string(),
                    },
                };
                if self.analysis == Analysis::Restricted && lb.is_none() && rb.is_none() {
                    return Err(missing(left_key));
                }
                // One protected row reaches at most stability(side) rows of
                // that side, each joining at most bound(other key) rows.
                let (stability, degree) = if r.stability > 0.0 {
                    let b = lb.ok_or_else(|| missing(left_key))?;
                    (b.value * r.stability, b.degree + r.degree)
                } else if l.stability > 0.0 {
                    let b = rb.ok_or_else(|| missing(right_key))?;
                    (b.value * l.stability, b.degree + l.degree)
                } else {
                    (0.0, 0)
                };
                let scale = |cols: Vec<(ColumnRef, Option<Bound>)>, by: Option<Bound>| {
                    cols.into_iter().map(move |(c, b)| {
                        let b = match (b, by) {
                            (Some(x), Some(y)) => Some(Bound { value: x.value * y.value, degree: x.degree + y.degree }),
                            _ => None,
                        };
                        (c, b)
                    })
                };
                let mut columns: Vec<_> = scale(l.columns, rb).collect();
                columns.extend(scale(r.columns, lb));
                let show = |b: Option<Bound>| b.map(|b| b.value.to_string()).unwrap_or_else(|| "unbounded".into());
                self.trace.insert(
                    at,
                    TraceEntry {
                        depth,
                        node: format!("join {left_key} = {right_key}"),
                        detail: format!(
                            "bounds {} / {}, stability max({} * {}, {} * {}) = {stability}",
                            show(lb),
                            show(rb),
                            show(lb),
                            r.stability,
                            show(rb),
                            l.stability
                        ),
                    },
                );
                return Ok(Rel { stability, degree, protected: l.protected || r.protected, columns });
            }
            RelExpr::Aggregate { .. } => return Err(unsupported("aggregation inside a subquery")),
            RelExpr::SubsampleAggregate { .. } | RelExpr::Bins { .. } => {
                return Err(unsupported(format!("{} is a rewrite artifact", r.kind_name())))
            }
        };
        Ok(out)
    }
}

/// Elastic sensitivity of a counting query at distance `k`.
pub fn elastic_sensitivity_at_k(q: &QueryExpr, catalog: &Catalog, k: u64) -> Result<f64, SensitivityError> {
    let mut a = Analyzer { catalog, analysis: Analysis::Elastic { k }, trace: Vec::new() };
    Ok(a.query(q)?.stability)
}

/// Smoothing parameter for an (epsilon, delta) guarantee.
pub fn smoothing_beta(epsilon: f64, delta: f64) -> f64 {
    epsilon / (2.0 * (2.0 / delta).ln())
}

/// Smooth upper bound `max_k exp(-beta k) * elastic_sensitivity_at_k(k)` over `k` in `0..=n`.
///
/// The elastic bound at distance `k` is a maximum of products with at most `d` factors `mf + k`
/// (`mf >= 1`), so for `k' > k` it is at most the bound at `k` times `((1+k')/(1+k))^d`.
/// That bound times `exp(-beta k')` decreases once `1 + k >= d / beta`,
/// which ends the scan.
pub fn smooth_elastic_sensitivity(
    q: &QueryExpr,
    catalog: &Catalog,
    epsilon: f64,
    delta: f64,
    db_size: u64,
) -> Result<SensitivityResult, SensitivityError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(unsupported(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(unsupported(format!("delta must be in (0, 1), got {delta}")));
    }
    let beta = smoothing_beta(epsilon, delta);
    let mut a = Analyzer { catalog, analysis: Analysis::Elastic { k: 0 }, trace: Vec::new() };
    let at_zero = a.query(q)?;
    let mut trace = a.trace;
    let degree = at_zero.degree;
    let stop = if degree == 0 { 0 } else { ((degree as f64 / beta - 1.0).ceil().max(0.0) as u64).min(db_size) };

    let (mut best, mut argmax) = (at_zero.stability, 0);
    for k in 1..=stop {
        let e = elastic_sensitivity_at_k(q, catalog, k)?;
        let smoothed = (-beta * k as f64).exp() * e;
        if smoothed > best {
            best = smoothed;
            argmax = k;
        }
    }
    trace.push(TraceEntry {
        depth: 0,
        node: "smoothing".into(),
        detail: format!("beta {beta:.6}, degree {degree}, scanned k 0..={stop}, max at k={argmax}: {best}"),
    });
    Ok(SensitivityResult { value: best, kind: SensitivityKind::ElasticSmooth, trace, beta, k_max: stop, argmax_k: argmax })
}

/// Sensitivity under the catalog's join multiplicity caps.
pub fn restricted_sensitivity(q: &QueryExpr, catalog: &Catalog) -> Result<SensitivityResult, SensitivityError> {
    let mut a = Analyzer { catalog, analysis: Analysis::Restricted, trace: Vec::new() };
    let rel = a.query(q)?;
    Ok(SensitivityResult {
        value: rel.stability,
        kind: SensitivityKind::Restricted,
        trace: a.trace,
        beta: 0.0,
        k_max: 0,
        argmax_k: 0,
    })
}

/// Join caps of every join in `expr`, as (left cap, right cap). Keys that
/// are not base-table columns are unbounded.
pub fn join_caps(expr: &RelExpr, catalog: &Catalog) -> Vec<(JoinCap, JoinCap)> {
    let mut out = Vec::new();
    collect_caps(expr, catalog, &mut out);
    out
}

fn collect_caps(expr: &RelExpr, catalog: &Catalog, out: &mut Vec<(JoinCap, JoinCap)>) {
    if let RelExpr::Join { left_key, right_key, .. } = expr {
        let cap = |c: &ColumnRef| match &c.qualifier {
            Some(t) if catalog.table(t).is_some() => catalog.join_cap(t, &c.name),
            _ => JoinCap::Many,
        };
        out.push((cap(left_key), cap(right_key)));
    }
    for c in expr.children() {
        collect_caps(c, catalog, out);
    }
}
