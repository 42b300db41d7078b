//! Core relational algebra for statistical queries.
//!
//! Relations are built from base tables with equijoins, projections,
//! selections and grouped aggregation. Attribute expressions cover
//! arithmetic plus the primitives needed to embed noise into a query
//! (`rand`, `randInt`, `ln`, `abs`, `sign`).
//!
//! A few node kinds exist only as the output of rewrite rules: right-outer
//! joins and `coalesce` (histogram bin completion), inline bin lists, and
//! the subsample aggregator used by Sample & Aggregate. They are rejected
//! by [`validate_query`] when they appear in an original query.

mod catalog;
mod schema;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use catalog::{Catalog, CatalogError, ColumnDef, DomainSource, JoinCap, TableDef};
pub use schema::{logical_outputs, schema_of, type_of, AlgebraError, Attribute, Schema};
pub(crate) use schema::node_schema;
pub use validate::{features_of, validate_query, Feature, ValidationFailure, ValidationReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    Int,
    Real,
    #[serde(alias = "text")]
    String,
    #[serde(alias = "bool")]
    Boolean,
}

impl ScalarType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ScalarType::Int | ScalarType::Real)
    }

    /// Two types can be compared or joined on.
    pub fn comparable(self, other: ScalarType) -> bool {
        self == other || (self.is_numeric() && other.is_numeric())
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScalarType::Int => "int",
            ScalarType::Real => "real",
            ScalarType::String => "string",
            ScalarType::Boolean => "boolean",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    Int(i64),
    Real(f64),
    Str(String),
    Bool(bool),
}

impl Literal {
    pub fn scalar_type(&self) -> ScalarType {
        match self {
            Literal::Int(_) => ScalarType::Int,
            Literal::Real(_) => ScalarType::Real,
            Literal::Str(_) => ScalarType::String,
            Literal::Bool(_) => ScalarType::Boolean,
        }
    }

    /// Integral reals become integer literals so folded constants print
    /// without a trailing `.0`.
    pub fn number(v: f64) -> Literal {
        if v.fract() == 0.0 && v.abs() < 9.0e15 {
            Literal::Int(v as i64)
        } else {
            Literal::Real(v)
        }
    }
}

/// Reference to an attribute, optionally qualified by the base table it
/// originates from. Rewriters and the parser always produce resolved
/// references (qualifier filled in when the attribute has one).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

impl ColumnRef {
    pub fn new(name: impl Into<String>) -> Self {
        ColumnRef { qualifier: None, name: name.into() }
    }

    pub fn qualified(qualifier: impl Into<String>, name: impl Into<String>) -> Self {
        ColumnRef { qualifier: Some(qualifier.into()), name: name.into() }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{}.{}", q, self.name),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Mod => "%",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Mod => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValueExpr {
    Column(ColumnRef),
    Literal(Literal),
    Binary {
        op: BinaryOp,
        left: Box<ValueExpr>,
        right: Box<ValueExpr>,
    },
    /// Uniform real in (0, 1).
    Rand,
    /// Uniform integer in `[0, n)`.
    RandInt(u64),
    /// 1-based position of the row in its input, `ROW_NUMBER() OVER ()`.
    RowNumber,
    Ln(Box<ValueExpr>),
    Abs(Box<ValueExpr>),
    Sign(Box<ValueExpr>),
    /// Replaces an outer-join null with a literal default.
    Coalesce(Box<ValueExpr>, Literal),
}

impl ValueExpr {
    pub fn col(c: ColumnRef) -> Self {
        ValueExpr::Column(c)
    }

    pub fn lit(l: Literal) -> Self {
        ValueExpr::Literal(l)
    }

    pub fn int(v: i64) -> Self {
        ValueExpr::Literal(Literal::Int(v))
    }

    pub fn real(v: f64) -> Self {
        ValueExpr::Literal(Literal::Real(v))
    }

    pub fn binary(op: BinaryOp, left: ValueExpr, right: ValueExpr) -> Self {
        ValueExpr::Binary { op, left: Box::new(left), right: Box::new(right) }
    }

    pub fn add(l: ValueExpr, r: ValueExpr) -> Self {
        Self::binary(BinaryOp::Add, l, r)
    }

    pub fn sub(l: ValueExpr, r: ValueExpr) -> Self {
        Self::binary(BinaryOp::Sub, l, r)
    }

    pub fn mul(l: ValueExpr, r: ValueExpr) -> Self {
        Self::binary(BinaryOp::Mul, l, r)
    }

    pub fn div(l: ValueExpr, r: ValueExpr) -> Self {
        Self::binary(BinaryOp::Div, l, r)
    }

    pub fn ln(v: ValueExpr) -> Self {
        ValueExpr::Ln(Box::new(v))
    }

    pub fn abs(v: ValueExpr) -> Self {
        ValueExpr::Abs(Box::new(v))
    }

    pub fn sign(v: ValueExpr) -> Self {
        ValueExpr::Sign(Box::new(v))
    }

    /// Visits every column reference in the expression.
    pub fn columns(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let ValueExpr::Column(c) = e {
                out.push(c);
            }
        });
        out
    }

    /// True when evaluating the expression consumes randomness.
    pub fn is_random(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if matches!(e, ValueExpr::Rand | ValueExpr::RandInt(_)) {
                found = true;
            }
        });
        found
    }

    pub fn uses_row_number(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if matches!(e, ValueExpr::RowNumber) {
                found = true;
            }
        });
        found
    }

    pub fn has_coalesce(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if matches!(e, ValueExpr::Coalesce(..)) {
                found = true;
            }
        });
        found
    }

    fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a ValueExpr)) {
        f(self);
        match self {
            ValueExpr::Binary { left, right, .. } => {
                left.walk(f);
                right.walk(f);
            }
            ValueExpr::Ln(v) | ValueExpr::Abs(v) | ValueExpr::Sign(v) | ValueExpr::Coalesce(v, _) => {
                v.walk(f)
            }
            ValueExpr::Column(_)
            | ValueExpr::Literal(_)
            | ValueExpr::Rand
            | ValueExpr::RandInt(_)
            | ValueExpr::RowNumber => {}
        }
    }
}

/// One entry of a projection list: either a pass-through column or a new
/// named attribute computed from a value expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AttrExpr {
    Column(ColumnRef),
    Named { name: String, value: ValueExpr },
}

impl AttrExpr {
    pub fn named(name: impl Into<String>, value: ValueExpr) -> Self {
        AttrExpr::Named { name: name.into(), value }
    }

    pub fn output_name(&self) -> &str {
        match self {
            AttrExpr::Column(c) => &c.name,
            AttrExpr::Named { name, .. } => name,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub left: ValueExpr,
    pub op: CmpOp,
    pub right: ValueExpr,
}

impl Predicate {
    pub fn new(left: ValueExpr, op: CmpOp, right: ValueExpr) -> Self {
        Predicate { left, op, right }
    }

    pub fn columns(&self) -> Vec<&ColumnRef> {
        let mut cols = self.left.columns();
        cols.extend(self.right.columns());
        cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JoinKind {
    Inner,
    /// Only produced by histogram bin completion.
    RightOuter,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregation {
    Count,
    CountDistinct(ColumnRef),
    Sum(ColumnRef),
    /// Estimator marker, answerable only through Sample & Aggregate.
    Avg(ColumnRef),
    /// Estimator marker, answerable only through Sample & Aggregate.
    Median(ColumnRef),
}

impl Aggregation {
    /// Output attribute name when the query gives no alias.
    pub fn default_name(&self) -> String {
        match self {
            Aggregation::Count => "count".to_string(),
            Aggregation::CountDistinct(c) => format!("count_distinct_{}", c.name),
            Aggregation::Sum(c) => format!("sum_{}", c.name),
            Aggregation::Avg(c) => format!("avg_{}", c.name),
            Aggregation::Median(c) => format!("median_{}", c.name),
        }
    }

    pub fn column(&self) -> Option<&ColumnRef> {
        match self {
            Aggregation::Count => None,
            Aggregation::CountDistinct(c)
            | Aggregation::Sum(c)
            | Aggregation::Avg(c)
            | Aggregation::Median(c) => Some(c),
        }
    }

    pub fn kind(&self) -> AggregationKind {
        match self {
            Aggregation::Count => AggregationKind::Count,
            Aggregation::CountDistinct(_) => AggregationKind::CountDistinct,
            Aggregation::Sum(_) => AggregationKind::Sum,
            Aggregation::Avg(_) => AggregationKind::Avg,
            Aggregation::Median(_) => AggregationKind::Median,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationKind {
    Count,
    CountDistinct,
    Sum,
    Avg,
    Median,
}

impl AggregationKind {
    pub fn is_counting(self) -> bool {
        matches!(self, AggregationKind::Count | AggregationKind::CountDistinct)
    }
}

impl fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AggregationKind::Count => "count",
            AggregationKind::CountDistinct => "count-distinct",
            AggregationKind::Sum => "sum",
            AggregationKind::Avg => "avg",
            AggregationKind::Median => "median",
        };
        f.write_str(s)
    }
}

/// How the subsample aggregator combines per-subsample answers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatorPlan {
    /// Number of subsamples the input was split into.
    pub subsamples: u64,
    /// Multiplier applied to every subsample answer before combining.
    /// Counts and sums over one of `subsamples` parts are scaled back up.
    pub scale: f64,
    /// Treat subsamples with no rows as answering 0 (counts and sums).
    pub zero_fill: bool,
    /// `None` combines with a plain mean and adds no noise attribute.
    pub winsorize: Option<Winsorize>,
}

/// Widened Winsorized mean: clamp answers to the interquartile range
/// widened by its own width on both sides, then average. The aggregator
/// also outputs the Laplace scale `max(hi - lo, floor_width) / (m * epsilon)`
/// where `m` is the number of answers combined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Winsorize {
    pub epsilon: f64,
    pub floor_width: f64,
}

/// Name of the attribute carrying the per-row Laplace scale produced by the
/// Winsorized aggregator.
pub const NOISE_SCALE_ATTR: &str = "dp_noise_scale";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RelExpr {
    Table(String),
    Join {
        left: Box<RelExpr>,
        right: Box<RelExpr>,
        left_key: ColumnRef,
        right_key: ColumnRef,
        kind: JoinKind,
    },
    Project {
        attrs: Vec<AttrExpr>,
        input: Box<RelExpr>,
    },
    Select {
        predicate: Predicate,
        input: Box<RelExpr>,
    },
    Aggregate {
        func: Aggregation,
        group_by: Vec<ColumnRef>,
        alias: Option<String>,
        input: Box<RelExpr>,
    },
    /// Combines per-subsample answers (rows keyed by `group_by` plus
    /// `subsample`) into one row per group.
    SubsampleAggregate {
        plan: AggregatorPlan,
        group_by: Vec<ColumnRef>,
        subsample: ColumnRef,
        value: ColumnRef,
        output: String,
        input: Box<RelExpr>,
    },
    /// Inline list of histogram bins supplied by the analyst.
    Bins {
        column: String,
        ty: ScalarType,
        values: Vec<Literal>,
    },
}

/// Qualifier given to the attribute of an inline bin list.
pub const BINS_QUALIFIER: &str = "dp_bins";

impl RelExpr {
    pub fn table(name: impl Into<String>) -> Self {
        RelExpr::Table(name.into())
    }

    pub fn join(left: RelExpr, right: RelExpr, left_key: ColumnRef, right_key: ColumnRef) -> Self {
        RelExpr::Join {
            left: Box::new(left),
            right: Box::new(right),
            left_key,
            right_key,
            kind: JoinKind::Inner,
        }
    }

    pub fn project(attrs: Vec<AttrExpr>, input: RelExpr) -> Self {
        RelExpr::Project { attrs, input: Box::new(input) }
    }

    pub fn select(predicate: Predicate, input: RelExpr) -> Self {
        RelExpr::Select { predicate, input: Box::new(input) }
    }

    pub fn aggregate(func: Aggregation, group_by: Vec<ColumnRef>, input: RelExpr) -> Self {
        RelExpr::Aggregate { func, group_by, alias: None, input: Box::new(input) }
    }

    /// Aggregation whose output attribute is called `name`; the alias is
    /// only stored when it differs from the default name.
    pub fn aggregate_named(func: Aggregation, group_by: Vec<ColumnRef>, name: impl Into<String>, input: RelExpr) -> Self {
        let name = name.into();
        let alias = (name != func.default_name()).then_some(name);
        RelExpr::Aggregate { func, group_by, alias, input: Box::new(input) }
    }

    /// Name of the attribute an aggregation outputs.
    pub fn aggregate_output(&self) -> Option<String> {
        match self {
            RelExpr::Aggregate { func, alias, .. } => Some(alias.clone().unwrap_or_else(|| func.default_name())),
            _ => None,
        }
    }

    pub fn count(input: RelExpr) -> Self {
        Self::aggregate(Aggregation::Count, vec![], input)
    }

    pub fn grouped_count(group_by: Vec<ColumnRef>, input: RelExpr) -> Self {
        Self::aggregate(Aggregation::Count, group_by, input)
    }

    pub fn sum(column: ColumnRef, group_by: Vec<ColumnRef>, input: RelExpr) -> Self {
        Self::aggregate(Aggregation::Sum(column), group_by, input)
    }

    pub fn children(&self) -> Vec<&RelExpr> {
        match self {
            RelExpr::Table(_) | RelExpr::Bins { .. } => vec![],
            RelExpr::Join { left, right, .. } => vec![left, right],
            RelExpr::Project { input, .. }
            | RelExpr::Select { input, .. }
            | RelExpr::Aggregate { input, .. }
            | RelExpr::SubsampleAggregate { input, .. } => vec![input],
        }
    }

    /// Exact set of base tables referenced anywhere in the expression.
    pub fn referenced_tables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_tables(&mut out);
        out
    }

    fn collect_tables(&self, out: &mut BTreeSet<String>) {
        if let RelExpr::Table(t) = self {
            out.insert(t.clone());
        }
        for c in self.children() {
            c.collect_tables(out);
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RelExpr::Table(_) => "table",
            RelExpr::Join { kind: JoinKind::Inner, .. } => "join",
            RelExpr::Join { kind: JoinKind::RightOuter, .. } => "right-join",
            RelExpr::Project { .. } => "projection",
            RelExpr::Select { .. } => "selection",
            RelExpr::Aggregate { .. } => "aggregation",
            RelExpr::SubsampleAggregate { .. } => "subsample-aggregator",
            RelExpr::Bins { .. } => "bins",
        }
    }

    /// Counts nodes by [`RelExpr::kind_name`].
    pub fn node_counts(&self) -> std::collections::BTreeMap<&'static str, usize> {
        let mut out = std::collections::BTreeMap::new();
        self.count_kinds(&mut out);
        out
    }

    fn count_kinds(&self, out: &mut std::collections::BTreeMap<&'static str, usize>) {
        *out.entry(self.kind_name()).or_default() += 1;
        for c in self.children() {
            c.count_kinds(out);
        }
    }
}

pub fn referenced_tables(expr: &RelExpr) -> BTreeSet<String> {
    expr.referenced_tables()
}

/// Identifies the four supported mechanisms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismId {
    Elastic,
    Restricted,
    Wpinq,
    Saa,
}

impl MechanismId {
    pub const ALL: [MechanismId; 4] =
        [MechanismId::Elastic, MechanismId::Restricted, MechanismId::Wpinq, MechanismId::Saa];

    pub fn as_str(self) -> &'static str {
        match self {
            MechanismId::Elastic => "elastic",
            MechanismId::Restricted => "restricted",
            MechanismId::Wpinq => "wpinq",
            MechanismId::Saa => "saa",
        }
    }
}

impl fmt::Display for MechanismId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MechanismId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "elastic" => Ok(MechanismId::Elastic),
            "restricted" => Ok(MechanismId::Restricted),
            "wpinq" => Ok(MechanismId::Wpinq),
            "saa" => Ok(MechanismId::Saa),
            other => Err(format!("unknown mechanism '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Rewritten(MechanismId),
    /// Output of a single rewrite rule applied outside a mechanism.
    Intermediate,
}

/// A statistical query: a relation whose original form ends in an
/// aggregation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryExpr {
    pub top: RelExpr,
    pub provenance: Provenance,
}

impl QueryExpr {
    /// Builds an original query. Fails unless the outermost node is an
    /// aggregation.
    pub fn new(top: RelExpr) -> Result<Self, AlgebraError> {
        if !matches!(top, RelExpr::Aggregate { .. }) {
            return Err(AlgebraError::NotStatistical { node: top.kind_name().to_string() });
        }
        Ok(QueryExpr { top, provenance: Provenance::Original })
    }

    pub(crate) fn derived(top: RelExpr, provenance: Provenance) -> Self {
        QueryExpr { top, provenance }
    }

    /// Outermost aggregation, when the top node is one.
    pub fn aggregation(&self) -> Option<(&Aggregation, &[ColumnRef])> {
        match &self.top {
            RelExpr::Aggregate { func, group_by, .. } => Some((func, group_by)),
            _ => None,
        }
    }

    pub fn is_grouped(&self) -> bool {
        self.aggregation().map(|(_, g)| !g.is_empty()).unwrap_or(false)
    }
}
