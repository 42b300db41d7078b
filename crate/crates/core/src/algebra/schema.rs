use std::collections::HashSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::{
    Aggregation, AttrExpr, BinaryOp, Catalog, ColumnRef, Predicate, RelExpr,
    ScalarType, ValueExpr, BINS_QUALIFIER, NOISE_SCALE_ATTR,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgebraError {
    #[error("unknown table '{table}'")]
    UnknownTable { table: String },
    #[error("unknown column '{column}' in {node}")]
    UnknownColumn { column: String, node: String },
    #[error("ambiguous column '{column}' in {node}")]
    AmbiguousColumn { column: String, node: String },
    #[error("type mismatch in {node}: {detail}")]
    TypeMismatch { node: String, detail: String },
    #[error("outermost node is a {node}, not an aggregation")]
    NotStatistical { node: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Attribute {
    pub qualifier: Option<String>,
    pub name: String,
    pub ty: ScalarType,
}

impl Attribute {
    pub fn column_ref(&self) -> ColumnRef {
        ColumnRef { qualifier: self.qualifier.clone(), name: self.name.clone() }
    }
}

/// Ordered output attributes of a relation.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize)]
pub struct Schema {
    pub attrs: Vec<Attribute>,
}

impl Schema {
    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.attrs.iter().map(|a| a.name.as_str()).collect()
    }

    /// Index of the attribute a reference denotes.
    pub fn resolve(&self, col: &ColumnRef, node: &str) -> Result<usize, AlgebraError> {
        let mut hits = self.attrs.iter().enumerate().filter(|(_, a)| {
            a.name == col.name
                && match &col.qualifier {
                    Some(q) => a.qualifier.as_deref() == Some(q.as_str()),
                    None => true,
                }
        });
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            (None, _) => Err(AlgebraError::UnknownColumn {
                column: col.to_string(),
                node: node.to_string(),
            }),
            (Some(_), Some(_)) => Err(AlgebraError::AmbiguousColumn {
                column: col.to_string(),
                node: node.to_string(),
            }),
        }
    }

    pub fn attr(&self, col: &ColumnRef, node: &str) -> Result<&Attribute, AlgebraError> {
        self.resolve(col, node).map(|i| &self.attrs[i])
    }

    /// Same attribute names in order, with integer and real treated as one
    /// numeric type. Noise turns integer counts into reals, which result
    /// sets do not distinguish.
    pub fn same_shape(&self, other: &Schema) -> bool {
        self.attrs.len() == other.attrs.len()
            && self.attrs.iter().zip(&other.attrs).all(|(a, b)| {
                a.name == b.name
                    && (a.ty == b.ty || (a.ty.is_numeric() && b.ty.is_numeric()))
            })
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, a) in self.attrs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "({},{})", a.name, a.ty)?;
        }
        f.write_str("]")
    }
}

fn mismatch(node: &str, detail: impl Into<String>) -> AlgebraError {
    AlgebraError::TypeMismatch { node: node.to_string(), detail: detail.into() }
}

/// Type of a value expression under a schema.
pub fn type_of(expr: &ValueExpr, schema: &Schema, node: &str) -> Result<ScalarType, AlgebraError> {
    Ok(match expr {
        ValueExpr::Column(c) => schema.attr(c, node)?.ty,
        ValueExpr::Literal(l) => l.scalar_type(),
        ValueExpr::Binary { op, left, right } => {
            let l = type_of(left, schema, node)?;
            let r = type_of(right, schema, node)?;
            if !l.is_numeric() || !r.is_numeric() {
                return Err(mismatch(node, format!("operator {} needs numeric operands", op.symbol())));
            }
            if let BinaryOp::Div = op {
                if let ValueExpr::Literal(lit) = right.as_ref() {
                    let zero = match lit {
                        super::Literal::Int(0) => true,
                        super::Literal::Real(v) => *v == 0.0,
                        _ => false,
                    };
                    if zero {
                        return Err(mismatch(node, "division by literal zero"));
                    }
                }
            }
            match op {
                BinaryOp::Div => ScalarType::Real,
                BinaryOp::Mod => {
                    if l != ScalarType::Int || r != ScalarType::Int {
                        return Err(mismatch(node, "modulo needs integer operands"));
                    }
                    ScalarType::Int
                }
                _ if l == ScalarType::Int && r == ScalarType::Int => ScalarType::Int,
                _ => ScalarType::Real,
            }
        }
        ValueExpr::Rand => ScalarType::Real,
        ValueExpr::RandInt(n) => {
            if *n == 0 {
                return Err(mismatch(node, "randInt needs a positive bound"));
            }
            ScalarType::Int
        }
        ValueExpr::RowNumber => ScalarType::Int,
        ValueExpr::Ln(v) => {
            numeric(type_of(v, schema, node)?, node, "ln")?;
            ScalarType::Real
        }
        ValueExpr::Abs(v) => numeric(type_of(v, schema, node)?, node, "abs")?,
        ValueExpr::Sign(v) => numeric(type_of(v, schema, node)?, node, "sign")?,
        ValueExpr::Coalesce(v, default) => {
            let t = type_of(v, schema, node)?;
            if !t.comparable(default.scalar_type()) {
                return Err(mismatch(node, "coalesce default has the wrong type"));
            }
            t
        }
    })
}

fn numeric(t: ScalarType, node: &str, what: &str) -> Result<ScalarType, AlgebraError> {
    if t.is_numeric() {
        Ok(t)
    } else {
        Err(mismatch(node, format!("{what} needs a numeric argument")))
    }
}

fn check_predicate(p: &Predicate, schema: &Schema, node: &str) -> Result<(), AlgebraError> {
    let l = type_of(&p.left, schema, node)?;
    let r = type_of(&p.right, schema, node)?;
    if !l.comparable(r) {
        return Err(mismatch(node, format!("cannot compare {l} with {r}")));
    }
    Ok(())
}

fn unique_names(attrs: &[Attribute], node: &str) -> Result<(), AlgebraError> {
    let mut seen = HashSet::new();
    for a in attrs {
        if !seen.insert(a.name.as_str()) {
            return Err(mismatch(node, format!("duplicate output attribute '{}'", a.name)));
        }
    }
    Ok(())
}

/// Output schema of a relation, type-checking every node on the way.
pub fn schema_of(expr: &RelExpr, catalog: &Catalog) -> Result<Schema, AlgebraError> {
    let inputs = expr
        .children()
        .into_iter()
        .map(|c| schema_of(c, catalog))
        .collect::<Result<Vec<_>, _>>()?;
    node_schema(expr, &inputs, &|name| {
        let t = catalog
            .table(name)
            .ok_or_else(|| AlgebraError::UnknownTable { table: name.to_string() })?;
        Ok(Schema {
            attrs: t
                .columns
                .iter()
                .map(|c| Attribute { qualifier: Some(t.name.clone()), name: c.name.clone(), ty: c.ty })
                .collect(),
        })
    })
}

/// Output schema of one node given the schemas of its children, in
/// [`RelExpr::children`] order. `base` resolves table names.
pub(crate) fn node_schema(
    expr: &RelExpr,
    inputs: &[Schema],
    base: &dyn Fn(&str) -> Result<Schema, AlgebraError>,
) -> Result<Schema, AlgebraError> {
    let node = expr.kind_name();
    match expr {
        RelExpr::Table(name) => base(name),
        RelExpr::Bins { column, ty, values } => {
            if let Some(bad) = values.iter().find(|v| !v.scalar_type().comparable(*ty)) {
                return Err(mismatch(node, format!("bin {bad:?} is not of type {ty}")));
            }
            Ok(Schema {
                attrs: vec![Attribute {
                    qualifier: Some(BINS_QUALIFIER.to_string()),
                    name: column.clone(),
                    ty: *ty,
                }],
            })
        }
        RelExpr::Join { left_key, right_key, .. } => {
            let (ls, rs) = (inputs[0].clone(), inputs[1].clone());
            let lt = ls.attr(left_key, node)?.ty;
            let rt = rs.attr(right_key, node)?.ty;
            if !lt.comparable(rt) {
                return Err(mismatch(node, format!("join keys {left_key} ({lt}) and {right_key} ({rt})")));
            }
            let mut attrs = ls.attrs;
            for a in rs.attrs {
                if attrs.iter().any(|b| b.qualifier == a.qualifier && b.name == a.name) {
                    return Err(mismatch(
                        node,
                        format!("both inputs provide {}; self-joins are not supported", a.column_ref()),
                    ));
                }
                attrs.push(a);
            }
            Ok(Schema { attrs })
        }
        RelExpr::Project { attrs, .. } => {
            let is = inputs[0].clone();
            let mut out = Vec::with_capacity(attrs.len());
            for a in attrs {
                match a {
                    AttrExpr::Column(c) => out.push(is.attr(c, node)?.clone()),
                    AttrExpr::Named { name, value } => out.push(Attribute {
                        qualifier: None,
                        name: name.clone(),
                        ty: type_of(value, &is, node)?,
                    }),
                }
            }
            unique_names(&out, node)?;
            Ok(Schema { attrs: out })
        }
        RelExpr::Select { predicate, .. } => {
            let is = inputs[0].clone();
            check_predicate(predicate, &is, node)?;
            Ok(is)
        }
        RelExpr::Aggregate { func, group_by, alias, .. } => {
            let is = inputs[0].clone();
            let mut out = group_attrs(&is, group_by, node)?;
            let ty = match func {
                Aggregation::Count => ScalarType::Int,
                Aggregation::CountDistinct(c) => {
                    is.attr(c, node)?;
                    ScalarType::Int
                }
                Aggregation::Sum(c) => numeric(is.attr(c, node)?.ty, node, "SUM")?,
                Aggregation::Avg(c) => {
                    numeric(is.attr(c, node)?.ty, node, "AVG")?;
                    ScalarType::Real
                }
                Aggregation::Median(c) => {
                    numeric(is.attr(c, node)?.ty, node, "MEDIAN")?;
                    ScalarType::Real
                }
            };
            let name = alias.clone().unwrap_or_else(|| func.default_name());
            out.push(Attribute { qualifier: None, name, ty });
            unique_names(&out, node)?;
            Ok(Schema { attrs: out })
        }
        RelExpr::SubsampleAggregate { plan, group_by, subsample, value, output, .. } => {
            let is = inputs[0].clone();
            let mut out = group_attrs(&is, group_by, node)?;
            is.attr(subsample, node)?;
            numeric(is.attr(value, node)?.ty, node, "subsample aggregator")?;
            out.push(Attribute { qualifier: None, name: output.clone(), ty: ScalarType::Real });
            if plan.winsorize.is_some() {
                out.push(Attribute {
                    qualifier: None,
                    name: NOISE_SCALE_ATTR.to_string(),
                    ty: ScalarType::Real,
                });
            }
            unique_names(&out, node)?;
            Ok(Schema { attrs: out })
        }
    }
}

fn group_attrs(is: &Schema, group_by: &[ColumnRef], node: &str) -> Result<Vec<Attribute>, AlgebraError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(group_by.len() + 1);
    for g in group_by {
        let i = is.resolve(g, node)?;
        if !seen.insert(i) {
            return Err(mismatch(node, format!("grouping column {g} listed twice")));
        }
        out.push(is.attrs[i].clone());
    }
    Ok(out)
}

/// For each output attribute, whether it is a logical attribute: a join
/// key, filter column or grouping column, possibly carried through
/// projections.
pub fn logical_outputs(expr: &RelExpr, catalog: &Catalog) -> Result<Vec<bool>, AlgebraError> {
    let node = expr.kind_name();
    match expr {
        RelExpr::Table(_) | RelExpr::Bins { .. } => Ok(vec![false; schema_of(expr, catalog)?.len()]),
        RelExpr::Select { predicate, input } => {
            let is = schema_of(input, catalog)?;
            let mut flags = logical_outputs(input, catalog)?;
            for c in predicate.columns() {
                flags[is.resolve(c, node)?] = true;
            }
            Ok(flags)
        }
        RelExpr::Join { left, right, left_key, right_key, .. } => {
            let ls = schema_of(left, catalog)?;
            let rs = schema_of(right, catalog)?;
            let mut lf = logical_outputs(left, catalog)?;
            let mut rf = logical_outputs(right, catalog)?;
            lf[ls.resolve(left_key, node)?] = true;
            rf[rs.resolve(right_key, node)?] = true;
            lf.extend(rf);
            Ok(lf)
        }
        RelExpr::Project { attrs, input } => {
            let is = schema_of(input, catalog)?;
            let flags = logical_outputs(input, catalog)?;
            attrs
                .iter()
                .map(|a| match a {
                    AttrExpr::Column(c) => Ok(flags[is.resolve(c, node)?]),
                    AttrExpr::Named { value: ValueExpr::Column(c), .. } => Ok(flags[is.resolve(c, node)?]),
                    AttrExpr::Named { .. } => Ok(false),
                })
                .collect()
        }
        RelExpr::Aggregate { group_by, .. } => {
            let mut flags = vec![true; group_by.len()];
            flags.push(false);
            Ok(flags)
        }
        RelExpr::SubsampleAggregate { group_by, .. } => {
            let n = schema_of(expr, catalog)?.len();
            let mut flags = vec![true; group_by.len()];
            flags.resize(n, false);
            Ok(flags)
        }
    }
}
