use crate::algebra::{
    schema_of, AttrExpr, Catalog, ColumnRef, JoinKind, RelExpr, Schema, ValueExpr,
};

use super::RewriteError;

/// Inputs to a join update. Both sides have already been rewritten and
/// carry the metadata attribute.
pub struct JoinParts<'a> {
    pub left: RelExpr,
    pub right: RelExpr,
    pub left_key: &'a ColumnRef,
    pub right_key: &'a ColumnRef,
    pub metadata: &'a str,
    /// Columns each side must supply to the join, in schema order. The
    /// keys are always included.
    pub left_keep: Vec<ColumnRef>,
    pub right_keep: Vec<ColumnRef>,
    /// Columns the join output must hold besides the metadata: those of
    /// `left_keep` and `right_keep` needed above the join.
    pub output: Vec<ColumnRef>,
    /// 1-based position of the join in bottom-up order, for naming helper
    /// attributes.
    pub index: usize,
}

/// Builds the relation replacing a join. Its output must hold `output`
/// and a single metadata attribute.
pub type JoinUpdate = fn(JoinParts<'_>) -> RelExpr;

/// Metadata value for the rows of a counting subquery.
pub type CountUpdate = fn(&RelExpr) -> ValueExpr;

/// Describes how a per-row metadata attribute is created and carried
/// through a query. `None` marks constructs the metadata cannot pass.
#[derive(Clone)]
pub struct MetadataFns {
    pub name: String,
    pub init: ValueExpr,
    pub join: Option<JoinUpdate>,
    pub count: Option<CountUpdate>,
}

/// Adds the metadata attribute to every base table and carries it up to
/// the outermost node, where it is dropped again: the result has the
/// schema of `r`.
pub fn metadata_rewrite(r: &RelExpr, fns: &MetadataFns, catalog: &Catalog) -> Result<RelExpr, RewriteError> {
    match r {
        RelExpr::Aggregate { func, group_by, alias, input } => {
            let mut needed = group_by.clone();
            needed.extend(func.column().cloned());
            let input = propagate(input, &needed, fns, catalog)?;
            Ok(RelExpr::Aggregate { func: func.clone(), group_by: group_by.clone(), alias: alias.clone(), input: Box::new(input) })
        }
        _ => {
            let outputs: Vec<ColumnRef> = schema_of(r, catalog)?.attrs.iter().map(|a| a.column_ref()).collect();
            let inner = propagate(r, &outputs, fns, catalog)?;
            Ok(RelExpr::project(outputs.into_iter().map(AttrExpr::Column).collect(), inner))
        }
    }
}

/// Rewrites `r` so that its output contains every column in `needed` plus
/// the metadata attribute.
pub(crate) fn propagate(
    r: &RelExpr,
    needed: &[ColumnRef],
    fns: &MetadataFns,
    catalog: &Catalog,
) -> Result<RelExpr, RewriteError> {
    let mut joins = 0;
    Propagator { fns, catalog, joins: &mut joins }.go(r, needed)
}

struct Propagator<'a> {
    fns: &'a MetadataFns,
    catalog: &'a Catalog,
    joins: &'a mut usize,
}

impl Propagator<'_> {
    fn meta(&self) -> ColumnRef {
        ColumnRef::new(self.fns.name.clone())
    }

    fn collides(&self, schema: &Schema, node: &RelExpr) -> Result<(), RewriteError> {
        if schema.attrs.iter().any(|a| a.name == self.fns.name) {
            return Err(RewriteError::unsupported(
                node.kind_name(),
                format!("attribute '{}' already exists", self.fns.name),
            ));
        }
        Ok(())
    }

    fn go(&mut self, r: &RelExpr, needed: &[ColumnRef]) -> Result<RelExpr, RewriteError> {
        match r {
            RelExpr::Table(_) => {
                let schema = schema_of(r, self.catalog)?;
                self.collides(&schema, r)?;
                let mut attrs: Vec<AttrExpr> = schema
                    .attrs
                    .iter()
                    .map(|a| a.column_ref())
                    .filter(|c| needed.contains(c))
                    .map(AttrExpr::Column)
                    .collect();
                attrs.push(AttrExpr::named(self.fns.name.clone(), self.fns.init.clone()));
                Ok(RelExpr::project(attrs, r.clone()))
            }
            RelExpr::Select { predicate, input } => {
                let mut wanted = needed.to_vec();
                for c in predicate.columns() {
                    if !wanted.contains(c) {
                        wanted.push(c.clone());
                    }
                }
                Ok(RelExpr::select(predicate.clone(), self.go(input, &wanted)?))
            }
            RelExpr::Project { attrs, input } => {
                let schema = schema_of(r, self.catalog)?;
                self.collides(&schema, r)?;
                let mut wanted: Vec<ColumnRef> = Vec::new();
                for a in attrs {
                    let cols = match a {
                        AttrExpr::Column(c) => vec![c],
                        AttrExpr::Named { value, .. } => value.columns(),
                    };
                    for c in cols {
                        if !wanted.contains(c) {
                            wanted.push(c.clone());
                        }
                    }
                }
                let mut attrs = attrs.clone();
                attrs.push(AttrExpr::Column(self.meta()));
                Ok(RelExpr::project(attrs, self.go(input, &wanted)?))
            }
            RelExpr::Join { left, right, left_key, right_key, kind } => {
                if *kind != JoinKind::Inner {
                    return Err(RewriteError::unsupported(r.kind_name(), "only inner joins carry metadata"));
                }
                let Some(update) = self.fns.join else {
                    return Err(RewriteError::unsupported("join", format!("'{}' cannot be propagated through a join", self.fns.name)));
                };
                let ls = schema_of(left, self.catalog)?;
                let rs = schema_of(right, self.catalog)?;
                let keep = |s: &Schema, key: &ColumnRef| -> Vec<ColumnRef> {
                    s.attrs.iter().map(|a| a.column_ref()).filter(|c| c == key || needed.contains(c)).collect()
                };
                let left_keep = keep(&ls, left_key);
                let right_keep = keep(&rs, right_key);
                let output = left_keep.iter().chain(&right_keep).filter(|c| needed.contains(c)).cloned().collect();
                let l = self.go(left, &left_keep)?;
                let rr = self.go(right, &right_keep)?;
                *self.joins += 1;
                Ok(update(JoinParts {
                    left: l,
                    right: rr,
                    left_key,
                    right_key,
                    metadata: &self.fns.name,
                    left_keep,
                    right_keep,
                    output,
                    index: *self.joins,
                }))
            }
            RelExpr::Aggregate { func, group_by, alias, input } => {
                let Some(update) = self.fns.count else {
                    return Err(RewriteError::unsupported(
                        "aggregation",
                        format!("'{}' cannot be propagated through a subquery aggregation", self.fns.name),
                    ));
                };
                let schema = schema_of(r, self.catalog)?;
                self.collides(&schema, r)?;
                let mut wanted = group_by.clone();
                wanted.extend(func.column().cloned());
                let agg = RelExpr::Aggregate {
                    func: func.clone(),
                    group_by: group_by.clone(),
                    alias: alias.clone(),
                    input: Box::new(self.go(input, &wanted)?),
                };
                let mut attrs: Vec<AttrExpr> = schema.attrs.iter().map(|a| AttrExpr::Column(a.column_ref())).collect();
                attrs.push(AttrExpr::named(self.fns.name.clone(), update(&agg)));
                Ok(RelExpr::project(attrs, agg))
            }
            RelExpr::SubsampleAggregate { .. } | RelExpr::Bins { .. } => {
                Err(RewriteError::unsupported(r.kind_name(), "rewrite output cannot carry metadata"))
            }
        }
    }
}

/// Keeps `keep` and renames the metadata attribute of `rel`.
pub(crate) fn rename_metadata(rel: RelExpr, keep: &[ColumnRef], metadata: &str, to: &str) -> RelExpr {
    let mut attrs: Vec<AttrExpr> = keep.iter().cloned().map(AttrExpr::Column).collect();
    attrs.push(AttrExpr::named(to, ValueExpr::col(ColumnRef::new(metadata))));
    RelExpr::project(attrs, rel)
}

/// Join update that multiplies the metadata of the joined rows.
pub fn merge_join_update(p: JoinParts<'_>) -> RelExpr {
    let (ml, mr) = (format!("dp_ml{}", p.index), format!("dp_mr{}", p.index));
    let l = rename_metadata(p.left, &p.left_keep, p.metadata, &ml);
    let r = rename_metadata(p.right, &p.right_keep, p.metadata, &mr);
    let joined = RelExpr::join(l, r, p.left_key.clone(), p.right_key.clone());
    let mut attrs: Vec<AttrExpr> = p.output.iter().cloned().map(AttrExpr::Column).collect();
    attrs.push(AttrExpr::named(
        p.metadata,
        ValueExpr::mul(ValueExpr::col(ColumnRef::new(ml)), ValueExpr::col(ColumnRef::new(mr))),
    ));
    RelExpr::project(attrs, joined)
}
