//! Prints algebra as SQL.
//!
//! A block is one `SELECT ... FROM ... WHERE ... GROUP BY` statement.
//! Anything that cannot be expressed inside the current block (a nested
//! aggregation, a projection under a join, a bin list) becomes a named
//! common table expression. Identical subtrees share one CTE.

use crate::algebra::{
    Aggregation, AggregatorPlan, AttrExpr, BinaryOp, ColumnRef, JoinKind, Literal, Predicate,
    QueryExpr, RelExpr, ValueExpr, BINS_QUALIFIER, NOISE_SCALE_ATTR,
};

use super::syntax::is_reserved;
use super::{Dialect, SqlText};

pub fn emit_sql(q: &QueryExpr, dialect: Dialect) -> SqlText {
    SqlText { text: emit_relation(&q.top, dialect), dialect }
}

/// Emits any relation as a standalone statement.
pub fn emit_relation(expr: &RelExpr, dialect: Dialect) -> String {
    let mut e = Emitter { dialect, ctes: Vec::new(), taken: expr.referenced_tables().into_iter().collect() };
    let body = e.block(expr);
    if e.ctes.is_empty() {
        return body;
    }
    let defs: Vec<String> = e.ctes.iter().map(|c| c.definition.clone()).collect();
    format!("WITH {}\n{}", defs.join(",\n"), body)
}

struct Cte {
    rel: Option<RelExpr>,
    definition: String,
}

struct Emitter {
    dialect: Dialect,
    ctes: Vec<Cte>,
    /// Table and CTE names already in use.
    taken: Vec<String>,
}

/// Attributes a relation exposes, known without consulting a catalog.
/// Base tables contribute every attribute with their qualifier.
#[derive(Clone, Debug, Default)]
struct Exposed {
    attrs: Vec<ColumnRef>,
    tables: Vec<String>,
}

impl Exposed {
    fn contains(&self, c: &ColumnRef) -> bool {
        self.attrs.contains(c) || c.qualifier.as_ref().is_some_and(|q| self.tables.contains(q))
    }

    fn complete(&self) -> bool {
        self.tables.is_empty()
    }
}

fn exposed(expr: &RelExpr) -> Exposed {
    match expr {
        RelExpr::Table(t) => Exposed { attrs: vec![], tables: vec![t.clone()] },
        RelExpr::Bins { column, .. } => {
            Exposed { attrs: vec![ColumnRef::qualified(BINS_QUALIFIER, column.clone())], tables: vec![] }
        }
        RelExpr::Join { left, right, .. } => {
            let mut out = exposed(left);
            let r = exposed(right);
            out.attrs.extend(r.attrs);
            out.tables.extend(r.tables);
            out
        }
        RelExpr::Select { input, .. } => exposed(input),
        RelExpr::Project { attrs, .. } => Exposed {
            attrs: attrs
                .iter()
                .map(|a| match a {
                    AttrExpr::Column(c) => c.clone(),
                    AttrExpr::Named { name, .. } => ColumnRef::new(name.clone()),
                })
                .collect(),
            tables: vec![],
        },
        RelExpr::Aggregate { group_by, .. } => {
            let mut attrs = group_by.clone();
            attrs.push(ColumnRef::new(expr.aggregate_output().unwrap_or_default()));
            Exposed { attrs, tables: vec![] }
        }
        RelExpr::SubsampleAggregate { plan, group_by, output, .. } => {
            let mut attrs = group_by.clone();
            attrs.push(ColumnRef::new(output.clone()));
            if plan.winsorize.is_some() {
                attrs.push(ColumnRef::new(NOISE_SCALE_ATTR));
            }
            Exposed { attrs, tables: vec![] }
        }
    }
}

/// FROM items of one block, used to qualify column references.
struct Scope {
    items: Vec<(String, Exposed)>,
    qualify: bool,
}

impl Scope {
    fn single(name: &str) -> Scope {
        Scope { items: vec![(name.to_string(), Exposed::default())], qualify: false }
    }

    fn column(&self, c: &ColumnRef, prefer_last: bool) -> String {
        if !self.qualify {
            return ident(&c.name);
        }
        let mut hits = self.items.iter().filter(|(_, ex)| ex.contains(c));
        let hit = if prefer_last { hits.next_back() } else { hits.next() };
        match hit {
            Some((item, _)) => format!("{}.{}", ident(item), ident(&c.name)),
            None => match &c.qualifier {
                Some(q) => format!("{}.{}", ident(q), ident(&c.name)),
                None => ident(&c.name),
            },
        }
    }
}

pub(crate) fn ident(name: &str) -> String {
    let simple = name.chars().next().is_some_and(|c| c.is_ascii_lowercase() || c == '_')
        && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    if simple && !is_reserved(name) {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

fn literal(l: &Literal) -> String {
    match l {
        Literal::Int(v) => v.to_string(),
        Literal::Real(v) if v.fract() == 0.0 && v.abs() < 1e15 => format!("{v:.1}"),
        Literal::Real(v) => format!("{v:?}"),
        Literal::Str(s) => format!("'{}'", s.replace('\'', "''")),
        Literal::Bool(true) => "TRUE".to_string(),
        Literal::Bool(false) => "FALSE".to_string(),
    }
}

impl Emitter {
    fn func(&self, name: &str) -> String {
        match self.dialect {
            Dialect::Ansi => name.to_string(),
            Dialect::Postgres => name.to_ascii_lowercase(),
        }
    }

    fn value(&self, v: &ValueExpr, scope: &Scope) -> String {
        match v {
            ValueExpr::Column(c) => scope.column(c, false),
            ValueExpr::Literal(l) => literal(l),
            ValueExpr::Binary { op: BinaryOp::Mod, left, right } if self.dialect == Dialect::Ansi => {
                format!("{}({}, {})", self.func("MOD"), self.value(left, scope), self.value(right, scope))
            }
            ValueExpr::Binary { op, left, right } => {
                let prec = op.precedence();
                let l = self.operand(left, scope, |p| p < prec);
                let r = self.operand(right, scope, |p| p <= prec);
                format!("{l}{}{r}", op.symbol())
            }
            ValueExpr::Rand => format!("{}()", self.func("RANDOM")),
            ValueExpr::RandInt(n) => format!("{}({}()*{n})", self.func("FLOOR"), self.func("RANDOM")),
            ValueExpr::RowNumber => format!("{}() OVER ()", self.func("ROW_NUMBER")),
            ValueExpr::Ln(x) => format!("{}({})", self.func("LN"), self.value(x, scope)),
            ValueExpr::Abs(x) => format!("{}({})", self.func("ABS"), self.value(x, scope)),
            ValueExpr::Sign(x) => format!("{}({})", self.func("SIGN"), self.value(x, scope)),
            ValueExpr::Coalesce(x, d) => {
                let x = self.value(x, scope);
                format!("CASE WHEN {x} IS NULL THEN {} ELSE {x} END", literal(d))
            }
        }
    }

    fn operand(&self, v: &ValueExpr, scope: &Scope, wrap: impl Fn(u8) -> bool) -> String {
        let text = self.value(v, scope);
        let needs = match v {
            ValueExpr::Binary { op: BinaryOp::Mod, .. } if self.dialect == Dialect::Ansi => false,
            ValueExpr::Binary { op, .. } => wrap(op.precedence()),
            ValueExpr::Literal(_) => text.starts_with('-'),
            _ => false,
        };
        if needs {
            format!("({text})")
        } else {
            text
        }
    }

    fn predicate(&self, p: &Predicate, scope: &Scope) -> String {
        format!("{} {} {}", self.value(&p.left, scope), p.op.symbol(), self.value(&p.right, scope))
    }

    fn aggregation(&self, func: &Aggregation, scope: &Scope) -> String {
        match func {
            Aggregation::Count => format!("{}(*)", self.func("COUNT")),
            Aggregation::CountDistinct(c) => format!("{}(DISTINCT {})", self.func("COUNT"), scope.column(c, false)),
            Aggregation::Sum(c) => format!("{}({})", self.func("SUM"), scope.column(c, false)),
            Aggregation::Avg(c) => format!("{}({})", self.func("AVG"), scope.column(c, false)),
            Aggregation::Median(c) => match self.dialect {
                Dialect::Ansi => format!("MEDIAN({})", scope.column(c, false)),
                Dialect::Postgres => self.percentile(0.5, &scope.column(c, false)),
            },
        }
    }

    fn percentile(&self, p: f64, column: &str) -> String {
        format!("{}({p}) WITHIN GROUP (ORDER BY {column})", self.func("PERCENTILE_CONT"))
    }

    /// Statement for `expr` without a WITH clause; nested relations are
    /// registered as CTEs.
    fn block(&mut self, expr: &RelExpr) -> String {
        match expr {
            RelExpr::Aggregate { func, group_by, input, .. } => {
                let (from, scope, wheres) = self.from(input);
                let mut items: Vec<String> = group_by.iter().map(|g| scope.column(g, false)).collect();
                let name = expr.aggregate_output().unwrap_or_default();
                items.push(format!("{} AS {}", self.aggregation(func, &scope), ident(&name)));
                let mut sql = format!("SELECT {} FROM {from}{wheres}", items.join(", "));
                if !group_by.is_empty() {
                    let groups: Vec<String> = group_by.iter().map(|g| scope.column(g, false)).collect();
                    sql.push_str(&format!(" GROUP BY {}", groups.join(", ")));
                }
                sql
            }
            RelExpr::Project { attrs, input } => {
                let (from, scope, wheres) = self.from(input);
                let full = exposed(strip_selects(input).0);
                let passthrough = attrs.iter().take_while(|a| matches!(a, AttrExpr::Column(_))).count();
                let star = full.complete()
                    && passthrough == full.attrs.len()
                    && attrs[..passthrough]
                        .iter()
                        .zip(&full.attrs)
                        .all(|(a, c)| matches!(a, AttrExpr::Column(x) if x == c));
                let mut items = Vec::new();
                if star {
                    items.push("*".to_string());
                }
                for a in &attrs[if star { passthrough } else { 0 }..] {
                    items.push(match a {
                        AttrExpr::Column(c) => scope.column(c, false),
                        AttrExpr::Named { name, value } => format!("{} AS {}", self.value(value, &scope), ident(name)),
                    });
                }
                format!("SELECT {} FROM {from}{wheres}", items.join(", "))
            }
            RelExpr::SubsampleAggregate { plan, group_by, subsample, value, output, input } => {
                self.subsample(plan, group_by, subsample, value, output, input)
            }
            RelExpr::Table(_) | RelExpr::Join { .. } | RelExpr::Select { .. } | RelExpr::Bins { .. } => {
                let (from, _, wheres) = self.from(expr);
                format!("SELECT * FROM {from}{wheres}")
            }
        }
    }

    /// FROM item list and WHERE clause for `expr`, peeling selections and
    /// a left-deep join chain.
    fn from(&mut self, expr: &RelExpr) -> (String, Scope, String) {
        let (base, preds) = strip_selects(expr);
        let mut chain = Vec::new();
        let mut cur = base;
        while let RelExpr::Join { left, right, left_key, right_key, kind } = cur {
            chain.push((right.as_ref(), left_key, right_key, *kind));
            cur = left;
        }
        chain.reverse();
        let first = self.item(cur);
        let mut scope = Scope { items: vec![(first.clone(), exposed(cur))], qualify: !chain.is_empty() };
        for (right, ..) in &chain {
            let name = self.item(right);
            scope.items.push((name, exposed(right)));
        }
        let mut text = ident(&first);
        for (k, (_, lk, rk, kind)) in chain.iter().enumerate() {
            let join = match kind {
                JoinKind::Inner => "JOIN",
                JoinKind::RightOuter => "RIGHT JOIN",
            };
            let left_scope = Scope { items: scope.items[..=k].to_vec(), qualify: true };
            let left_text = left_scope.column(lk, true);
            let right_text = format!("{}.{}", ident(&scope.items[k + 1].0), ident(&rk.name));
            text.push_str(&format!(" {join} {} ON {left_text} = {right_text}", ident(&scope.items[k + 1].0)));
        }
        let wheres = if preds.is_empty() {
            String::new()
        } else {
            let conds: Vec<String> = preds.iter().map(|p| self.predicate(p, &scope)).collect();
            format!(" WHERE {}", conds.join(" AND "))
        };
        (text, scope, wheres)
    }

    /// Name usable as a FROM item: a base table or a CTE.
    fn item(&mut self, expr: &RelExpr) -> String {
        match expr {
            RelExpr::Table(t) => t.clone(),
            _ => self.cte(expr),
        }
    }

    fn cte(&mut self, expr: &RelExpr) -> String {
        if let Some(i) = self.ctes.iter().position(|c| c.rel.as_ref() == Some(expr)) {
            return self.ctes[i].name();
        }
        let name = self.fresh(&cte_stem(expr));
        let definition = match expr {
            RelExpr::Bins { column, values, .. } => {
                let rows: Vec<String> = values.iter().map(|v| format!("({})", literal(v))).collect();
                format!("{}({}) AS (VALUES {})", ident(&name), ident(column), rows.join(", "))
            }
            _ => {
                let body = self.block(expr);
                format!("{} AS ({body})", ident(&name))
            }
        };
        self.ctes.push(Cte { rel: Some(expr.clone()), definition });
        name
    }

    /// Registers a helper CTE that has no algebra counterpart.
    fn helper(&mut self, stem: &str, body: String) -> String {
        let name = self.fresh(stem);
        self.ctes.push(Cte { rel: None, definition: format!("{} AS ({body})", ident(&name)) });
        name
    }

    fn fresh(&mut self, stem: &str) -> String {
        let mut name = stem.to_string();
        let mut n = 2;
        while self.taken.contains(&name) {
            name = format!("{stem}_{n}");
            n += 1;
        }
        self.taken.push(name.clone());
        name
    }

    /// Combines per-subsample answers. The widened Winsorized mean clamps
    /// every answer to `[2*q1 - q3, 2*q3 - q1]` where `q1` and `q3` are
    /// the quartiles of the answers in the group.
    fn subsample(
        &mut self,
        plan: &AggregatorPlan,
        group_by: &[ColumnRef],
        subsample: &ColumnRef,
        value: &ColumnRef,
        output: &str,
        input: &RelExpr,
    ) -> String {
        let src = self.item(input);
        let one = Scope::single(&src);
        let groups: Vec<String> = group_by.iter().map(|g| one.column(g, false)).collect();
        let group_by_clause =
            if groups.is_empty() { String::new() } else { format!(" GROUP BY {}", groups.join(", ")) };
        let lead = |prefix: &str| -> String {
            groups.iter().map(|g| format!("{prefix}{g}, ")).collect::<String>()
        };
        let scaled = |v: &str| -> String {
            if plan.scale == 1.0 {
                v.to_string()
            } else {
                format!("{v}*{}", literal(&Literal::number(plan.scale)))
            }
        };
        let value_col = ident(&value.name);
        let Some(w) = &plan.winsorize else {
            let combined = if plan.zero_fill {
                format!("{}({})/{}", self.func("SUM"), scaled(&value_col), plan.subsamples)
            } else {
                format!("{}({})", self.func("AVG"), scaled(&value_col))
            };
            return format!(
                "SELECT {}{combined} AS {} FROM {}{group_by_clause}",
                lead(""),
                ident(output),
                ident(&src)
            );
        };

        let answers_body = if plan.zero_fill {
            let ids: Vec<String> = (0..plan.subsamples).map(|i| format!("({i})")).collect();
            let samp = ident(&subsample.name);
            let ids_name = self.fresh("dp_samp_ids");
            self.ctes.push(Cte {
                rel: None,
                definition: format!("{}({samp}) AS (VALUES {})", ident(&ids_name), ids.join(", ")),
            });
            let s = ident(&src);
            let i = ident(&ids_name);
            let answer = format!("CASE WHEN {s}.{value_col} IS NULL THEN 0 ELSE {} END", scaled(&format!("{s}.{value_col}")));
            if groups.is_empty() {
                format!("SELECT {answer} AS dp_answer FROM {i} LEFT JOIN {s} ON {s}.{samp} = {i}.{samp}")
            } else {
                let dg = self.helper("dp_groups", format!("SELECT DISTINCT {} FROM {s}", groups.join(", ")));
                let dg = ident(&dg);
                let mut on = vec![format!("{s}.{samp} = {i}.{samp}")];
                on.extend(groups.iter().map(|g| format!("{s}.{g} = {dg}.{g}")));
                format!(
                    "SELECT {}{answer} AS dp_answer FROM {dg} CROSS JOIN {i} LEFT JOIN {s} ON {}",
                    lead(&format!("{dg}.")),
                    on.join(" AND ")
                )
            }
        } else {
            format!("SELECT {}{} AS dp_answer FROM {}", lead(""), scaled(&value_col), ident(&src))
        };
        let answers = ident(&self.helper("dp_answers", answers_body));
        let q1 = self.percentile(0.25, "dp_answer");
        let q3 = self.percentile(0.75, "dp_answer");
        let range_body = format!(
            "SELECT {}2*{q1}-{q3} AS dp_lo, 2*{q3}-{q1} AS dp_hi, {}(*) AS dp_m FROM {answers}{group_by_clause}",
            lead(""),
            self.func("COUNT")
        );
        let range = ident(&self.helper("dp_range", range_body));

        let a = |c: &str| format!("{answers}.{c}");
        let r = |c: &str| format!("{range}.{c}");
        let clamp = format!(
            "CASE WHEN {ans} < {lo} THEN {lo} WHEN {ans} > {hi} THEN {hi} ELSE {ans} END",
            ans = a("dp_answer"),
            lo = r("dp_lo"),
            hi = r("dp_hi")
        );
        let max = self.func("MAX");
        let width = format!("{max}({}-{})", r("dp_hi"), r("dp_lo"));
        let floor = literal(&Literal::number(w.floor_width));
        let scale = format!(
            "CASE WHEN {width} > {floor} THEN {width} ELSE {floor} END/({max}({})*{})",
            r("dp_m"),
            literal(&Literal::number(w.epsilon))
        );
        let join = if groups.is_empty() {
            format!("{answers} CROSS JOIN {range}")
        } else {
            let on: Vec<String> = groups.iter().map(|g| format!("{} = {}", a(g), r(g))).collect();
            format!("{answers} JOIN {range} ON {}", on.join(" AND "))
        };
        let final_groups: Vec<String> = groups.iter().map(|g| a(g)).collect();
        let mut sql = format!(
            "SELECT {}{}({clamp}) AS {}, {scale} AS {} FROM {join}",
            final_groups.iter().map(|g| format!("{g}, ")).collect::<String>(),
            self.func("AVG"),
            ident(output),
            ident(NOISE_SCALE_ATTR)
        );
        if !final_groups.is_empty() {
            sql.push_str(&format!(" GROUP BY {}", final_groups.join(", ")));
        }
        sql
    }
}

impl Cte {
    fn name(&self) -> String {
        let d = &self.definition;
        let end = d.find(['(', ' ']).unwrap_or(d.len());
        let raw = &d[..end];
        raw.trim_matches('"').replace("\"\"", "\"")
    }
}

fn strip_selects(expr: &RelExpr) -> (&RelExpr, Vec<&Predicate>) {
    let mut preds = Vec::new();
    let mut cur = expr;
    while let RelExpr::Select { predicate, input } = cur {
        preds.push(predicate);
        cur = input;
    }
    preds.reverse();
    (cur, preds)
}

fn cte_stem(expr: &RelExpr) -> String {
    match expr {
        RelExpr::Aggregate { alias: Some(a), .. } if a.starts_with("dp_norm") => a.clone(),
        RelExpr::Aggregate { .. } => "orig".to_string(),
        RelExpr::Project { attrs, .. } => {
            let values = || {
                attrs.iter().filter_map(|a| match a {
                    AttrExpr::Named { value, .. } => Some(value),
                    AttrExpr::Column(_) => None,
                })
            };
            if values().any(uses_rand) {
                "dp_uniform".to_string()
            } else if values().any(|v| v.uses_row_number() || v.is_random()) {
                "dp_samp".to_string()
            } else if values().any(ValueExpr::has_coalesce) {
                "dp_hist".to_string()
            } else {
                "dp_q".to_string()
            }
        }
        RelExpr::Bins { .. } => BINS_QUALIFIER.to_string(),
        RelExpr::SubsampleAggregate { .. } => "dp_winsorized".to_string(),
        _ => "dp_q".to_string(),
    }
}

/// True when `v` contains a uniform real draw (as opposed to an integer one).
fn uses_rand(v: &ValueExpr) -> bool {
    match v {
        ValueExpr::Rand => true,
        ValueExpr::Binary { left, right, .. } => uses_rand(left) || uses_rand(right),
        ValueExpr::Ln(x) | ValueExpr::Abs(x) | ValueExpr::Sign(x) | ValueExpr::Coalesce(x, _) => uses_rand(x),
        _ => false,
    }
}
