//! Syntax tree for the accepted SQL subset and its recursive-descent
//! parser. Names are not resolved here; see `bind`.

use super::lexer::{tokenize, Tok, Token};
use super::SqlError;
use crate::algebra::{BinaryOp, CmpOp};

#[derive(Clone, Debug)]
pub(crate) struct Statement {
    pub ctes: Vec<Cte>,
    pub body: SelectCore,
}

#[derive(Clone, Debug)]
pub(crate) enum Cte {
    Query { name: String, stmt: Box<Statement> },
    /// `name(column) AS (VALUES (v1), (v2), ...)`
    Values { name: String, column: String, values: Vec<Expr>, pos: usize },
}

#[derive(Clone, Debug)]
pub(crate) struct SelectCore {
    pub items: Vec<SelectItem>,
    pub from: Vec<FromEntry>,
    pub conjuncts: Vec<Condition>,
    pub group_by: Vec<Expr>,
    pub pos: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum SelectItem {
    Star(usize),
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Clone, Debug)]
pub(crate) struct FromEntry {
    pub source: FromSource,
    pub alias: Option<String>,
    pub join: Option<JoinSpec>,
    pub pos: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum FromSource {
    Table(String),
    Subquery(Box<Statement>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum JoinType {
    Inner,
    Right,
}

#[derive(Clone, Debug)]
pub(crate) struct JoinSpec {
    pub kind: JoinType,
    pub on: Condition,
}

#[derive(Clone, Debug)]
pub(crate) struct Condition {
    pub left: Expr,
    pub op: CmpOp,
    pub right: Expr,
    pub pos: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Expr {
    Column { qualifier: Option<String>, name: String, pos: usize },
    Number { text: String, pos: usize },
    Str(String),
    Bool(bool),
    Neg(Box<Expr>, usize),
    Binary { op: BinaryOp, left: Box<Expr>, right: Box<Expr> },
    Call { name: String, args: Vec<Expr>, star: bool, distinct: bool, over: bool, pos: usize },
    /// `CASE WHEN test IS NULL THEN then ELSE otherwise END`
    CaseNull { test: Box<Expr>, then: Box<Expr>, otherwise: Box<Expr>, pos: usize },
}

impl Expr {
    pub fn pos(&self) -> usize {
        match self {
            Expr::Column { pos, .. }
            | Expr::Number { pos, .. }
            | Expr::Neg(_, pos)
            | Expr::Call { pos, .. }
            | Expr::CaseNull { pos, .. } => *pos,
            Expr::Binary { left, .. } => left.pos(),
            Expr::Str(_) | Expr::Bool(_) => 0,
        }
    }
}

const RESERVED: [&str; 33] = [
    "select", "from", "where", "group", "by", "as", "join", "on", "inner", "left", "right", "full",
    "outer", "cross", "natural", "and", "or", "not", "with", "distinct", "case", "when", "then",
    "else", "end", "is", "union", "intersect", "except", "having", "order", "limit", "values",
];

pub(crate) fn is_reserved(word: &str) -> bool {
    RESERVED.contains(&word) || matches!(word, "null" | "true" | "false" | "over" | "in" | "like" | "between")
}

pub(crate) fn parse_statement(text: &str) -> Result<Statement, SqlError> {
    let mut p = Parser { toks: tokenize(text)?, at: 0 };
    let stmt = p.statement()?;
    p.eat_sym(";");
    if !matches!(p.peek(), Tok::Eof) {
        return Err(p.unexpected("end of query"));
    }
    Ok(stmt)
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.at + n).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident { name, quoted: false } if name == kw)
    }

    fn is_kw_at(&self, n: usize, kw: &str) -> bool {
        matches!(self.peek_at(n), Tok::Ident { name, quoted: false } if name == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&kw.to_ascii_uppercase()))
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), SqlError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("'{s}'")))
        }
    }

    fn unexpected(&self, wanted: &str) -> SqlError {
        let found = match self.peek() {
            Tok::Ident { name, .. } => format!("'{name}'"),
            Tok::Number(n) => n.clone(),
            Tok::Str(s) => format!("'{s}'"),
            Tok::Sym(s) => format!("'{s}'"),
            Tok::Eof => "end of input".to_string(),
        };
        SqlError::parse(self.pos(), format!("expected {wanted}, found {found}"))
    }

    fn unsupported(&self, feature: &str) -> SqlError {
        SqlError::unsupported(feature, self.pos())
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match self.peek().clone() {
            Tok::Ident { name, quoted } if quoted || !is_reserved(&name) => {
                self.bump();
                Ok(name)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn statement(&mut self) -> Result<Statement, SqlError> {
        let mut ctes = Vec::new();
        if self.eat_kw("with") {
            if self.is_kw("recursive") {
                return Err(self.unsupported("recursive-cte"));
            }
            loop {
                ctes.push(self.cte()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let body = self.select_core()?;
        for (kw, feature) in [
            ("union", "set-operation"),
            ("intersect", "set-operation"),
            ("except", "set-operation"),
            ("order", "order-by"),
            ("limit", "limit"),
        ] {
            if self.is_kw(kw) {
                return Err(self.unsupported(feature));
            }
        }
        Ok(Statement { ctes, body })
    }

    fn cte(&mut self) -> Result<Cte, SqlError> {
        let pos = self.pos();
        let name = self.ident()?;
        let column = if self.eat_sym("(") {
            let c = self.ident()?;
            self.expect_sym(")")?;
            Some(c)
        } else {
            None
        };
        self.expect_kw("as")?;
        self.expect_sym("(")?;
        if self.eat_kw("values") {
            let Some(column) = column else {
                return Err(SqlError::parse(pos, "VALUES list needs a column name"));
            };
            let mut values = Vec::new();
            loop {
                self.expect_sym("(")?;
                values.push(self.expr()?);
                if self.is_sym(",") {
                    return Err(self.unsupported("multi-column-values"));
                }
                self.expect_sym(")")?;
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
            return Ok(Cte::Values { name, column, values, pos });
        }
        if column.is_some() {
            return Err(self.unsupported("cte-column-list"));
        }
        let stmt = self.statement()?;
        self.expect_sym(")")?;
        Ok(Cte::Query { name, stmt: Box::new(stmt) })
    }

    fn select_core(&mut self) -> Result<SelectCore, SqlError> {
        let pos = self.pos();
        self.expect_kw("select")?;
        if self.is_kw("distinct") {
            return Err(self.unsupported("distinct"));
        }
        self.eat_kw("all");
        let mut items = Vec::new();
        loop {
            if self.is_sym("*") {
                items.push(SelectItem::Star(self.pos()));
                self.bump();
            } else {
                let expr = self.expr()?;
                let alias = if self.eat_kw("as") {
                    Some(self.ident()?)
                } else if matches!(self.peek(), Tok::Ident { name, quoted } if *quoted || !is_reserved(name)) {
                    Some(self.ident()?)
                } else {
                    None
                };
                items.push(SelectItem::Expr { expr, alias });
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_kw("from")?;
        let mut from = vec![self.from_entry(None)?];
        loop {
            if self.eat_sym(",") {
                from.push(self.from_entry(None)?);
                continue;
            }
            let kind = if self.is_kw("join") || (self.is_kw("inner") && self.is_kw_at(1, "join")) {
                self.eat_kw("inner");
                JoinType::Inner
            } else if self.is_kw("right") {
                self.bump();
                self.eat_kw("outer");
                JoinType::Right
            } else if self.is_kw("left") || self.is_kw("full") {
                return Err(self.unsupported("outer-join"));
            } else if self.is_kw("cross") || self.is_kw("natural") {
                return Err(self.unsupported("cross-join"));
            } else {
                break;
            };
            self.expect_kw("join")?;
            let mut entry = self.from_entry(None)?;
            self.expect_kw("on")?;
            let on = self.condition()?;
            if self.is_kw("and") {
                return Err(self.unsupported("compound-join-condition"));
            }
            entry.join = Some(JoinSpec { kind, on });
            from.push(entry);
        }
        let mut conjuncts = Vec::new();
        if self.eat_kw("where") {
            loop {
                conjuncts.push(self.condition()?);
                if !self.eat_kw("and") {
                    break;
                }
            }
            if self.is_kw("or") {
                return Err(self.unsupported("disjunction"));
            }
        }
        let mut group_by = Vec::new();
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            loop {
                group_by.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        if self.is_kw("having") {
            return Err(self.unsupported("having"));
        }
        Ok(SelectCore { items, from, conjuncts, group_by, pos })
    }

    fn from_entry(&mut self, join: Option<JoinSpec>) -> Result<FromEntry, SqlError> {
        let pos = self.pos();
        let source = if self.eat_sym("(") {
            let stmt = self.statement()?;
            self.expect_sym(")")?;
            FromSource::Subquery(Box::new(stmt))
        } else {
            FromSource::Table(self.ident()?)
        };
        let alias = if self.eat_kw("as") {
            Some(self.ident()?)
        } else if matches!(self.peek(), Tok::Ident { name, quoted } if *quoted || !is_reserved(name)) {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(FromEntry { source, alias, join, pos })
    }

    fn condition(&mut self) -> Result<Condition, SqlError> {
        let pos = self.pos();
        if self.is_kw("not") {
            return Err(self.unsupported("negation"));
        }
        let left = self.expr()?;
        let op = match self.peek() {
            Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym("<>") | Tok::Sym("!=") => CmpOp::Ne,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            Tok::Ident { name, quoted: false } => {
                let feature = match name.as_str() {
                    "is" => "null-test",
                    "in" => "in-list",
                    "like" => "like",
                    "between" => "between",
                    "not" => "negation",
                    _ => return Err(self.unexpected("comparison operator")),
                };
                return Err(self.unsupported(feature));
            }
            _ => return Err(self.unexpected("comparison operator")),
        };
        self.bump();
        let right = self.expr()?;
        Ok(Condition { left, op, right, pos })
    }

    fn expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("+") => BinaryOp::Add,
                Tok::Sym("-") => BinaryOp::Sub,
                _ => return Ok(left),
            };
            self.bump();
            let right = self.term()?;
            left = Expr::Binary { op, left: Box::new(left), right: Box::new(right) };
        }
    }

    fn term(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("*") => BinaryOp::Mul,
                Tok::Sym("/") => BinaryOp::Div,
                Tok::Sym("%") => BinaryOp::Mod,
                _ => return Ok(left),
            };
            self.bump();
            let right = self.factor()?;
            left = Expr::Binary { op, left: Box::new(left), right: Box::new(right) };
        }
    }

    fn factor(&mut self) -> Result<Expr, SqlError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Number(text) => {
                self.bump();
                Ok(Expr::Number { text, pos })
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::Sym("-") => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.factor()?), pos))
            }
            Tok::Sym("+") => {
                self.bump();
                self.factor()
            }
            Tok::Sym("(") => {
                self.bump();
                if self.is_kw("select") || self.is_kw("with") {
                    return Err(self.unsupported("scalar-subquery"));
                }
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident { name, quoted: false } if name == "true" || name == "false" => {
                self.bump();
                Ok(Expr::Bool(name == "true"))
            }
            Tok::Ident { name, quoted: false } if name == "null" => Err(self.unsupported("null-literal")),
            Tok::Ident { name, quoted: false } if name == "case" => self.case_null(),
            Tok::Ident { name, quoted } => {
                if !quoted && matches!(self.peek_at(1), Tok::Sym("(")) {
                    return self.call(name, pos);
                }
                let first = self.ident()?;
                if self.eat_sym(".") {
                    if self.is_sym("*") {
                        return Err(self.unsupported("qualified-star"));
                    }
                    let name = self.ident()?;
                    return Ok(Expr::Column { qualifier: Some(first), name, pos });
                }
                Ok(Expr::Column { qualifier: None, name: first, pos })
            }
            _ => Err(self.unexpected("expression")),
        }
    }

    fn call(&mut self, name: String, pos: usize) -> Result<Expr, SqlError> {
        self.bump();
        self.expect_sym("(")?;
        let mut args = Vec::new();
        let mut star = false;
        let distinct = self.eat_kw("distinct");
        if self.eat_sym("*") {
            star = true;
        } else if !self.is_sym(")") {
            loop {
                args.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        let mut over = false;
        if self.eat_kw("over") {
            self.expect_sym("(")?;
            if !self.is_sym(")") {
                return Err(self.unsupported("window-function"));
            }
            self.expect_sym(")")?;
            over = true;
        }
        Ok(Expr::Call { name, args, star, distinct, over, pos })
    }

    fn case_null(&mut self) -> Result<Expr, SqlError> {
        let pos = self.pos();
        self.bump();
        self.expect_kw("when")?;
        let test = self.expr()?;
        if !(self.eat_kw("is") && self.eat_kw("null")) {
            return Err(SqlError::unsupported("case", pos));
        }
        self.expect_kw("then")?;
        let then = self.expr()?;
        self.expect_kw("else")?;
        let otherwise = self.expr()?;
        self.expect_kw("end")?;
        Ok(Expr::CaseNull { test: Box::new(test), then: Box::new(then), otherwise: Box::new(otherwise), pos })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ctes_joins_and_groups() {
        let s = parse_statement(
            "WITH t AS (SELECT driver_id FROM trips) \
             SELECT d.city_id, COUNT(*) FROM t JOIN drivers d ON t.driver_id = d.id \
             WHERE d.rating >= 4.5 AND 1 < 2 GROUP BY d.city_id;",
        )
        .unwrap();
        assert_eq!(s.ctes.len(), 1);
        assert_eq!(s.body.from.len(), 2);
        assert_eq!(s.body.from[1].alias.as_deref(), Some("d"));
        assert!(s.body.from[1].join.is_some());
        assert_eq!(s.body.conjuncts.len(), 2);
        assert_eq!(s.body.group_by.len(), 1);
    }

    #[test]
    fn precedence() {
        let s = parse_statement("SELECT a+b*c AS x FROM t").unwrap();
        let SelectItem::Expr { expr: Expr::Binary { op, right, .. }, .. } = &s.body.items[0] else {
            panic!()
        };
        assert_eq!(*op, BinaryOp::Add);
        assert!(matches!(**right, Expr::Binary { op: BinaryOp::Mul, .. }));
    }

    #[test]
    fn unsupported_features_named() {
        let cases = [
            ("SELECT DISTINCT city_id FROM trips", "distinct"),
            ("SELECT COUNT(*) FROM trips LEFT JOIN drivers ON driver_id = id", "outer-join"),
            ("SELECT COUNT(*) FROM trips WHERE a = 1 OR b = 2", "disjunction"),
            ("SELECT COUNT(*) FROM trips GROUP BY a HAVING COUNT(*) > 1", "having"),
            ("SELECT COUNT(*) FROM trips UNION SELECT COUNT(*) FROM drivers", "set-operation"),
            ("SELECT COUNT(*) FROM trips WHERE a IN (1, 2)", "in-list"),
        ];
        for (sql, feature) in cases {
            match parse_statement(sql) {
                Err(SqlError::Unsupported { feature: f, .. }) => assert_eq!(f, feature, "{sql}"),
                other => panic!("{sql}: {other:?}"),
            }
        }
    }

    #[test]
    fn parse_error_position() {
        match parse_statement("SELECT COUNT(*) trips") {
            Err(SqlError::Parse { position, .. }) => assert_eq!(position, 21),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn values_cte_and_case() {
        let s = parse_statement(
            "WITH b(city_id) AS (VALUES (1), (2)) \
             SELECT CASE WHEN o.count IS NULL THEN 0 ELSE o.count END AS count FROM o RIGHT JOIN b ON o.city_id = b.city_id",
        )
        .unwrap();
        assert!(matches!(&s.ctes[0], Cte::Values { values, .. } if values.len() == 2));
        assert_eq!(s.body.from[1].join.as_ref().unwrap().kind, JoinType::Right);
    }
}
