//! Request handling shared by the CLI, the NDJSON server and the C API.
//!
//! A rewrite request is parsed, rewritten and emitted first; the budget is
//! charged last, and the SQL leaves this module only inside a response
//! built after a successful charge.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraError, Catalog, Feature, Literal, MechanismId, QueryExpr};
use crate::budget::{charge_file, fingerprint, BudgetError, Receipt};
use crate::mechanisms::{
    apply, assess, default_rules, HistogramMode, MechanismError, MechanismParams, Rewritten,
    SelectionRule, Verdict,
};
use crate::sql::{emit_sql, parse_sql, Dialect, SqlError};

/// Error class of a failed request; each maps to a CLI exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    ParseError,
    InvalidQuery,
    NoMechanism,
    BudgetExhausted,
    CatalogError,
    LedgerError,
}

impl ErrorCode {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCode::BadRequest | ErrorCode::ParseError | ErrorCode::InvalidQuery => 2,
            ErrorCode::NoMechanism => 3,
            ErrorCode::BudgetExhausted => 4,
            ErrorCode::CatalogError => 5,
            ErrorCode::LedgerError => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ServiceError {
    pub code: ErrorCode,
    pub message: String,
    /// Per-mechanism exclusion reasons when no mechanism applies.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<(MechanismId, String)>,
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ServiceError {}

impl ServiceError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ServiceError { code, message: message.into(), reasons: Vec::new() }
    }
}

impl From<SqlError> for ServiceError {
    fn from(e: SqlError) -> Self {
        let code = match &e {
            SqlError::Parse { .. } | SqlError::Unsupported { .. } => ErrorCode::ParseError,
            SqlError::Algebra(AlgebraError::UnknownTable { .. }) => ErrorCode::CatalogError,
            SqlError::Algebra(_) | SqlError::Invalid(_) => ErrorCode::InvalidQuery,
        };
        ServiceError::new(code, e.to_string())
    }
}

impl From<MechanismError> for ServiceError {
    fn from(e: MechanismError) -> Self {
        match e {
            MechanismError::NoMechanismSupports { reasons } => {
                let message = MechanismError::NoMechanismSupports { reasons: reasons.clone() }.to_string();
                ServiceError { code: ErrorCode::NoMechanism, message, reasons }
            }
            MechanismError::InvalidParameter(_) | MechanismError::UnknownDbSize | MechanismError::Rules(_) => {
                ServiceError::new(ErrorCode::BadRequest, e.to_string())
            }
            other => {
                let reasons = match &other {
                    MechanismError::Unsupported { mechanism, .. }
                    | MechanismError::Sensitivity { mechanism, .. }
                    | MechanismError::Rewrite { mechanism, .. } => vec![(*mechanism, other.reason())],
                    _ => Vec::new(),
                };
                ServiceError { code: ErrorCode::NoMechanism, message: other.to_string(), reasons }
            }
        }
    }
}

impl From<BudgetError> for ServiceError {
    fn from(e: BudgetError) -> Self {
        let code = match e {
            BudgetError::Exhausted { .. } => ErrorCode::BudgetExhausted,
            BudgetError::InvalidCharge(_) => ErrorCode::BadRequest,
            _ => ErrorCode::LedgerError,
        };
        ServiceError::new(code, e.to_string())
    }
}

/// A histogram bin as written in a request: a JSON number or string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinValue {
    Int(i64),
    Real(f64),
    Text(String),
}

impl BinValue {
    /// Reads a command-line bin: integer, then real, else text.
    pub fn parse(s: &str) -> BinValue {
        let s = s.trim();
        if let Ok(i) = s.parse() {
            BinValue::Int(i)
        } else if let Ok(r) = s.parse() {
            BinValue::Real(r)
        } else {
            BinValue::Text(s.to_string())
        }
    }

    fn literal(&self) -> Literal {
        match self {
            BinValue::Int(i) => Literal::Int(*i),
            BinValue::Real(r) => Literal::Real(*r),
            BinValue::Text(s) => Literal::Str(s.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    #[default]
    Rewrite,
    Analyze,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RewriteRequest {
    #[serde(default)]
    pub op: Operation,
    pub sql: String,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Absent selects automatically.
    #[serde(default)]
    pub mechanism: Option<MechanismId>,
    #[serde(default)]
    pub bins: Option<Vec<BinValue>>,
    #[serde(default)]
    pub dialect: Dialect,
    #[serde(default)]
    pub db_size: Option<u64>,
}

impl RewriteRequest {
    pub fn new(sql: impl Into<String>, epsilon: f64) -> Self {
        RewriteRequest {
            op: Operation::Rewrite,
            sql: sql.into(),
            epsilon,
            delta: None,
            mechanism: None,
            bins: None,
            dialect: Dialect::Ansi,
            db_size: None,
        }
    }

    fn params(&self) -> MechanismParams {
        MechanismParams {
            epsilon: self.epsilon,
            delta: self.delta,
            db_size: self.db_size,
            bins: self.bins.as_ref().map(|b| b.iter().map(BinValue::literal).collect()),
            ..MechanismParams::new(self.epsilon)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RewriteResponse {
    pub rewritten_sql: String,
    pub dialect: Dialect,
    pub mechanism: MechanismId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsamples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub receipt: Option<Receipt>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalyzeReport {
    pub features: Vec<Feature>,
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen: Option<MechanismId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<String>,
}

/// Rewrites queries against one catalog and rule set, charging an
/// optional ledger file.
pub struct Gateway {
    pub catalog: Catalog,
    pub rules: Vec<SelectionRule>,
    pub ledger: Option<PathBuf>,
}

impl Gateway {
    pub fn new(catalog: Catalog, ledger: Option<PathBuf>) -> Self {
        Gateway { catalog, rules: default_rules(), ledger }
    }

    pub fn parse(&self, req: &RewriteRequest) -> Result<QueryExpr, ServiceError> {
        Ok(parse_sql(&req.sql, req.dialect, &self.catalog)?)
    }

    /// Chooses and applies a mechanism without touching the budget.
    pub fn plan(&self, req: &RewriteRequest) -> Result<Rewritten, ServiceError> {
        let q = self.parse(req)?;
        let params = req.params();
        match req.mechanism {
            Some(m) => Ok(apply(m, &q, &self.catalog, &params)?),
            None => {
                let a = assess(&q, &self.catalog, &self.rules, &params)?;
                match a.best {
                    Some((_, r)) => Ok(r),
                    None => Err(MechanismError::NoMechanismSupports {
                        reasons: a.verdicts.into_iter().map(|v| (v.mechanism, v.excluded.unwrap_or_default())).collect(),
                    }
                    .into()),
                }
            }
        }
    }

    pub fn analyze(&self, req: &RewriteRequest) -> Result<AnalyzeReport, ServiceError> {
        let q = self.parse(req)?;
        let a = assess(&q, &self.catalog, &self.rules, &req.params())?;
        let sensitivity = a.best.as_ref().and_then(|(_, r)| r.plan.sensitivity.as_ref());
        Ok(AnalyzeReport {
            features: a.features.iter().copied().collect(),
            verdicts: a.verdicts.clone(),
            chosen: a.best.as_ref().map(|(m, _)| *m),
            sensitivity: sensitivity.map(|s| s.value),
            trace: sensitivity.map(|s| s.trace.iter().map(|t| t.to_string()).collect()).unwrap_or_default(),
        })
    }

    /// Rewrites, charges the ledger, and only then returns the SQL.
    pub fn rewrite(&self, req: &RewriteRequest) -> Result<RewriteResponse, ServiceError> {
        let rewritten = self.plan(req)?;
        let sql = emit_sql(&rewritten.query, req.dialect).text;
        let plan = &rewritten.plan;
        let mut warnings = Vec::new();
        let receipt = match &self.ledger {
            Some(path) => Some(charge_file(path, plan.epsilon, plan.delta, &fingerprint(&sql))?),
            None => {
                warnings.push("no ledger configured; the privacy budget is not enforced".to_string());
                None
            }
        };
        Ok(RewriteResponse {
            rewritten_sql: sql,
            dialect: req.dialect,
            mechanism: plan.mechanism,
            gamma: plan.gamma,
            epsilon: plan.epsilon,
            delta: plan.delta,
            subsamples: plan.subsamples,
            sensitivity: plan.sensitivity.as_ref().map(|s| s.value),
            trace: plan.sensitivity.as_ref().map(|s| s.trace.iter().map(|t| t.to_string()).collect()).unwrap_or_default(),
            histogram: plan.histogram.clone(),
            receipt,
            warnings,
        })
    }

    /// Handles one NDJSON request line and returns the response line.
    pub fn handle_line(&self, line: &str) -> String {
        let reply = match serde_json::from_str::<RewriteRequest>(line) {
            Err(e) => Err(ServiceError::new(ErrorCode::BadRequest, e.to_string())),
            Ok(req) => match req.op {
                Operation::Rewrite => self.rewrite(&req).map(|r| serde_json::to_value(r).expect("serializes")),
                Operation::Analyze => self.analyze(&req).map(|r| serde_json::to_value(r).expect("serializes")),
            },
        };
        let value = match reply {
            Ok(v) => v,
            Err(e) => serde_json::json!({ "error": e }),
        };
        value.to_string()
    }
}

fn serve_connection(gateway: &Gateway, stream: TcpStream) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut out = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = gateway.handle_line(&line);
        reply.push('\n');
        out.write_all(reply.as_bytes())?;
    }
    Ok(())
}

/// Serves newline-delimited JSON requests, one thread per connection.
/// Budget charges are serialized by the ledger file lock.
pub fn serve(gateway: Arc<Gateway>, listener: TcpListener) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let gateway = Arc::clone(&gateway);
        std::thread::spawn(move || {
            let _ = serve_connection(&gateway, stream);
        });
    }
    Ok(())
}
