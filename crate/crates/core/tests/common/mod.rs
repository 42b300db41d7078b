//! Bundled corpus shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod fixtures;
pub mod oracle;

use std::collections::BTreeMap;
use std::path::PathBuf;

use dpsql_core::algebra::{logical_outputs, schema_of, Catalog, Literal, MechanismId, QueryExpr, RelExpr};
use dpsql_core::eval::{eval_query, load_database, Database, RandomSource, Value};
use dpsql_core::mechanisms::{apply, MechanismParams};
use dpsql_core::sql::{parse_sql, Dialect};
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
pub struct CorpusQuery {
    pub id: String,
    pub category: String,
    pub sql: String,
    pub supported: BTreeMap<MechanismId, bool>,
    #[serde(default)]
    pub bins: Option<Vec<serde_json::Value>>,
    #[serde(default)]
    pub note: Option<String>,
}

impl CorpusQuery {
    pub fn parse(&self, catalog: &Catalog) -> QueryExpr {
        parse_sql(&self.sql, Dialect::Ansi, catalog).unwrap_or_else(|e| panic!("{}: {e}", self.id))
    }

    pub fn params(&self, epsilon: f64) -> MechanismParams {
        let bins = self.bins.as_ref().map(|bs| {
            bs.iter()
                .map(|b| match b {
                    serde_json::Value::String(s) => Literal::Str(s.clone()),
                    serde_json::Value::Number(n) if n.is_i64() => Literal::Int(n.as_i64().unwrap()),
                    serde_json::Value::Number(n) => Literal::Real(n.as_f64().unwrap()),
                    other => panic!("bad bin {other}"),
                })
                .collect()
        });
        MechanismParams { bins, ..MechanismParams::new(epsilon) }
    }

    pub fn labelled(&self, m: MechanismId) -> bool {
        self.supported[&m]
    }
}

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn catalog() -> Catalog {
    Catalog::load(corpus_dir().join("catalog.json")).expect("corpus catalog")
}

pub fn database(catalog: &Catalog) -> Database {
    load_database(corpus_dir().join("data"), catalog).expect("corpus data")
}

pub fn queries() -> Vec<CorpusQuery> {
    let text = std::fs::read_to_string(corpus_dir().join("queries.json")).expect("corpus queries");
    serde_json::from_str(&text).expect("queries.json")
}

/// Number of subsamples used for a protected table of `rows` rows.
pub fn parts_for(rows: u64) -> u64 {
    (rows as f64).powf(0.4).round() as u64
}

/// Expected zero-noise output of `m` on `q`: the original answer for the
/// Laplace mechanisms, the weighted count for WPINQ and the combined
/// subsample answers for subsampling, with absent histogram bins filled.
pub fn expected(q: &CorpusQuery, m: MechanismId, catalog: &Catalog, db: &Database) -> Vec<Vec<Value>> {
    let parsed = q.parse(catalog);
    let protected = catalog.protected_table().name.clone();
    let rows = match m {
        MechanismId::Elastic | MechanismId::Restricted => {
            eval_query(&parsed, db, &mut RandomSource::zero_noise()).unwrap().rows
        }
        MechanismId::Wpinq => oracle::weighted_count(&parsed, db),
        MechanismId::Saa => {
            let parts = parts_for(db[&protected].len() as u64);
            vec![vec![Value::Real(oracle::subsampled(&parsed, db, &protected, parts))]]
        }
    };
    let RelExpr::Aggregate { group_by, .. } = &parsed.top else { unreachable!() };
    match group_by.first() {
        None => rows,
        Some(g) => {
            let domain = match &q.params(1.0).bins {
                Some(bins) => bins
                    .iter()
                    .map(|b| match b {
                        Literal::Int(v) => Value::Int(*v),
                        Literal::Real(v) => Value::Real(*v),
                        Literal::Str(v) => Value::Str(v.clone()),
                        Literal::Bool(v) => Value::Bool(*v),
                    })
                    .collect(),
                None => oracle::domain_of(catalog, db, g.qualifier.as_deref().unwrap_or(&protected), &g.name),
            };
            oracle::complete(&rows, &domain)
        }
    }
}

/// Checks that the rewrite of `q` by `m`, evaluated with every random draw
/// stubbed to 0.5, has the original schema and logical attributes and
/// produces [`expected`].
pub fn check_preserved(q: &CorpusQuery, m: MechanismId, catalog: &Catalog, db: &Database) -> Result<(), String> {
    let parsed = q.parse(catalog);
    let rewritten = apply(m, &parsed, catalog, &q.params(0.1)).map_err(|e| e.reason())?;
    let top = &rewritten.query.top;
    let (before, after) = (schema_of(&parsed.top, catalog).unwrap(), schema_of(top, catalog).unwrap());
    if before.names() != after.names() || !before.same_shape(&after) {
        return Err(format!("schema {:?} became {:?}", before.names(), after.names()));
    }
    if logical_outputs(&parsed.top, catalog).unwrap() != logical_outputs(top, catalog).unwrap() {
        return Err("logical attributes differ".into());
    }
    let got = eval_query(&rewritten.query, db, &mut RandomSource::zero_noise()).map_err(|e| e.to_string())?;
    let want = expected(q, m, catalog, db);
    if got.rows.len() != want.len() {
        return Err(format!("{} rows, expected {}", got.rows.len(), want.len()));
    }
    let (g, w) = (oracle::canonical(&got.rows), oracle::canonical(&want));
    if g != w {
        return Err(format!("got {g:?}, expected {w:?}"));
    }
    Ok(())
}

/// Queries with stored rewrite snapshots: (file stem, mechanism, SQL).
pub const GOLDEN: [(&str, MechanismId, &str); 4] = [
    ("laplace_count", MechanismId::Elastic, "SELECT COUNT(*) FROM trips"),
    ("wpinq_join", MechanismId::Wpinq, "SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id"),
    ("saa_avg", MechanismId::Saa, "SELECT AVG(distance) FROM trips"),
    ("histogram", MechanismId::Elastic, "SELECT city_id, COUNT(*) FROM trips GROUP BY city_id"),
];

/// ANSI text of the rewrite of `sql` by `m` at epsilon 0.1.
pub fn rewrite_text(sql: &str, m: MechanismId, catalog: &Catalog) -> String {
    let q = parse_sql(sql, Dialect::Ansi, catalog).unwrap();
    let r = apply(m, &q, catalog, &MechanismParams::new(0.1)).unwrap();
    let mut text = dpsql_core::sql::emit_sql(&r.query, Dialect::Ansi).text;
    text.push('\n');
    text
}

/// Table `name` of `catalog` holding `rows`.
pub fn table_for(catalog: &Catalog, name: &str, rows: Vec<Vec<Value>>) -> dpsql_core::eval::Table {
    let def = catalog.table(name).expect("table in catalog");
    let schema = dpsql_core::algebra::Schema {
        attrs: def
            .columns
            .iter()
            .map(|c| dpsql_core::algebra::Attribute { qualifier: Some(name.to_string()), name: c.name.clone(), ty: c.ty })
            .collect(),
    };
    dpsql_core::eval::Table::new(schema, rows)
}
