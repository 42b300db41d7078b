mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Barrier};

use dpsql_core::budget::{load_ledger, store_ledger, BudgetLedger, CompositionMode};
use dpsql_core::service::{serve, Gateway, Operation, RewriteRequest};
use serde_json::{json, Value};

fn start(ledger: &Path, total: f64) -> SocketAddr {
    store_ledger(&BudgetLedger::new(total, 0.5, CompositionMode::Standard).unwrap(), ledger).unwrap();
    let gateway = Arc::new(Gateway::new(common::catalog(), Some(ledger.to_path_buf())));
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || serve(gateway, listener));
    addr
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    fn connect(addr: SocketAddr) -> Client {
        let writer = TcpStream::connect(addr).unwrap();
        writer.set_nodelay(true).unwrap();
        Client { reader: BufReader::new(writer.try_clone().unwrap()), writer }
    }

    fn send(&mut self, line: &str) -> Value {
        self.writer.write_all(format!("{line}\n").as_bytes()).unwrap();
        let mut reply = String::new();
        self.reader.read_line(&mut reply).unwrap();
        serde_json::from_str(&reply).unwrap()
    }
}

#[test]
fn malformed_line_keeps_connection_usable() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(&dir.path().join("ledger.json"), 1.0);
    let mut c = Client::connect(addr);
    assert_eq!(c.send("{not json")["error"]["code"], "bad_request");
    let first = c.send(&json!({"sql": "SELECT COUNT(*) FROM trips", "epsilon": 0.25}).to_string());
    let before = first["receipt"]["remainingEpsilon"].as_f64().unwrap();
    assert!((before - 0.75).abs() < 1e-12);
    let second = c.send(&json!({"sql": "SELECT COUNT(*) FROM trips WHERE distance > 3", "epsilon": 0.25}).to_string());
    assert!((second["receipt"]["remainingEpsilon"].as_f64().unwrap() - (before - 0.25)).abs() < 1e-12);
    assert!(second["rewrittenSql"].as_str().unwrap().contains("LN(1-2*ABS("));
}

#[test]
fn concurrent_requests_past_the_budget_admit_one() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(&dir.path().join("ledger.json"), 0.15);
    let barrier = Arc::new(Barrier::new(2));
    let handles: Vec<_> = (0..2)
        .map(|_| {
            let barrier = barrier.clone();
            std::thread::spawn(move || {
                let mut c = Client::connect(addr);
                barrier.wait();
                c.send(&json!({"sql": "SELECT COUNT(*) FROM trips", "epsilon": 0.1}).to_string())
            })
        })
        .collect();
    let replies: Vec<Value> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let ok = replies.iter().filter(|r| r.get("rewrittenSql").is_some()).count();
    assert_eq!(ok, 1, "{replies:?}");
    let refused = replies.iter().find(|r| r.get("error").is_some()).unwrap();
    assert_eq!(refused["error"]["code"], "budget_exhausted");
    assert!(refused.get("rewrittenSql").is_none());
}

#[test]
fn analyze_never_charges() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.json");
    let addr = start(&ledger, 1.0);
    let mut c = Client::connect(addr);
    for _ in 0..100 {
        let r = c.send(&json!({"op": "analyze", "sql": "SELECT COUNT(*) FROM trips", "epsilon": 0.5}).to_string());
        assert!(r.get("chosen").is_some(), "{r}");
    }
    assert_eq!(load_ledger(&ledger).unwrap().version, 0);
}

#[test]
fn analyze_and_rewrite_agree_on_the_mechanism() {
    let gateway = Gateway::new(common::catalog(), None);
    for q in common::queries() {
        let mut req = RewriteRequest {
            op: Operation::Analyze,
            sql: q.sql.clone(),
            epsilon: 0.1,
            delta: None,
            mechanism: None,
            bins: None,
            dialect: Default::default(),
            db_size: None,
        };
        if let Some(bins) = &q.bins {
            req.bins = Some(serde_json::from_value(Value::Array(bins.clone())).unwrap());
        }
        let report = gateway.analyze(&req).unwrap();
        match gateway.rewrite(&req) {
            Ok(r) => assert_eq!(Some(r.mechanism), report.chosen, "{}", q.id),
            Err(_) => assert_eq!(report.chosen, None, "{}", q.id),
        }
    }
}
