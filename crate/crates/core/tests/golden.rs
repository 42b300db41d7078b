mod common;

use dpsql_core::sql::{emit_sql, parse_sql, Dialect};

/// Set `UPDATE_GOLDEN=1` to rewrite the snapshots after an intended change.
#[test]
fn rewrites_match_snapshots() {
    let cat = common::catalog();
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (stem, m, sql) in common::GOLDEN {
        let path = common::corpus_dir().join("golden").join(format!("{stem}.sql"));
        let text = common::rewrite_text(sql, m, &cat);
        if update {
            std::fs::write(&path, &text).unwrap();
        }
        let stored = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(text, stored, "{stem}");
    }
}

#[test]
fn emitted_corpus_sql_is_a_fixpoint() {
    let cat = common::catalog();
    for q in common::queries() {
        let once = emit_sql(&q.parse(&cat), Dialect::Ansi).text;
        let reparsed = parse_sql(&once, Dialect::Ansi, &cat).unwrap_or_else(|e| panic!("{}: {e}\n{once}", q.id));
        assert_eq!(emit_sql(&reparsed, Dialect::Ansi).text, once, "{}", q.id);
    }
}
