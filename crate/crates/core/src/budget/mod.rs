//! Privacy budget accounting with a JSON ledger file.
//!
//! Every charge is checked against the configured composition rule and
//! appended to the ledger; a charge that would overspend leaves the ledger
//! untouched. File updates hold an exclusive lock on a sidecar lock file,
//! re-read the ledger, and replace it by rename.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Slack for floating point accumulation: twenty charges of 0.1 sum to
/// slightly more than 2.0.
const TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum BudgetError {
    #[error("privacy budget exhausted: requested epsilon {requested_epsilon}, delta {requested_delta}; remaining epsilon {remaining_epsilon}, delta {remaining_delta}")]
    Exhausted {
        requested_epsilon: f64,
        requested_delta: f64,
        remaining_epsilon: f64,
        remaining_delta: f64,
    },
    #[error("invalid charge: {0}")]
    InvalidCharge(String),
    #[error("invalid ledger: {0}")]
    InvalidLedger(String),
    #[error("corrupt ledger {path}: {details}")]
    Corrupt { path: String, details: String },
    #[error("ledger was modified concurrently: expected version {expected}, found {found}")]
    VersionConflict { expected: u64, found: u64 },
    #[error("ledger {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum CompositionMode {
    /// Epsilons and deltas add up.
    Standard,
    /// Advanced composition with slack `delta_prime`.
    Advanced { delta_prime: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LedgerEntry {
    /// Hex SHA-256 of the rewritten SQL.
    pub fingerprint: String,
    pub epsilon: f64,
    pub delta: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BudgetLedger {
    pub total_epsilon: f64,
    pub total_delta: f64,
    pub mode: CompositionMode,
    pub entries: Vec<LedgerEntry>,
    pub version: u64,
}

/// Composed cost of a sequence of charges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spent {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Receipt {
    pub fingerprint: String,
    pub epsilon: f64,
    pub delta: f64,
    pub remaining_epsilon: f64,
    pub remaining_delta: f64,
    pub version: u64,
}

pub fn fingerprint(sql: &str) -> String {
    hex::encode(Sha256::digest(sql.as_bytes()))
}

fn standard_total<'a>(charges: impl Iterator<Item = &'a LedgerEntry>) -> Spent {
    charges.fold(Spent { epsilon: 0.0, delta: 0.0 }, |s, e| Spent { epsilon: s.epsilon + e.epsilon, delta: s.delta + e.delta })
}

/// Advanced composition of `k` charges of `(eps, delta)` each:
/// `eps * sqrt(2k ln(1/delta')) + k eps (e^eps - 1)` and `k delta + delta'`.
/// Charges with differing epsilons fall back to the standard sum.
pub fn advanced_total(entries: &[LedgerEntry], delta_prime: f64) -> Spent {
    let Some(first) = entries.first() else {
        return Spent { epsilon: 0.0, delta: 0.0 };
    };
    if entries.iter().any(|e| e.epsilon != first.epsilon) {
        return standard_total(entries.iter());
    }
    let k = entries.len() as f64;
    let eps = first.epsilon;
    let epsilon = eps * (2.0 * k * (1.0 / delta_prime).ln()).sqrt() + k * eps * eps.exp_m1();
    let delta = entries.iter().map(|e| e.delta).sum::<f64>() + delta_prime;
    Spent { epsilon, delta }
}

fn within(spent: f64, total: f64) -> bool {
    spent <= total + TOLERANCE * total.max(1.0)
}

impl BudgetLedger {
    pub fn new(total_epsilon: f64, total_delta: f64, mode: CompositionMode) -> Result<Self, BudgetError> {
        let ledger = BudgetLedger { total_epsilon, total_delta, mode, entries: Vec::new(), version: 0 };
        ledger.check()?;
        Ok(ledger)
    }

    fn check(&self) -> Result<(), BudgetError> {
        if !(self.total_epsilon > 0.0 && self.total_epsilon.is_finite()) {
            return Err(BudgetError::InvalidLedger(format!("totalEpsilon must be positive, got {}", self.total_epsilon)));
        }
        if !(0.0..1.0).contains(&self.total_delta) {
            return Err(BudgetError::InvalidLedger(format!("totalDelta must be in [0, 1), got {}", self.total_delta)));
        }
        if let CompositionMode::Advanced { delta_prime } = self.mode {
            if !(delta_prime > 0.0 && delta_prime < 1.0) {
                return Err(BudgetError::InvalidLedger(format!("deltaPrime must be in (0, 1), got {delta_prime}")));
            }
        }
        Ok(())
    }

    pub fn spent(&self) -> Spent {
        match self.mode {
            CompositionMode::Standard => standard_total(self.entries.iter()),
            CompositionMode::Advanced { delta_prime } => advanced_total(&self.entries, delta_prime),
        }
    }

    pub fn remaining(&self) -> Spent {
        let s = self.spent();
        Spent { epsilon: (self.total_epsilon - s.epsilon).max(0.0), delta: (self.total_delta - s.delta).max(0.0) }
    }

    /// Returns the ledger with the charge appended, or an error and no
    /// change when the charge would exceed the budget.
    pub fn charge(&self, epsilon: f64, delta: f64, fingerprint: &str) -> Result<BudgetLedger, BudgetError> {
        self.charge_at(epsilon, delta, fingerprint, now())
    }

    pub fn charge_at(&self, epsilon: f64, delta: f64, fingerprint: &str, timestamp: u64) -> Result<BudgetLedger, BudgetError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(BudgetError::InvalidCharge(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(BudgetError::InvalidCharge(format!("delta must be in [0, 1), got {delta}")));
        }
        let mut next = self.clone();
        next.entries.push(LedgerEntry { fingerprint: fingerprint.to_string(), epsilon, delta, timestamp });
        next.version += 1;
        let after = next.spent();
        if !within(after.epsilon, self.total_epsilon) || !within(after.delta, self.total_delta) {
            let left = self.remaining();
            return Err(BudgetError::Exhausted {
                requested_epsilon: epsilon,
                requested_delta: delta,
                remaining_epsilon: left.epsilon,
                remaining_delta: left.delta,
            });
        }
        Ok(next)
    }

    /// Receipt for the most recent charge.
    pub fn receipt(&self) -> Option<Receipt> {
        let last = self.entries.last()?;
        let left = self.remaining();
        Some(Receipt {
            fingerprint: last.fingerprint.clone(),
            epsilon: last.epsilon,
            delta: last.delta,
            remaining_epsilon: left.epsilon,
            remaining_delta: left.delta,
            version: self.version,
        })
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BudgetError + '_ {
    move |e| BudgetError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn load_ledger(path: impl AsRef<Path>) -> Result<BudgetLedger, BudgetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let ledger: BudgetLedger = serde_json::from_str(&text)
        .map_err(|e| BudgetError::Corrupt { path: path.display().to_string(), details: e.to_string() })?;
    ledger.check().map_err(|e| BudgetError::Corrupt { path: path.display().to_string(), details: e.to_string() })?;
    if ledger.version < ledger.entries.len() as u64 {
        return Err(BudgetError::Corrupt {
            path: path.display().to_string(),
            details: format!("version {} is below the entry count {}", ledger.version, ledger.entries.len()),
        });
    }
    Ok(ledger)
}

/// Writes `ledger` to a temporary file next to `path` and renames it over
/// `path`.
pub fn store_ledger(ledger: &BudgetLedger, path: impl AsRef<Path>) -> Result<(), BudgetError> {
    let path = path.as_ref();
    let tmp = sibling(path, "tmp");
    let text = serde_json::to_string_pretty(ledger).expect("ledger serializes");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(text.as_bytes()).and_then(|_| f.write_all(b"\n")).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{ext}"));
    path.with_file_name(name)
}

/// Exclusive lock on `<ledger>.lock`, released on drop.
struct LockGuard(File);

impl LockGuard {
    fn acquire(path: &Path) -> Result<Self, BudgetError> {
        let lock = sibling(path, "lock");
        let f = OpenOptions::new().create(true).truncate(false).write(true).open(&lock).map_err(io_err(&lock))?;
        f.lock().map_err(io_err(&lock))?;
        Ok(LockGuard(f))
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

/// Stores `ledger` only if the file still holds version `expected`.
pub fn commit_ledger(ledger: &BudgetLedger, expected: u64, path: impl AsRef<Path>) -> Result<(), BudgetError> {
    let path = path.as_ref();
    let _guard = LockGuard::acquire(path)?;
    let found = load_ledger(path)?.version;
    if found != expected {
        return Err(BudgetError::VersionConflict { expected, found });
    }
    store_ledger(ledger, path)
}

/// Charges the ledger file under its lock. Concurrent callers in any
/// process are serialized.
pub fn charge_file(path: impl AsRef<Path>, epsilon: f64, delta: f64, fingerprint: &str) -> Result<Receipt, BudgetError> {
    let path = path.as_ref();
    let _guard = LockGuard::acquire(path)?;
    let ledger = load_ledger(path)?;
    let next = ledger.charge(epsilon, delta, fingerprint)?;
    store_ledger(&next, path)?;
    Ok(next.receipt().expect("just charged"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard(total: f64) -> BudgetLedger {
        BudgetLedger::new(total, 0.0, CompositionMode::Standard).unwrap()
    }

    #[test]
    fn twenty_tenths_fit_in_two() {
        let mut l = standard(2.0);
        for i in 0..20 {
            l = l.charge_at(0.1, 0.0, "q", i).unwrap();
        }
        let before = l.clone();
        assert!(matches!(l.charge(0.1, 0.0, "q"), Err(BudgetError::Exhausted { .. })));
        assert_eq!(l, before);
        assert_eq!(l.version, 20);
    }

    #[test]
    fn oversized_charge() {
        let l = standard(1.0);
        let err = l.charge(1.5, 0.0, "q").unwrap_err();
        assert!(matches!(err, BudgetError::Exhausted { remaining_epsilon, .. } if remaining_epsilon == 1.0));
        assert!(l.entries.is_empty());
        assert!(l.charge(0.0, 0.0, "q").is_err());
        let l = BudgetLedger::new(1.0, 1e-6, CompositionMode::Standard).unwrap();
        assert!(l.charge(0.1, 1e-5, "q").is_err());
    }

    fn entries(k: usize, eps: f64) -> Vec<LedgerEntry> {
        (0..k).map(|_| LedgerEntry { fingerprint: String::new(), epsilon: eps, delta: 0.0, timestamp: 0 }).collect()
    }

    #[test]
    fn advanced_formula() {
        assert_eq!(advanced_total(&[], 1e-6).epsilon, 0.0);
        let t = advanced_total(&entries(100, 0.1), 1e-6);
        let want = 0.1 * (200.0 * 1e6f64.ln()).sqrt() + 100.0 * 0.1 * (0.1f64.exp() - 1.0);
        assert!((t.epsilon - want).abs() < 1e-12);
        assert!(t.epsilon < 10.0);
        assert!(advanced_total(&entries(1, 0.5), 0.1).epsilon >= 0.5);
        assert!(advanced_total(&entries(10_000, 0.01), 1e-9).epsilon < 100.0);
        let mut mixed = entries(2, 0.1);
        mixed[1].epsilon = 0.3;
        assert!((advanced_total(&mixed, 1e-6).epsilon - 0.4).abs() < 1e-12);
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.json");
        let l = standard(2.0).charge_at(0.5, 0.0, &fingerprint("SELECT 1"), 7).unwrap();
        store_ledger(&l, &path).unwrap();
        assert_eq!(load_ledger(&path).unwrap(), l);

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_ledger(&path), Err(BudgetError::Corrupt { .. })));
    }

    #[test]
    fn stale_writer_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.json");
        store_ledger(&standard(2.0), &path).unwrap();
        let a = load_ledger(&path).unwrap();
        let b = load_ledger(&path).unwrap();
        commit_ledger(&a.charge(0.1, 0.0, "a").unwrap(), a.version, &path).unwrap();
        let err = commit_ledger(&b.charge(0.1, 0.0, "b").unwrap(), b.version, &path).unwrap_err();
        assert_eq!(err, BudgetError::VersionConflict { expected: 0, found: 1 });
        assert_eq!(load_ledger(&path).unwrap().entries.len(), 1);
    }

    #[test]
    fn concurrent_charges_at_the_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.json");
        store_ledger(&standard(1.0).charge(0.7, 0.0, "x").unwrap(), &path).unwrap();
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..8).map(|_| s.spawn(|| charge_file(&path, 0.2, 0.0, "y"))).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
        assert_eq!(load_ledger(&path).unwrap().version, 2);
    }

    #[test]
    fn fingerprint_is_sha256_hex() {
        assert_eq!(fingerprint(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
