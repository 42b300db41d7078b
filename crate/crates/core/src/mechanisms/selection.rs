use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algebra::{features_of, Catalog, Feature, JoinCap, MechanismId, QueryExpr};
use crate::sensitivity::join_caps;

use super::{apply, MechanismError, MechanismParams, Rewritten};

/// Preference among mechanisms with equal scores, most preferred first.
pub const TIE_ORDER: [MechanismId; 4] =
    [MechanismId::Elastic, MechanismId::Restricted, MechanismId::Wpinq, MechanismId::Saa];

/// Scores `mechanism` for queries having every feature in
/// `requires_features` and none in `forbids_features`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SelectionRule {
    pub mechanism: MechanismId,
    #[serde(default)]
    pub requires_features: Vec<Feature>,
    #[serde(default)]
    pub forbids_features: Vec<Feature>,
    pub score: f64,
    pub reason: String,
}

impl SelectionRule {
    fn fires(&self, features: &BTreeSet<Feature>) -> bool {
        self.requires_features.iter().all(|f| features.contains(f))
            && !self.forbids_features.iter().any(|f| features.contains(f))
    }
}

fn rule(mechanism: MechanismId, requires: &[Feature], score: f64, reason: &str) -> SelectionRule {
    SelectionRule {
        mechanism,
        requires_features: requires.to_vec(),
        forbids_features: Vec::new(),
        score,
        reason: reason.to_string(),
    }
}

pub fn default_rules() -> Vec<SelectionRule> {
    use Feature::*;
    vec![
        rule(MechanismId::Restricted, &[Counting, AllJoinsCapped], 3.0, "every join has a declared multiplicity cap; no smoothing needed"),
        rule(MechanismId::Elastic, &[Counting, InnerJoin], 2.0, "counting query with equijoins, including many-to-many"),
        rule(MechanismId::Elastic, &[Counting, NoJoin], 2.0, "counting query over one table"),
        rule(MechanismId::Wpinq, &[Counting, InnerJoin], 1.0, "weighted counting over equijoins"),
        rule(MechanismId::Saa, &[Estimator, NoJoin], 3.0, "estimator over one table; only subsampling supports it"),
        rule(MechanismId::Saa, &[Counting, NoJoin], 1.0, "counting query over one table"),
    ]
}

pub fn rules_from_json(text: &str) -> Result<Vec<SelectionRule>, MechanismError> {
    let rules: Vec<SelectionRule> = serde_json::from_str(text).map_err(|e| MechanismError::Rules(e.to_string()))?;
    if let Some(r) = rules.iter().find(|r| !r.score.is_finite()) {
        return Err(MechanismError::Rules(format!("rule for {} has a non-finite score", r.mechanism)));
    }
    Ok(rules)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<SelectionRule>, MechanismError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MechanismError::Rules(format!("{}: {e}", path.display())))?;
    rules_from_json(&text)
}

/// AST features plus the join-cap features read from the catalog.
pub fn query_features(q: &QueryExpr, catalog: &Catalog) -> BTreeSet<Feature> {
    let mut f = features_of(&q.top);
    let caps = join_caps(&q.top, catalog);
    if caps.iter().all(|&(l, r)| l != JoinCap::Many || r != JoinCap::Many) {
        f.insert(Feature::AllJoinsCapped);
    }
    if caps.iter().any(|&(l, r)| l == JoinCap::Many && r == JoinCap::Many) {
        f.insert(Feature::ManyToManyJoin);
    }
    f
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Verdict {
    pub mechanism: MechanismId,
    pub supported: bool,
    /// Highest score among fired rules, if any fired.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Reasons of the rules that fired.
    pub rules: Vec<String>,
    /// Why the mechanism cannot rewrite the query.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub chosen: MechanismId,
    pub features: BTreeSet<Feature>,
    pub verdicts: Vec<Verdict>,
    pub rewritten: Rewritten,
}

/// Verdicts for every mechanism, and the best supported one if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Assessment {
    pub features: BTreeSet<Feature>,
    pub verdicts: Vec<Verdict>,
    pub best: Option<(MechanismId, Rewritten)>,
}

/// Tries every mechanism on `q` and ranks the supported ones by the
/// highest score among their fired rules. Reads only the query and the
/// catalog.
pub fn assess(q: &QueryExpr, catalog: &Catalog, rules: &[SelectionRule], params: &MechanismParams) -> Result<Assessment, MechanismError> {
    params.validate()?;
    let features = query_features(q, catalog);
    let mut verdicts = Vec::new();
    let mut best: Option<(f64, MechanismId, Rewritten)> = None;
    for &m in TIE_ORDER.iter() {
        let fired: Vec<&SelectionRule> = rules.iter().filter(|r| r.mechanism == m && r.fires(&features)).collect();
        let score = fired.iter().map(|r| r.score).reduce(f64::max);
        let attempt = apply(m, q, catalog, params);
        let excluded = match (&attempt, score) {
            (Err(e), _) => Some(e.reason()),
            (Ok(_), None) => Some("no selection rule fired".to_string()),
            (Ok(_), Some(_)) => None,
        };
        verdicts.push(Verdict {
            mechanism: m,
            supported: attempt.is_ok(),
            score,
            rules: fired.iter().map(|r| r.reason.clone()).collect(),
            excluded,
        });
        if let (Ok(rewritten), Some(s)) = (attempt, score) {
            if best.as_ref().map(|(b, _, _)| s > *b).unwrap_or(true) {
                best = Some((s, m, rewritten));
            }
        }
    }
    Ok(Assessment { features, verdicts, best: best.map(|(_, m, r)| (m, r)) })
}

/// Picks the mechanism [`assess`] ranks highest.
pub fn select_mechanism(
    q: &QueryExpr,
    catalog: &Catalog,
    rules: &[SelectionRule],
    params: &MechanismParams,
) -> Result<Selection, MechanismError> {
    let a = assess(q, catalog, rules, params)?;
    match a.best {
        Some((chosen, rewritten)) => Ok(Selection { chosen, features: a.features, verdicts: a.verdicts, rewritten }),
        None => Err(MechanismError::NoMechanismSupports {
            reasons: a.verdicts.into_iter().map(|v| (v.mechanism, v.excluded.unwrap_or_default())).collect(),
        }),
    }
}
