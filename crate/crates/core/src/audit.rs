//! Representation auditing and construction of the candidate oversampling set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{group_counts, Dataset, GroupKey, GroupSpec, LABEL_ATTRIBUTE};
use crate::error::{Error, Result};

pub const DEFAULT_IMBALANCE_THRESHOLD: f64 = 0.15;
pub const DEFAULT_MAX_COMBO_ARITY: usize = 3;

/// How the representation difference to the majority is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImbalanceRule {
    /// `(count(majority) - count(g)) / N > threshold`
    #[default]
    ShareOfTotal,
    /// `(count(majority) - count(g)) / count(majority) > threshold`
    RatioToMajority,
}

impl ImbalanceRule {
    fn difference(self, majority: usize, count: usize, total: usize) -> f64 {
        let gap = (majority - count) as f64;
        match self {
            ImbalanceRule::ShareOfTotal => gap / total as f64,
            ImbalanceRule::RatioToMajority => gap / majority as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceFinding {
    pub spec: GroupSpec,
    pub counts: BTreeMap<GroupKey, usize>,
    pub total: usize,
    pub majority_key: GroupKey,
    pub under_represented: Vec<GroupKey>,
    pub threshold: f64,
    pub rule: ImbalanceRule,
}

impl ImbalanceFinding {
    pub fn is_imbalanced(&self) -> bool {
        !self.under_represented.is_empty()
    }

    pub fn share(&self, key: &GroupKey) -> f64 {
        self.counts.get(key).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn to_report(&self) -> FindingReport {
        FindingReport {
            spec: self.spec.clone(),
            threshold: self.threshold,
            rule: self.rule,
            total: self.total,
            majority: self.majority_key.joined(),
            imbalanced: self.is_imbalanced(),
            groups: self
                .counts
                .iter()
                .map(|(k, &count)| GroupShare {
                    group: k.joined(),
                    count,
                    share: self.share(k),
                    under_represented: self.under_represented.contains(k),
                })
                .collect(),
        }
    }
}

/// Serialized form of an [`ImbalanceFinding`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingReport {
    pub spec: GroupSpec,
    pub threshold: f64,
    pub rule: ImbalanceRule,
    pub total: usize,
    pub majority: String,
    pub imbalanced: bool,
    pub groups: Vec<GroupShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub group: String,
    pub count: usize,
    pub share: f64,
    pub under_represented: bool,
}

/// Applies the imbalance rule to precomputed group counts.
pub fn detect_imbalance_in_counts(
    spec: &GroupSpec,
    counts: BTreeMap<GroupKey, usize>,
    threshold: f64,
    rule: ImbalanceRule,
) -> Result<ImbalanceFinding> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "imbalance threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    // BTreeMap iterates in canonical key order, so the first maximum wins ties.
    let (majority_key, &majority) = counts
        .iter()
        .fold(
            None,
            |best: Option<(&GroupKey, &usize)>, (k, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((k, c)),
            },
        )
        .expect("non-empty counts");
    let majority_key = majority_key.clone();
    let under_represented = counts
        .iter()
        .filter(|&(_, &c)| rule.difference(majority, c, total) > threshold)
        .map(|(k, _)| k.clone())
        .collect();
    Ok(ImbalanceFinding {
        spec: spec.clone(),
        counts,
        total,
        majority_key,
        under_represented,
        threshold,
        rule,
    })
}

/// Flags the groups of `spec` that trail the majority by more than
/// `threshold`.
pub fn detect_imbalance(
    dataset: &Dataset,
    spec: &GroupSpec,
    threshold: f64,
    rule: ImbalanceRule,
) -> Result<ImbalanceFinding> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let counts = group_counts(dataset, spec)?;
    detect_imbalance_in_counts(spec, counts, threshold, rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    StandaloneImbalanced,
    CombinationImbalanced,
    ForcedByConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub spec: GroupSpec,
    pub provenance: Provenance,
}

/// The ordered set of attribute selections eligible for oversampling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn specs(&self) -> impl Iterator<Item = &GroupSpec> {
        self.candidates.iter().map(|c| &c.spec)
    }

    pub fn contains(&self, spec: &GroupSpec) -> bool {
        self.specs().any(|s| s == spec)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateParams {
    /// Schema attributes on which the detector showed an FNR gap.
    pub biased_attributes: Vec<String>,
    pub max_combo_arity: usize,
    pub threshold: f64,
    pub rule: ImbalanceRule,
    /// Also search combinations for biased attributes that are already
    /// imbalanced on their own. With `false`, only balanced biased
    /// attributes are combined.
    pub combine_imbalanced: bool,
    /// Specs always added to the set.
    pub forced: Vec<GroupSpec>,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self {
            biased_attributes: Vec::new(),
            max_combo_arity: DEFAULT_MAX_COMBO_ARITY,
            threshold: DEFAULT_IMBALANCE_THRESHOLD,
            rule: ImbalanceRule::default(),
            combine_imbalanced: true,
            forced: Vec::new(),
        }
    }
}

/// Builds the candidate set: imbalanced standalone attributes (label
/// included), then imbalanced combinations of each biased attribute with
/// other attributes and/or the label, up to `max_combo_arity` names.
pub fn build_candidate_set(dataset: &Dataset, params: &CandidateParams) -> Result<CandidateSet> {
    if params.max_combo_arity == 0 {
        return Err(Error::InvalidConfig(
            "max_combo_arity must be at least 1".into(),
        ));
    }
    for name in &params.biased_attributes {
        if !dataset.schema().contains(name) {
            return Err(Error::UnknownAttribute(name.clone()));
        }
    }
    let imbalanced = |spec: &GroupSpec| -> Result<bool> {
        Ok(detect_imbalance(dataset, spec, params.threshold, params.rule)?.is_imbalanced())
    };

    let mut pool: Vec<String> = dataset.schema().names().map(String::from).collect();
    pool.push(LABEL_ATTRIBUTE.to_string());
    pool.sort();

    let mut standalone = Vec::new();
    for name in &pool {
        let spec = GroupSpec::single(name);
        if imbalanced(&spec)? {
            standalone.push(spec);
        }
    }

    let mut combos: Vec<GroupSpec> = Vec::new();
    let mut biased: Vec<&String> = params.biased_attributes.iter().collect();
    biased.sort();
    biased.dedup();
    for attr in biased {
        let spec = GroupSpec::single(attr);
        if !params.combine_imbalanced && standalone.contains(&spec) {
            continue;
        }
        let others: Vec<&String> = pool.iter().filter(|n| *n != attr).collect();
        for size in 1..params.max_combo_arity.min(others.len() + 1) {
            for subset in combinations(&others, size) {
                let combo = GroupSpec::new(
                    std::iter::once(attr.clone()).chain(subset.into_iter().cloned()),
                )?;
                if !combos.contains(&combo) && imbalanced(&combo)? {
                    combos.push(combo);
                }
            }
        }
    }
    combos.sort_by(|a, b| a.arity().cmp(&b.arity()).then_with(|| a.cmp(b)));

    let mut candidates: Vec<Candidate> = standalone
        .into_iter()
        .map(|spec| Candidate {
            spec,
            provenance: Provenance::StandaloneImbalanced,
        })
        .chain(combos.into_iter().map(|spec| Candidate {
            spec,
            provenance: Provenance::CombinationImbalanced,
        }))
        .collect();
    for spec in &params.forced {
        dataset.check_spec(spec)?;
        if !candidates.iter().any(|c| &c.spec == spec) {
            candidates.push(Candidate {
                spec: spec.clone(),
                provenance: Provenance::ForcedByConfig,
            });
        }
    }
    Ok(CandidateSet { candidates })
}

/// All `size`-element subsets of `items`, preserving order.
fn combinations<T: Copy>(items: &[T], size: usize) -> Vec<Vec<T>> {
    fn rec<T: Copy>(
        items: &[T],
        size: usize,
        start: usize,
        cur: &mut Vec<T>,
        out: &mut Vec<Vec<T>>,
    ) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, size, 0, &mut Vec::with_capacity(size), &mut out);
    out
}

/// Audit of every standalone attribute (label included) plus the candidate
/// specs, as written to `audit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub threshold: f64,
    pub rule: ImbalanceRule,
    pub findings: Vec<FindingReport>,
    pub candidates: CandidateSet,
}

pub fn audit_report(dataset: &Dataset, params: &CandidateParams) -> Result<AuditReport> {
    let candidates = build_candidate_set(dataset, params)?;
    let mut specs: Vec<GroupSpec> = dataset.schema().names().map(GroupSpec::single).collect();
    specs.push(GroupSpec::single(LABEL_ATTRIBUTE));
    for spec in candidates.specs() {
        if !specs.contains(spec) {
            specs.push(spec.clone());
        }
    }
    let findings = specs
        .iter()
        .map(|s| detect_imbalance(dataset, s, params.threshold, params.rule).map(|f| f.to_report()))
        .collect::<Result<_>>()?;
    Ok(AuditReport {
        threshold: params.threshold,
        rule: params.rule,
        findings,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(spec: &GroupSpec, pairs: &[(&str, usize)]) -> BTreeMap<GroupKey, usize> {
        pairs
            .iter()
            .map(|&(v, c)| (GroupKey::new(spec.clone(), vec![v.to_string()]), c))
            .collect()
    }

    #[test]
    fn equal_groups_are_balanced() {
        let spec = GroupSpec::single("gender");
        let f = detect_imbalance_in_counts(
            &spec,
            counts(&spec, &[("F", 50), ("M", 50)]),
            0.15,
            ImbalanceRule::ShareOfTotal,
        )
        .unwrap();
        assert!(!f.is_imbalanced());
        // tie resolved to the canonically first key
        assert_eq!(f.majority_key.values, vec!["F".to_string()]);
    }

    #[test]
    fn ratio_rule_is_available() {
        let spec = GroupSpec::single("gender");
        let c = counts(&spec, &[("F", 40), ("M", 50)]);
        let share = detect_imbalance_in_counts(&spec, c.clone(), 0.15, ImbalanceRule::ShareOfTotal)
            .unwrap();
        let ratio =
            detect_imbalance_in_counts(&spec, c, 0.15, ImbalanceRule::RatioToMajority).unwrap();
        assert!(!share.is_imbalanced()); // 10/90 = 0.111
        assert!(ratio.is_imbalanced()); // 10/50 = 0.2
    }

    #[test]
    fn threshold_must_be_a_fraction() {
        let spec = GroupSpec::single("gender");
        let c = counts(&spec, &[("F", 4), ("M", 5)]);
        assert!(detect_imbalance_in_counts(&spec, c, 1.5, ImbalanceRule::ShareOfTotal).is_err());
    }

    #[test]
    fn combinations_enumerate_subsets() {
        let items = ["a", "b", "c"];
        assert_eq!(
            combinations(&items, 2),
            vec![vec!["a", "b"], vec!["a", "c"], vec!["b", "c"]]
        );
        assert_eq!(combinations(&items, 3).len(), 1);
    }
}
