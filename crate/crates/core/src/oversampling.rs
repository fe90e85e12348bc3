//! Target-count rules for the five oversampling techniques, and seeded
//! random oversampling with replacement that realizes a plan exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    group_counts, partition_by_group, Dataset, GroupKey, GroupSpec, StudentRecord,
    CLUSTER_ATTRIBUTE, LABEL_ATTRIBUTE,
};
use crate::error::{Error, Result};
use crate::seed;

/// Groups smaller than this are left alone by [`Strategy::Minor`].
pub const DEFAULT_NOISE_FLOOR: usize = 10;

pub type Counts = BTreeMap<GroupKey, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Equal,
    Majority,
    Cascade,
    Minor,
    Within,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Equal,
        Strategy::Majority,
        Strategy::Cascade,
        Strategy::Minor,
        Strategy::Within,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Equal => "equal",
            Strategy::Majority => "majority",
            Strategy::Cascade => "cascade",
            Strategy::Minor => "minor",
            Strategy::Within => "within",
        }
    }

    /// Within only makes sense on combined specs.
    pub fn applies_to(self, spec: &GroupSpec) -> bool {
        self != Strategy::Within || spec.arity() >= 2
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

fn ensure_non_empty(counts: &Counts) -> Result<()> {
    if counts.is_empty() || counts.values().any(|&c| c == 0) {
        return Err(Error::EmptyGroups);
    }
    Ok(())
}

// First key with the maximal count, in canonical order.
fn majority(counts: &Counts) -> (&GroupKey, usize) {
    let mut best: Option<(&GroupKey, usize)> = None;
    for (k, &c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.expect("non-empty counts")
}

/// Every group grows to the largest group's size.
pub fn plan_equal(counts: &Counts) -> Result<Counts> {
    ensure_non_empty(counts)?;
    let (_, max) = majority(counts);
    Ok(counts.keys().map(|k| (k.clone(), max)).collect())
}

/// The majority group grows by 50% (rounded down); the rest stay.
pub fn plan_majority(counts: &Counts) -> Result<Counts> {
    ensure_non_empty(counts)?;
    if counts.len() > 2 {
        log::debug!(
            "majority oversampling on {} groups; it targets binary structures",
            counts.len()
        );
    }
    let (key, max) = majority(counts);
    let key = key.clone();
    let mut targets = counts.clone();
    targets.insert(key, max * 3 / 2);
    Ok(targets)
}

/// Every group grows to the size of the smallest strictly larger group.
pub fn plan_cascade(counts: &Counts) -> Result<Counts> {
    ensure_non_empty(counts)?;
    let sizes: BTreeSet<usize> = counts.values().copied().collect();
    Ok(counts
        .iter()
        .map(|(k, &c)| {
            let next = sizes.range(c + 1..).next().copied().unwrap_or(c);
            (k.clone(), next)
        })
        .collect())
}

/// Groups with at least `noise_floor` members grow to the majority size;
/// smaller groups are left untouched.
pub fn plan_minor(counts: &Counts, noise_floor: usize) -> Result<Counts> {
    ensure_non_empty(counts)?;
    let (_, max) = majority(counts);
    Ok(counts
        .iter()
        .map(|(k, &c)| (k.clone(), if c >= noise_floor { max } else { c }))
        .collect())
}

fn minor_guarded(counts: &Counts, noise_floor: usize) -> Vec<&GroupKey> {
    let (_, max) = majority(counts);
    counts
        .iter()
        .filter(|&(_, &c)| c < noise_floor && c < max)
        .map(|(k, _)| k)
        .collect()
}

/// Two-stage plan over a combined spec: cells are first balanced within
/// each main-attribute class, then the main classes are balanced with the
/// growth spread evenly over their cells.
#[derive(Debug, Clone, PartialEq)]
pub struct WithinPlan {
    pub spec: GroupSpec,
    pub main_attribute: String,
    pub stage1: Counts,
    pub targets: Counts,
    pub notes: Vec<String>,
}

/// Main attribute used by within oversampling on `spec`: the cluster when
/// present, then the label, then the first name.
pub fn within_main_attribute(spec: &GroupSpec) -> Result<&str> {
    if spec.arity() < 2 {
        return Err(Error::InvalidConfig(format!(
            "within oversampling needs a combined spec, got `{spec}`"
        )));
    }
    Ok([CLUSTER_ATTRIBUTE, LABEL_ATTRIBUTE]
        .into_iter()
        .find(|n| spec.contains(n))
        .unwrap_or(spec.names()[0].as_str()))
}

/// Within plan from counts keyed by a combined spec that contains `main`.
pub fn within_targets(counts: &Counts, main: &str) -> Result<WithinPlan> {
    ensure_non_empty(counts)?;
    let spec = counts.keys().next().expect("non-empty").spec.clone();
    let main_pos = spec
        .position(main)
        .ok_or_else(|| Error::UnknownAttribute(main.to_string()))?;
    if spec.arity() < 2 {
        return Err(Error::InvalidConfig(
            "within oversampling needs at least one sub-attribute".into(),
        ));
    }
    let sub_of = |k: &GroupKey| -> Vec<String> {
        k.values
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != main_pos)
            .map(|(_, v)| v.clone())
            .collect()
    };

    let mut classes: BTreeMap<&str, Vec<(&GroupKey, usize)>> = BTreeMap::new();
    for (k, &c) in counts {
        classes
            .entry(k.values[main_pos].as_str())
            .or_default()
            .push((k, c));
    }
    let all_subs: BTreeSet<Vec<String>> = counts.keys().map(sub_of).collect();

    let mut notes = Vec::new();
    let mut stage1 = Counts::new();
    let mut totals = BTreeMap::new();
    for (class, cells) in &classes {
        let present: BTreeSet<Vec<String>> = cells.iter().map(|(k, _)| sub_of(k)).collect();
        for missing in all_subs.difference(&present) {
            let note = format!(
                "within: {main}={class} has no members with {}; that cell stays absent",
                missing.join("|")
            );
            log::debug!("{note}");
            notes.push(note);
        }
        let cell_max = cells
            .iter()
            .map(|&(_, c)| c)
            .max()
            .expect("non-empty class");
        for (k, _) in cells {
            stage1.insert((*k).clone(), cell_max);
        }
        totals.insert(*class, cell_max * cells.len());
    }

    let target_total = totals.values().copied().max().expect("non-empty");
    let mut targets = Counts::new();
    for cells in classes.values() {
        let n = cells.len();
        let (base, rem) = (target_total / n, target_total % n);
        for (i, (k, _)) in cells.iter().enumerate() {
            targets.insert((*k).clone(), base + usize::from(i < rem));
        }
    }
    Ok(WithinPlan {
        spec,
        main_attribute: main.to_string(),
        stage1,
        targets,
        notes,
    })
}

/// Within plan for `main` combined with `sub_attributes` on `dataset`.
pub fn plan_within(dataset: &Dataset, main: &str, sub_attributes: &[&str]) -> Result<WithinPlan> {
    if sub_attributes.is_empty() {
        return Err(Error::InvalidConfig(
            "within oversampling needs at least one sub-attribute".into(),
        ));
    }
    let spec = GroupSpec::new(std::iter::once(main).chain(sub_attributes.iter().copied()))?;
    let counts = group_counts(dataset, &spec)?;
    within_targets(&counts, main)
}

/// Per-group target counts under one strategy; the only object
/// [`apply_plan`] executes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanRecord", into = "PlanRecord")]
pub struct SamplingPlan {
    pub spec: GroupSpec,
    pub strategy: Strategy,
    pub seed: u64,
    pub original: Counts,
    pub targets: Counts,
    /// Conditions worth surfacing in reports (guards that fired, warnings).
    pub notes: Vec<String>,
}

impl SamplingPlan {
    /// Computes the targets of `strategy` for the given group counts.
    pub fn from_counts(
        spec: &GroupSpec,
        counts: Counts,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Self> {
        let mut notes = Vec::new();
        let targets = match strategy {
            Strategy::Equal => plan_equal(&counts)?,
            Strategy::Majority => {
                if counts.len() > 2 {
                    notes.push(format!(
                        "majority: {} groups, not a binary structure",
                        counts.len()
                    ));
                }
                plan_majority(&counts)?
            }
            Strategy::Cascade => plan_cascade(&counts)?,
            Strategy::Minor => {
                let guarded = minor_guarded(&counts, DEFAULT_NOISE_FLOOR);
                if !guarded.is_empty() {
                    notes.push(format!(
                        "minor: groups below {DEFAULT_NOISE_FLOOR} left untouched: {}",
                        guarded
                            .iter()
                            .map(|k| k.joined())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ));
                }
                plan_minor(&counts, DEFAULT_NOISE_FLOOR)?
            }
            Strategy::Within => {
                let main = within_main_attribute(spec)?;
                let plan = within_targets(&counts, main)?;
                notes.extend(plan.notes);
                plan.targets
            }
        };
        Ok(Self {
            spec: spec.clone(),
            strategy,
            seed,
            original: counts,
            targets,
            notes,
        })
    }

    pub fn for_dataset(
        dataset: &Dataset,
        spec: &GroupSpec,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Self> {
        let counts = group_counts(dataset, spec)?;
        Self::from_counts(spec, counts, strategy, seed)
    }

    pub fn extra_count(&self) -> usize {
        self.targets.values().sum::<usize>() - self.original.values().sum::<usize>()
    }

    pub fn is_identity(&self) -> bool {
        self.targets == self.original
    }
}

#[derive(Serialize, Deserialize)]
struct PlanRecord {
    spec: GroupSpec,
    strategy: Strategy,
    seed: u64,
    original: BTreeMap<String, usize>,
    targets: BTreeMap<String, usize>,
    notes: Vec<String>,
}

impl From<SamplingPlan> for PlanRecord {
    fn from(p: SamplingPlan) -> Self {
        let join = |c: &Counts| c.iter().map(|(k, &v)| (k.joined(), v)).collect();
        PlanRecord {
            original: join(&p.original),
            targets: join(&p.targets),
            spec: p.spec,
            strategy: p.strategy,
            seed: p.seed,
            notes: p.notes,
        }
    }
}

impl TryFrom<PlanRecord> for SamplingPlan {
    type Error = Error;

    fn try_from(r: PlanRecord) -> Result<Self> {
        let split = |m: BTreeMap<String, usize>| -> Result<Counts> {
            m.into_iter()
                .map(|(joined, v)| {
                    let values: Vec<String> = joined.split('|').map(String::from).collect();
                    if values.len() != r.spec.arity() {
                        return Err(Error::PlanGroupMismatch(format!(
                            "key `{joined}` does not match spec `{}`",
                            r.spec
                        )));
                    }
                    Ok((GroupKey::new(r.spec.clone(), values), v))
                })
                .collect()
        };
        Ok(SamplingPlan {
            original: split(r.original)?,
            targets: split(r.targets)?,
            spec: r.spec.clone(),
            strategy: r.strategy,
            seed: r.seed,
            notes: r.notes,
        })
    }
}

/// A dataset plus the indices of duplicated records, in draw order.
#[derive(Debug, Clone)]
pub struct ResampledDataset<'a> {
    pub base: &'a Dataset,
    pub extra_indices: Vec<usize>,
}

impl<'a> ResampledDataset<'a> {
    pub fn identity(base: &'a Dataset) -> Self {
        Self {
            base,
            extra_indices: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.extra_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Base record indices followed by the duplicates.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.base.len()).chain(self.extra_indices.iter().copied())
    }

    pub fn records(&self) -> impl Iterator<Item = &'a StudentRecord> + '_ {
        let base = self.base;
        self.indices().map(move |i| &base.records()[i])
    }

    /// Group counts after resampling.
    pub fn realized_counts(&self, spec: &GroupSpec) -> Result<Counts> {
        let keys = self.base.keys(spec)?;
        let mut counts = Counts::new();
        for i in self.indices() {
            *counts.entry(keys[i].clone()).or_insert(0) += 1;
        }
        Ok(counts)
    }
}

fn group_seed(plan_seed: u64, key: &GroupKey) -> u64 {
    seed::derive(plan_seed, &key.to_string())
}

/// Draws `target - original` members of every group uniformly with
/// replacement. Each group has its own generator seeded from the plan seed
/// and the group key; draws are concatenated in canonical group order.
pub fn apply_plan<'a>(dataset: &'a Dataset, plan: &SamplingPlan) -> Result<ResampledDataset<'a>> {
    let parts = partition_by_group(dataset, &plan.spec)?;
    let found: BTreeSet<&GroupKey> = parts.keys().collect();
    let planned: BTreeSet<&GroupKey> = plan.targets.keys().collect();
    if found != planned {
        let missing: Vec<String> = found.difference(&planned).map(|k| k.to_string()).collect();
        let extra: Vec<String> = planned.difference(&found).map(|k| k.to_string()).collect();
        return Err(Error::PlanGroupMismatch(format!(
            "groups without targets: [{}]; targets without groups: [{}]",
            missing.join("; "),
            extra.join("; ")
        )));
    }
    for (key, members) in &parts {
        let target = plan.targets[key];
        if target < members.len() {
            return Err(Error::TargetBelowOriginal {
                group: key.to_string(),
                target,
                original: members.len(),
            });
        }
    }
    let draws: Vec<Vec<usize>> = parts
        .par_iter()
        .map(|(key, members)| {
            let extra = plan.targets[key] - members.len();
            let mut rng = seed::rng(group_seed(plan.seed, key));
            (0..extra)
                .map(|_| members[rng.random_range(0..members.len())])
                .collect()
        })
        .collect();
    Ok(ResampledDataset {
        base: dataset,
        extra_indices: draws.concat(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(pairs: &[(&str, usize)]) -> Counts {
        let spec = GroupSpec::single("g");
        pairs
            .iter()
            .map(|&(v, n)| (GroupKey::new(spec.clone(), vec![v.into()]), n))
            .collect()
    }

    fn vals(counts: &Counts) -> Vec<usize> {
        counts.values().copied().collect()
    }

    #[test]
    fn equal_examples() {
        assert_eq!(
            vals(&plan_equal(&c(&[("a", 10), ("b", 4)])).unwrap()),
            [10, 10]
        );
        assert_eq!(
            vals(&plan_equal(&c(&[("a", 7), ("b", 7)])).unwrap()),
            [7, 7]
        );
        assert_eq!(
            vals(&plan_equal(&c(&[("a", 12), ("b", 8), ("c", 3)])).unwrap()),
            [12, 12, 12]
        );
        assert!(matches!(
            plan_equal(&Counts::new()),
            Err(Error::EmptyGroups)
        ));
    }

    #[test]
    fn majority_examples() {
        assert_eq!(
            vals(&plan_majority(&c(&[("fail", 60), ("pass", 100)])).unwrap()),
            [60, 150]
        );
        assert_eq!(
            vals(&plan_majority(&c(&[("a", 1), ("b", 1)])).unwrap()),
            [1, 1]
        );
        assert_eq!(
            vals(&plan_majority(&c(&[("a", 7), ("b", 15), ("c", 3)])).unwrap()),
            [7, 22, 3]
        );
        // only the canonically first tied majority grows
        assert_eq!(
            vals(&plan_majority(&c(&[("a", 4), ("b", 4)])).unwrap()),
            [6, 4]
        );
        let spec = GroupSpec::single("g");
        let plan = SamplingPlan::from_counts(
            &spec,
            c(&[("a", 7), ("b", 15), ("c", 3)]),
            Strategy::Majority,
            0,
        )
        .unwrap();
        assert_eq!(plan.notes.len(), 1);
    }

    #[test]
    fn cascade_examples() {
        assert_eq!(
            vals(&plan_cascade(&c(&[("o1", 7), ("o2", 15), ("o3", 3)])).unwrap()),
            [15, 15, 7]
        );
        assert_eq!(
            vals(&plan_cascade(&c(&[("a", 5), ("b", 5)])).unwrap()),
            [5, 5]
        );
        assert_eq!(
            vals(&plan_cascade(&c(&[("a", 2), ("b", 2), ("c", 9)])).unwrap()),
            [9, 9, 9]
        );
    }

    #[test]
    fn minor_examples() {
        assert_eq!(
            vals(&plan_minor(&c(&[("a", 40), ("b", 15), ("c", 6)]), 10).unwrap()),
            [40, 40, 6]
        );
        assert_eq!(
            vals(&plan_minor(&c(&[("a", 40), ("b", 15)]), 10).unwrap()),
            [40, 40]
        );
        assert_eq!(
            vals(&plan_minor(&c(&[("a", 9), ("b", 8)]), 10).unwrap()),
            [9, 8]
        );
        let spec = GroupSpec::single("g");
        let plan = SamplingPlan::from_counts(
            &spec,
            c(&[("a", 40), ("b", 15), ("c", 6)]),
            Strategy::Minor,
            0,
        )
        .unwrap();
        assert!(plan.notes[0].contains('c'));
    }

    fn within_counts(cells: &[(&str, &str, usize)]) -> Counts {
        let spec = GroupSpec::new([CLUSTER_ATTRIBUTE, "gender"]).unwrap();
        cells
            .iter()
            .map(|&(m, s, n)| (GroupKey::new(spec.clone(), vec![m.into(), s.into()]), n))
            .collect()
    }

    #[test]
    fn within_worked_example() {
        let counts = within_counts(&[("A", "t", 12), ("A", "d", 8), ("B", "t", 6), ("B", "d", 4)]);
        let plan = within_targets(&counts, CLUSTER_ATTRIBUTE).unwrap();
        let get = |m: &str, s: &str, c: &Counts| {
            c[&GroupKey::new(plan.spec.clone(), vec![m.into(), s.into()])]
        };
        assert_eq!(
            [
                get("A", "t", &plan.stage1),
                get("A", "d", &plan.stage1),
                get("B", "t", &plan.stage1),
                get("B", "d", &plan.stage1)
            ],
            [12, 12, 6, 6]
        );
        assert_eq!(
            [
                get("A", "t", &plan.targets),
                get("A", "d", &plan.targets),
                get("B", "t", &plan.targets),
                get("B", "d", &plan.targets)
            ],
            [12, 12, 12, 12]
        );
    }

    #[test]
    fn within_balanced_is_identity_and_missing_cells_warn() {
        let counts = within_counts(&[("A", "t", 5), ("A", "d", 5), ("B", "t", 5), ("B", "d", 5)]);
        let plan = within_targets(&counts, CLUSTER_ATTRIBUTE).unwrap();
        assert_eq!(plan.targets, counts);

        let counts = within_counts(&[("A", "t", 5), ("A", "d", 3), ("B", "t", 2)]);
        let plan = within_targets(&counts, CLUSTER_ATTRIBUTE).unwrap();
        assert_eq!(plan.notes.len(), 1);
        assert_eq!(plan.targets.len(), 3);
        assert_eq!(vals(&plan.targets), [5, 5, 10]);
    }

    #[test]
    fn within_main_attribute_preference() {
        let spec = GroupSpec::new(["gender", LABEL_ATTRIBUTE]).unwrap();
        assert_eq!(within_main_attribute(&spec).unwrap(), LABEL_ATTRIBUTE);
        let spec = GroupSpec::new(["gender", "school"]).unwrap();
        assert_eq!(within_main_attribute(&spec).unwrap(), "gender");
        assert!(within_main_attribute(&GroupSpec::single("gender")).is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("Cascade".parse::<Strategy>().unwrap(), Strategy::Cascade);
        assert!("smote".parse::<Strategy>().is_err());
    }

    #[test]
    fn plan_json_round_trip() {
        let spec = GroupSpec::single("g");
        let plan = SamplingPlan::from_counts(
            &spec,
            c(&[("a", 7), ("b", 15), ("c", 3)]),
            Strategy::Cascade,
            42,
        )
        .unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        assert!(json.contains("\"targets\":{\"a\":15,\"b\":15,\"c\":7}"));
        let back: SamplingPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }
}
