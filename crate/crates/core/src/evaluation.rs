//! Student-stratified cross-validation, AUC, per-group confusion metrics,
//! FNR-gap reports and the oversampling-technique selection rule.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupSpec, StudentRecord};
use crate::error::{Error, Result};
use crate::oversampling::{apply_plan, ResampledDataset, SamplingPlan, Strategy};
use crate::predictor::{predict_label, Predictor};
use crate::scalar::Scalar;
use crate::seed;

/// Groups with fewer members are computed but excluded from gaps.
pub const MIN_REPORTED_GROUP: usize = 10;
pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_DEGRADATION_LIMIT: f64 = 0.15;

/// Fold index of every record, aligned with the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len())
            .filter(|&i| self.folds[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len())
            .filter(|&i| self.folds[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.folds.iter().for_each(|&f| sizes[f] += 1);
        sizes
    }

    /// Student id → fold.
    pub fn assignment(&self, dataset: &Dataset) -> BTreeMap<String, usize> {
        dataset
            .records()
            .iter()
            .zip(&self.folds)
            .map(|(r, &f)| (r.student_id.clone(), f))
            .collect()
    }

    /// Label-1 count per fold.
    pub fn positives_per_fold(&self, labels: &[u8]) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for (&f, &l) in self.folds.iter().zip(labels) {
            counts[f] += l as usize;
        }
        counts
    }
}

/// Shuffles each label stratum with `seed` and deals it round-robin into
/// `k` folds. The negative stratum continues dealing where the positive
/// stratum stopped, so fold sizes differ by at most one.
pub fn stratified_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    let mut strata: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in dataset.records().iter().enumerate() {
        strata[r.label as usize].push(i);
    }
    for (label, stratum) in strata.iter().enumerate() {
        if stratum.len() < k {
            return Err(Error::TooFewRecords(format!(
                "label {label} has {} records, fewer than {k} folds",
                stratum.len()
            )));
        }
    }
    let mut folds = vec![0; dataset.len()];
    let mut next = 0;
    for (label, stratum) in [
        (1usize, &mut strata[1].clone()),
        (0, &mut strata[0].clone()),
    ] {
        let mut rng = seed::rng(seed::derive_indexed(seed, "stratum", label as u64));
        stratum.shuffle(&mut rng);
        for &i in stratum.iter() {
            folds[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { k, folds })
}

fn check_labels<S>(scores: &[S], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::AlignmentMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Rank-based (Mann–Whitney) AUC: the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn auc<S: Scalar>(scores: &[S], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Sum of positive ranks, with tied blocks sharing their mean rank.
    // Ranks are doubled so tie averages stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mean_rank = (i + 1 + j + 1) as u128;
        let positives = order[i..=j].iter().filter(|&&o| labels[o] == 1).count() as u128;
        rank_sum2 += twice_mean_rank * positives;
        i = j + 1;
    }
    let (pos, neg) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Area under the empirical ROC curve by trapezoidal integration.
pub fn auc_trapezoid<S: Scalar>(scores: &[S], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        // trapezoid between (fp0, tp0) and (fp, tp), doubled
        area2 += ((fp - fp0) * (tp + tp0)) as u128;
        i = j;
    }
    Ok(area2 as f64 / (2 * pos * neg) as f64)
}

/// Confusion counts and error rates of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub n: usize,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub reported: bool,
}

impl GroupMetrics {
    fn from_counts(group: String, tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        let n = tp + fn_ + fp + tn;
        Self {
            group,
            n,
            tp,
            fn_,
            fp,
            tn,
            fnr: rate(fn_, fn_ + tp),
            fpr: rate(fp, fp + tn),
            reported: n >= MIN_REPORTED_GROUP,
        }
    }
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Exact confusion counts per group of `spec`, in canonical group order.
pub fn confusion_by_group(
    predictions: &[u8],
    labels: &[u8],
    dataset: &Dataset,
    spec: &GroupSpec,
) -> Result<Vec<GroupMetrics>> {
    for found in [predictions.len(), labels.len()] {
        if found != dataset.len() {
            return Err(Error::AlignmentMismatch {
                expected: dataset.len(),
                found,
            });
        }
    }
    let mut cells: BTreeMap<_, [usize; 4]> = BTreeMap::new();
    for ((key, &p), &y) in dataset.keys(spec)?.into_iter().zip(predictions).zip(labels) {
        let c = cells.entry(key).or_default();
        match (y, p) {
            (1, 1) => c[0] += 1,
            (1, _) => c[1] += 1,
            (_, 1) => c[2] += 1,
            _ => c[3] += 1,
        }
    }
    Ok(cells
        .into_iter()
        .map(|(k, [tp, fn_, fp, tn])| GroupMetrics::from_counts(k.joined(), tp, fn_, fp, tn))
        .collect())
}

/// `max - min` FNR over reported groups with a defined FNR.
pub fn fnr_gap(groups: &[GroupMetrics]) -> Option<f64> {
    spread(groups.iter().filter(|g| g.reported).filter_map(|g| g.fnr))
}

pub fn fpr_gap(groups: &[GroupMetrics]) -> Option<f64> {
    spread(groups.iter().filter(|g| g.reported).filter_map(|g| g.fpr))
}

fn spread(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut lo, mut hi, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        n += 1;
    }
    (n >= 2).then_some(hi - lo)
}

/// What to do to the training fold before fitting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mitigation {
    Baseline,
    Oversample { strategy: Strategy, spec: GroupSpec },
}

impl Mitigation {
    pub fn oversample(strategy: Strategy, spec: GroupSpec) -> Self {
        Mitigation::Oversample { strategy, spec }
    }

    /// Stable identifier such as `baseline` or `equal@gender+intervention`.
    pub fn id(&self) -> String {
        match self {
            Mitigation::Baseline => "baseline".into(),
            Mitigation::Oversample { strategy, spec } => format!("{strategy}@{spec}"),
        }
    }

    pub fn is_behavioral(&self) -> bool {
        matches!(self, Mitigation::Oversample { spec, .. } if spec.uses_cluster())
    }
}

impl fmt::Display for Mitigation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// How per-group rates are combined across test folds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Confusion counts summed over all test folds.
    #[default]
    Pooled,
    /// Per-fold rates averaged over the folds where they are defined.
    FoldMacro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub folds: usize,
    pub seed: u64,
    pub audited_attributes: Vec<String>,
    pub aggregation: Aggregation,
}

impl EvalSettings {
    pub fn new(audited_attributes: Vec<String>, seed: u64) -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            seed,
            audited_attributes,
            aggregation: Aggregation::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeFairness {
    pub attribute: String,
    pub groups: Vec<GroupMetrics>,
    pub fnr_gap: Option<f64>,
    pub fpr_gap: Option<f64>,
}

/// AUC and per-group error rates of one evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub config_id: String,
    pub mitigation: Mitigation,
    pub seed: u64,
    pub folds: usize,
    pub aggregation: Aggregation,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub fold_aucs: Vec<Option<f64>>,
    pub overall_fnr: Option<f64>,
    pub overall_fpr: Option<f64>,
    pub attributes: Vec<AttributeFairness>,
    /// Mean of the defined per-attribute FNR gaps.
    pub selection_score: Option<f64>,
    pub flags: Vec<String>,
}

impl FairnessReport {
    pub fn gap(&self, attribute: &str) -> Option<f64> {
        self.attributes
            .iter()
            .find(|a| a.attribute == attribute)
            .and_then(|a| a.fnr_gap)
    }

    /// Plain-text table of the report.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let num = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(out, "configuration: {}", self.config_id);
        let _ = writeln!(
            out,
            "AUC {:.4} ± {:.4} over {} folds | overall FNR {} | overall FPR {} | selection score {}",
            self.auc_mean,
            self.auc_std,
            self.folds,
            num(self.overall_fnr),
            num(self.overall_fpr),
            num(self.selection_score)
        );
        for attr in &self.attributes {
            let _ = writeln!(
                out,
                "  {}: FNR gap {} | FPR gap {}",
                attr.attribute,
                num(attr.fnr_gap),
                num(attr.fpr_gap)
            );
            let _ = writeln!(
                out,
                "    {:<16} {:>5} {:>5} {:>5} {:>5} {:>5} {:>8} {:>8}",
                "group", "n", "tp", "fn", "fp", "tn", "FNR", "FPR"
            );
            for g in &attr.groups {
                if g.reported {
                    let _ = writeln!(
                        out,
                        "    {:<16} {:>5} {:>5} {:>5} {:>5} {:>5} {:>8} {:>8}",
                        g.group,
                        g.n,
                        g.tp,
                        g.fn_,
                        g.fp,
                        g.tn,
                        num(g.fnr),
                        num(g.fpr)
                    );
                } else {
                    let _ = writeln!(
                        out,
                        "    {:<16} {:>5} excluded (<{MIN_REPORTED_GROUP})",
                        g.group, g.n
                    );
                }
            }
        }
        if !self.flags.is_empty() {
            let _ = writeln!(out, "  flags: {}", self.flags.join("; "));
        }
        out
    }
}

/// Per-fold record of what was trained and tested, for leakage audits.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRun {
    pub fold: usize,
    pub plan: Option<SamplingPlan>,
    /// Student ids of every training row, duplicates included.
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct EvaluationOutcome {
    pub report: FairnessReport,
    pub folds: Vec<FoldRun>,
}

struct FoldResult {
    run: FoldRun,
    test_indices: Vec<usize>,
    predictions: Option<Vec<u8>>,
    auc: Option<f64>,
    flags: Vec<String>,
}

fn run_fold(
    dataset: &Dataset,
    assignment: &FoldAssignment,
    fold: usize,
    mitigation: &Mitigation,
    settings: &EvalSettings,
    predictor: &dyn Predictor,
) -> Result<FoldResult> {
    let test_indices = assignment.test_indices(fold);
    let train_indices = assignment.train_indices(fold);
    let train_set = dataset.subset(&train_indices);
    let (plan, resampled) = match mitigation {
        Mitigation::Baseline => (None, ResampledDataset::identity(&train_set)),
        Mitigation::Oversample { strategy, spec } => {
            let plan_seed = seed::derive_indexed(settings.seed, "oversample", fold as u64);
            let plan = SamplingPlan::for_dataset(&train_set, spec, *strategy, plan_seed)?;
            let resampled = apply_plan(&train_set, &plan)?;
            (Some(plan), resampled)
        }
    };
    let train_records: Vec<&StudentRecord> = resampled.records().collect();
    let test_records: Vec<&StudentRecord> = test_indices
        .iter()
        .map(|&i| &dataset.records()[i])
        .collect();

    let train_ids: Vec<String> = train_records.iter().map(|r| r.student_id.clone()).collect();
    let test_ids: Vec<String> = test_records.iter().map(|r| r.student_id.clone()).collect();
    let test_set: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    if train_ids.iter().any(|id| test_set.contains(id.as_str())) {
        return Err(Error::Leakage { fold });
    }

    let mut flags = Vec::new();
    if let Some(p) = &plan {
        flags.extend(p.notes.iter().cloned());
    }
    let model_seed = seed::derive_indexed(settings.seed, "model", fold as u64);
    let scores = match predictor.fit_predict(&train_records, &test_records, model_seed) {
        Ok(s) => s,
        Err(Error::SingleClassFold { .. }) => {
            flags.push(format!("fold {fold}: single-class training fold skipped"));
            return Ok(FoldResult {
                run: FoldRun {
                    fold,
                    plan,
                    train_ids,
                    test_ids,
                    skipped: true,
                },
                test_indices,
                predictions: None,
                auc: None,
                flags,
            });
        }
        Err(e) => return Err(e),
    };
    let labels: Vec<u8> = test_records.iter().map(|r| r.label).collect();
    let auc = match auc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => {
            flags.push(format!(
                "fold {fold}: single-class test fold, AUC undefined"
            ));
            None
        }
        Err(e) => return Err(e),
    };
    Ok(FoldResult {
        run: FoldRun {
            fold,
            plan,
            train_ids,
            test_ids,
            skipped: false,
        },
        test_indices,
        predictions: Some(predict_label(&scores, predictor.threshold())),
        auc,
        flags,
    })
}

/// Cross-validates one mitigation: every training fold is (optionally)
/// oversampled, the untouched test fold is scored, and test predictions are
/// pooled into per-group metrics for the audited attributes.
pub fn evaluate_configuration(
    dataset: &Dataset,
    mitigation: &Mitigation,
    settings: &EvalSettings,
    predictor: &dyn Predictor,
) -> Result<EvaluationOutcome> {
    if let Mitigation::Oversample { strategy, spec } = mitigation {
        dataset.check_spec(spec)?;
        if !strategy.applies_to(spec) {
            return Err(Error::InvalidConfig(format!(
                "{strategy} oversampling needs a combined spec, got `{spec}`"
            )));
        }
    }
    for attr in &settings.audited_attributes {
        dataset.check_spec(&GroupSpec::single(attr))?;
    }
    let assignment = stratified_folds(
        dataset,
        settings.folds,
        seed::derive(settings.seed, "folds"),
    )?;
    let results: Vec<FoldResult> = (0..settings.folds)
        .into_par_iter()
        .map(|f| run_fold(dataset, &assignment, f, mitigation, settings, predictor))
        .collect::<Result<_>>()?;

    let mut flags: Vec<String> = Vec::new();
    for r in &results {
        for flag in &r.flags {
            if !flags.contains(flag) {
                flags.push(flag.clone());
            }
        }
    }

    let fold_aucs: Vec<Option<f64>> = results.iter().map(|r| r.auc).collect();
    let aucs: Vec<f64> = fold_aucs.iter().flatten().copied().collect();
    let (auc_mean, auc_std) = mean_std(&aucs);

    // Pool test predictions over the folds that were evaluated.
    let mut predictions: Vec<Option<u8>> = vec![None; dataset.len()];
    for r in &results {
        if let Some(p) = &r.predictions {
            for (&i, &y) in r.test_indices.iter().zip(p) {
                predictions[i] = Some(y);
            }
        }
    }
    let evaluated: Vec<usize> = (0..dataset.len())
        .filter(|&i| predictions[i].is_some())
        .collect();
    let pooled = dataset.subset(&evaluated);
    let pooled_preds: Vec<u8> = evaluated.iter().map(|&i| predictions[i].unwrap()).collect();
    let pooled_labels = pooled.labels();

    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in pooled_preds.iter().zip(&pooled_labels) {
        match (y, p) {
            (1, 1) => tp += 1,
            (1, _) => fn_ += 1,
            (_, 1) => fp += 1,
            _ => tn += 1,
        }
    }

    let mut attributes = Vec::new();
    for attr in &settings.audited_attributes {
        let spec = GroupSpec::single(attr);
        let mut groups = confusion_by_group(&pooled_preds, &pooled_labels, &pooled, &spec)?;
        if settings.aggregation == Aggregation::FoldMacro {
            macro_average(dataset, &results, &spec, &mut groups)?;
        }
        let fnr_gap = fnr_gap(&groups);
        if fnr_gap.is_none() {
            flags.push(format!(
                "{attr}: fewer than two reported groups with a defined FNR"
            ));
        }
        attributes.push(AttributeFairness {
            attribute: attr.clone(),
            fpr_gap: fpr_gap(&groups),
            fnr_gap,
            groups,
        });
    }
    let gaps: Vec<f64> = attributes.iter().filter_map(|a| a.fnr_gap).collect();
    let selection_score = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);

    Ok(EvaluationOutcome {
        report: FairnessReport {
            config_id: mitigation.id(),
            mitigation: mitigation.clone(),
            seed: settings.seed,
            folds: settings.folds,
            aggregation: settings.aggregation,
            auc_mean,
            auc_std,
            fold_aucs,
            overall_fnr: rate(fn_, fn_ + tp),
            overall_fpr: rate(fp, fp + tn),
            attributes,
            selection_score,
            flags,
        },
        folds: results.into_iter().map(|r| r.run).collect(),
    })
}

// Replaces pooled rates by the mean of per-fold rates (folds where the
// rate is undefined are skipped). Counts and `reported` stay pooled.
fn macro_average(
    dataset: &Dataset,
    results: &[FoldResult],
    spec: &GroupSpec,
    groups: &mut [GroupMetrics],
) -> Result<()> {
    let mut fnrs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut fprs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        let Some(preds) = &r.predictions else {
            continue;
        };
        let fold_set = dataset.subset(&r.test_indices);
        for g in confusion_by_group(preds, &fold_set.labels(), &fold_set, spec)? {
            if let Some(v) = g.fnr {
                fnrs.entry(g.group.clone()).or_default().push(v);
            }
            if let Some(v) = g.fpr {
                fprs.entry(g.group).or_default().push(v);
            }
        }
    }
    let mean = |v: Option<&Vec<f64>>| v.filter(|v| !v.is_empty()).map(|v| mean_std(v).0);
    for g in groups.iter_mut() {
        g.fnr = mean(fnrs.get(&g.group));
        g.fpr = mean(fprs.get(&g.group));
    }
    Ok(())
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Chosen,
    /// Overall FNR exceeds the baseline by more than the limit.
    DegradationExceeded,
    /// Returned although every candidate exceeded the limit.
    ChosenDegradationAccepted,
    /// Ranked below the chosen candidate.
    NotConsidered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub rank: usize,
    pub config_id: String,
    pub selection_score: Option<f64>,
    pub overall_fnr: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: String,
    pub baseline_overall_fnr: Option<f64>,
    pub degradation_limit: f64,
    pub degradation_accepted: bool,
    pub trace: Vec<TraceEntry>,
}

fn cmp_option(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Picks the candidate with the lowest selection score whose overall FNR
/// stays within `degradation_limit` (absolute) of the baseline. If none
/// does, the best-scored candidate is returned and flagged.
pub fn select_technique(
    candidates: &[FairnessReport],
    baseline: &FairnessReport,
    degradation_limit: f64,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let audited = |r: &FairnessReport| -> BTreeSet<String> {
        r.attributes.iter().map(|a| a.attribute.clone()).collect()
    };
    let expected = audited(baseline);
    if let Some(bad) = candidates.iter().find(|c| audited(c) != expected) {
        return Err(Error::InvalidConfig(format!(
            "candidate `{}` was audited on different attributes than the baseline",
            bad.config_id
        )));
    }
    let mut ranked: Vec<&FairnessReport> = candidates.iter().collect();
    ranked.sort_by(|a, b| {
        cmp_option(a.selection_score, b.selection_score)
            .then_with(|| cmp_option(a.overall_fnr, b.overall_fnr))
            .then_with(|| a.config_id.cmp(&b.config_id))
    });
    let within_limit = |r: &FairnessReport| match (r.overall_fnr, baseline.overall_fnr) {
        (Some(fnr), Some(base)) => fnr <= base + degradation_limit + 1e-12,
        _ => true,
    };
    let chosen = ranked.iter().position(|r| within_limit(r));
    let trace = ranked
        .iter()
        .enumerate()
        .map(|(i, r)| TraceEntry {
            rank: i + 1,
            config_id: r.config_id.clone(),
            selection_score: r.selection_score,
            overall_fnr: r.overall_fnr,
            verdict: match chosen {
                Some(c) if i == c => Verdict::Chosen,
                Some(c) if i > c => Verdict::NotConsidered,
                None if i == 0 => Verdict::ChosenDegradationAccepted,
                _ => Verdict::DegradationExceeded,
            },
        })
        .collect();
    Ok(Selection {
        chosen: ranked[chosen.unwrap_or(0)].config_id.clone(),
        baseline_overall_fnr: baseline.overall_fnr,
        degradation_limit,
        degradation_accepted: chosen.is_none(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_extremes() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5f32; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
        assert!(matches!(
            auc(&[0.1], &[1, 0]),
            Err(Error::AlignmentMismatch { .. })
        ));
    }

    #[test]
    fn trapezoid_handles_ties() {
        let s = [0.3, 0.3, 0.7, 0.7, 0.1];
        let y = [1, 0, 1, 0, 0];
        assert_eq!(auc(&s, &y).unwrap(), auc_trapezoid(&s, &y).unwrap());
    }

    #[test]
    fn gap_ignores_unreported_and_undefined() {
        let g = |fnr: Option<f64>, reported: bool| GroupMetrics {
            group: String::new(),
            n: 0,
            tp: 0,
            fn_: 0,
            fp: 0,
            tn: 0,
            fnr,
            fpr: None,
            reported,
        };
        let groups = [
            g(Some(0.2), true),
            g(Some(0.9), false),
            g(None, true),
            g(Some(0.5), true),
        ];
        assert!((fnr_gap(&groups).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(fnr_gap(&groups[..2]), None);
    }

    #[test]
    fn mitigation_ids() {
        assert_eq!(Mitigation::Baseline.id(), "baseline");
        let m = Mitigation::oversample(Strategy::Equal, "intervention+gender".parse().unwrap());
        assert_eq!(m.id(), "equal@gender+intervention");
        assert!(!m.is_behavioral());
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
