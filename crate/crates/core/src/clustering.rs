//! Behavioral profiles: summary embedding of behavior sequences, seeded
//! k-means with greedy k-means++ seeding, silhouette-based selection of k,
//! and attachment of the resulting `cluster` pseudo-attribute.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, StudentRecord};
use crate::error::{Error, Result};
use crate::scalar::{sq_dist, Scalar};
use crate::seed;

/// Number of summary statistics per raw feature: mean, std, last, slope.
pub const STATS_PER_FEATURE: usize = 4;

/// Per-dimension affine standardization. Constant dimensions map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Standardizer<S> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

impl<S: Scalar> Standardizer<S> {
    pub fn fit(rows: &[Vec<S>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = S::of_usize(rows.len().max(1));
        let mut mean = vec![S::zero(); dim];
        for row in rows {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![S::zero(); dim];
        for row in rows {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, row: &[S]) -> Vec<S> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| {
                if s > S::epsilon() * (S::one() + m.abs()) {
                    (v - m) / s
                } else {
                    S::zero()
                }
            })
            .collect()
    }
}

/// Summary statistics of one behavior sequence, `4·D` values ordered as
/// `[mean, std, last, slope]` per raw feature.
pub fn summarize<S: Scalar>(record: &StudentRecord) -> Vec<S> {
    let steps = record.behavior.len();
    let dim = record.feature_dim();
    let t_count = S::of_usize(steps);
    let t_mean = S::of_usize(steps.saturating_sub(1)) / S::of(2.0);
    let t_var: S = (0..steps)
        .map(|t| {
            let d = S::of_usize(t) - t_mean;
            d * d
        })
        .sum();
    let mut out = Vec::with_capacity(STATS_PER_FEATURE * dim);
    for f in 0..dim {
        let xs = record.behavior.iter().map(|step| S::of(step[f]));
        let mean = xs.clone().sum::<S>() / t_count;
        let var = xs.clone().map(|x| (x - mean) * (x - mean)).sum::<S>() / t_count;
        let last = S::of(record.behavior[steps - 1][f]);
        let slope = if t_var > S::zero() {
            xs.enumerate()
                .map(|(t, x)| (S::of_usize(t) - t_mean) * (x - mean))
                .sum::<S>()
                / t_var
        } else {
            S::zero()
        };
        out.extend([mean, var.sqrt(), last, slope]);
    }
    out
}

/// Standardized summary embedding of a set of students.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorEmbedding<S> {
    pub student_ids: Vec<String>,
    pub raw: Vec<Vec<S>>,
    pub rows: Vec<Vec<S>>,
    pub standardizer: Standardizer<S>,
}

impl<S: Scalar> BehaviorEmbedding<S> {
    /// Standardizes already-summarized rows.
    pub fn from_raw(student_ids: Vec<String>, raw: Vec<Vec<S>>) -> Self {
        let standardizer = Standardizer::fit(&raw);
        let rows = raw.iter().map(|r| standardizer.transform(r)).collect();
        Self {
            student_ids,
            raw,
            rows,
            standardizer,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }
}

pub fn embed_behavior<S: Scalar>(dataset: &Dataset) -> BehaviorEmbedding<S> {
    let ids = dataset
        .records()
        .iter()
        .map(|r| r.student_id.clone())
        .collect();
    let raw = dataset.records().par_iter().map(summarize).collect();
    BehaviorEmbedding::from_raw(ids, raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Output of one k-means fit on raw rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<S> {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<S>>,
    pub inertia: S,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_trace: Vec<S>,
    pub restart: usize,
}

fn cmp_scalar<S: Scalar>(a: &S, b: &S) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

pub fn distinct_rows<S: Scalar>(rows: &[Vec<S>]) -> usize {
    let mut sorted: Vec<&Vec<S>> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| cmp_scalar(x, y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    sorted.dedup();
    sorted.len()
}

fn nearest<S: Scalar>(row: &[S], centroids: &[Vec<S>]) -> (usize, S) {
    let mut best = (0, sq_dist(row, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

// Greedy k-means++: each new center is the best of a few d²-weighted draws.
fn seed_centroids<S: Scalar>(rows: &[Vec<S>], k: usize, rng: &mut impl Rng) -> Vec<Vec<S>> {
    let n = rows.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![rows[rng.random_range(0..n)].clone()];
    let mut d2: Vec<S> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: S = d2.iter().copied().sum();
        let mut best: Option<(usize, S, Vec<S>)> = None;
        for _ in 0..trials {
            let candidate = if total > S::zero() {
                let mut target = S::of(rng.random::<f64>()) * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if w > S::zero() && target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                // rounding can run past the end; land on the last positive weight
                if d2[pick] == S::zero() {
                    pick = d2.iter().rposition(|&w| w > S::zero()).unwrap_or(pick);
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<S> = rows
                .iter()
                .zip(&d2)
                .map(|(r, &d)| d.min(sq_dist(r, &rows[candidate])))
                .collect();
            let potential: S = updated.iter().copied().sum();
            if best.as_ref().is_none_or(|(_, p, _)| potential < *p) {
                best = Some((candidate, potential, updated));
            }
        }
        let (idx, _, updated) = best.expect("at least one trial");
        centroids.push(rows[idx].clone());
        d2 = updated;
    }
    centroids
}

fn assign<S: Scalar>(rows: &[Vec<S>], centroids: &mut [Vec<S>], labels: &mut [usize]) -> S {
    let k = centroids.len();
    let mut dists = vec![S::zero(); rows.len()];
    for (i, row) in rows.iter().enumerate() {
        let (j, d) = nearest(row, centroids);
        labels[i] = j;
        dists[i] = d;
    }
    // Empty clusters take over the point farthest from its own centroid.
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let far = (0..rows.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| cmp_scalar(&dists[a], &dists[b]).then(b.cmp(&a)))
            .expect("more points than clusters");
        centroids[empty] = rows[far].clone();
        labels[far] = empty;
        dists[far] = S::zero();
    }
    dists.into_iter().sum()
}

fn update<S: Scalar>(rows: &[Vec<S>], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<S>> {
    let mut sums = vec![vec![S::zero(); dim]; k];
    let mut sizes = vec![0usize; k];
    for (row, &l) in rows.iter().zip(labels) {
        sizes[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (sum, &n) in sums.iter_mut().zip(&sizes) {
        let n = S::of_usize(n.max(1));
        sum.iter_mut().for_each(|v| *v /= n);
    }
    sums
}

fn lloyd<S: Scalar>(rows: &[Vec<S>], params: &KMeansParams, restart: usize) -> KMeansFit<S> {
    let mut rng = seed::rng(seed::derive_indexed(
        params.seed,
        "kmeans-restart",
        restart as u64,
    ));
    let dim = rows[0].len();
    let mut centroids = seed_centroids(rows, params.k, &mut rng);
    let mut labels = vec![0; rows.len()];
    let mut trace = Vec::new();
    let tol = S::of(params.tol);
    for _ in 0..params.max_iter {
        trace.push(assign(rows, &mut centroids, &mut labels));
        let next = update(rows, &labels, params.k, dim);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(S::zero(), S::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }
    let inertia = assign(rows, &mut centroids, &mut labels);
    trace.push(inertia);
    KMeansFit {
        labels,
        centroids,
        inertia,
        inertia_trace: trace,
        restart,
    }
}

/// Best-of-restarts k-means on `rows`. Restarts run in parallel; the
/// winner is the lowest inertia, earliest restart on ties.
pub fn kmeans_rows<S: Scalar>(rows: &[Vec<S>], params: &KMeansParams) -> Result<KMeansFit<S>> {
    if params.k < 2 {
        return Err(Error::InvalidConfig(format!(
            "k must be at least 2, got {}",
            params.k
        )));
    }
    let distinct = distinct_rows(rows);
    if distinct <= 1 {
        return Err(Error::DegenerateData);
    }
    if params.k > distinct {
        return Err(Error::KTooLarge {
            k: params.k,
            distinct,
        });
    }
    let fits: Vec<KMeansFit<S>> = (0..params.restarts.max(1))
        .into_par_iter()
        .map(|r| lloyd(rows, params, r))
        .collect();
    Ok(fits
        .into_iter()
        .reduce(|best, fit| {
            if fit.inertia < best.inertia {
                fit
            } else {
                best
            }
        })
        .expect("at least one restart"))
}

/// Mean silhouette coefficient; members of singleton clusters score 0.
pub fn silhouette<S: Scalar>(rows: &[Vec<S>], labels: &[usize], k: usize) -> S {
    let n = rows.len();
    if n == 0 {
        return S::zero();
    }
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let scores: Vec<S> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] <= 1 {
                return S::zero();
            }
            let mut sums = vec![S::zero(); k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += sq_dist(&rows[i], &rows[j]).sqrt();
                }
            }
            let a = sums[own] / S::of_usize(sizes[own] - 1);
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / S::of_usize(sizes[c]))
                .fold(S::infinity(), S::min);
            if !b.is_finite() {
                return S::zero();
            }
            let denom = a.max(b);
            if denom > S::zero() {
                (b - a) / denom
            } else {
                S::zero()
            }
        })
        .collect();
    scores.into_iter().sum::<S>() / S::of_usize(n)
}

/// A clustering of students, serializable for replay without re-clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ClusteringResult<S> {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<S>>,
    pub inertia: S,
    pub silhouette: S,
    pub seed: u64,
}

impl<S: Scalar> ClusteringResult<S> {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignment.values().for_each(|&c| sizes[c] += 1);
        sizes
    }

    /// Cluster labels in the order of `ids`.
    pub fn labels_for<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Option<Vec<usize>> {
        ids.into_iter()
            .map(|id| self.assignment.get(id).copied())
            .collect()
    }
}

pub fn kmeans<S: Scalar>(
    embedding: &BehaviorEmbedding<S>,
    params: &KMeansParams,
) -> Result<ClusteringResult<S>> {
    let fit = kmeans_rows(&embedding.rows, params)?;
    let silhouette = silhouette(&embedding.rows, &fit.labels, params.k);
    Ok(ClusteringResult {
        k: params.k,
        assignment: embedding
            .student_ids
            .iter()
            .cloned()
            .zip(fit.labels)
            .collect(),
        centroids: fit.centroids,
        inertia: fit.inertia,
        silhouette,
        seed: params.seed,
    })
}

/// How the `cluster` pseudo-attribute is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMode {
    Off,
    Fixed(usize),
    Auto { min_k: usize, max_k: usize },
}

impl Default for ClusterMode {
    fn default() -> Self {
        ClusterMode::Auto { min_k: 2, max_k: 8 }
    }
}

/// Runs k-means for every k in `min_k..=max_k` and keeps the highest mean
/// silhouette (smaller k on ties). Values of k above the number of
/// distinct rows are skipped.
pub fn select_k<S: Scalar>(
    embedding: &BehaviorEmbedding<S>,
    min_k: usize,
    max_k: usize,
    seed: u64,
) -> Result<ClusteringResult<S>> {
    let distinct = distinct_rows(&embedding.rows);
    if distinct <= 1 {
        return Err(Error::DegenerateData);
    }
    let upper = max_k.min(distinct);
    if min_k > upper {
        return Err(Error::KTooLarge { k: min_k, distinct });
    }
    let mut best: Option<ClusteringResult<S>> = None;
    for k in min_k..=upper {
        let result = kmeans(embedding, &KMeansParams::new(k, seed))?;
        if best
            .as_ref()
            .is_none_or(|b| result.silhouette > b.silhouette)
        {
            best = Some(result);
        }
    }
    best.ok_or(Error::KTooLarge { k: min_k, distinct })
}

/// Clusters `dataset` per `mode`; `None` when clustering is off.
pub fn cluster_dataset(
    dataset: &Dataset,
    mode: ClusterMode,
    seed: u64,
) -> Result<Option<ClusteringResult<f64>>> {
    let embedding = embed_behavior::<f64>(dataset);
    match mode {
        ClusterMode::Off => Ok(None),
        ClusterMode::Fixed(k) => kmeans(&embedding, &KMeansParams::new(k, seed)).map(Some),
        ClusterMode::Auto { min_k, max_k } => select_k(&embedding, min_k, max_k, seed).map(Some),
    }
}

/// Returns a copy of `dataset` whose `cluster` pseudo-attribute is `result`.
pub fn assign_clusters<S: Scalar>(
    dataset: &Dataset,
    result: &ClusteringResult<S>,
) -> Result<Dataset> {
    if result.assignment.len() != dataset.len() {
        return Err(Error::CoverageMismatch(format!(
            "{} assignments for {} students",
            result.assignment.len(),
            dataset.len()
        )));
    }
    let labels = dataset
        .records()
        .iter()
        .map(|r| {
            result
                .assignment
                .get(&r.student_id)
                .copied()
                .ok_or_else(|| {
                    Error::CoverageMismatch(format!("student `{}` has no cluster", r.student_id))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= result.k) {
        return Err(Error::CoverageMismatch(format!(
            "cluster label {bad} outside 0..{}",
            result.k
        )));
    }
    dataset.with_clusters(labels)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n).max(1.0);
    let max_index = (sum_a + sum_b) / 2.0;
    if (max_index - expected).abs() < f64::EPSILON {
        return if index == max_index { 1.0 } else { 0.0 };
    }
    (index - expected) / (max_index - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn record(values: &[f64]) -> StudentRecord {
        StudentRecord {
            student_id: "s".into(),
            attributes: BTreeMap::new(),
            label: 0,
            behavior: values.iter().map(|&v| vec![v]).collect(),
        }
    }

    #[test]
    fn summary_of_constant_sequence() {
        let s: Vec<f64> = summarize(&record(&[2.5; 5]));
        assert_eq!(s, vec![2.5, 0.0, 2.5, 0.0]);
    }

    #[test]
    fn summary_of_ramp() {
        let s: Vec<f64> = summarize(&record(&[0.0, 1.0, 2.0, 3.0]));
        assert!((s[0] - 1.5).abs() < 1e-15);
        assert!((s[2] - 3.0).abs() < 1e-15);
        assert!((s[3] - 1.0).abs() < 1e-15);
        // population std of 0..3
        assert!((s[1] - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_step_slope_is_zero() {
        let s: Vec<f32> = summarize(&record(&[4.0]));
        assert_eq!(s, vec![4.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn standardizer_zeroes_constant_dimensions() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let st = Standardizer::fit(&rows);
        assert_eq!(st.transform(&rows[0]), vec![-1.0, 0.0]);
        assert_eq!(st.transform(&rows[1]), vec![1.0, 0.0]);
    }

    #[test]
    fn ari_of_relabeling_is_one() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    }

    #[test]
    fn kmeans_rejects_degenerate_inputs() {
        let same = vec![vec![1.0f64, 1.0]; 5];
        assert!(matches!(
            kmeans_rows(&same, &KMeansParams::new(2, 0)),
            Err(Error::DegenerateData)
        ));
        let three = vec![vec![0.0f64], vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(
            kmeans_rows(&three, &KMeansParams::new(4, 0)),
            Err(Error::KTooLarge { k: 4, distinct: 3 })
        ));
    }

    #[test]
    fn k_equal_to_distinct_points_has_zero_inertia() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let fit = kmeans_rows(&rows, &KMeansParams::new(6, 3)).unwrap();
        assert_eq!(fit.inertia, 0.0);
    }
}
