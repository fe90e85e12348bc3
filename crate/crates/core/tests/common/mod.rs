#![allow(dead_code)]

use std::collections::BTreeMap;

use fairsample::data::{AttributeDef, AttributeSchema, Dataset, StudentRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn schema(attrs: &[(&str, &[&str])]) -> AttributeSchema {
    AttributeSchema::new(
        attrs
            .iter()
            .map(|(name, values)| AttributeDef {
                name: name.to_string(),
                values: values.iter().map(|v| v.to_string()).collect(),
            })
            .collect(),
    )
    .unwrap()
}

pub fn record(
    id: usize,
    attrs: &[(&str, &str)],
    label: u8,
    behavior: Vec<Vec<f64>>,
) -> StudentRecord {
    StudentRecord {
        student_id: format!("s{id:05}"),
        attributes: attrs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        label,
        behavior,
    }
}

/// Dataset with one record per unit of `cells`: keys are `(g, h, label)`
/// value indices. Behavior is random but carries no structure.
pub fn dataset_from_cells(
    g_values: usize,
    cells: &BTreeMap<(usize, usize, u8), usize>,
    seed: u64,
) -> Dataset {
    let g: Vec<String> = (0..g_values).map(|i| format!("g{i}")).collect();
    let g_ref: Vec<&str> = g.iter().map(String::as_str).collect();
    let schema = schema(&[("g", &g_ref), ("h", &["h0", "h1"])]);
    let mut r = rng(seed);
    let mut records = Vec::new();
    for (&(gi, hi, label), &n) in cells {
        for _ in 0..n {
            let behavior = (0..3)
                .map(|_| vec![r.random::<f64>(), r.random::<f64>()])
                .collect();
            let id = records.len();
            records.push(record(
                id,
                &[("g", &g[gi]), ("h", ["h0", "h1"][hi])],
                label,
                behavior,
            ));
        }
    }
    Dataset::new(schema, records).unwrap()
}

/// Random dataset of `n` students with two attributes and a label drawn
/// with probability `p`.
pub fn random_dataset(n: usize, p: f64, seed: u64) -> Dataset {
    let schema = schema(&[("g", &["a", "b", "c"]), ("h", &["x", "y"])]);
    let mut r = rng(seed);
    let records = (0..n)
        .map(|i| {
            let g = ["a", "b", "c"][r.random_range(0..3)];
            let h = ["x", "y"][r.random_range(0..2)];
            let label = u8::from(r.random::<f64>() < p);
            let behavior = (0..4)
                .map(|_| vec![r.random::<f64>() + label as f64, r.random::<f64>()])
                .collect();
            record(i, &[("g", g), ("h", h)], label, behavior)
        })
        .collect();
    Dataset::new(schema, records).unwrap()
}

/// O(n²) pair count: P(score of a positive > score of a negative), ties
/// count one half.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Per-record tally of `[tp, fn, fp, tn]` keyed by the value of `attr`.
pub fn tally(dataset: &Dataset, attr: &str, preds: &[u8]) -> BTreeMap<String, [usize; 4]> {
    let mut out: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    for (rec, &p) in dataset.records().iter().zip(preds) {
        let cell = out.entry(rec.attributes[attr].clone()).or_default();
        let slot = match (rec.label, p) {
            (1, 1) => 0,
            (1, 0) => 1,
            (0, 1) => 2,
            _ => 3,
        };
        cell[slot] += 1;
    }
    out
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Three tight blobs in behavior space; returns the dataset and the true
/// blob of every record.
pub fn blobs(per_blob: usize, sigma: f64, seed: u64) -> (Dataset, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let centers = [[0.0, 0.0], [5.0, 5.0], [-5.0, 5.0]];
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut r = rng(seed);
    let schema = schema(&[("g", &["a", "b"])]);
    let mut records = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            let behavior = (0..6)
                .map(|t| {
                    center
                        .iter()
                        .map(|&m| m + 0.2 * t as f64 * (c as f64 - 1.0) + noise.sample(&mut r))
                        .collect()
                })
                .collect();
            let id = records.len();
            records.push(record(
                id,
                &[("g", ["a", "b"][id % 2])],
                (id % 3 == 0) as u8,
                behavior,
            ));
            truth.push(c);
        }
    }
    (Dataset::new(schema, records).unwrap(), truth)
}
