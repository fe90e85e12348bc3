use std::collections::BTreeMap;

use fairsample::clustering::{adjusted_rand_index, cluster_dataset, ClusterMode};
use fairsample::synthetic::{generate, preset, PRESETS};

fn share(cohort: &fairsample::Cohort, attr: &str, value: &str, positives_only: bool) -> f64 {
    let pool: Vec<_> = cohort
        .dataset
        .records()
        .iter()
        .filter(|r| !positives_only || r.is_positive())
        .collect();
    pool.iter().filter(|r| r.attributes[attr] == value).count() as f64 / pool.len() as f64
}

#[test]
fn tuglet_like_couples_school_and_label() {
    let cohort = generate(&preset("tuglet-like").unwrap().with_n(10_000).with_seed(11)).unwrap();
    let p_m = share(&cohort, "school", "M", true);
    assert!((p_m - 0.58).abs() <= 0.03, "P(school M | label 1) = {p_m}");
    let label = cohort.dataset.labels().iter().filter(|&&l| l == 1).count() as f64 / 10_000.0;
    assert!((label - 0.47).abs() <= 0.02, "label share {label}");
}

#[test]
fn flipped_like_matches_marginals() {
    let cohort = generate(&preset("flipped-like").unwrap().with_n(10_000).with_seed(5)).unwrap();
    let label = cohort.dataset.labels().iter().filter(|&&l| l == 1).count() as f64 / 10_000.0;
    assert!((label - 0.42).abs() <= 0.02, "label share {label}");
    let male = share(&cohort, "gender", "M", false);
    assert!((male - 0.65).abs() <= 0.02, "male share {male}");
}

fn mutual_information(a: &[String], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<&str, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    joint
        .iter()
        .map(|(&(x, y), &p)| p * (p / (pa[x] * pb[&y])).ln())
        .sum()
}

#[test]
fn uniform_coupling_leaves_archetypes_independent() {
    let cohort = generate(&preset("uniform-null").unwrap().with_n(10_000).with_seed(2)).unwrap();
    for attr in ["gender", "school"] {
        let values: Vec<String> = cohort
            .dataset
            .records()
            .iter()
            .map(|r| r.attributes[attr].clone())
            .collect();
        let mi = mutual_information(&values, &cohort.archetypes);
        assert!(mi < 0.02, "{attr}: MI {mi} nats");
    }
}

#[test]
fn vanishing_noise_makes_archetypes_recoverable() {
    let mut config = preset("tuglet-like").unwrap().with_n(1_000).with_seed(4);
    for a in &mut config.archetypes {
        a.sigma = 0.01;
    }
    let cohort = generate(&config).unwrap();
    let k = config.archetypes.len();
    let result = cluster_dataset(&cohort.dataset, ClusterMode::Fixed(k), 9)
        .unwrap()
        .unwrap();
    let ids = cohort
        .dataset
        .records()
        .iter()
        .map(|r| r.student_id.as_str());
    let ari = adjusted_rand_index(&result.labels_for(ids).unwrap(), &cohort.archetypes);
    assert!(ari >= 0.95, "ARI {ari}");
}

#[test]
fn generation_is_deterministic_per_seed() {
    for name in PRESETS {
        let config = preset(name).unwrap().with_n(300);
        let a = generate(&config.clone().with_seed(8)).unwrap();
        let b = generate(&config.clone().with_seed(8)).unwrap();
        let c = generate(&config.with_seed(9)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.dataset, c.dataset);
    }
}
