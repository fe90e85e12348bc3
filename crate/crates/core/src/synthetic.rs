//! Synthetic student cohorts with known behavioral archetypes.
//!
//! A student is generated by drawing a demographic cell, then an archetype
//! from the coupling row of that cell, then a behavior sequence around the
//! archetype's mean trajectory, and finally a label from the archetype's
//! outcome probability.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeDef, AttributeSchema, Dataset, StudentRecord};
use crate::error::{Error, Result};
use crate::scalar::sigmoid;
use crate::seed;

const SUM_TOLERANCE: f64 = 1e-9;

pub const PRESETS: [&str; 3] = ["flipped-like", "tuglet-like", "uniform-null"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicSpec {
    pub name: String,
    pub values: Vec<String>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub name: String,
    /// Mean trajectory, `T` steps of `D` features.
    pub mean: Vec<Vec<f64>>,
    pub sigma: f64,
    /// Log-odds of needing intervention.
    pub logit: f64,
}

impl ArchetypeSpec {
    pub fn positive_rate(&self) -> f64 {
        sigmoid(self.logit)
    }
}

/// `P(archetype | cell)` for one cell of the coupling attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    /// One value per coupling attribute, in [`Coupling::attributes`] order.
    pub cell: Vec<String>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    /// Demographic attributes the archetype depends on; empty for none.
    pub attributes: Vec<String>,
    pub rows: Vec<CouplingRow>,
}

impl Coupling {
    /// Archetype distribution independent of demographics.
    pub fn uniform(probabilities: Vec<f64>) -> Self {
        Self {
            attributes: Vec::new(),
            rows: vec![CouplingRow {
                cell: Vec::new(),
                probabilities,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_students: usize,
    pub demographics: Vec<DemographicSpec>,
    pub archetypes: Vec<ArchetypeSpec>,
    pub coupling: Coupling,
    pub seed: u64,
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "{what}: probabilities must be finite and >= 0"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidConfig(format!(
            "{what}: probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn with_n(mut self, n_students: usize) -> Self {
        self.n_students = n_students;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn steps(&self) -> usize {
        self.archetypes.first().map_or(0, |a| a.mean.len())
    }

    pub fn feature_dim(&self) -> usize {
        self.archetypes
            .first()
            .and_then(|a| a.mean.first())
            .map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_students == 0 {
            return bad("n_students must be at least 1".into());
        }
        if self.archetypes.is_empty() {
            return bad("at least one archetype is required".into());
        }
        let (steps, dim) = (self.steps(), self.feature_dim());
        if steps == 0 || dim == 0 {
            return bad("trajectories need at least one step and one feature".into());
        }
        for a in &self.archetypes {
            if a.mean.len() != steps || a.mean.iter().any(|s| s.len() != dim) {
                return bad(format!(
                    "archetype `{}`: trajectory is not {steps}x{dim}",
                    a.name
                ));
            }
            if a.mean.iter().flatten().any(|v| !v.is_finite()) {
                return bad(format!("archetype `{}`: non-finite trajectory", a.name));
            }
            if !(a.sigma > 0.0 && a.sigma.is_finite()) {
                return bad(format!("archetype `{}`: sigma must be positive", a.name));
            }
            if !a.logit.is_finite() {
                return bad(format!("archetype `{}`: non-finite logit", a.name));
            }
        }
        for d in &self.demographics {
            if d.values.len() != d.probabilities.len() {
                return bad(format!(
                    "attribute `{}`: values and probabilities differ in length",
                    d.name
                ));
            }
            check_distribution(&format!("attribute `{}`", d.name), &d.probabilities)?;
        }
        let defs = self
            .demographics
            .iter()
            .map(|d| AttributeDef {
                name: d.name.clone(),
                values: d.values.clone(),
            })
            .collect();
        AttributeSchema::new(defs)?;

        let coupled: Vec<&DemographicSpec> = self
            .coupling
            .attributes
            .iter()
            .map(|name| {
                self.demographics
                    .iter()
                    .find(|d| &d.name == name)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!("coupling: unknown attribute `{name}`"))
                    })
            })
            .collect::<Result<_>>()?;
        let expected_rows: usize = coupled.iter().map(|d| d.values.len()).product();
        let mut seen = std::collections::BTreeSet::new();
        for row in &self.coupling.rows {
            if row.cell.len() != coupled.len()
                || row
                    .cell
                    .iter()
                    .zip(&coupled)
                    .any(|(v, d)| !d.values.contains(v))
            {
                return bad(format!(
                    "coupling: row {:?} is not a cell of {:?}",
                    row.cell, self.coupling.attributes
                ));
            }
            if !seen.insert(row.cell.clone()) {
                return bad(format!("coupling: duplicate row {:?}", row.cell));
            }
            if row.probabilities.len() != self.archetypes.len() {
                return bad(format!(
                    "coupling: row {:?} needs one probability per archetype",
                    row.cell
                ));
            }
            check_distribution(&format!("coupling row {:?}", row.cell), &row.probabilities)?;
        }
        if seen.len() != expected_rows {
            return bad(format!(
                "coupling: {} rows for {expected_rows} cells",
                seen.len()
            ));
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<AttributeSchema> {
        AttributeSchema::new(
            self.demographics
                .iter()
                .map(|d| AttributeDef {
                    name: d.name.clone(),
                    values: d.values.clone(),
                })
                .collect(),
        )
    }

    /// Population-level archetype shares implied by marginals and coupling.
    pub fn archetype_shares(&self) -> Vec<f64> {
        let mut shares = vec![0.0; self.archetypes.len()];
        for row in &self.coupling.rows {
            let p_cell = self.cell_probability(&row.cell);
            for (s, p) in shares.iter_mut().zip(&row.probabilities) {
                *s += p_cell * p;
            }
        }
        shares
    }

    /// Population `P(label = 1 | attribute = value)`; `None` for an
    /// unknown attribute.
    pub fn positive_rate_given(&self, attribute: &str, value: &str) -> Option<f64> {
        self.demographics.iter().find(|d| d.name == attribute)?;
        let column = self.coupling.attributes.iter().position(|a| a == attribute);
        let (num, den) = self.label_mass(|cell| column.is_none_or(|i| cell[i] == value))?;
        Some(num / den)
    }

    /// Population `P(label = 1)`.
    pub fn positive_rate(&self) -> f64 {
        self.label_mass(|_| true)
            .map_or(0.0, |(num, den)| num / den)
    }

    fn label_mass(&self, keep: impl Fn(&[String]) -> bool) -> Option<(f64, f64)> {
        let (mut num, mut den) = (0.0, 0.0);
        for row in self.coupling.rows.iter().filter(|r| keep(&r.cell)) {
            let p_cell = self.cell_probability(&row.cell);
            den += p_cell;
            num += p_cell
                * row
                    .probabilities
                    .iter()
                    .zip(&self.archetypes)
                    .map(|(p, a)| p * a.positive_rate())
                    .sum::<f64>();
        }
        (den > 0.0).then_some((num, den))
    }

    fn cell_probability(&self, cell: &[String]) -> f64 {
        self.coupling
            .attributes
            .iter()
            .zip(cell)
            .map(|(name, value)| {
                let d = self
                    .demographics
                    .iter()
                    .find(|d| &d.name == name)
                    .expect("validated");
                let i = d.values.iter().position(|v| v == value).expect("validated");
                d.probabilities[i]
            })
            .product()
    }
}

/// Generated dataset plus the archetype that produced each record.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub dataset: Dataset,
    /// Archetype index per record, aligned with `dataset.records()`.
    pub archetypes: Vec<usize>,
    pub archetype_names: Vec<String>,
}

impl Cohort {
    /// Student id → archetype name.
    pub fn ground_truth(&self) -> BTreeMap<String, String> {
        self.dataset
            .records()
            .iter()
            .zip(&self.archetypes)
            .map(|(r, &a)| (r.student_id.clone(), self.archetype_names[a].clone()))
            .collect()
    }

    /// Writes the archetype of every student as a JSON object.
    pub fn write_ground_truth(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self.ground_truth())?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Samples a cohort. Every student draws from its own seed sub-stream, so
/// the result does not depend on thread scheduling.
pub fn generate(config: &ScenarioConfig) -> Result<Cohort> {
    config.validate()?;
    let schema = config.schema()?;
    let marginals: Vec<WeightedIndex<f64>> = config
        .demographics
        .iter()
        .map(|d| {
            WeightedIndex::new(&d.probabilities).map_err(|e| Error::InvalidConfig(e.to_string()))
        })
        .collect::<Result<_>>()?;
    let coupled_pos: Vec<usize> = config
        .coupling
        .attributes
        .iter()
        .map(|name| {
            config
                .demographics
                .iter()
                .position(|d| &d.name == name)
                .expect("validated")
        })
        .collect();
    let rows: BTreeMap<Vec<String>, WeightedIndex<f64>> = config
        .coupling
        .rows
        .iter()
        .filter(|r| r.probabilities.iter().any(|&p| p > 0.0))
        .map(|r| {
            Ok((
                r.cell.clone(),
                WeightedIndex::new(&r.probabilities)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?,
            ))
        })
        .collect::<Result<_>>()?;
    let noise: Vec<Normal<f64>> = config
        .archetypes
        .iter()
        .map(|a| Normal::new(0.0, a.sigma).map_err(|e| Error::InvalidConfig(e.to_string())))
        .collect::<Result<_>>()?;
    let width = config.n_students.to_string().len().max(4);
    let base = seed::derive(config.seed, "synthetic");

    let students: Vec<(StudentRecord, usize)> = (0..config.n_students)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive_indexed(base, "student", i as u64));
            let values: Vec<String> = config
                .demographics
                .iter()
                .zip(&marginals)
                .map(|(d, m)| d.values[m.sample(&mut rng)].clone())
                .collect();
            let cell: Vec<String> = coupled_pos.iter().map(|&p| values[p].clone()).collect();
            // Cells of zero population mass are never drawn, so the row exists.
            let archetype = rows[&cell].sample(&mut rng);
            let spec = &config.archetypes[archetype];
            let behavior = spec
                .mean
                .iter()
                .map(|step| {
                    step.iter()
                        .map(|&m| m + noise[archetype].sample(&mut rng))
                        .collect()
                })
                .collect();
            let label = u8::from(rng.random::<f64>() < spec.positive_rate());
            let attributes = config
                .demographics
                .iter()
                .map(|d| d.name.clone())
                .zip(values)
                .collect();
            let record = StudentRecord {
                student_id: format!("s{i:0width$}"),
                attributes,
                label,
                behavior,
            };
            (record, archetype)
        })
        .collect();
    let (records, archetypes): (Vec<_>, Vec<_>) = students.into_iter().unzip();
    Ok(Cohort {
        dataset: Dataset::new(schema, records)?,
        archetypes,
        archetype_names: config.archetypes.iter().map(|a| a.name.clone()).collect(),
    })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn demographic(name: &str, values: &[&str], probabilities: &[f64]) -> DemographicSpec {
    DemographicSpec {
        name: name.into(),
        values: values.iter().map(|v| v.to_string()).collect(),
        probabilities: probabilities.to_vec(),
    }
}

/// Linear trajectory `level + slope · t / (T - 1)` over `steps` steps.
fn trajectory(level: &[f64], slope: &[f64], steps: usize) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|t| {
            let frac = if steps > 1 {
                t as f64 / (steps - 1) as f64
            } else {
                0.0
            };
            level.iter().zip(slope).map(|(l, s)| l + s * frac).collect()
        })
        .collect()
}

struct ArchetypeSketch {
    name: &'static str,
    share: f64,
    positive_rate: f64,
    level: [f64; 3],
    slope: [f64; 3],
}

const STEPS: usize = 10;

fn archetypes(sketches: &[ArchetypeSketch], sigma: f64) -> Vec<ArchetypeSpec> {
    sketches
        .iter()
        .map(|s| ArchetypeSpec {
            name: s.name.into(),
            mean: trajectory(&s.level, &s.slope, STEPS),
            sigma,
            logit: logit(s.positive_rate),
        })
        .collect()
}

fn normalized(shares: &[f64]) -> Vec<f64> {
    let sum: f64 = shares.iter().sum();
    shares.iter().map(|s| s / sum).collect()
}

fn flipped_like() -> ScenarioConfig {
    let gender = demographic("gender", &["F", "M"], &[0.35, 0.65]);
    let country = demographic("country", &["CF", "CO", "other"], &[0.47, 0.49, 0.04]);
    let sketches = [
        ArchetypeSketch {
            name: "A",
            share: 0.15,
            positive_rate: 0.90,
            level: [-2.0, -2.0, 0.0],
            slope: [-1.0, 0.0, -1.0],
        },
        ArchetypeSketch {
            name: "B",
            share: 0.16,
            positive_rate: 0.70,
            level: [-2.0, 2.0, 0.0],
            slope: [1.0, 0.0, -1.0],
        },
        ArchetypeSketch {
            name: "C",
            share: 0.26,
            positive_rate: 0.15,
            level: [2.0, 2.0, 0.0],
            slope: [1.0, 0.0, 1.0],
        },
        ArchetypeSketch {
            name: "D",
            share: 0.24,
            positive_rate: 0.75,
            level: [0.0, -1.0, 2.5],
            slope: [0.0, 1.5, 1.5],
        },
        ArchetypeSketch {
            name: "E",
            share: 0.20,
            positive_rate: 0.21,
            level: [2.0, -2.0, 0.0],
            slope: [-1.0, 0.0, 1.0],
        },
    ];
    const E: usize = 4;
    let shares = normalized(&sketches.iter().map(|s| s.share).collect::<Vec<_>>());
    let mut archetypes = archetypes(&sketches, 0.6);
    // Cluster E keeps its 21% intervention rate; the others absorb the
    // shift to a 42% cohort failing rate.
    calibrate_base_rate(&mut archetypes, &shares, 0.42, &[E]);
    let rates: Vec<f64> = archetypes.iter().map(|a| a.positive_rate()).collect();

    // 80% of cluster E are women; other archetypes share the remainder evenly.
    let q_f = gender.probabilities[0];
    let h_e = 0.8;
    let h_rest = (q_f - shares[E] * h_e) / (1.0 - shares[E]);
    let by_gender: Vec<Vec<f64>> = [true, false]
        .iter()
        .map(|&female| {
            let mass = if female { q_f } else { 1.0 - q_f };
            shares
                .iter()
                .enumerate()
                .map(|(a, s)| {
                    let h = if a == E { h_e } else { h_rest };
                    s * if female { h } else { 1.0 - h } / mass
                })
                .collect()
        })
        .collect();

    // Country tilts the non-E archetypes by outcome so that 62% of positives
    // hold a CO diploma: P(1|CO) = 0.42 * 0.62 / 0.49; "other" stays at 42%.
    let p_co = 0.42 * 0.62 / 0.49;
    let p_other = 0.42;
    let p_cf = (0.42 - 0.49 * p_co - 0.04 * p_other) / 0.47;
    let centered: Vec<(Vec<f64>, f64)> = by_gender
        .iter()
        .map(|row| {
            let mass: f64 = (0..row.len()).filter(|&a| a != E).map(|a| row[a]).sum();
            let mean = (0..row.len())
                .filter(|&a| a != E)
                .map(|a| row[a] * rates[a])
                .sum::<f64>()
                / mass;
            let var = (0..row.len())
                .filter(|&a| a != E)
                .map(|a| row[a] * (rates[a] - mean) * rates[a])
                .sum::<f64>();
            let dev = (0..row.len())
                .map(|a| if a == E { 0.0 } else { rates[a] - mean })
                .collect();
            (dev, var)
        })
        .collect();
    let spread: f64 = gender
        .probabilities
        .iter()
        .zip(&centered)
        .map(|(p, (_, v))| p * v)
        .sum();
    let mut rows = Vec::new();
    for (g, value) in gender.values.iter().enumerate() {
        for (c, target) in [p_cf, p_co, p_other].iter().enumerate() {
            let k = (target - 0.42) / spread;
            let probabilities = by_gender[g]
                .iter()
                .zip(&centered[g].0)
                .map(|(p, d)| p * (1.0 + k * d))
                .collect();
            rows.push(CouplingRow {
                cell: vec![value.clone(), country.values[c].clone()],
                probabilities,
            });
        }
    }
    ScenarioConfig {
        name: "flipped-like".into(),
        n_students: 400,
        demographics: vec![gender, country],
        archetypes,
        coupling: Coupling {
            attributes: vec!["gender".into(), "country".into()],
            rows,
        },
        seed: 0,
    }
}

fn tuglet_like() -> ScenarioConfig {
    let gender = demographic("gender", &["F", "M", "other"], &[0.48, 0.51, 0.01]);
    let school = demographic("school", &["H", "M"], &[0.52, 0.48]);
    let sketches = [
        ArchetypeSketch {
            name: "systematic-explorers",
            share: 0.14,
            positive_rate: 0.05,
            level: [2.0, 2.0, 0.0],
            slope: [1.0, 0.0, 1.0],
        },
        ArchetypeSketch {
            name: "explorers",
            share: 0.23,
            positive_rate: 0.04,
            level: [2.0, -2.0, 0.0],
            slope: [-1.0, 0.0, 1.0],
        },
        ArchetypeSketch {
            name: "non-explorers",
            share: 0.34,
            positive_rate: 0.72,
            level: [-2.0, -2.0, 0.0],
            slope: [-1.0, 0.0, -1.0],
        },
        ArchetypeSketch {
            name: "tinkerers",
            share: 0.04,
            positive_rate: 0.30,
            level: [0.0, 2.5, -2.0],
            slope: [1.5, -1.0, 0.0],
        },
        ArchetypeSketch {
            name: "guessers",
            share: 0.13,
            positive_rate: 0.85,
            level: [-2.0, 2.0, 0.0],
            slope: [1.0, 0.0, -1.0],
        },
        ArchetypeSketch {
            name: "careful",
            share: 0.12,
            positive_rate: 0.80,
            level: [4.0, 0.0, 2.5],
            slope: [0.0, 1.5, 1.5],
        },
    ];
    let shares = normalized(&sketches.iter().map(|s| s.share).collect::<Vec<_>>());
    let mut archetypes = archetypes(&sketches, 0.6);
    calibrate_base_rate(&mut archetypes, &shares, 0.47, &[]);
    let rates: Vec<f64> = archetypes.iter().map(|a| a.positive_rate()).collect();
    // 58% of positives attend school M: P(1|M) = 0.47 * 0.58 / 0.48.
    // The "careful" archetype only occurs at school H.
    let p_m = 0.47 * 0.58 / 0.48;
    let p_h = (0.47 - 0.48 * p_m) / 0.52;
    let coupling = two_value_coupling(&school, &shares, &rates, &[(5, 1.0)], p_h);
    ScenarioConfig {
        name: "tuglet-like".into(),
        n_students: 400,
        demographics: vec![gender, school],
        archetypes,
        coupling,
        seed: 0,
    }
}

/// Coupling over a two-valued attribute. `P(first value | archetype)` is
/// pinned for the archetypes in `fixed` and linear in the archetype's
/// positive rate for the others, solved so that the first value keeps its
/// marginal and has positive rate `first_rate`.
fn two_value_coupling(
    attribute: &DemographicSpec,
    shares: &[f64],
    rates: &[f64],
    fixed: &[(usize, f64)],
    first_rate: f64,
) -> Coupling {
    let q = attribute.probabilities[0];
    let pinned = |a: usize| fixed.iter().find(|(i, _)| *i == a).map(|&(_, h)| h);
    // Σ s(β + γp) = q − Σ_fixed s h,  Σ s p(β + γp) = q·r − Σ_fixed s h p
    let (mut m00, mut m01, mut m11, mut r0, mut r1) = (0.0, 0.0, 0.0, q, q * first_rate);
    for (a, (&s, &p)) in shares.iter().zip(rates).enumerate() {
        match pinned(a) {
            Some(h) => {
                r0 -= s * h;
                r1 -= s * h * p;
            }
            None => {
                m00 += s;
                m01 += s * p;
                m11 += s * p * p;
            }
        }
    }
    let det = m00 * m11 - m01 * m01;
    let beta = (r0 * m11 - m01 * r1) / det;
    let gamma = (m00 * r1 - m01 * r0) / det;
    let h: Vec<f64> = (0..shares.len())
        .map(|a| pinned(a).unwrap_or(beta + gamma * rates[a]))
        .collect();
    let row = |first: bool| -> Vec<f64> {
        let (mass, side): (f64, Box<dyn Fn(f64) -> f64>) = if first {
            (q, Box::new(|h| h))
        } else {
            (1.0 - q, Box::new(|h| 1.0 - h))
        };
        shares
            .iter()
            .zip(&h)
            .map(|(s, &h)| s * side(h) / mass)
            .collect()
    };
    Coupling {
        attributes: vec![attribute.name.clone()],
        rows: vec![
            CouplingRow {
                cell: vec![attribute.values[0].clone()],
                probabilities: row(true),
            },
            CouplingRow {
                cell: vec![attribute.values[1].clone()],
                probabilities: row(false),
            },
        ],
    }
}

fn uniform_null() -> ScenarioConfig {
    let gender = demographic("gender", &["F", "M"], &[0.5, 0.5]);
    let school = demographic("school", &["A", "B"], &[0.5, 0.5]);
    let sketches = [
        ArchetypeSketch {
            name: "a",
            share: 0.25,
            positive_rate: 0.8,
            level: [1.0, 0.5, -0.5],
            slope: [0.2, 0.0, 0.1],
        },
        ArchetypeSketch {
            name: "b",
            share: 0.25,
            positive_rate: 0.6,
            level: [-0.5, 1.0, 0.5],
            slope: [0.0, 0.2, -0.1],
        },
        ArchetypeSketch {
            name: "c",
            share: 0.25,
            positive_rate: 0.4,
            level: [0.5, -1.0, 1.0],
            slope: [-0.1, 0.1, 0.0],
        },
        ArchetypeSketch {
            name: "d",
            share: 0.25,
            positive_rate: 0.2,
            level: [-1.0, -0.5, -1.0],
            slope: [0.1, -0.1, 0.2],
        },
    ];
    let shares: Vec<f64> = sketches.iter().map(|s| s.share).collect();
    ScenarioConfig {
        name: "uniform-null".into(),
        n_students: 2000,
        demographics: vec![gender, school],
        archetypes: archetypes(&sketches, 0.9),
        coupling: Coupling::uniform(shares),
        seed: 0,
    }
}

/// Shifts every archetype logit except `pinned` by the same amount so
/// the population positive rate equals `target`.
fn calibrate_base_rate(
    archetypes: &mut [ArchetypeSpec],
    shares: &[f64],
    target: f64,
    pinned: &[usize],
) {
    let rate = |shift: f64, a: &[ArchetypeSpec]| -> f64 {
        a.iter()
            .zip(shares)
            .enumerate()
            .map(|(i, (a, s))| s * sigmoid(a.logit + if pinned.contains(&i) { 0.0 } else { shift }))
            .sum()
    };
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid, archetypes) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shift = 0.5 * (lo + hi);
    for (i, a) in archetypes.iter_mut().enumerate() {
        if !pinned.contains(&i) {
            a.logit += shift;
        }
    }
}

/// Built-in scenario by name.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let config = match name {
        "flipped-like" => flipped_like(),
        "tuglet-like" => tuglet_like(),
        "uniform-null" => uniform_null(),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    if let Err(e) = config.validate() {
        panic!("{name}: {e} {:?}", config.coupling)
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_hit_marginals() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            for row in &c.coupling.rows {
                assert!(
                    row.probabilities.iter().all(|&p| p >= 0.0),
                    "{name} {:?}",
                    row.cell
                );
            }
        }
        let t = preset("tuglet-like").unwrap();
        assert!((t.positive_rate() - 0.47).abs() < 1e-9);
        let p_m = t.positive_rate_given("school", "M").unwrap();
        assert!((0.48 * p_m / 0.47 - 0.58).abs() < 1e-9);
        let f = preset("flipped-like").unwrap();
        assert!((f.positive_rate() - 0.42).abs() < 1e-9);
        let p_co = f.positive_rate_given("country", "CO").unwrap();
        assert!((0.49 * p_co / 0.42 - 0.62).abs() < 1e-9);
        let shares = t.archetype_shares();
        for (s, want) in shares
            .iter()
            .zip(normalized(&[0.14, 0.23, 0.34, 0.04, 0.13, 0.12]))
        {
            assert!((s - want).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let c = preset("tuglet-like").unwrap().with_n(50).with_seed(3);
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.archetypes, b.archetypes);
        let other = generate(&c.clone().with_seed(4)).unwrap();
        assert_ne!(a.dataset, other.dataset);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = preset("uniform-null").unwrap();
        c.archetypes[0].sigma = 0.0;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = preset("uniform-null").unwrap();
        c.demographics[0].probabilities = vec![0.6, 0.6];
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = preset("tuglet-like").unwrap();
        c.coupling.rows.pop();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }
}
