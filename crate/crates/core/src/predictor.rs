//! The at-risk detector: a pluggable probabilistic classifier over behavior
//! sequences. The reference model is L2-regularized logistic regression on
//! the standardized summary embedding, trained by full-batch gradient
//! descent.

use std::io::Write;
use std::process::Command;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{summarize, Standardizer};
use crate::data::StudentRecord;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::seed;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ModelKind {
    #[default]
    ReferenceLogistic,
    /// Subprocess invoked as `program args... <train.jsonl> <test.jsonl> <scores.txt>`;
    /// it must write one decimal score per test record, in input order.
    External { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub model: ModelKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::ReferenceLogistic,
            learning_rate: 0.05,
            epochs: 200,
            l2: 1e-3,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("predictor: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("L2 penalty must be non-negative");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("decision threshold must lie in (0, 1)");
        }
        if let ModelKind::External { command } = &self.model {
            if command.is_empty() {
                return bad("external model command is empty");
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Fitted logistic model, including the standardization learned on the
/// training records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct TrainedModel<S> {
    pub weights: Vec<S>,
    pub bias: S,
    pub standardizer: Standardizer<S>,
    /// Loss before the first step and after every epoch.
    pub loss_trace: Vec<S>,
    pub config: PredictorConfig,
}

/// Mean logistic loss plus `l2 · ‖w‖²` (the bias is not penalized).
pub fn regularized_loss<S: Scalar>(x: &[Vec<S>], y: &[u8], w: &[S], b: S, l2: S) -> S {
    let n = S::of_usize(x.len());
    let data: S = x
        .iter()
        .zip(y)
        .map(|(row, &label)| {
            let z = affine(row, w, b);
            // log(1 + e^z) - y z, computed without overflow
            let softplus = if z > S::zero() {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - if label == 1 { z } else { S::zero() }
        })
        .sum();
    data / n + l2 * w.iter().map(|&v| v * v).sum::<S>()
}

/// Gradient of [`regularized_loss`] with respect to `(w, b)`, optionally
/// with per-row weights (the mean becomes a weighted mean).
pub fn regularized_gradient<S: Scalar>(
    x: &[Vec<S>],
    y: &[u8],
    sample_weights: Option<&[S]>,
    w: &[S],
    b: S,
    l2: S,
) -> (Vec<S>, S) {
    let mut gw = vec![S::zero(); w.len()];
    let mut gb = S::zero();
    let mut total = S::zero();
    for (i, (row, &label)) in x.iter().zip(y).enumerate() {
        let weight = sample_weights.map_or(S::one(), |sw| sw[i]);
        let residual = (sigmoid(affine(row, w, b)) - S::of_usize(label as usize)) * weight;
        for (g, &v) in gw.iter_mut().zip(row) {
            *g += residual * v;
        }
        gb += residual;
        total += weight;
    }
    let two = S::of(2.0);
    for (g, &wi) in gw.iter_mut().zip(w) {
        *g = *g / total + two * l2 * wi;
    }
    (gw, gb / total)
}

fn affine<S: Scalar>(row: &[S], w: &[S], b: S) -> S {
    row.iter().zip(w).map(|(&x, &wi)| x * wi).sum::<S>() + b
}

/// Fits the reference logistic model on `records`, duplicates included.
pub fn train<S: Scalar>(
    records: &[&StudentRecord],
    config: &PredictorConfig,
) -> Result<TrainedModel<S>> {
    config.validate()?;
    let positives = records.iter().filter(|r| r.is_positive()).count();
    if positives == 0 || positives == records.len() {
        return Err(Error::SingleClassFold { fold: None });
    }
    let raw: Vec<Vec<S>> = records.iter().map(|r| summarize(r)).collect();
    let standardizer = Standardizer::fit(&raw);
    let x: Vec<Vec<S>> = raw.iter().map(|r| standardizer.transform(r)).collect();
    let y: Vec<u8> = records.iter().map(|r| r.label).collect();

    let mut rng = seed::rng(seed::derive(config.seed, "logistic-init"));
    let mut w: Vec<S> = (0..standardizer.dim())
        .map(|_| S::of(rng.random_range(-0.01..0.01)))
        .collect();
    let mut b = S::zero();
    let lr = S::of(config.learning_rate);
    let l2 = S::of(config.l2);

    let mut trace = Vec::with_capacity(config.epochs + 1);
    trace.push(regularized_loss(&x, &y, &w, b, l2));
    for epoch in 0..config.epochs {
        let (gw, gb) = regularized_gradient(&x, &y, None, &w, b, l2);
        for (wi, g) in w.iter_mut().zip(gw) {
            *wi -= lr * g;
        }
        b -= lr * gb;
        let loss = regularized_loss(&x, &y, &w, b, l2);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        trace.push(loss);
    }
    Ok(TrainedModel {
        weights: w,
        bias: b,
        standardizer,
        loss_trace: trace,
        config: config.clone(),
    })
}

impl<S: Scalar> TrainedModel<S> {
    /// Probability of needing intervention for each record.
    pub fn predict_proba(&self, records: &[&StudentRecord]) -> Result<Vec<S>> {
        records
            .iter()
            .map(|r| {
                let raw: Vec<S> = summarize(r);
                if raw.len() != self.weights.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.weights.len(),
                        found: raw.len(),
                    });
                }
                let x = self.standardizer.transform(&raw);
                Ok(sigmoid(affine(&x, &self.weights, self.bias)))
            })
            .collect()
    }

    pub fn predict_label(&self, records: &[&StudentRecord]) -> Result<Vec<u8>> {
        let tau = S::of(self.config.threshold);
        Ok(predict_label(&self.predict_proba(records)?, tau))
    }
}

/// `1` iff the score reaches `threshold`.
pub fn predict_label<S: Scalar>(scores: &[S], threshold: S) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}

/// Anything that can be trained on one fold and score another.
pub trait Predictor: Sync {
    /// Trains on `train` with the given seed and returns one score in
    /// `[0, 1]` per `test` record.
    fn fit_predict(
        &self,
        train: &[&StudentRecord],
        test: &[&StudentRecord],
        seed: u64,
    ) -> Result<Vec<f64>>;

    fn threshold(&self) -> f64;
}

impl Predictor for PredictorConfig {
    fn fit_predict(
        &self,
        train_set: &[&StudentRecord],
        test: &[&StudentRecord],
        seed: u64,
    ) -> Result<Vec<f64>> {
        match &self.model {
            ModelKind::ReferenceLogistic => {
                train::<f64>(train_set, &self.with_seed(seed))?.predict_proba(test)
            }
            ModelKind::External { command } => run_external(command, train_set, test),
        }
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

fn write_records(path: &std::path::Path, records: &[&StudentRecord]) -> Result<()> {
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn run_external(
    command: &[String],
    train_set: &[&StudentRecord],
    test: &[&StudentRecord],
) -> Result<Vec<f64>> {
    let dir = tempfile::tempdir().map_err(|e| Error::ExternalModel(e.to_string()))?;
    let train_path = dir.path().join("train.jsonl");
    let test_path = dir.path().join("test.jsonl");
    let scores_path = dir.path().join("scores.txt");
    write_records(&train_path, train_set)?;
    write_records(&test_path, test)?;
    let status = Command::new(&command[0])
        .args(&command[1..])
        .arg(&train_path)
        .arg(&test_path)
        .arg(&scores_path)
        .status()
        .map_err(|e| Error::ExternalModel(format!("cannot run `{}`: {e}", command[0])))?;
    if !status.success() {
        return Err(Error::ExternalModel(format!(
            "`{}` exited with {status}",
            command[0]
        )));
    }
    let text = std::fs::read_to_string(&scores_path)
        .map_err(|e| Error::ExternalModel(format!("no score file: {e}")))?;
    let scores = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| match l.trim().parse::<f64>() {
            Ok(s) if (0.0..=1.0).contains(&s) => Ok(s),
            _ => Err(Error::ExternalModel(format!(
                "bad score `{l}` on line {}",
                i + 1
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    if scores.len() != test.len() {
        return Err(Error::ExternalModel(format!(
            "{} scores for {} test records",
            scores.len(),
            test.len()
        )));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rec(id: usize, x: f64, label: u8) -> StudentRecord {
        StudentRecord {
            student_id: format!("s{id}"),
            attributes: BTreeMap::new(),
            label,
            behavior: vec![vec![x]],
        }
    }

    #[test]
    fn zero_weight_model_scores_one_half() {
        let model = TrainedModel::<f64> {
            weights: vec![0.0; 4],
            bias: 0.0,
            standardizer: Standardizer {
                mean: vec![0.0; 4],
                std: vec![1.0; 4],
            },
            loss_trace: vec![],
            config: PredictorConfig::default(),
        };
        let r = rec(0, 3.0, 1);
        assert_eq!(model.predict_proba(&[&r, &r]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(model.predict_label(&[&r]).unwrap(), vec![1]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = TrainedModel::<f64> {
            weights: vec![0.0; 8],
            bias: 0.0,
            standardizer: Standardizer {
                mean: vec![0.0; 8],
                std: vec![1.0; 8],
            },
            loss_trace: vec![],
            config: PredictorConfig::default(),
        };
        let r = rec(0, 1.0, 0);
        assert!(matches!(
            model.predict_proba(&[&r]),
            Err(Error::DimensionMismatch {
                expected: 8,
                found: 4
            })
        ));
    }

    #[test]
    fn threshold_extremes() {
        let scores = [0.0, 0.2, 0.5, 0.99];
        assert_eq!(predict_label(&scores, 0.5), vec![0, 0, 1, 1]);
        assert_eq!(predict_label(&scores, 0.0), vec![1, 1, 1, 1]);
        assert_eq!(predict_label(&scores, 0.999_999), vec![0, 0, 0, 0]);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let a = rec(0, 1.0, 1);
        let b = rec(1, 2.0, 1);
        assert!(matches!(
            train::<f64>(&[&a, &b], &PredictorConfig::default()),
            Err(Error::SingleClassFold { fold: None })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = PredictorConfig::default();
        assert!(c.validate().is_ok());
        c.threshold = 1.0;
        assert!(c.validate().is_err());
        c = PredictorConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = PredictorConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
