//! Batch pipeline behind the command-line tool: audit, clustering,
//! mitigation sweep, selection and reporting, with every intermediate
//! result persisted in a run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.json     the RunConfig used (replayable)
//! audit.json      imbalance findings, candidate set, baseline report
//! clusters.json   behavioral clustering (when enabled)
//! plans/<id>.json per-fold sampling plans of one configuration
//! reports/<id>.json
//! selection.json  decision trace of the selection rule
//! report.txt      human-readable summary
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::audit::{
    audit_report, AuditReport, CandidateParams, ImbalanceRule, DEFAULT_IMBALANCE_THRESHOLD,
    DEFAULT_MAX_COMBO_ARITY,
};
use crate::clustering::{assign_clusters, cluster_dataset, ClusterMode, ClusteringResult};
use crate::data::{
    load_dataset, load_dataset_csv, save_dataset, save_dataset_csv, Dataset, GroupSpec,
    CLUSTER_ATTRIBUTE, LABEL_ATTRIBUTE,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_configuration, select_technique, Aggregation, EvalSettings, FairnessReport,
    Mitigation, Selection, DEFAULT_DEGRADATION_LIMIT, DEFAULT_FOLDS,
};
use crate::oversampling::{SamplingPlan, Strategy};
use crate::predictor::PredictorConfig;
use crate::seed;
use crate::synthetic;

/// Audited attributes whose baseline FNR gap exceeds this are treated as
/// biased when the configuration does not list them.
pub const DEFAULT_BIAS_GAP_MIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    #[default]
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputSource {
    Files {
        records: PathBuf,
        schema: PathBuf,
        #[serde(default)]
        format: RecordFormat,
    },
    Preset {
        name: String,
        /// Cohort size; the preset default when absent.
        #[serde(default)]
        n_students: Option<usize>,
    },
}

/// Everything a run depends on. The output directory is not part of it, so
/// the same configuration can be replayed elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: InputSource,
    /// Attributes whose FNR gaps are reported and minimized; empty means
    /// every schema attribute.
    pub audited_attributes: Vec<String>,
    /// Attributes on which combinations are searched; derived from the
    /// baseline gaps when absent.
    pub biased_attributes: Option<Vec<String>>,
    pub bias_gap_min: f64,
    pub threshold: f64,
    pub imbalance_rule: ImbalanceRule,
    pub max_combo_arity: usize,
    pub combine_imbalanced: bool,
    pub strategies: Vec<Strategy>,
    pub cluster_mode: ClusterMode,
    pub predictor: PredictorConfig,
    pub folds: usize,
    pub aggregation: Aggregation,
    pub degradation_limit: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: InputSource::Preset {
                name: "tuglet-like".into(),
                n_students: None,
            },
            audited_attributes: Vec::new(),
            biased_attributes: None,
            bias_gap_min: DEFAULT_BIAS_GAP_MIN,
            threshold: DEFAULT_IMBALANCE_THRESHOLD,
            imbalance_rule: ImbalanceRule::default(),
            max_combo_arity: DEFAULT_MAX_COMBO_ARITY,
            combine_imbalanced: true,
            strategies: Strategy::ALL.to_vec(),
            cluster_mode: ClusterMode::default(),
            predictor: PredictorConfig::default(),
            folds: DEFAULT_FOLDS,
            aggregation: Aggregation::Pooled,
            degradation_limit: DEFAULT_DEGRADATION_LIMIT,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if self.max_combo_arity == 0 {
            return bad("max_combo_arity must be at least 1");
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required");
        }
        if self.folds < 2 {
            return bad("at least two folds are required");
        }
        if !(self.degradation_limit >= 0.0 && self.degradation_limit.is_finite()) {
            return bad("degradation_limit must be non-negative");
        }
        if !(self.bias_gap_min >= 0.0 && self.bias_gap_min.is_finite()) {
            return bad("bias_gap_min must be non-negative");
        }
        match self.cluster_mode {
            ClusterMode::Fixed(k) if k < 2 => return bad("cluster k must be at least 2"),
            ClusterMode::Auto { min_k, max_k } if min_k < 2 || max_k < min_k => {
                return bad("cluster range must satisfy 2 <= min_k <= max_k")
            }
            _ => {}
        }
        if let InputSource::Preset { name, .. } = &self.input {
            if !synthetic::PRESETS.contains(&name.as_str()) {
                return Err(Error::UnknownPreset(name.clone()));
            }
        }
        self.predictor.validate()
    }

    fn clustering_seed(&self) -> u64 {
        seed::derive(self.seed, "clustering")
    }

    fn audited(&self, dataset: &Dataset) -> Result<Vec<String>> {
        if self.audited_attributes.is_empty() {
            return Ok(dataset.schema().names().map(String::from).collect());
        }
        for name in &self.audited_attributes {
            if !dataset.schema().contains(name) {
                return Err(Error::UnknownAttribute(name.clone()));
            }
        }
        Ok(self.audited_attributes.clone())
    }

    fn eval_settings(&self, audited: Vec<String>) -> EvalSettings {
        EvalSettings {
            folds: self.folds,
            seed: self.seed,
            audited_attributes: audited,
            aggregation: self.aggregation,
        }
    }

    fn candidate_params(&self, biased: Vec<String>) -> CandidateParams {
        CandidateParams {
            biased_attributes: biased,
            max_combo_arity: self.max_combo_arity,
            threshold: self.threshold,
            rule: self.imbalance_rule,
            combine_imbalanced: self.combine_imbalanced,
            forced: Vec::new(),
        }
    }
}

/// Loads the dataset described by `config.input`.
pub fn load_input(config: &RunConfig) -> Result<Dataset> {
    match &config.input {
        InputSource::Files {
            records,
            schema,
            format,
        } => match format {
            RecordFormat::Jsonl => load_dataset(records, schema),
            RecordFormat::Csv => load_dataset_csv(records, schema),
        },
        InputSource::Preset { name, n_students } => {
            let mut scenario = synthetic::preset(name)?.with_seed(config.seed);
            if let Some(n) = n_students {
                scenario = scenario.with_n(*n);
            }
            Ok(synthetic::generate(&scenario)?.dataset)
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `config.json`, or checks that an existing one matches, so that a
/// directory never mixes artifacts of different configurations.
fn claim_run_dir(config: &RunConfig, out: &Path) -> Result<()> {
    let path = out.join("config.json");
    if path.exists() {
        let existing: RunConfig = read_json(&path)?;
        if &existing != config {
            return Err(Error::InvalidConfig(format!(
                "{} holds a run with a different configuration",
                out.display()
            )));
        }
        return Ok(());
    }
    write_json(&path, config)
}

/// Contents of `audit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditArtifact {
    pub audited_attributes: Vec<String>,
    pub biased_attributes: Vec<String>,
    pub imbalance: AuditReport,
    pub baseline: FairnessReport,
}

fn compute_audit(config: &RunConfig, dataset: &Dataset) -> Result<AuditArtifact> {
    let audited = config.audited(dataset)?;
    let settings = config.eval_settings(audited.clone());
    let baseline =
        evaluate_configuration(dataset, &Mitigation::Baseline, &settings, &config.predictor)?
            .report;
    let biased = match &config.biased_attributes {
        Some(list) => list.clone(),
        None => baseline
            .attributes
            .iter()
            .filter(|a| a.fnr_gap.is_some_and(|g| g > config.bias_gap_min))
            .map(|a| a.attribute.clone())
            .collect(),
    };
    let imbalance = audit_report(dataset, &config.candidate_params(biased.clone()))?;
    Ok(AuditArtifact {
        audited_attributes: audited,
        biased_attributes: biased,
        imbalance,
        baseline,
    })
}

/// Imbalance audit plus baseline evaluation; writes `audit.json`.
pub fn cmd_audit(config: &RunConfig, out: &Path) -> Result<AuditArtifact> {
    config.validate()?;
    claim_run_dir(config, out)?;
    let dataset = load_input(config)?;
    let audit = compute_audit(config, &dataset)?;
    write_json(&out.join("audit.json"), &audit)?;
    log::info!(
        "audit: {} candidate specs, biased attributes {:?}",
        audit.imbalance.candidates.len(),
        audit.biased_attributes
    );
    Ok(audit)
}

/// Contents of `clusters.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub mode: ClusterMode,
    pub sizes: Vec<usize>,
    pub result: ClusteringResult<f64>,
}

fn compute_clusters(config: &RunConfig, dataset: &Dataset) -> Result<Option<ClusterArtifact>> {
    Ok(
        cluster_dataset(dataset, config.cluster_mode, config.clustering_seed())?.map(|result| {
            ClusterArtifact {
                mode: config.cluster_mode,
                sizes: result.sizes(),
                result,
            }
        }),
    )
}

/// Behavioral clustering; writes `clusters.json`.
pub fn cmd_cluster(config: &RunConfig, out: &Path) -> Result<ClusterArtifact> {
    config.validate()?;
    if config.cluster_mode == ClusterMode::Off {
        return Err(Error::InvalidConfig(
            "clustering is off in this configuration".into(),
        ));
    }
    claim_run_dir(config, out)?;
    let dataset = load_input(config)?;
    let artifact = compute_clusters(config, &dataset)?.expect("mode is not off");
    write_json(&out.join("clusters.json"), &artifact)?;
    log::info!(
        "clustering: k = {}, sizes {:?}",
        artifact.result.k,
        artifact.sizes
    );
    Ok(artifact)
}

fn load_or<T, F>(path: &Path, compute: F) -> Result<T>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<T>,
{
    if path.exists() {
        return read_json(path);
    }
    let value = compute()?;
    write_json(path, &value)?;
    Ok(value)
}

/// Every configuration of a sweep: baseline, each applicable strategy on
/// each candidate spec, and the behavioral variants when clusters exist.
pub fn sweep_mitigations(
    config: &RunConfig,
    candidates: &[GroupSpec],
    audited: &[String],
    clustered: bool,
) -> Result<Vec<Mitigation>> {
    let mut specs: Vec<GroupSpec> = candidates.to_vec();
    if clustered {
        let mut behavioral = vec![
            GroupSpec::single(CLUSTER_ATTRIBUTE),
            GroupSpec::new([CLUSTER_ATTRIBUTE, LABEL_ATTRIBUTE])?,
        ];
        for attr in audited {
            behavioral.push(GroupSpec::new([CLUSTER_ATTRIBUTE, attr.as_str()])?);
        }
        for spec in behavioral {
            if !specs.contains(&spec) {
                specs.push(spec);
            }
        }
    }
    let mut out = vec![Mitigation::Baseline];
    for spec in &specs {
        for &strategy in &config.strategies {
            if strategy.applies_to(spec) {
                out.push(Mitigation::oversample(strategy, spec.clone()));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FoldPlan {
    fold: usize,
    plan: SamplingPlan,
}

/// Outcome of a sweep.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub reports: Vec<FairnessReport>,
    pub selection: Selection,
    /// Configurations evaluated by this call (the rest were resumed).
    pub evaluated: Vec<String>,
}

/// Runs (or resumes) the mitigation sweep. Finished configurations are
/// detected by their report file and not evaluated again.
pub fn cmd_mitigate(config: &RunConfig, out: &Path) -> Result<SweepResult> {
    config.validate()?;
    claim_run_dir(config, out)?;
    let dataset = load_input(config)?;
    let audit = load_or(&out.join("audit.json"), || compute_audit(config, &dataset))?;
    let dataset = if config.cluster_mode == ClusterMode::Off {
        dataset
    } else {
        let clusters = load_or(&out.join("clusters.json"), || {
            Ok(compute_clusters(config, &dataset)?.expect("mode is not off"))
        })?;
        assign_clusters(&dataset, &clusters.result)?
    };

    let candidates: Vec<GroupSpec> = audit.imbalance.candidates.specs().cloned().collect();
    let mitigations = sweep_mitigations(
        config,
        &candidates,
        &audit.audited_attributes,
        dataset.has_clusters(),
    )?;
    let settings = config.eval_settings(audit.audited_attributes.clone());
    let reports_dir = out.join("reports");
    let plans_dir = out.join("plans");

    let results: Vec<(FairnessReport, bool)> = mitigations
        .par_iter()
        .map(|m| {
            let id = m.id();
            let report_path = reports_dir.join(format!("{id}.json"));
            if report_path.exists() {
                return Ok((read_json(&report_path)?, false));
            }
            let outcome = evaluate_configuration(&dataset, m, &settings, &config.predictor)?;
            let plans: Vec<FoldPlan> = outcome
                .folds
                .iter()
                .filter_map(|f| f.plan.clone().map(|plan| FoldPlan { fold: f.fold, plan }))
                .collect();
            if !plans.is_empty() {
                write_json(&plans_dir.join(format!("{id}.json")), &plans)?;
            }
            // The report is written last: its presence marks the configuration done.
            write_json(&report_path, &outcome.report)?;
            log::info!("evaluated {id}");
            Ok((outcome.report, true))
        })
        .collect::<Result<_>>()?;

    let evaluated = results
        .iter()
        .filter(|(_, fresh)| *fresh)
        .map(|(r, _)| r.config_id.clone())
        .collect();
    let reports: Vec<FairnessReport> = results.into_iter().map(|(r, _)| r).collect();
    let baseline = reports
        .iter()
        .find(|r| r.mitigation == Mitigation::Baseline)
        .expect("sweep includes the baseline");
    let selection = select_technique(&reports, baseline, config.degradation_limit)?;
    write_json(&out.join("selection.json"), &selection)?;
    log::info!("selected {}", selection.chosen);
    write_text(&out.join("report.txt"), &render_report(out)?)?;
    Ok(SweepResult {
        reports,
        selection,
        evaluated,
    })
}

/// Reports of a finished run, in sweep order.
pub fn load_reports(run_dir: &Path) -> Result<Vec<FairnessReport>> {
    let config: RunConfig = read_artifact(run_dir, "config.json")?;
    let audit: AuditArtifact = read_artifact(run_dir, "audit.json")?;
    let candidates: Vec<GroupSpec> = audit.imbalance.candidates.specs().cloned().collect();
    let clustered = run_dir.join("clusters.json").exists();
    sweep_mitigations(&config, &candidates, &audit.audited_attributes, clustered)?
        .iter()
        .map(|m| read_artifact(run_dir, &format!("reports/{}.json", m.id())))
        .collect()
}

fn read_artifact<T: DeserializeOwned>(run_dir: &Path, name: &str) -> Result<T> {
    let path = run_dir.join(name);
    if !path.exists() {
        return Err(Error::MissingArtifacts(format!(
            "{} not found",
            path.display()
        )));
    }
    read_json(&path)
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Renders the human-readable report of a finished run directory.
pub fn render_report(run_dir: &Path) -> Result<String> {
    let audit: AuditArtifact = read_artifact(run_dir, "audit.json")?;
    let selection: Selection = read_artifact(run_dir, "selection.json")?;
    let reports = load_reports(run_dir)?;
    let clusters: Option<ClusterArtifact> = if run_dir.join("clusters.json").exists() {
        Some(read_json(&run_dir.join("clusters.json"))?)
    } else {
        None
    };

    let mut out = String::new();
    let _ = writeln!(out, "FAIRNESS AUDIT AND MITIGATION REPORT");
    let _ = writeln!(
        out,
        "audited attributes: {}",
        audit.audited_attributes.join(", ")
    );
    let _ = writeln!(
        out,
        "biased attributes: {}",
        if audit.biased_attributes.is_empty() {
            "none".to_string()
        } else {
            audit.biased_attributes.join(", ")
        }
    );

    let _ = writeln!(
        out,
        "\n== Imbalance audit (threshold {}) ==",
        audit.imbalance.threshold
    );
    for f in &audit.imbalance.findings {
        let groups: Vec<String> = f
            .groups
            .iter()
            .map(|g| format!("{}={} ({:.3})", g.group, g.count, g.share))
            .collect();
        let _ = writeln!(
            out,
            "  {:<32} {:<10} {}",
            f.spec.to_string(),
            if f.imbalanced {
                "IMBALANCED"
            } else {
                "balanced"
            },
            groups.join(", ")
        );
    }
    let specs: Vec<String> = audit
        .imbalance
        .candidates
        .specs()
        .map(|s| s.to_string())
        .collect();
    let _ = writeln!(
        out,
        "  candidate specs: {}",
        if specs.is_empty() {
            "none".into()
        } else {
            specs.join(", ")
        }
    );

    if let Some(c) = &clusters {
        let _ = writeln!(
            out,
            "\n== Behavioral clusters ==\n  k = {}, sizes {:?}, silhouette {:.4}, inertia {:.4}",
            c.result.k, c.sizes, c.result.silhouette, c.result.inertia
        );
    }

    let _ = writeln!(out, "\n== Configurations ==");
    let attrs = &audit.audited_attributes;
    let mut header = format!(
        "  {:<40} {:>15} {:>8} {:>8}",
        "configuration", "AUC", "FNR", "FPR"
    );
    for a in attrs {
        let _ = write!(
            header,
            " {:>12} {:>12}",
            format!("{a} FNRgap"),
            format!("{a} FPRgap")
        );
    }
    let _ = write!(header, " {:>8}", "score");
    let _ = writeln!(out, "{header}");
    for r in &reports {
        let mut line = format!(
            "  {:<40} {:>15} {:>8} {:>8}",
            r.config_id,
            format!("{:.4}±{:.4}", r.auc_mean, r.auc_std),
            num(r.overall_fnr),
            num(r.overall_fpr)
        );
        for a in attrs {
            let fairness = r.attributes.iter().find(|x| &x.attribute == a);
            let _ = write!(
                line,
                " {:>12} {:>12}",
                num(fairness.and_then(|x| x.fnr_gap)),
                num(fairness.and_then(|x| x.fpr_gap))
            );
        }
        let _ = write!(line, " {:>8}", num(r.selection_score));
        let _ = writeln!(out, "{line}");
    }

    let _ = writeln!(out, "\n== Per-group rates ==");
    for r in &reports {
        let _ = writeln!(out);
        out.push_str(&r.render_table());
    }

    let _ = writeln!(
        out,
        "\n== Selection (degradation limit {}, baseline FNR {}) ==",
        selection.degradation_limit,
        num(selection.baseline_overall_fnr)
    );
    for t in &selection.trace {
        let _ = writeln!(
            out,
            "  {:>3}. {:<40} score {:>8} FNR {:>8} {}",
            t.rank,
            t.config_id,
            num(t.selection_score),
            num(t.overall_fnr),
            serde_json::to_value(t.verdict)?
                .as_str()
                .unwrap_or_default()
        );
    }
    let _ = writeln!(
        out,
        "chosen: {}{}",
        selection.chosen,
        if selection.degradation_accepted {
            " (degradation-accepted)"
        } else {
            ""
        }
    );
    Ok(out)
}

/// Re-renders `report.txt` from the artifacts of `run_dir`.
pub fn cmd_report(run_dir: &Path) -> Result<String> {
    let text = render_report(run_dir)?;
    write_text(&run_dir.join("report.txt"), &text)?;
    Ok(text)
}

/// Files written by [`cmd_generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFiles {
    pub records: PathBuf,
    pub schema: PathBuf,
    pub ground_truth: PathBuf,
    pub scenario: PathBuf,
}

/// Writes a synthetic cohort: records, schema, the scenario used and the
/// ground-truth archetype of each student.
pub fn cmd_generate(
    preset: &str,
    n_students: Option<usize>,
    seed: u64,
    format: RecordFormat,
    out: &Path,
) -> Result<GeneratedFiles> {
    let mut scenario = synthetic::preset(preset)?.with_seed(seed);
    if let Some(n) = n_students {
        scenario = scenario.with_n(n);
    }
    let cohort = synthetic::generate(&scenario)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files = GeneratedFiles {
        records: out.join(match format {
            RecordFormat::Jsonl => "records.jsonl",
            RecordFormat::Csv => "records.csv",
        }),
        schema: out.join("schema.json"),
        ground_truth: out.join("ground_truth.json"),
        scenario: out.join("scenario.json"),
    };
    match format {
        RecordFormat::Jsonl => save_dataset(&cohort.dataset, &files.records, &files.schema)?,
        RecordFormat::Csv => {
            save_dataset_csv(&cohort.dataset, &files.records)?;
            write_json(&files.schema, cohort.dataset.schema())?;
        }
    }
    cohort.write_ground_truth(&files.ground_truth)?;
    write_json(&files.scenario, &scenario)?;
    Ok(files)
}

/// Reports keyed by configuration id.
pub fn reports_by_id(reports: &[FairnessReport]) -> BTreeMap<&str, &FairnessReport> {
    reports.iter().map(|r| (r.config_id.as_str(), r)).collect()
}
