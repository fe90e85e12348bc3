//! Fairness auditing and oversampling-based bias mitigation for at-risk
//! student detectors.
//!
//! The crate covers the full loop: load student records, audit attribute
//! imbalance, cluster behavior sequences, rebalance training folds with one
//! of five target rules, cross-validate a detector, and pick the
//! configuration with the smallest false-negative-rate gap.

pub mod audit;
pub mod clustering;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod oversampling;
pub mod pipeline;
pub mod predictor;
pub mod scalar;
pub mod seed;
pub mod synthetic;

pub use audit::{
    build_candidate_set, detect_imbalance, detect_imbalance_in_counts, AuditReport, Candidate,
    CandidateParams, CandidateSet, ImbalanceFinding, ImbalanceRule, Provenance,
};
pub use clustering::{
    adjusted_rand_index, assign_clusters, cluster_dataset, embed_behavior, kmeans, select_k,
    BehaviorEmbedding, ClusterMode, ClusteringResult, KMeansParams, Standardizer,
};
pub use data::{
    load_dataset, load_dataset_csv, save_dataset, AttributeDef, AttributeSchema, Dataset, GroupKey,
    GroupSpec, StudentRecord,
};
pub use error::{Error, Result};
pub use evaluation::{
    auc, confusion_by_group, evaluate_configuration, select_technique, stratified_folds,
    Aggregation, EvalSettings, FairnessReport, FoldAssignment, GroupMetrics, Mitigation, Selection,
};
pub use oversampling::{apply_plan, plan_within, ResampledDataset, SamplingPlan, Strategy};
pub use pipeline::{
    cmd_audit, cmd_cluster, cmd_generate, cmd_mitigate, cmd_report, InputSource, RecordFormat,
    RunConfig,
};
pub use predictor::{train, ModelKind, Predictor, PredictorConfig, TrainedModel};
pub use scalar::Scalar;
pub use synthetic::{generate, preset, Cohort, ScenarioConfig};

/// Logistic detector in double precision.
pub type LogisticModel = TrainedModel<f64>;
/// Single-precision logistic detector.
pub type LogisticModelF32 = TrainedModel<f32>;
pub type Embedding = BehaviorEmbedding<f64>;
pub type EmbeddingF32 = BehaviorEmbedding<f32>;
pub type Clustering = ClusteringResult<f64>;
pub type ClusteringF32 = ClusteringResult<f32>;
