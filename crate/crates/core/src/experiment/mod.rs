//! End-to-end experiment driver: cohort generation, training under every
//! paradigm, evaluation reports and comparisons, and the socket-mode
//! coordinator and site processes.

mod compare;
mod config;
mod data;
mod evaluate;
mod socket;
mod train;

pub use compare::{
    best_foreign_local, compare_all, compare_pair, compare_report, write_comparisons, Comparison, Verdict,
};
pub use config::{
    CoordinatorSection, EvaluationSection, ExperimentConfig, ModelSection, PersonalizeSection, RunKind, SiteRole,
    TrainingSection, Transport,
};
pub use data::{
    generate_cohorts, global_scaler, load_cohort, load_sites, Manifest, SiteData, SiteManifest, SiteMatrices,
};
pub use evaluate::{
    development_sites, evaluate_all, evaluate_model_at, model_names, rows_from_scores, write_cross_site, ScoreFile,
};
pub use socket::{run_coordinator, run_coordinator_on, run_site};
pub use train::{
    federation_members, local_name, personalized_name, site_client, train_all, train_central, train_federated,
    train_federated_with, train_local, train_personalized, ModelMeta, TrainedModel,
};
