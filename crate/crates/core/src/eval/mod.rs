//! Ranking metrics, the repeated-split experiment, presence correlation,
//! t-SNE projection and SVG plots.

pub mod correlation;
pub mod experiment;
pub mod metrics;
pub mod plots;
pub mod tsne;

pub use correlation::{presence_correlation, IterationTable, PresenceCorrelation};
pub use experiment::{
    build_cohort, config_diff, run_ablation, run_experiment, run_iteration, AblationTable, ExperimentOutcome,
    MetricsReport,
};
pub use metrics::{auc, average_precision};
pub use tsne::{project_embeddings, tsne_project, TsneConfig, TsneResult};
