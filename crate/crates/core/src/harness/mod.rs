//! Experiment orchestration: synthetic worlds, configs, end-to-end runs,
//! weight grids and ablations.

mod ablate;
mod config;
mod experiment;
mod grid;
mod synthetic;

pub use ablate::{ablate, delta_table, format_delta, relative_change, AblationResult, CensusCheck, DeltaRow, Variant};
pub use config::{DataConfig, EvalConfig, ExperimentConfig, FeatureConfig, GridConfig, RankingMode};
pub use experiment::{
    baselines, build_scorer, build_vocabulary, click_counts, dataset_hash, evaluate, load_data, model_pd,
    mrr_of_scores, prepare, quarantine, rank_key, read_report, restrict, run_experiment, sha256_hex,
    split_sessions, train_and_evaluate, write_report, Baselines, Evaluation, PreparedData, ReportRow, RunLog,
    RunOutcome,
};
pub use grid::{grid_points, grid_search_on, grid_search_weights, GridResult, GridRow};
pub use synthetic::{
    click_probability, examination, generate_synthetic_logs, GroundTruthQuery, SyntheticLogs, SyntheticWorldConfig,
    WorldVocabulary,
};
