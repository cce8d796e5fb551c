//! Training-set construction: stratified sampling and click-derived
//! relevance labels.

mod relevance;
mod sampling;

pub use relevance::{
    aggregate, discretize_labels, label_aggregates, label_dataset, position_weight, read_labels, relevance_score,
    transaction_weight, weighted_ctr, write_labels, ClickAggregate, LabelRecord, MinMax, PositionWeighting,
    RelevanceConfig,
};
pub use sampling::{rank_bins, stratified_sample, BinReport, SampleReport, SamplingConfig};
