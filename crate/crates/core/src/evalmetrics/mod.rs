//! Ranking and classification metrics: AUC-ROC, MRR@K and the
//! personalization degree PD@K.

mod auc;
mod pd;
mod ranking;
mod record;

pub use auc::auc_roc;
pub use pd::{depersonalize, overlap_at_k, pd_at_k, MetricParams, PdOutcome};
pub use ranking::{
    group_sessions, mrr_at_k, rank_all, rank_group, rank_products, relevant_sets, RankKey, RankedList,
};
pub use record::{read_metrics, write_metrics, MetricRecord};
