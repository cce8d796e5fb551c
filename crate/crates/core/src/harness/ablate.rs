use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{prepare, train_and_evaluate, write_report, ReportRow, RunLog};
use crate::error::{Error, Result};
use crate::textmatch::MatchingMode;

/// One cell of the semantic × matching × relevance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub semantic: bool,
    pub matching: MatchingMode,
    pub relevance: bool,
}

impl Variant {
    pub const BASE: Variant = Variant {
        semantic: true,
        matching: MatchingMode::Cross,
        relevance: false,
    };

    /// The eight cells, semantic-major.
    pub fn matrix() -> Vec<Variant> {
        let mut out = Vec::with_capacity(8);
        for semantic in [true, false] {
            for matching in [MatchingMode::Cross, MatchingMode::Dot] {
                for relevance in [false, true] {
                    out.push(Variant {
                        semantic,
                        matching,
                        relevance,
                    });
                }
            }
        }
        out
    }

    pub fn name(&self) -> String {
        let m = match self.matching {
            MatchingMode::Cross => "cross",
            MatchingMode::Dot => "dot",
            MatchingMode::Off => "nomatch",
        };
        format!(
            "{}-{}-{}",
            if self.semantic { "sem" } else { "nosem" },
            m,
            if self.relevance { "rel" } else { "norel" }
        )
    }

    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.name = format!("{}/{}", base.name, self.name());
        cfg.features.semantic_feature = self.semantic;
        cfg.model.matching = self.matching;
        cfg.relevance_task = self.relevance;
        cfg
    }
}

/// Percentage change `(new − old) / old`, `None` when `old` is zero.
pub fn relative_change(old: f64, new: f64) -> Option<f64> {
    (old != 0.0).then(|| (new - old) / old)
}

/// `"0.3520 (-1.97%)"`.
pub fn format_delta(new: f64, change: Option<f64>) -> String {
    match change {
        Some(c) => format!("{new:.4} ({:+.2}%)", c * 100.0),
        None => format!("{new:.4} (n/a)"),
    }
}

/// One metric of one contrast between two matrix cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    /// `semantic_off`, `dot_vs_cross` or `relevance_on`.
    pub contrast: String,
    pub baseline: String,
    pub variant: String,
    pub metric: String,
    pub old: Option<f64>,
    pub new: Option<f64>,
    pub change: Option<f64>,
    pub formatted: String,
}

fn metrics(r: &ReportRow) -> [(&'static str, Option<f64>); 8] {
    [
        ("auc_click", r.auc_click),
        ("auc_atc", r.auc_atc),
        ("auc_trx", r.auc_trx),
        ("mrr_click", r.mrr_click),
        ("mrr_atc", r.mrr_atc),
        ("mrr_trx", r.mrr_trx),
        ("pd", Some(r.pd)),
        ("parameters", Some(r.parameters as f64)),
    ]
}

/// Deltas for every pair of cells that differ in exactly one toggle, the
/// toggled-from cell being the baseline.
pub fn delta_table(rows: &[(Variant, ReportRow)]) -> Vec<DeltaRow> {
    let find = |v: Variant| rows.iter().find(|(w, _)| *w == v).map(|(_, r)| r);
    let mut out = Vec::new();
    for (v, new_row) in rows {
        let (contrast, base) = if !v.semantic {
            ("semantic_off", Variant { semantic: true, ..*v })
        } else if v.matching == MatchingMode::Dot {
            ("dot_vs_cross", Variant { matching: MatchingMode::Cross, ..*v })
        } else if v.relevance {
            ("relevance_on", Variant { relevance: false, ..*v })
        } else {
            continue;
        };
        push_pairs(&mut out, contrast, find(base), base, new_row, *v);
        // cells toggled twice still get their other single-toggle contrasts
        if !v.semantic && v.matching == MatchingMode::Dot {
            let b = Variant { matching: MatchingMode::Cross, ..*v };
            push_pairs(&mut out, "dot_vs_cross", find(b), b, new_row, *v);
        }
        if v.relevance && (!v.semantic || v.matching == MatchingMode::Dot) {
            let b = Variant { relevance: false, ..*v };
            push_pairs(&mut out, "relevance_on", find(b), b, new_row, *v);
        }
    }
    out.sort_by(|a, b| a.contrast.cmp(&b.contrast).then_with(|| a.variant.cmp(&b.variant)));
    out
}

fn push_pairs(out: &mut Vec<DeltaRow>, contrast: &str, base_row: Option<&ReportRow>, base: Variant, new_row: &ReportRow, v: Variant) {
    let Some(old_row) = base_row else { return };
    for ((metric, old), (_, new)) in metrics(old_row).into_iter().zip(metrics(new_row)) {
        let change = match (old, new) {
            (Some(o), Some(n)) => relative_change(o, n),
            _ => None,
        };
        out.push(DeltaRow {
            contrast: contrast.to_string(),
            baseline: base.name(),
            variant: v.name(),
            metric: metric.to_string(),
            old,
            new,
            change,
            formatted: new.map_or_else(|| "n/a".to_string(), |n| format_delta(n, change)),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusCheck {
    pub variant: String,
    pub census_off: usize,
    pub census_on: usize,
    /// Elements in the relevance gate and tower of the relevance-on model.
    pub added_gate_tower: usize,
}

impl CensusCheck {
    pub fn holds(&self) -> bool {
        self.census_on == self.census_off + self.added_gate_tower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<(Variant, ReportRow)>,
    pub deltas: Vec<DeltaRow>,
    pub census: Vec<CensusCheck>,
}

impl AblationResult {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<ReportRow> = self.rows.iter().map(|(_, r)| r.clone()).collect();
        write_report(&rows, dir.join("ablation.csv"))?;
        let mut w = csv::Writer::from_path(dir.join("deltas.csv"))?;
        for d in &self.deltas {
            w.serialize(d)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("census.csv"))?;
        for c in &self.census {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the eight-cell matrix on data prepared once from `base` (with
/// relevance labels), every cell using `base.seed`.
pub fn ablate(base: &ExperimentConfig) -> Result<AblationResult> {
    base.validate()?;
    std::fs::create_dir_all(&base.out_dir)?;
    std::fs::write(base.out_dir.join("config.toml"), base.to_toml()?)?;
    let mut log = RunLog::create(base.out_dir.join("run.log"))?;
    let mut labeled = base.clone();
    labeled.relevance_task = true;
    labeled.features.semantic_feature = true;
    let data = prepare(&labeled, &mut log)?;
    let by_semantic = [data.with_semantic(true), data.with_semantic(false)];
    drop(data);
    let mut rows = Vec::new();
    let mut census_parts = Vec::new();
    for v in Variant::matrix() {
        let start = Instant::now();
        let cfg = v.apply(base);
        log.line(format!("variant {}", v.name()));
        let data = &by_semantic[usize::from(!v.semantic)];
        let (model, _, eval) = train_and_evaluate(&cfg, data, &mut log, None)?;
        let added = model.store.element_count_with_prefix("gate.relevance")
            + model.store.element_count_with_prefix("tower.relevance");
        census_parts.push((v, model.parameter_census(), added));
        rows.push((v, ReportRow::new(&cfg.name, &model, &eval, start.elapsed().as_secs_f64())));
    }
    let mut census = Vec::new();
    for &(v, on, added) in census_parts.iter().filter(|p| p.0.relevance) {
        let off = census_parts
            .iter()
            .find(|p| p.0 == Variant { relevance: false, ..v })
            .map(|p| p.1)
            .ok_or_else(|| Error::Contract("relevance-off cell missing".into()))?;
        census.push(CensusCheck {
            variant: v.name(),
            census_off: off,
            census_on: on,
            added_gate_tower: added,
        });
    }
    let result = AblationResult {
        deltas: delta_table(&rows),
        rows,
        census,
    };
    result.write(&base.out_dir)?;
    Ok(result)
}
