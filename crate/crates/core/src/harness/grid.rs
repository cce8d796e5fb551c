use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{prepare, rank_key, mrr_of_scores, PreparedData, RunLog};
use crate::error::{Error, Result};
use crate::networks::{train, Model, Task};

/// Every weight vector over the binary tasks with entries in
/// `{0, step, 2·step, …, 1}`, except all-zero, in lexicographic order.
pub fn grid_points(step: f64) -> Result<Vec<[f64; 3]>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step must be in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("grid step {step} does not divide 1")));
    }
    let n = n as usize;
    let mut out = Vec::with_capacity((n + 1).pow(3) - 1);
    for a in 0..=n {
        for b in 0..=n {
            for c in 0..=n {
                if a + b + c > 0 {
                    out.push([a as f64 / n as f64, b as f64 / n as f64, c as f64 / n as f64]);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub weight_click: f64,
    pub weight_atc: f64,
    pub weight_trx: f64,
    pub mrr_click: f64,
    pub mrr_atc: f64,
    pub mrr_trx: f64,
    /// Mean validation MRR@K over the three tasks; the selection criterion.
    pub mrr_mean: f64,
}

impl GridRow {
    pub fn weights(&self) -> [f64; 3] {
        [self.weight_click, self.weight_atc, self.weight_trx]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Index of the best row; the first one wins ties.
    pub best: usize,
}

impl GridResult {
    pub fn best_weights(&self) -> [f64; 3] {
        self.rows[self.best].weights()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains one model per grid point on shared data at `cfg.grid.epochs` and
/// ranks the points by mean validation MRR@K.
pub fn grid_search_on(cfg: &ExperimentConfig, data: &PreparedData, step: f64, log: &mut RunLog) -> Result<GridResult> {
    let points = grid_points(step)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.epochs = cfg.grid.epochs;
    let mut rows = Vec::with_capacity(points.len());
    for (i, w) in points.iter().enumerate() {
        let mut point = cfg.clone();
        point.model.mmoe.weights = w.to_vec();
        let mut model = Model::new(&data.schema, data.vocab.len(), &point.model_config(), cfg.seed)?;
        train(&mut model, &data.train, &data.valid, &train_cfg, cfg.seed)?;
        let preds = model.predict(&data.valid)?;
        let mut mrr = [0.0; 3];
        for (j, &t) in Task::BINARY.iter().enumerate() {
            let scores = rank_key(&point, t).scores(&preds)?;
            mrr[j] = mrr_of_scores(&data.valid, &scores, t, cfg.eval.mrr_k)?.0;
        }
        let row = GridRow {
            weight_click: w[0],
            weight_atc: w[1],
            weight_trx: w[2],
            mrr_click: mrr[0],
            mrr_atc: mrr[1],
            mrr_trx: mrr[2],
            mrr_mean: mrr.iter().sum::<f64>() / 3.0,
        };
        log.line(format!("grid point {}/{} {:?}: mean MRR@{} {:.4}", i + 1, points.len(), w, cfg.eval.mrr_k, row.mrr_mean));
        rows.push(row);
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.mrr_mean > rows[best].mrr_mean {
            best = i;
        }
    }
    Ok(GridResult { rows, best })
}

/// Prepares data from `cfg`, runs the grid and writes `grid.csv`,
/// `config.toml` and `run.log` to `cfg.out_dir`.
pub fn grid_search_weights(cfg: &ExperimentConfig, step: f64) -> Result<GridResult> {
    cfg.validate()?;
    grid_points(step)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml()?)?;
    let mut log = RunLog::create(cfg.out_dir.join("run.log"))?;
    let data = prepare(cfg, &mut log)?;
    let result = grid_search_on(cfg, &data, step, &mut log).map_err(|e| Error::Stage {
        stage: "grid",
        source: Box::new(e),
    })?;
    result.write_csv(cfg.out_dir.join("grid.csv"))?;
    log.line(format!("best weights {:?}", result.best_weights()));
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts() {
        assert_eq!(grid_points(0.5).unwrap().len(), 26);
        assert_eq!(grid_points(0.1).unwrap().len(), 1330);
        assert_eq!(grid_points(1.0).unwrap().len(), 7);
        let p = grid_points(0.5).unwrap();
        assert_eq!(p[0], [0.0, 0.0, 0.5]);
        assert_eq!(p[25], [1.0, 1.0, 1.0]);
        assert!(p.iter().all(|w| w.iter().any(|&x| x > 0.0)));
    }

    #[test]
    fn tenth_step_hits_exact_decimals() {
        let p = grid_points(0.1).unwrap();
        assert!(p.contains(&[0.4, 0.1, 0.5]));
    }

    #[test]
    fn bad_steps_are_config_errors() {
        for s in [0.0, -0.1, 0.3, 1.5, f64::NAN] {
            assert_eq!(grid_points(s).unwrap_err().exit_code(), 1, "{s}");
        }
    }
}
