use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Task, TrainConfig};
use super::loss::mtl_loss;
use super::model::Model;
use crate::datamodel::{EncodedExample, Labels};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Graph, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub stopped_early: bool,
    pub steps: u64,
}

fn labels_of(batch: &[&EncodedExample]) -> Vec<Labels> {
    batch.iter().map(|e| e.labels).collect()
}

/// Mean loss over `examples` without recording gradients.
pub fn evaluate_loss(model: &Model, examples: &[EncodedExample], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("cannot evaluate the loss of an empty split".into()));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&EncodedExample> = chunk.iter().collect();
        let g = Graph::inference();
        let out = model.network.forward(&g, &model.store, &refs)?;
        let l = g.value(mtl_loss(&g, &out, &labels_of(&refs), &model.network.config.mmoe)?).item();
        total += l * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

fn require_relevance(model: &Model, split: &str, examples: &[EncodedExample]) -> Result<()> {
    if model.network.tasks().contains(&Task::Relevance) {
        if let Some(e) = examples.iter().find(|e| e.labels.relevance.is_none()) {
            return Err(Error::Data(format!(
                "relevance task is active but {split} example ({}, {}) has no relevance_class",
                e.query_id, e.product_id
            )));
        }
    }
    Ok(())
}

/// Adam with seeded shuffling and early stopping on validation loss. On
/// return `model` holds the best-validation parameters. A non-finite loss
/// aborts with [`Error::Diverged`], leaving the best parameters seen so far.
pub fn train(
    model: &mut Model,
    train: &[EncodedExample],
    valid: &[EncodedExample],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainLog> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data(format!(
            "train and validation splits must be non-empty (got {} and {})",
            train.len(),
            valid.len()
        )));
    }
    require_relevance(model, "train", train)?;
    require_relevance(model, "validation", valid)?;
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best_valid = evaluate_loss(model, valid, config.batch_size)?;
    let mut best_store: ParamStore = model.store.clone();
    let mut best_epoch = 0;
    let mut bad_epochs = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    info!("initial validation loss {best_valid:.6}");

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &train[i]).collect();
            let step = (|| {
                let g = Graph::new();
                let out = model.network.forward(&g, &model.store, &batch)?;
                let loss = mtl_loss(&g, &out, &labels_of(&batch), &model.network.config.mmoe)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NonFinite { kernel: "loss".into() });
                }
                Ok((value, g.backward(loss)?))
            })();
            let (value, grads) = match step {
                Ok(v) => v,
                Err(Error::NonFinite { kernel }) => {
                    model.store = best_store;
                    return Err(Error::Diverged {
                        epoch,
                        batch: bi,
                        reason: format!("non-finite value in `{kernel}`"),
                    });
                }
                Err(e) => return Err(e),
            };
            adam.step(&mut model.store, &grads)?;
            if model.store.entries().iter().any(|p| !p.value.is_finite()) {
                model.store = best_store;
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    reason: "optimizer produced a non-finite parameter".into(),
                });
            }
            loss_sum += value * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let valid_loss = evaluate_loss(model, valid, config.batch_size)?;
        info!("epoch {epoch}: train loss {train_loss:.6}, validation loss {valid_loss:.6}");
        epochs.push(EpochLog {
            epoch,
            train_loss,
            valid_loss,
        });
        if valid_loss < best_valid - config.min_delta {
            best_valid = valid_loss;
            best_store = model.store.clone();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            debug!("no improvement for {bad_epochs} epoch(s)");
            if bad_epochs >= config.patience {
                stopped_early = epoch < config.epochs;
                if stopped_early {
                    info!("early stop after epoch {epoch}; best epoch {best_epoch}");
                }
                break;
            }
        }
    }
    if best_epoch == 0 {
        warn!("validation loss never improved on the initial parameters");
    }
    model.store = best_store;
    Ok(TrainLog {
        epochs,
        best_epoch,
        best_valid_loss: best_valid,
        stopped_early,
        steps: adam.steps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::model::tests::{random_examples, tiny_config, tiny_schema};
    use crate::networks::BottomKind;
    use crate::textmatch::MatchingMode;
    use rand::Rng;

    #[test]
    fn same_seed_same_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex = random_examples(&mut rng, 60);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            patience: 5,
            ..Default::default()
        };
        let run = || {
            let mut m = Model::new(&tiny_schema(), 10, &tiny_config(BottomKind::Dcn, MatchingMode::Cross), 3).unwrap();
            let log = train(&mut m, &ex[..48], &ex[48..], &cfg, 9).unwrap();
            (log, m.store)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(a.steps, 9);
    }

    #[test]
    fn labels_independent_of_features_plateau_near_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ex = random_examples(&mut rng, 1600);
        for e in &mut ex {
            let c = rng.random_bool(0.5);
            e.labels.click = c as u8 as f64;
            e.labels.atc = 0.0;
            e.labels.trx = 0.0;
        }
        let mut c = tiny_config(BottomKind::Dcn, MatchingMode::Off);
        c.mmoe.weights = vec![1.0, 0.0, 0.0];
        let mut m = Model::new(&tiny_schema(), 10, &c, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 64,
            ..Default::default()
        };
        let log = train(&mut m, &ex[..1200], &ex[1200..], &cfg, 2).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((log.best_valid_loss - ln2).abs() < 0.02, "{log:?}");
        assert!(log.best_valid_loss > ln2 - 0.02);
    }

    #[test]
    fn early_stopping_restores_best() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ex = random_examples(&mut rng, 40);
        let mut m = Model::new(&tiny_schema(), 10, &tiny_config(BottomKind::Dcn, MatchingMode::Off), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.05,
            patience: 2,
            ..Default::default()
        };
        let log = train(&mut m, &ex[..30], &ex[30..], &cfg, 1).unwrap();
        let final_loss = evaluate_loss(&m, &ex[30..], 8).unwrap();
        assert!((final_loss - log.best_valid_loss).abs() < 1e-12);
        if log.stopped_early {
            let last = log.epochs.len();
            assert_eq!(last, log.best_epoch + cfg.patience);
        }
    }

    #[test]
    fn empty_split_is_data_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ex = random_examples(&mut rng, 4);
        let mut m = Model::new(&tiny_schema(), 10, &tiny_config(BottomKind::Dcn, MatchingMode::Off), 3).unwrap();
        let r = train(&mut m, &ex, &[], &TrainConfig::default(), 1);
        assert_eq!(r.unwrap_err().exit_code(), 2);
    }

    #[test]
    fn divergence_reports_and_keeps_finite_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ex = random_examples(&mut rng, 20);
        ex[3].continuous[0] = f64::MAX;
        let mut m = Model::new(&tiny_schema(), 10, &tiny_config(BottomKind::Dcn, MatchingMode::Off), 3).unwrap();
        let before = m.store.clone();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let err = train(&mut m, &ex[..16], &ex[..4].iter().filter(|e| e.continuous[0].abs() < 10.0).cloned().collect::<Vec<_>>(), &cfg, 1)
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
        assert!(m.store.entries().iter().all(|p| p.value.is_finite()));
        assert_eq!(m.store, before);
    }
}
