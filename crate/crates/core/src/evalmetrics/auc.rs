use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney statistic with midranks.
///
/// Returns `Ok(None)` when only one class is present, since the area is then
/// undefined.
pub fn auc_roc(scores: &[f64], labels: &[f64]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::dim("auc_roc", format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            kernel: format!("auc_roc (score {s})"),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tied block i..=j shares their mean
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] > 0.5 {
                pos_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let p = n_pos as f64;
    let u = pos_rank_sum - p * (p + 1.0) / 2.0;
    Ok(Some(u / (p * n_neg as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(scores: &[f64], labels: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1.0 && yj == 0.0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn small_examples() {
        assert_eq!(auc_roc(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), Some(1.0));
        assert_eq!(auc_roc(&[0.1, 0.9], &[1.0, 0.0]).unwrap(), Some(0.0));
        assert_eq!(auc_roc(&[0.3; 6], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap(), Some(0.5));
        assert_eq!(auc_roc(&[0.3, 0.4], &[1.0, 1.0]).unwrap(), None);
        assert_eq!(auc_roc(&[], &[]).unwrap(), None);
        assert!(auc_roc(&[0.3], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            // coarse scores so that ties are common
            let scores: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() * 20.0).floor() / 20.0).collect();
            let labels: Vec<f64> = (0..200).map(|_| f64::from(rng.random_bool(0.3))).collect();
            let a = auc_roc(&scores, &labels).unwrap().unwrap();
            assert!((a - brute_force(&scores, &labels)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn invariant_under_increasing_maps(
            data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60),
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<f64> = data.iter().map(|d| f64::from(d.1)).collect();
            let a = auc_roc(&scores, &labels).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            let b = auc_roc(&mapped, &labels).unwrap();
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12 && (0.0..=1.0).contains(&a)),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
