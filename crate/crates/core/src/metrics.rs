//! Evaluation metrics over predicted label sets, plus the normalized
//! entropy of permutation-probability distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::LabelSet;

/// One evaluated document: gold set, predicted set, and (optionally) the
/// per-permutation probabilities of the predicted set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub gold: LabelSet,
    pub predicted: LabelSet,
    pub permutation_probs: Option<Vec<f64>>,
}

fn check_nonempty(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::input("no prediction records"));
    }
    Ok(())
}

/// Mean over labels ℓ of 2 Σ_n y_ℓ ŷ_ℓ / (Σ_n y_ℓ + Σ_n ŷ_ℓ).
/// Labels never present in gold or prediction contribute F1 = 0.
pub fn label_f1(records: &[PredictionRecord], num_labels: usize) -> Result<f64> {
    check_nonempty(records)?;
    let mut total = 0.0;
    for l in 1..=num_labels {
        let mut tp = 0u64;
        let mut gold = 0u64;
        let mut pred = 0u64;
        for r in records {
            let g = r.gold.contains(l);
            let p = r.predicted.contains(l);
            gold += g as u64;
            pred += p as u64;
            tp += (g && p) as u64;
        }
        if gold + pred > 0 {
            total += 2.0 * tp as f64 / (gold + pred) as f64;
        }
    }
    Ok(total / num_labels as f64)
}

/// Mean over instances of 2|gold ∩ pred| / (|gold| + |pred|).
/// An instance with both sets empty contributes 1.
pub fn instance_f1(records: &[PredictionRecord]) -> Result<f64> {
    check_nonempty(records)?;
    let mut total = 0.0;
    for r in records {
        let denom = r.gold.len() + r.predicted.len();
        if denom == 0 {
            total += 1.0;
        } else {
            total += 2.0 * r.gold.intersection_size(&r.predicted) as f64 / denom as f64;
        }
    }
    Ok(total / records.len() as f64)
}

/// Mean bit disagreement over the N × L prediction bits.
pub fn hamming_loss(records: &[PredictionRecord], num_labels: usize) -> Result<f64> {
    check_nonempty(records)?;
    if num_labels == 0 {
        return Err(Error::input("label universe is empty"));
    }
    let mut wrong = 0u64;
    for r in records {
        for l in 1..=num_labels {
            if r.gold.contains(l) != r.predicted.contains(l) {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / (records.len() * num_labels) as f64)
}

/// 2·TP / (2·TP + FP + FN) pooled over all prediction bits.
pub fn micro_f1(records: &[PredictionRecord]) -> Result<f64> {
    check_nonempty(records)?;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fne = 0u64;
    for r in records {
        tp += r.gold.intersection_size(&r.predicted) as u64;
        fp += (r.predicted.len() - r.gold.intersection_size(&r.predicted)) as u64;
        fne += (r.gold.len() - r.gold.intersection_size(&r.predicted)) as u64;
    }
    let denom = 2 * tp + fp + fne;
    if denom == 0 {
        return Ok(1.0); // everything empty and agreed
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// Entropy of the renormalized permutation probabilities divided by
/// log m, so distributions over different set sizes are comparable.
/// A single sequence (m = 1) returns 0.
pub fn normalized_entropy(permutation_probs: &[f64]) -> Result<f64> {
    if permutation_probs.is_empty() {
        return Err(Error::input("normalized_entropy requires at least one probability"));
    }
    if permutation_probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::input("permutation probabilities must be positive"));
    }
    let m = permutation_probs.len();
    if m == 1 {
        return Ok(0.0);
    }
    let total: f64 = permutation_probs.iter().sum();
    let entropy: f64 = permutation_probs
        .iter()
        .map(|&p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum();
    Ok(entropy / (m as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rec(gold: &[usize], pred: &[usize]) -> PredictionRecord {
        PredictionRecord {
            gold: LabelSet::new(gold.to_vec()),
            predicted: LabelSet::new(pred.to_vec()),
            permutation_probs: None,
        }
    }

    #[test]
    fn perfect_predictions() {
        let records = vec![rec(&[1, 2], &[1, 2]), rec(&[3], &[3])];
        assert_relative_eq!(label_f1(&records, 3).unwrap(), 1.0);
        assert_relative_eq!(instance_f1(&records).unwrap(), 1.0);
        assert_relative_eq!(hamming_loss(&records, 3).unwrap(), 0.0);
        assert_relative_eq!(micro_f1(&records).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_predictions_score_zero() {
        let records = vec![rec(&[1], &[2]), rec(&[2], &[1])];
        assert_relative_eq!(label_f1(&records, 2).unwrap(), 0.0);
        assert_relative_eq!(instance_f1(&records).unwrap(), 0.0);
        assert_relative_eq!(micro_f1(&records).unwrap(), 0.0);
    }

    #[test]
    fn worked_label_f1_example() {
        // gold {1},{1,2}; pred {1},{2}
        let records = vec![rec(&[1], &[1]), rec(&[1, 2], &[2])];
        // label 1: 2·1/(2+1) = 2/3; label 2: 2·1/(1+1) = 1 → mean 5/6
        assert_relative_eq!(label_f1(&records, 2).unwrap(), 5.0 / 6.0, max_relative = 1e-14);
        // pooled: TP=2, FP=0, FN=1 → 2·2/(4+0+1) = 0.8
        assert_relative_eq!(micro_f1(&records).unwrap(), 0.8, max_relative = 1e-14);
    }

    #[test]
    fn instance_f1_cases() {
        let records = vec![rec(&[1, 2], &[1])];
        assert_relative_eq!(instance_f1(&records).unwrap(), 2.0 / 3.0, max_relative = 1e-14);
        let records = vec![rec(&[1], &[])];
        assert_relative_eq!(instance_f1(&records).unwrap(), 0.0);
        let records = vec![rec(&[], &[])];
        assert_relative_eq!(instance_f1(&records).unwrap(), 1.0);
    }

    #[test]
    fn hamming_one_wrong_bit_of_four() {
        let records = vec![rec(&[1, 2], &[1, 2, 3])];
        assert_relative_eq!(hamming_loss(&records, 4).unwrap(), 0.25, max_relative = 1e-14);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(label_f1(&[], 3).is_err());
        assert!(instance_f1(&[]).is_err());
        assert!(hamming_loss(&[], 3).is_err());
        assert!(micro_f1(&[]).is_err());
    }

    #[test]
    fn normalized_entropy_cases() {
        assert_relative_eq!(normalized_entropy(&[0.5, 0.5]).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(normalized_entropy(&[0.123]).unwrap(), 0.0);
        // q = (0.5, 0.25, 0.25): H = 1.5 ln 2, / ln 3
        let expected = 1.5 * 2.0f64.ln() / 3.0f64.ln();
        assert_relative_eq!(
            normalized_entropy(&[0.2, 0.1, 0.1]).unwrap(),
            expected,
            max_relative = 1e-12
        );
        assert!(normalized_entropy(&[]).is_err());
        assert!(normalized_entropy(&[0.2, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval(
            sets in proptest::collection::vec(
                (proptest::collection::vec(1usize..6, 0..4),
                 proptest::collection::vec(1usize..6, 0..4)), 1..10)
        ) {
            let records: Vec<PredictionRecord> =
                sets.iter().map(|(g, p)| rec(g, p)).collect();
            for v in [
                label_f1(&records, 5).unwrap(),
                instance_f1(&records).unwrap(),
                hamming_loss(&records, 5).unwrap(),
                micro_f1(&records).unwrap(),
            ] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn f1_metrics_are_order_invariant(
            sets in proptest::collection::vec(
                (proptest::collection::vec(1usize..6, 0..4),
                 proptest::collection::vec(1usize..6, 0..4)), 2..8)
        ) {
            let records: Vec<PredictionRecord> =
                sets.iter().map(|(g, p)| rec(g, p)).collect();
            let mut reversed = records.clone();
            reversed.reverse();
            prop_assert!((label_f1(&records, 5).unwrap() - label_f1(&reversed, 5).unwrap()).abs() < 1e-14);
            prop_assert!((instance_f1(&records).unwrap() - instance_f1(&reversed).unwrap()).abs() < 1e-14);
        }

        #[test]
        fn entropy_is_one_iff_uniform(probs in proptest::collection::vec(1e-4..1.0f64, 2..10)) {
            let h = normalized_entropy(&probs).unwrap();
            prop_assert!(h <= 1.0 + 1e-12);
            let uniform = probs.iter().all(|&p| (p - probs[0]).abs() < 1e-15);
            if uniform {
                prop_assert!((h - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn label_relabeling_invariance() {
        let records = vec![rec(&[1, 2], &[2]), rec(&[3], &[3, 1])];
        // swap labels 1 ↔ 3 consistently
        let swapped = vec![rec(&[3, 2], &[2]), rec(&[1], &[1, 3])];
        assert_relative_eq!(
            label_f1(&records, 3).unwrap(),
            label_f1(&swapped, 3).unwrap(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            instance_f1(&records).unwrap(),
            instance_f1(&swapped).unwrap(),
            max_relative = 1e-14
        );
    }
}
