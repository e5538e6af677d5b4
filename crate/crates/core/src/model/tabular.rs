//! Closed-form conditional tables standing in for the neural decoder in
//! exactness tests: every duplicate-free prefix gets an explicit
//! distribution over the remaining labels ∪ {STOP}.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::SequenceModel;
use crate::types::{Document, LabelId, StepDistribution, STOP};

/// Hard cap on the label-space size; the table has Σ_k L!/(L−k)! rows.
pub const MAX_TABULAR_LABELS: usize = 8;

#[derive(Debug, Clone)]
pub struct TabularModel {
    num_labels: usize,
    /// prefix (ordered, duplicate-free) → probability row of length L+1,
    /// index 0 = STOP. Entries for used labels are exactly 0.
    rows: HashMap<Vec<LabelId>, Vec<f64>>,
}

impl TabularModel {
    /// Builds a model from explicit rows, validating support and
    /// normalization (each row sums to 1 within 1e-12 over its allowed
    /// symbols).
    pub fn from_rows(num_labels: usize, rows: HashMap<Vec<LabelId>, Vec<f64>>) -> Result<Self> {
        if num_labels > MAX_TABULAR_LABELS {
            return Err(Error::input(format!(
                "tabular model limited to {MAX_TABULAR_LABELS} labels, got {num_labels}"
            )));
        }
        for (prefix, row) in &rows {
            if row.len() != num_labels + 1 {
                return Err(Error::input(format!(
                    "row for prefix {prefix:?} has length {}, expected {}",
                    row.len(),
                    num_labels + 1
                )));
            }
            let mut sum = 0.0;
            for (symbol, &p) in row.iter().enumerate() {
                if p < 0.0 {
                    return Err(Error::input("negative probability in tabular row"));
                }
                if symbol != STOP && prefix.contains(&symbol) && p != 0.0 {
                    return Err(Error::input(format!(
                        "prefix {prefix:?} assigns mass to already-used label {symbol}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::input(format!(
                    "row for prefix {prefix:?} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(TabularModel { num_labels, rows })
    }

    /// A random model: every duplicate-free prefix gets an independent
    /// random distribution over the remaining labels ∪ {STOP}.
    pub fn random<R: Rng>(num_labels: usize, rng: &mut R) -> Result<Self> {
        if num_labels > MAX_TABULAR_LABELS {
            return Err(Error::input(format!(
                "tabular model limited to {MAX_TABULAR_LABELS} labels, got {num_labels}"
            )));
        }
        let mut rows = HashMap::new();
        let mut stack = vec![Vec::new()];
        while let Some(prefix) = stack.pop() {
            let mut row = vec![0.0; num_labels + 1];
            // floor keeps every allowed outcome reachable
            row[STOP] = rng.gen_range(0.05..1.0);
            for l in 1..=num_labels {
                if !prefix.contains(&l) {
                    row[l] = rng.gen_range(0.05..1.0);
                }
            }
            let sum: f64 = row.iter().sum();
            for p in &mut row {
                *p /= sum;
            }
            for l in 1..=num_labels {
                if !prefix.contains(&l) {
                    let mut child = prefix.clone();
                    child.push(l);
                    stack.push(child);
                }
            }
            rows.insert(prefix, row);
        }
        Ok(TabularModel { num_labels, rows })
    }

    /// The constructed three-label case where the most probable set differs
    /// from the most probable sequence: complete-sequence probabilities are
    /// p((1)) = 0.30, p((2,3)) = p((3,2)) = 0.25, p((2)) = p((3)) = 0.10,
    /// so set {2,3} has probability 0.50 while the top sequence is (1).
    pub fn top_set_divergence() -> Self {
        let mut rows = HashMap::new();
        rows.insert(vec![], vec![0.0, 0.3, 0.35, 0.35]);
        rows.insert(vec![1], vec![1.0, 0.0, 0.0, 0.0]);
        rows.insert(vec![2], vec![2.0 / 7.0, 0.0, 0.0, 5.0 / 7.0]);
        rows.insert(vec![3], vec![2.0 / 7.0, 0.0, 5.0 / 7.0, 0.0]);
        rows.insert(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0]);
        rows.insert(vec![3, 2], vec![1.0, 0.0, 0.0, 0.0]);
        // unreachable two-step prefixes through label 1 still need rows
        rows.insert(vec![1, 2], vec![0.5, 0.0, 0.0, 0.5]);
        rows.insert(vec![1, 3], vec![0.5, 0.0, 0.5, 0.0]);
        rows.insert(vec![2, 1], vec![0.5, 0.0, 0.0, 0.5]);
        rows.insert(vec![3, 1], vec![0.5, 0.0, 0.5, 0.0]);
        rows.insert(vec![1, 2, 3], vec![1.0, 0.0, 0.0, 0.0]);
        rows.insert(vec![1, 3, 2], vec![1.0, 0.0, 0.0, 0.0]);
        rows.insert(vec![2, 1, 3], vec![1.0, 0.0, 0.0, 0.0]);
        rows.insert(vec![2, 3, 1], vec![1.0, 0.0, 0.0, 0.0]);
        rows.insert(vec![3, 1, 2], vec![1.0, 0.0, 0.0, 0.0]);
        rows.insert(vec![3, 2, 1], vec![1.0, 0.0, 0.0, 0.0]);
        TabularModel::from_rows(3, rows).expect("hand-built rows are valid")
    }

    pub fn row(&self, prefix: &[LabelId]) -> Option<&Vec<f64>> {
        self.rows.get(prefix)
    }
}

impl SequenceModel for TabularModel {
    type Ctx = ();
    type State = Vec<LabelId>;

    fn num_labels(&self) -> usize {
        self.num_labels
    }

    fn repeat_masking(&self) -> bool {
        true
    }

    fn context(&self, _doc: &Document) -> Result<()> {
        Ok(())
    }

    fn initial_state(&self, _ctx: &()) -> Vec<LabelId> {
        Vec::new()
    }

    fn decode_step(
        &self,
        _ctx: &(),
        state: &Vec<LabelId>,
        prev: LabelId,
    ) -> Result<(StepDistribution, Vec<LabelId>)> {
        let next_state = if prev == STOP {
            if !state.is_empty() {
                return Err(Error::input("STOP input is only valid as begin-of-sequence"));
            }
            Vec::new()
        } else {
            if prev > self.num_labels {
                return Err(Error::input(format!("label {prev} out of range")));
            }
            if state.contains(&prev) {
                return Err(Error::input(format!("label {prev} already emitted")));
            }
            let mut s = state.clone();
            s.push(prev);
            s
        };
        let row = self
            .rows
            .get(&next_state)
            .ok_or_else(|| Error::input(format!("no row for prefix {next_state:?}")))?;
        let log_probs = row
            .iter()
            .map(|&p| if p == 0.0 { f64::NEG_INFINITY } else { p.ln() })
            .collect();
        Ok((
            StepDistribution {
                log_probs,
                attention: None,
            },
            next_state,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sequence_logprob;
    use crate::types::LabelSequence;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc() -> Document {
        Document::from_tokens(vec![], 0)
    }

    #[test]
    fn decode_step_returns_stored_row() {
        let m = TabularModel::top_set_divergence();
        let ctx = m.context(&doc()).unwrap();
        let s0 = m.initial_state(&ctx);
        let (_, s1) = m.decode_step(&ctx, &s0, STOP).unwrap();
        let (dist, _) = m.decode_step(&ctx, &s1, 2).unwrap();
        assert_relative_eq!(dist.log_prob(STOP), (2.0f64 / 7.0).ln(), max_relative = 1e-14);
        assert_relative_eq!(dist.log_prob(3), (5.0f64 / 7.0).ln(), max_relative = 1e-14);
        assert_eq!(dist.log_prob(1), f64::NEG_INFINITY);
    }

    #[test]
    fn sequence_logprob_is_the_product_of_conditionals() {
        // p(1|∅)=0.5, p(STOP|1)=0.4 → complete sequence (1) has prob 0.2
        let mut rows = HashMap::new();
        rows.insert(vec![], vec![0.3, 0.5, 0.2]);
        rows.insert(vec![1], vec![0.4, 0.0, 0.6]);
        rows.insert(vec![2], vec![0.5, 0.5, 0.0]);
        rows.insert(vec![1, 2], vec![1.0, 0.0, 0.0]);
        rows.insert(vec![2, 1], vec![1.0, 0.0, 0.0]);
        let m = TabularModel::from_rows(2, rows).unwrap();
        let lp = sequence_logprob(&m, &(), &LabelSequence::new(vec![1]).unwrap(), true).unwrap();
        assert_relative_eq!(lp, (0.5f64 * 0.4).ln(), max_relative = 1e-14);
    }

    #[test]
    fn empty_sequence_scores_stop_given_nothing() {
        let m = TabularModel::top_set_divergence();
        let lp = sequence_logprob(&m, &(), &LabelSequence::empty(), true).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY); // p(STOP|∅)=0 in this construction
        let m2 = TabularModel::random(3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let lp2 = sequence_logprob(&m2, &(), &LabelSequence::empty(), true).unwrap();
        assert_relative_eq!(lp2, m2.row(&[]).unwrap()[STOP].ln(), max_relative = 1e-14);
    }

    #[test]
    fn random_model_rows_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = TabularModel::random(4, &mut rng).unwrap();
        for (prefix, row) in &m.rows {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "prefix {prefix:?} sums to {sum}");
        }
    }

    #[test]
    fn complete_sequence_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = TabularModel::random(3, &mut rng).unwrap();
        let mut total = 0.0;
        let labels = [1usize, 2, 3];
        let mut seqs: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..3 {
            let mut next = Vec::new();
            for s in &seqs {
                for &l in &labels {
                    if !s.contains(&l) {
                        let mut t = s.clone();
                        t.push(l);
                        next.push(t);
                    }
                }
            }
            seqs.extend(next);
        }
        seqs.sort();
        seqs.dedup();
        for s in seqs {
            let lp =
                sequence_logprob(&m, &(), &LabelSequence::new(s).unwrap(), true).unwrap();
            total += lp.exp();
        }
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn from_rows_rejects_bad_tables() {
        let mut rows = HashMap::new();
        rows.insert(vec![], vec![0.5, 0.6]);
        assert!(TabularModel::from_rows(1, rows).is_err());
        let mut rows = HashMap::new();
        rows.insert(vec![1], vec![0.5, 0.5]); // mass on used label
        assert!(TabularModel::from_rows(1, rows).is_err());
        assert!(
            TabularModel::random(9, &mut ChaCha8Rng::seed_from_u64(0)).is_err(),
            "factorial guard"
        );
    }

    #[test]
    fn duplicate_prev_label_is_an_input_error() {
        let m = TabularModel::top_set_divergence();
        let s0 = m.initial_state(&());
        let (_, s1) = m.decode_step(&(), &s0, STOP).unwrap();
        let (_, s2) = m.decode_step(&(), &s1, 2).unwrap();
        assert!(m.decode_step(&(), &s2, 2).is_err());
        assert!(m.decode_step(&(), &s2, 9).is_err());
    }
}
