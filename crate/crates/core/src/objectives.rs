//! The five training objectives over label permutations. Each one reduces
//! to a loss value plus a list of (sequence, weight) pairs that the
//! gradient engine consumes; weights are treated as constants there.

use serde::{Deserialize, Serialize};

use crate::beam::{beam_search, BeamConfig};
use crate::error::{Error, Result};
use crate::model::SequenceModel;
use crate::numeric::logsumexp;
use crate::types::{LabelId, LabelSequence, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Fixed frequency order, standard sequence likelihood.
    Seq2Seq,
    /// Most probable permutation only.
    VinyalsMax,
    /// Every considered permutation, unit weight.
    VinyalsUniform,
    /// Permutations weighted by their own probability.
    VinyalsSample,
    /// Log of the summed permutation probabilities.
    SetRnn,
}

impl ObjectiveKind {
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "seq2seq" => Ok(ObjectiveKind::Seq2Seq),
            "vmax" => Ok(ObjectiveKind::VinyalsMax),
            "vuniform" => Ok(ObjectiveKind::VinyalsUniform),
            "vsample" => Ok(ObjectiveKind::VinyalsSample),
            "setrnn" => Ok(ObjectiveKind::SetRnn),
            _ => Err(Error::input(format!(
                "unknown objective '{token}' (expected seq2seq|vmax|vuniform|vsample|setrnn)"
            ))),
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            ObjectiveKind::Seq2Seq => "seq2seq",
            ObjectiveKind::VinyalsMax => "vmax",
            ObjectiveKind::VinyalsUniform => "vuniform",
            ObjectiveKind::VinyalsSample => "vsample",
            ObjectiveKind::SetRnn => "setrnn",
        }
    }
}

/// Which objective to train with, how many permutations to consider per
/// instance, and the optional warm-up schedule (uniform first, then the
/// target objective from `switch_epoch` on).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Permutations considered per instance (train-time beam width).
    pub width: usize,
    pub switch_epoch: Option<usize>,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::input("objective width must be at least 1"));
        }
        Ok(ObjectiveSpec {
            kind,
            width,
            switch_epoch: None,
        })
    }

    pub fn with_switch_epoch(mut self, epoch: usize) -> Result<Self> {
        match self.kind {
            ObjectiveKind::VinyalsMax | ObjectiveKind::VinyalsSample => {
                self.switch_epoch = Some(epoch);
                Ok(self)
            }
            _ => Err(Error::input(
                "warm-up schedule only applies to vmax and vsample",
            )),
        }
    }

    /// The objective actually applied at `epoch`.
    pub fn effective_kind(&self, epoch: usize) -> ObjectiveKind {
        match self.switch_epoch {
            Some(t) if epoch < t => ObjectiveKind::VinyalsUniform,
            _ => self.kind,
        }
    }
}

/// Labels of `set` sorted by descending training-set frequency, ties by
/// ascending label id.
pub fn order_by_frequency(set: &LabelSet, freq: &[u64]) -> Result<LabelSequence> {
    let mut labels: Vec<LabelId> = set.labels().to_vec();
    for &l in &labels {
        if l >= freq.len() || freq[l] == 0 {
            return Err(Error::input(format!("no frequency recorded for label {l}")));
        }
    }
    labels.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    Ok(LabelSequence(labels))
}

/// Loss value plus the (sequence, weight) pairs for the gradient engine.
pub type ObjectiveOutput = (f64, Vec<(LabelSequence, f64)>);

pub fn loss_seq2seq<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
    freq: &[u64],
) -> Result<ObjectiveOutput> {
    let seq = order_by_frequency(set, freq)?;
    let lp = crate::model::sequence_logprob(model, ctx, &seq, true)?;
    Ok((-lp, vec![(seq, 1.0)]))
}

pub fn loss_vinyals_max<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
    width: usize,
) -> Result<ObjectiveOutput> {
    let seqs = top_permutations(model, ctx, set, width)?;
    let best = &seqs[0]; // sorted descending
    Ok((-best.logprob, vec![(best.seq.clone(), 1.0)]))
}

pub fn loss_vinyals_uniform<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
    width: usize,
) -> Result<ObjectiveOutput> {
    let seqs = top_permutations(model, ctx, set, width)?;
    let loss = -seqs.iter().map(|s| s.logprob).sum::<f64>();
    let pairs = seqs.into_iter().map(|s| (s.seq, 1.0)).collect();
    Ok((loss, pairs))
}

pub fn loss_vinyals_sample<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
    width: usize,
) -> Result<ObjectiveOutput> {
    let seqs = top_permutations(model, ctx, set, width)?;
    let mut loss = 0.0;
    let mut pairs = Vec::with_capacity(seqs.len());
    for s in seqs {
        let p = s.logprob.exp();
        loss -= p * s.logprob;
        pairs.push((s.seq, p));
    }
    Ok((loss, pairs))
}

pub fn loss_set_rnn<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
    width: usize,
) -> Result<ObjectiveOutput> {
    let seqs = top_permutations(model, ctx, set, width)?;
    let lps: Vec<f64> = seqs.iter().map(|s| s.logprob).collect();
    let total = logsumexp(&lps);
    if !total.is_finite() {
        return Err(Error::numeric(format!(
            "set probability vanished for {set:?}"
        )));
    }
    let pairs = seqs
        .into_iter()
        .map(|s| {
            let w = (s.logprob - total).exp();
            (s.seq, w)
        })
        .collect();
    Ok((-total, pairs))
}

/// Dispatch over the five objectives.
pub fn evaluate_objective<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
    kind: ObjectiveKind,
    width: usize,
    freq: &[u64],
) -> Result<ObjectiveOutput> {
    match kind {
        ObjectiveKind::Seq2Seq => loss_seq2seq(model, ctx, set, freq),
        ObjectiveKind::VinyalsMax => loss_vinyals_max(model, ctx, set, width),
        ObjectiveKind::VinyalsUniform => loss_vinyals_uniform(model, ctx, set, width),
        ObjectiveKind::VinyalsSample => loss_vinyals_sample(model, ctx, set, width),
        ObjectiveKind::SetRnn => loss_set_rnn(model, ctx, set, width),
    }
}

fn top_permutations<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
    width: usize,
) -> Result<Vec<crate::beam::ScoredSequence>> {
    if set.is_empty() {
        return Err(Error::input("objectives require a non-empty label set"));
    }
    let cfg = BeamConfig::all_of(set, width);
    let seqs = beam_search(model, ctx, &cfg)?;
    if seqs.is_empty() {
        return Err(Error::numeric("beam search returned no permutations"));
    }
    Ok(seqs)
}

/// Both sides of the Jensen bound relating the uniform objective to the
/// log of the summed probabilities: lhs = log m + (1/m) Σ log p_i,
/// rhs = log Σ p_i; lhs ≤ rhs with equality iff all p_i are equal.
pub fn jensen_gap(probs: &[f64]) -> Result<(f64, f64)> {
    if probs.is_empty() {
        return Err(Error::input("jensen_gap requires at least one probability"));
    }
    if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::input("jensen_gap requires positive finite values"));
    }
    let m = probs.len() as f64;
    let lhs = m.ln() + probs.iter().map(|p| p.ln()).sum::<f64>() / m;
    let rhs = probs.iter().sum::<f64>().ln();
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tabular::TabularModel;
    use crate::beam::enumerate_permutations;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn freq_table() -> Vec<u64> {
        // label 1 most frequent, then 2, then 3
        vec![0, 10, 5, 5]
    }

    #[test]
    fn order_by_frequency_rules() {
        let freq = vec![0, 5, 10];
        let seq = order_by_frequency(&LabelSet::new(vec![1, 2]), &freq).unwrap();
        assert_eq!(seq.labels(), &[2, 1]);
        // equal frequencies: ascending label id
        let seq = order_by_frequency(&LabelSet::new(vec![3, 2]), &freq_table()).unwrap();
        assert_eq!(seq.labels(), &[2, 3]);
        let seq = order_by_frequency(&LabelSet::new(vec![2]), &freq_table()).unwrap();
        assert_eq!(seq.labels(), &[2]);
        assert!(order_by_frequency(&LabelSet::new(vec![9]), &freq_table()).is_err());
    }

    #[test]
    fn seq2seq_loss_is_the_fixed_order_nll() {
        let m = TabularModel::top_set_divergence();
        let set = LabelSet::new(vec![2, 3]);
        let (loss, pairs) = loss_seq2seq(&m, &(), &set, &freq_table()).unwrap();
        // frequency order is (2,3): p = 0.35 * 5/7 * 1 = 0.25
        assert_relative_eq!(loss, -(0.25f64.ln()), max_relative = 1e-12);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].0.labels(), &[2, 3]);
        assert_eq!(pairs[0].1, 1.0);
        assert!(loss >= 0.0);
    }

    #[test]
    fn all_objectives_coincide_on_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = TabularModel::random(3, &mut rng).unwrap();
        let set = LabelSet::new(vec![2]);
        let freq = freq_table();
        let (base, _) = loss_seq2seq(&m, &(), &set, &freq).unwrap();
        let (a, _) = loss_vinyals_max(&m, &(), &set, 4).unwrap();
        let (b, _) = loss_vinyals_uniform(&m, &(), &set, 4).unwrap();
        let (d, _) = loss_set_rnn(&m, &(), &set, 4).unwrap();
        assert_relative_eq!(a, base, max_relative = 1e-12);
        assert_relative_eq!(b, base, max_relative = 1e-12);
        assert_relative_eq!(d, base, max_relative = 1e-12);
        // vsample on a singleton is −p·log p with p the one permutation
        let (c, pairs) = loss_vinyals_sample(&m, &(), &set, 4).unwrap();
        let p = (-base).exp();
        assert_relative_eq!(c, -p * (-base), max_relative = 1e-12);
        assert_relative_eq!(pairs[0].1, p, max_relative = 1e-12);
    }

    #[test]
    fn vinyals_max_puts_weight_on_the_argmax_permutation() {
        // p((1,2)) > p((2,1)) by construction
        let mut rows = std::collections::HashMap::new();
        rows.insert(vec![], vec![0.1, 0.6, 0.3]);
        rows.insert(vec![1], vec![0.2, 0.0, 0.8]);
        rows.insert(vec![2], vec![0.5, 0.5, 0.0]);
        rows.insert(vec![1, 2], vec![1.0, 0.0, 0.0]);
        rows.insert(vec![2, 1], vec![1.0, 0.0, 0.0]);
        let m = TabularModel::from_rows(2, rows).unwrap();
        let set = LabelSet::new(vec![1, 2]);
        let (loss, pairs) = loss_vinyals_max(&m, &(), &set, 2).unwrap();
        assert_eq!(pairs[0].0.labels(), &[1, 2]);
        assert_relative_eq!(loss, -((0.6f64 * 0.8).ln()), max_relative = 1e-12);
        // max dominates any fixed order
        let (fixed, _) = loss_seq2seq(&m, &(), &set, &freq_table()).unwrap();
        assert!(loss <= fixed + 1e-12);
    }

    #[test]
    fn vinyals_uniform_sums_permutation_nlls() {
        let m = TabularModel::top_set_divergence();
        let set = LabelSet::new(vec![2, 3]);
        let (loss, pairs) = loss_vinyals_uniform(&m, &(), &set, 2).unwrap();
        assert_relative_eq!(loss, -2.0 * 0.25f64.ln(), max_relative = 1e-12);
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|(_, w)| *w == 1.0));
    }

    #[test]
    fn vinyals_sample_uniform_case() {
        let m = TabularModel::top_set_divergence();
        let set = LabelSet::new(vec![2, 3]);
        let (loss, pairs) = loss_vinyals_sample(&m, &(), &set, 2).unwrap();
        // p = q = 0.25 → loss = −2 p log p
        assert_relative_eq!(loss, -2.0 * 0.25 * 0.25f64.ln(), max_relative = 1e-12);
        for (_, w) in &pairs {
            assert!(*w >= 0.0 && *w <= 1.0);
            assert_relative_eq!(*w, 0.25, max_relative = 1e-12);
        }
    }

    #[test]
    fn set_rnn_loss_and_posterior_weights() {
        let m = TabularModel::top_set_divergence();
        let set = LabelSet::new(vec![2, 3]);
        let (loss, pairs) = loss_set_rnn(&m, &(), &set, 2).unwrap();
        assert_relative_eq!(loss, -(0.5f64.ln()), max_relative = 1e-12);
        let wsum: f64 = pairs.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(wsum, 1.0, max_relative = 1e-12);
        assert_relative_eq!(pairs[0].1, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn full_width_matches_exact_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = TabularModel::random(4, &mut rng).unwrap();
        let set = LabelSet::new(vec![1, 2, 3, 4]);
        let oracle = enumerate_permutations(&m, &(), &set).unwrap();
        let exact_set_lp = logsumexp(&oracle.iter().map(|s| s.logprob).collect::<Vec<_>>());
        let (loss, _) = loss_set_rnn(&m, &(), &set, 24).unwrap();
        assert_relative_eq!(loss, -exact_set_lp, max_relative = 1e-12);
        let (uni, _) = loss_vinyals_uniform(&m, &(), &set, 24).unwrap();
        let exact_uni = -oracle.iter().map(|s| s.logprob).sum::<f64>();
        assert_relative_eq!(uni, exact_uni, max_relative = 1e-12);
    }

    #[test]
    fn jensen_gap_examples() {
        let (lhs, rhs) = jensen_gap(&[0.2, 0.2, 0.2]).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        let (lhs, rhs) = jensen_gap(&[0.1, 0.3]).unwrap();
        assert_relative_eq!(lhs, -1.0601317681000717, max_relative = 1e-10);
        assert_relative_eq!(rhs, 0.4f64.ln(), max_relative = 1e-12);
        assert!(lhs <= rhs);
        assert!(jensen_gap(&[]).is_err());
        assert!(jensen_gap(&[0.1, 0.0]).is_err());
        assert!(jensen_gap(&[0.1, -0.2]).is_err());
    }

    #[test]
    fn jensen_holds_for_random_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let n = rng.gen_range(1..12);
            let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-6..1.0)).collect();
            let (lhs, rhs) = jensen_gap(&probs).unwrap();
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn schedule_rules() {
        let spec = ObjectiveSpec::new(ObjectiveKind::VinyalsMax, 4)
            .unwrap()
            .with_switch_epoch(3)
            .unwrap();
        assert_eq!(spec.effective_kind(0), ObjectiveKind::VinyalsUniform);
        assert_eq!(spec.effective_kind(2), ObjectiveKind::VinyalsUniform);
        assert_eq!(spec.effective_kind(3), ObjectiveKind::VinyalsMax);
        assert!(ObjectiveSpec::new(ObjectiveKind::SetRnn, 4)
            .unwrap()
            .with_switch_epoch(3)
            .is_err());
        assert!(ObjectiveSpec::new(ObjectiveKind::SetRnn, 0).is_err());
        assert!(ObjectiveKind::parse("setrnn").is_ok());
        assert!(ObjectiveKind::parse("bogus").is_err());
    }
}
