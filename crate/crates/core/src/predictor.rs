//! Two prediction strategies over a trained sequence model.
//!
//! Top-sequence: run the open beam, return the label set of the single best
//! complete sequence. Top-set: take the open beam's K sequences, map them to
//! their (deduplicated) label sets, score each set as the sum over its top-K
//! permutations with the restricted beam, and return the most probable set.
//! The two can disagree: probability mass spread over many orderings of one
//! set can beat the single best sequence of another.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beam::{beam_search, set_logprob, BeamConfig};
use crate::data::LabelVocabulary;
use crate::error::{Error, Result};
use crate::metrics::PredictionRecord;
use crate::model::{sequence_logprob, SequenceModel};
use crate::types::{LabelSequence, LabelSet};

/// Label set of the most probable complete sequence, with its log
/// probability. An immediate STOP wins means the empty set.
pub fn predict_top_sequence<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    width: usize,
) -> Result<(LabelSet, f64)> {
    let cfg = BeamConfig::open(model.num_labels(), width);
    let seqs = beam_search(model, ctx, &cfg)?;
    let best = seqs
        .first()
        .ok_or_else(|| Error::numeric("beam search returned no sequences"))?;
    Ok((best.seq.to_set(), best.logprob))
}

fn candidate_set_logprob<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
    width: usize,
) -> Result<f64> {
    if set.is_empty() {
        // the empty set has one "permutation": immediate STOP
        return sequence_logprob(model, ctx, &LabelSequence::empty(), true);
    }
    set_logprob(model, ctx, set, width)
}

#[derive(Debug, Clone)]
pub struct SetPrediction {
    pub set: LabelSet,
    pub set_logprob: f64,
    pub top_seq_set: LabelSet,
    pub top_seq_logprob: f64,
    /// Every candidate set considered, with its summed log probability.
    pub candidates: Vec<(LabelSet, f64)>,
    /// Per-permutation probabilities of the chosen set (restricted beam).
    pub permutation_probs: Vec<f64>,
}

/// Two-level most-probable-set prediction.
pub fn predict_top_set<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    width: usize,
) -> Result<SetPrediction> {
    let cfg = BeamConfig::open(model.num_labels(), width);
    let mut level1 = beam_search(model, ctx, &cfg)?;
    // zero-probability sequences can pad out an underfull beam
    level1.retain(|s| s.logprob.is_finite());
    let best_seq = level1
        .first()
        .ok_or_else(|| Error::numeric("beam search returned no sequences"))?;
    let top_seq_set = best_seq.seq.to_set();
    let top_seq_logprob = best_seq.logprob;

    let mut sets: Vec<LabelSet> = level1.iter().map(|s| s.seq.to_set()).collect();
    sets.sort_by(|a, b| a.labels().cmp(b.labels()));
    sets.dedup_by(|a, b| a.labels() == b.labels());

    let mut candidates = Vec::with_capacity(sets.len());
    for set in sets {
        let lp = candidate_set_logprob(model, ctx, &set, width)?;
        if lp.is_finite() {
            candidates.push((set, lp));
        }
    }
    // best log probability; ties prefer the smaller set, then lexicographic
    let (chosen, chosen_lp) = candidates
        .iter()
        .max_by(|(sa, la), (sb, lb)| {
            la.partial_cmp(lb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| sb.len().cmp(&sa.len()))
                .then_with(|| sb.labels().cmp(sa.labels()))
        })
        .cloned()
        .ok_or_else(|| Error::numeric("no candidate sets"))?;

    let permutation_probs = if chosen.is_empty() {
        vec![chosen_lp.exp()]
    } else {
        let cfg = BeamConfig::all_of(&chosen, width);
        beam_search(model, ctx, &cfg)?
            .iter()
            .map(|s| s.logprob.exp())
            .filter(|&p| p > 0.0)
            .collect()
    };

    Ok(SetPrediction {
        set: chosen,
        set_logprob: chosen_lp,
        top_seq_set,
        top_seq_logprob,
        candidates,
        permutation_probs,
    })
}

/// One line of a prediction file. Labels are stored as names, so files stay
/// portable across vocabulary rebuilds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionOutput {
    pub id: String,
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
    pub set_logprob: f64,
    pub top_seq: Vec<String>,
    pub top_seq_logprob: f64,
    /// Level-2 per-set probability table over all candidate sets.
    pub candidates: Vec<(Vec<String>, f64)>,
    pub permutation_probs: Vec<f64>,
}

fn names(set: &LabelSet, vocab: &LabelVocabulary) -> Result<Vec<String>> {
    set.labels()
        .iter()
        .map(|&l| {
            vocab
                .name(l)
                .map(str::to_string)
                .ok_or_else(|| Error::data(format!("label id {l} has no name")))
        })
        .collect()
}

impl PredictionOutput {
    pub fn from_prediction(
        id: &str,
        gold: &LabelSet,
        prediction: &SetPrediction,
        vocab: &LabelVocabulary,
    ) -> Result<Self> {
        Ok(PredictionOutput {
            id: id.to_string(),
            gold: names(gold, vocab)?,
            predicted: names(&prediction.set, vocab)?,
            set_logprob: prediction.set_logprob,
            top_seq: names(&prediction.top_seq_set, vocab)?,
            top_seq_logprob: prediction.top_seq_logprob,
            candidates: prediction
                .candidates
                .iter()
                .map(|(s, lp)| Ok((names(s, vocab)?, *lp)))
                .collect::<Result<_>>()?,
            permutation_probs: prediction.permutation_probs.clone(),
        })
    }
}

pub fn write_predictions(outputs: &[PredictionOutput], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in outputs {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionOutput>> {
    let file = File::open(path)?;
    let mut outputs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!(
                "{}:{}: malformed prediction: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        outputs.push(record);
    }
    Ok(outputs)
}

/// Rebuilds metric records from a prediction file. Label ids are assigned
/// from the sorted union of names seen in the file; returns the records and
/// the size of that label universe.
pub fn records_from_outputs(
    outputs: &[PredictionOutput],
) -> Result<(Vec<PredictionRecord>, usize)> {
    let mut all_names: Vec<&str> = outputs
        .iter()
        .flat_map(|o| o.gold.iter().chain(o.predicted.iter()))
        .map(String::as_str)
        .collect();
    all_names.sort_unstable();
    all_names.dedup();
    let id_of = |name: &str| -> Result<usize> {
        all_names
            .binary_search(&name)
            .map(|i| i + 1)
            .map_err(|_| Error::data(format!("unknown label '{name}'")))
    };
    let mut records = Vec::with_capacity(outputs.len());
    for o in outputs {
        let gold: LabelSet = o
            .gold
            .iter()
            .map(|n| id_of(n))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect();
        let predicted: LabelSet = o
            .predicted
            .iter()
            .map(|n| id_of(n))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect();
        records.push(PredictionRecord {
            gold,
            predicted,
            permutation_probs: if o.permutation_probs.is_empty() {
                None
            } else {
                Some(o.permutation_probs.clone())
            },
        });
    }
    Ok((records, all_names.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tabular::TabularModel;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_sequence_and_top_set_disagree_on_the_constructed_model() {
        let m = TabularModel::top_set_divergence();
        let (seq_set, seq_lp) = predict_top_sequence(&m, &(), 12).unwrap();
        assert_eq!(seq_set.labels(), &[1]);
        assert_relative_eq!(seq_lp.exp(), 0.30, max_relative = 1e-12);

        let pred = predict_top_set(&m, &(), 12).unwrap();
        assert_eq!(pred.set.labels(), &[2, 3]);
        assert_relative_eq!(pred.set_logprob.exp(), 0.50, max_relative = 1e-12);
        assert_eq!(pred.top_seq_set.labels(), &[1]);
        assert_relative_eq!(pred.top_seq_logprob.exp(), 0.30, max_relative = 1e-12);
        // the two permutations of {2,3} are equally likely
        assert_eq!(pred.permutation_probs.len(), 2);
        assert_relative_eq!(pred.permutation_probs[0], 0.25, max_relative = 1e-12);
        assert_relative_eq!(pred.permutation_probs[1], 0.25, max_relative = 1e-12);
    }

    #[test]
    fn chosen_set_beats_every_candidate_including_the_top_sequence_set() {
        for seed in 0..8u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = TabularModel::random(4, &mut rng).unwrap();
            let pred = predict_top_set(&m, &(), 24).unwrap();
            for (set, lp) in &pred.candidates {
                assert!(
                    pred.set_logprob >= *lp - 1e-12,
                    "candidate {set:?} beat the chosen set"
                );
                if set.labels() == pred.top_seq_set.labels() {
                    assert!(pred.set_logprob >= *lp - 1e-12);
                }
            }
            // the top sequence's set is always among the candidates
            assert!(pred
                .candidates
                .iter()
                .any(|(s, _)| s.labels() == pred.top_seq_set.labels()));
        }
    }

    #[test]
    fn exhaustive_width_matches_exact_argmax_over_reachable_sets() {
        for seed in 20..25u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = TabularModel::random(3, &mut rng).unwrap();
            let pred = predict_top_set(&m, &(), 64).unwrap();
            // exact set probabilities by enumeration
            let mut best: Option<(Vec<usize>, f64)> = None;
            for mask in 0u32..8 {
                let set: LabelSet = (1..=3usize).filter(|i| mask & (1 << (i - 1)) != 0).collect();
                let lp = candidate_set_logprob(&m, &(), &set, 64).unwrap();
                let better = match &best {
                    None => true,
                    Some((_, blp)) => lp > *blp + 1e-12,
                };
                if better {
                    best = Some((set.labels().to_vec(), lp));
                }
            }
            let (best_set, best_lp) = best.unwrap();
            assert_eq!(pred.set.labels(), &best_set[..], "seed {seed}");
            assert_relative_eq!(pred.set_logprob, best_lp, max_relative = 1e-10);
        }
    }

    #[test]
    fn determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = TabularModel::random(4, &mut rng).unwrap();
        let a = predict_top_set(&m, &(), 12).unwrap();
        let b = predict_top_set(&m, &(), 12).unwrap();
        assert_eq!(a.set.labels(), b.set.labels());
        assert_eq!(a.set_logprob, b.set_logprob);
        assert_eq!(a.permutation_probs, b.permutation_probs);
    }

    #[test]
    fn prediction_file_round_trip() {
        let mut vocab_src = Vec::new();
        for (i, name) in ["alpha", "beta", "gamma"].iter().enumerate() {
            vocab_src.push((i + 1, name.to_string()));
        }
        // build a LabelVocabulary through the data module
        let dir = tempfile::tempdir().unwrap();
        let data_path = dir.path().join("train.jsonl");
        std::fs::write(
            &data_path,
            r#"{"id":"a","text":"xx yy","labels":["alpha","beta","gamma"]}"#,
        )
        .unwrap();
        let (_, vocab, _) = crate::data::load_training(&data_path, 4).unwrap();
        drop(vocab_src);

        let m = TabularModel::top_set_divergence();
        let pred = predict_top_set(&m, &(), 12).unwrap();
        let gold: LabelSet = [2usize, 3].into_iter().collect();
        let output =
            PredictionOutput::from_prediction("doc-1", &gold, &pred, &vocab.labels).unwrap();
        assert_eq!(output.predicted, vec!["beta", "gamma"]);
        assert_eq!(output.top_seq, vec!["alpha"]);

        let path = dir.path().join("pred.jsonl");
        write_predictions(&[output], &path).unwrap();
        let loaded = read_predictions(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].predicted, vec!["beta", "gamma"]);
        assert_eq!(loaded[0].set_logprob, pred.set_logprob);

        let (records, num_labels) = records_from_outputs(&loaded).unwrap();
        assert_eq!(num_labels, 2); // only beta and gamma appear in the file
        assert_eq!(records[0].gold.labels(), records[0].predicted.labels());
        assert_eq!(
            crate::metrics::instance_f1(&records).unwrap(),
            1.0
        );
    }
}
