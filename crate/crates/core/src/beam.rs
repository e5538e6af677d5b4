//! Beam search over label sequences, in two modes: open-vocabulary
//! generation (`all = false`, sequences may STOP at any step) and
//! set-restricted permutation search (`all = true`, sequences must cover
//! every label of the candidate subset G). Exact enumeration oracles for
//! small label sets live here too.

use crate::error::{Error, Result};
use crate::model::{sequence_logprob, SequenceModel};
use crate::numeric::logsumexp;
use crate::types::{LabelId, LabelSequence, LabelSet, STOP};

pub const DEFAULT_BEAM_WIDTH: usize = 12;
pub const DEFAULT_MAX_LEN: usize = 50;
/// Factorial guard for exact permutation enumeration.
pub const MAX_ENUM_SET: usize = 8;

#[derive(Debug, Clone)]
pub struct BeamConfig {
    /// Beam width K.
    pub width: usize,
    /// The ALL flag: true = sequences must contain every label of `labels`.
    pub all: bool,
    pub max_len: usize,
    /// Candidate label subset G.
    pub labels: Vec<LabelId>,
}

impl BeamConfig {
    pub fn all_of(labels: &LabelSet, width: usize) -> Self {
        BeamConfig {
            width,
            all: true,
            max_len: DEFAULT_MAX_LEN.max(labels.len()),
            labels: labels.labels().to_vec(),
        }
    }

    pub fn open(num_labels: usize, width: usize) -> Self {
        BeamConfig {
            width,
            all: false,
            max_len: DEFAULT_MAX_LEN,
            labels: (1..=num_labels).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::input("beam width must be at least 1"));
        }
        if self.all {
            if self.labels.is_empty() {
                return Err(Error::input("ALL=1 requires a non-empty label subset"));
            }
            if self.labels.len() > self.max_len {
                return Err(Error::input(format!(
                    "ALL=1 with {} labels exceeds max_len {}",
                    self.labels.len(),
                    self.max_len
                )));
            }
        }
        Ok(())
    }
}

/// A finished beam result: the sequence and its complete-sequence
/// log-probability (terminal STOP factor included).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub seq: LabelSequence,
    pub logprob: f64,
    pub complete: bool,
}

struct Hypothesis<S> {
    seq: Vec<LabelId>,
    /// Sum of prefix factors, no STOP.
    prefix_lp: f64,
    /// State after consuming the whole prefix.
    state: S,
    /// Distribution over the next symbol from `state`.
    next_log_probs: Vec<f64>,
    /// ALL=0: sequence ended with STOP (lp below includes the STOP factor).
    stopped: bool,
    /// ALL=0 only: prefix_lp + log p(STOP | prefix), set when stopped.
    stopped_lp: f64,
}

enum Action {
    Extend(usize, LabelId),
    Stop(usize),
    Keep(usize),
}

/// Algorithm: repeatedly expand all live hypotheses over the allowed
/// labels (plus STOP when `all = false`), keep the K best candidates, and
/// terminate once every kept hypothesis is finished. Ranking is by prefix
/// log-probability; the terminal STOP factor is applied to completed
/// permutations before the final sort. Ties break by lexicographic label
/// order.
pub fn beam_search<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    cfg: &BeamConfig,
) -> Result<Vec<ScoredSequence>> {
    cfg.validate()?;
    for &l in &cfg.labels {
        if l == STOP || l > model.num_labels() {
            return Err(Error::input(format!("label {l} out of range")));
        }
    }
    let mask_repeats = model.repeat_masking();

    let init_state = model.initial_state(ctx);
    let (init_dist, init_state) = model.decode_step(ctx, &init_state, STOP)?;
    let mut beam = vec![Hypothesis {
        seq: Vec::new(),
        prefix_lp: 0.0,
        state: init_state,
        next_log_probs: init_dist.log_probs,
        stopped: false,
        stopped_lp: f64::NEG_INFINITY,
    }];

    for _round in 0..=cfg.max_len {
        // Step 1: candidate generation.
        let mut candidates: Vec<(f64, Vec<LabelId>, bool, Action)> = Vec::new();
        let mut all_finished = true;
        for (i, hyp) in beam.iter().enumerate() {
            if hyp.stopped {
                candidates.push((hyp.stopped_lp, hyp.seq.clone(), true, Action::Keep(i)));
                continue;
            }
            if cfg.all && covers(&hyp.seq, &cfg.labels) {
                candidates.push((hyp.prefix_lp, hyp.seq.clone(), true, Action::Keep(i)));
                continue;
            }
            all_finished = false;
            if hyp.seq.len() < cfg.max_len {
                for &l in &cfg.labels {
                    if (mask_repeats || cfg.all) && hyp.seq.contains(&l) {
                        continue;
                    }
                    let lp = hyp.prefix_lp + hyp.next_log_probs[l];
                    let mut seq = hyp.seq.clone();
                    seq.push(l);
                    candidates.push((lp, seq, false, Action::Extend(i, l)));
                }
            }
            if !cfg.all {
                let lp = hyp.prefix_lp + hyp.next_log_probs[STOP];
                candidates.push((lp, hyp.seq.clone(), true, Action::Stop(i)));
            }
        }
        if all_finished {
            break;
        }

        // Step 2: keep the K best; ties by lexicographic label order,
        // finished before unfinished to keep the order total.
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| b.2.cmp(&a.2))
        });
        candidates.truncate(cfg.width);

        let mut next_beam = Vec::with_capacity(candidates.len());
        for (lp, _seq, _fin, action) in candidates {
            match action {
                Action::Keep(i) => next_beam.push(Hypothesis {
                    seq: beam[i].seq.clone(),
                    prefix_lp: beam[i].prefix_lp,
                    state: beam[i].state.clone(),
                    next_log_probs: beam[i].next_log_probs.clone(),
                    stopped: beam[i].stopped,
                    stopped_lp: beam[i].stopped_lp,
                }),
                Action::Stop(i) => next_beam.push(Hypothesis {
                    seq: beam[i].seq.clone(),
                    prefix_lp: beam[i].prefix_lp,
                    state: beam[i].state.clone(),
                    next_log_probs: beam[i].next_log_probs.clone(),
                    stopped: true,
                    stopped_lp: lp,
                }),
                Action::Extend(i, l) => {
                    let (dist, state) = model.decode_step(ctx, &beam[i].state, l)?;
                    let mut seq = beam[i].seq.clone();
                    seq.push(l);
                    next_beam.push(Hypothesis {
                        seq,
                        prefix_lp: lp,
                        state,
                        next_log_probs: dist.log_probs,
                        stopped: false,
                        stopped_lp: f64::NEG_INFINITY,
                    });
                }
            }
        }
        beam = next_beam;
    }

    // Attach the terminal STOP factor and produce the final ranking.
    let mut out: Vec<ScoredSequence> = beam
        .into_iter()
        .map(|hyp| {
            let (logprob, complete) = if hyp.stopped {
                (hyp.stopped_lp, true)
            } else if cfg.all && covers(&hyp.seq, &cfg.labels) {
                (hyp.prefix_lp + hyp.next_log_probs[STOP], true)
            } else {
                // only reachable via the max_len guard
                (hyp.prefix_lp + hyp.next_log_probs[STOP], true)
            };
            ScoredSequence {
                seq: LabelSequence(hyp.seq),
                logprob,
                complete,
            }
        })
        .collect();
    sort_scored(&mut out);
    out.truncate(cfg.width);
    Ok(out)
}

fn covers(seq: &[LabelId], labels: &[LabelId]) -> bool {
    labels.iter().all(|l| seq.contains(l))
}

fn sort_scored(seqs: &mut [ScoredSequence]) {
    seqs.sort_by(|a, b| {
        b.logprob
            .partial_cmp(&a.logprob)
            .unwrap()
            .then_with(|| a.seq.cmp(&b.seq))
    });
}

/// Exact oracle: scores all |y|! permutations of the set, sorted by
/// descending complete-sequence log-probability.
pub fn enumerate_permutations<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
) -> Result<Vec<ScoredSequence>> {
    if set.len() > MAX_ENUM_SET {
        return Err(Error::input(format!(
            "refusing to enumerate {}! permutations (limit {MAX_ENUM_SET})",
            set.len()
        )));
    }
    let mut out = Vec::new();
    let mut perm = Vec::with_capacity(set.len());
    let mut used = vec![false; set.len()];
    permute(model, ctx, set.labels(), &mut perm, &mut used, &mut out)?;
    sort_scored(&mut out);
    Ok(out)
}

fn permute<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    labels: &[LabelId],
    perm: &mut Vec<LabelId>,
    used: &mut Vec<bool>,
    out: &mut Vec<ScoredSequence>,
) -> Result<()> {
    if perm.len() == labels.len() {
        let seq = LabelSequence(perm.clone());
        let logprob = sequence_logprob(model, ctx, &seq, true)?;
        out.push(ScoredSequence {
            seq,
            logprob,
            complete: true,
        });
        return Ok(());
    }
    for i in 0..labels.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        perm.push(labels[i]);
        permute(model, ctx, labels, perm, used, out)?;
        perm.pop();
        used[i] = false;
    }
    Ok(())
}

/// log p(y|x) approximated by the top-K restricted beam:
/// log Σ exp(logprob) over the K best permutations of `set`. Exact once
/// K ≥ |y|!.
pub fn set_logprob<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    set: &LabelSet,
    width: usize,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::input("set_logprob requires a non-empty label set"));
    }
    let cfg = BeamConfig::all_of(set, width);
    let seqs = beam_search(model, ctx, &cfg)?;
    let lps: Vec<f64> = seqs.iter().map(|s| s.logprob).collect();
    Ok(logsumexp(&lps))
}
