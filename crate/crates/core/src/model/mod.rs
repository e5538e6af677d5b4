//! The sequence-model abstraction: anything that defines
//! p(next symbol | document, prefix) over labels ∪ {STOP}.
//!
//! Two implementations live here: the trainable encoder-decoder
//! ([`neural::NeuralModel`]) and the closed-form [`tabular::TabularModel`]
//! used as an exact oracle in tests.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod neural;
pub mod gru;
pub mod params;
pub mod tabular;

use crate::error::{Error, Result};
use crate::types::{Document, LabelId, LabelSequence, StepDistribution, STOP};

/// A conditional sequence distribution over label sequences.
///
/// `Ctx` is the per-document work (encoder output) computed once and shared
/// by every decode branch; `State` is the cheap per-prefix decoder state.
pub trait SequenceModel {
    type Ctx;
    type State: Clone;

    fn num_labels(&self) -> usize;

    /// Whether already-emitted labels are masked out (renormalized) at each
    /// step, making sequences exactly duplicate-free permutations.
    fn repeat_masking(&self) -> bool;

    fn context(&self, doc: &Document) -> Result<Self::Ctx>;

    fn initial_state(&self, ctx: &Self::Ctx) -> Self::State;

    /// Consume `prev` and return the normalized log-distribution over the
    /// next symbol together with the advanced state. `prev == STOP` stands
    /// for begin-of-sequence and is only valid from the initial state.
    fn decode_step(
        &self,
        ctx: &Self::Ctx,
        state: &Self::State,
        prev: LabelId,
    ) -> Result<(StepDistribution, Self::State)>;
}

/// log p(s|x). With `complete == true` the terminal STOP factor is included,
/// making this the probability of the finished sequence; with `false` only
/// the prefix factors are summed (beam-internal scoring).
pub fn sequence_logprob<M: SequenceModel>(
    model: &M,
    ctx: &M::Ctx,
    seq: &LabelSequence,
    complete: bool,
) -> Result<f64> {
    for &l in seq.labels() {
        if l == STOP || l > model.num_labels() {
            return Err(Error::input(format!("label {l} out of range")));
        }
    }
    let mut state = model.initial_state(ctx);
    let mut prev = STOP;
    let mut total = 0.0;
    for &label in seq.labels() {
        let (dist, next) = model.decode_step(ctx, &state, prev)?;
        total += dist.log_prob(label);
        state = next;
        prev = label;
    }
    if complete {
        let (dist, _) = model.decode_step(ctx, &state, prev)?;
        total += dist.log_prob(STOP);
    }
    Ok(total)
}
