//! The trainable encoder-decoder. A two-layer GRU encoder reads the
//! document; a two-layer GRU decoder with additive attention over the
//! encoder outputs emits labels until STOP. Gradients of weighted sequence
//! log-likelihoods are computed by hand-written backpropagation through
//! the cached forward activations.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::attention::{attention_backward, attention_forward, AttentionCache};
use crate::model::gru::{gru_backward, gru_forward, outer_add, GruStepCache};
use crate::model::params::{ModelConfig, ModelParameters, Scalar};
use crate::model::SequenceModel;
use crate::numeric::logsumexp;
use crate::types::{Document, LabelId, LabelSequence, StepDistribution, STOP};

#[derive(Debug, Clone)]
pub struct NeuralModel<F> {
    cfg: ModelConfig,
    params: ModelParameters<F>,
}

/// Per-document encoder work, shared by every decode branch.
pub struct EncoderContext<F> {
    /// Top-layer hidden per token position, [T, h].
    pub outputs: Array2<F>,
    /// Attention projection `W_enc · e_t` per position, [T, h].
    pub proj: Array2<F>,
    /// Final hidden of each encoder layer; initializes the decoder.
    pub h1_final: Array1<F>,
    pub h2_final: Array1<F>,
}

/// Per-prefix decoder state.
#[derive(Debug, Clone)]
pub struct NeuralState<F> {
    h1: Array1<F>,
    h2: Array1<F>,
    used: Vec<LabelId>,
    started: bool,
}

struct EncodeCache<F> {
    /// Embedded (and dropout-scaled) word vectors actually fed to layer 1.
    inputs: Vec<Array1<F>>,
    masks: Option<Vec<Array1<F>>>,
    layer1: Vec<GruStepCache<F>>,
    layer2: Vec<GruStepCache<F>>,
}

struct DecodeCache<F> {
    prev: LabelId,
    mask: Option<Array1<F>>,
    g1: GruStepCache<F>,
    g2: GruStepCache<F>,
    att: AttentionCache<F>,
    features: Array1<F>,
    hidden_mlp: Array1<F>,
    log_probs: Vec<f64>,
    allowed: Vec<bool>,
    target: LabelId,
}

impl<F: Scalar> NeuralModel<F> {
    pub fn new(cfg: ModelConfig, params: ModelParameters<F>) -> Result<Self> {
        cfg.validate()?;
        let expected = ModelParameters::<F>::zeros(&cfg);
        for ((name, a), (_, b)) in params.named_arrays().iter().zip(expected.named_arrays()) {
            if a.shape() != b.shape() {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, config expects {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(NeuralModel { cfg, params })
    }

    pub fn init<R: Rng>(cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParameters::init(&cfg, rng);
        Ok(NeuralModel { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParameters<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParameters<F> {
        &mut self.params
    }

    fn check_doc(&self, doc: &Document) -> Result<()> {
        if doc.tokens.len() != self.cfg.max_doc_len {
            return Err(Error::config(format!(
                "document has {} tokens, config expects exactly {}",
                doc.tokens.len(),
                self.cfg.max_doc_len
            )));
        }
        if let Some(&t) = doc.tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::input(format!(
                "token id {t} outside vocabulary of size {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    fn encode_full(
        &self,
        doc: &Document,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(EncoderContext<F>, EncodeCache<F>)> {
        self.check_doc(doc)?;
        let h = self.cfg.hidden_dim;
        let t_len = doc.tokens.len();
        let mut h1 = Array1::zeros(h);
        let mut h2 = Array1::zeros(h);
        let mut outputs = Array2::zeros((t_len, h));
        let mut cache = EncodeCache {
            inputs: Vec::with_capacity(t_len),
            masks: dropout.is_some().then(Vec::new),
            layer1: Vec::with_capacity(t_len),
            layer2: Vec::with_capacity(t_len),
        };
        for (t, &tok) in doc.tokens.iter().enumerate() {
            let mut x = self.params.word_embeddings.row(tok).to_owned();
            if let Some(rng) = dropout.as_deref_mut() {
                let mask = self.dropout_mask(rng);
                x *= &mask;
                cache.masks.as_mut().unwrap().push(mask);
            }
            let (h1n, c1) = gru_forward(&self.params.encoder[0], &x, &h1);
            let (h2n, c2) = gru_forward(&self.params.encoder[1], &h1n, &h2);
            outputs.row_mut(t).assign(&h2n);
            cache.inputs.push(x);
            cache.layer1.push(c1);
            cache.layer2.push(c2);
            h1 = h1n;
            h2 = h2n;
        }
        let proj = outputs.dot(&self.params.attention.w_enc.t());
        Ok((
            EncoderContext {
                outputs,
                proj,
                h1_final: h1,
                h2_final: h2,
            },
            cache,
        ))
    }

    fn dropout_mask(&self, rng: &mut ChaCha8Rng) -> Array1<F> {
        let keep = 1.0 - self.cfg.dropout;
        Array1::from_shape_fn(self.cfg.embed_dim, |_| {
            if self.cfg.dropout > 0.0 && rng.gen::<f64>() < self.cfg.dropout {
                F::zero()
            } else {
                F::cast_from(1.0 / keep)
            }
        })
    }

    /// One decoder step with full cache. `used` is the prefix *excluding*
    /// `prev`; `prev` joins the mask for the produced distribution.
    fn step_full(
        &self,
        ctx: &EncoderContext<F>,
        h1: &Array1<F>,
        h2: &Array1<F>,
        used: &[LabelId],
        prev: LabelId,
        target: LabelId,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> DecodeCache<F> {
        let hdim = self.cfg.hidden_dim;
        let ddim = self.cfg.embed_dim;
        let mut x = self.params.label_embeddings.row(prev).to_owned();
        let mask = dropout.map(|rng| self.dropout_mask(rng));
        if let Some(m) = &mask {
            x *= m;
        }
        let (h1n, g1) = gru_forward(&self.params.decoder[0], &x, h1);
        let (h2n, g2) = gru_forward(&self.params.decoder[1], &h1n, h2);
        let (context, att) = attention_forward(&self.params.attention, &ctx.outputs, &ctx.proj, &h2n);

        let mut features = Array1::zeros(2 * hdim + ddim);
        features.slice_mut(s![..hdim]).assign(&context);
        features.slice_mut(s![hdim..2 * hdim]).assign(&h2n);
        features.slice_mut(s![2 * hdim..]).assign(&x);
        let hidden_mlp =
            (self.params.output.w1.dot(&features) + &self.params.output.b1).mapv(F::tanh);
        let logits = self.params.output.w2.dot(&hidden_mlp) + &self.params.output.b2;

        let num_symbols = self.cfg.num_labels + 1;
        let mut allowed = vec![true; num_symbols];
        if self.cfg.repeat_masking {
            for &l in used {
                allowed[l] = false;
            }
            if prev != STOP {
                allowed[prev] = false;
            }
        }
        let logits_f64: Vec<f64> = logits.iter().map(|&v| v.cast_to_f64()).collect();
        let masked: Vec<f64> = logits_f64
            .iter()
            .zip(&allowed)
            .map(|(&v, &ok)| if ok { v } else { f64::NEG_INFINITY })
            .collect();
        let lse = logsumexp(&masked);
        let log_probs: Vec<f64> = masked.iter().map(|&v| v - lse).collect();

        DecodeCache {
            prev,
            mask,
            g1,
            g2,
            att,
            features,
            hidden_mlp,
            log_probs,
            allowed,
            target,
        }
    }

    /// Σ_i w_i · (−log p(s_i|x)) — loss only, no gradient. Useful as the
    /// objective for finite-difference comparisons against
    /// [`NeuralModel::weighted_nll_gradient`].
    pub fn weighted_nll(&self, doc: &Document, pairs: &[(LabelSequence, f64)]) -> Result<f64> {
        let ctx = self.context(doc)?;
        let mut loss = 0.0;
        for (seq, w) in pairs {
            let lp = crate::model::sequence_logprob(self, &ctx, seq, true)?;
            loss -= w * lp;
        }
        Ok(loss)
    }

    /// ∇_params [ −Σ_i w_i · log p(s_i|x) ] with the weights treated as
    /// constants. Returns (loss, gradient). `dropout_rng` enables input
    /// dropout; pass `None` for deterministic mode.
    pub fn weighted_nll_gradient(
        &self,
        doc: &Document,
        pairs: &[(LabelSequence, f64)],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, ModelParameters<F>)> {
        for (seq, w) in pairs {
            if !w.is_finite() {
                return Err(Error::input(format!("non-finite weight {w}")));
            }
            for &l in seq.labels() {
                if l == STOP || l > self.cfg.num_labels {
                    return Err(Error::input(format!("label {l} out of range")));
                }
            }
        }
        let (ctx, enc_cache) = self.encode_full(doc, dropout_rng.as_deref_mut())?;
        let hdim = self.cfg.hidden_dim;
        let t_len = doc.tokens.len();

        let mut grad = ModelParameters::<F>::zeros(&self.cfg);
        let mut d_outputs: Array2<F> = Array2::zeros((t_len, hdim));
        let mut d_proj: Array2<F> = Array2::zeros((t_len, hdim));
        let mut d_h1_final: Array1<F> = Array1::zeros(hdim);
        let mut d_h2_final: Array1<F> = Array1::zeros(hdim);
        let mut loss = 0.0;

        for (seq, w) in pairs {
            // forward with cache
            let mut caches: Vec<DecodeCache<F>> = Vec::with_capacity(seq.len() + 1);
            let mut h1 = ctx.h1_final.clone();
            let mut h2 = ctx.h2_final.clone();
            let labels = seq.labels();
            for t in 0..=labels.len() {
                let prev = if t == 0 { STOP } else { labels[t - 1] };
                let target = if t < labels.len() { labels[t] } else { STOP };
                let used = &labels[..t.saturating_sub(1)];
                let cache =
                    self.step_full(&ctx, &h1, &h2, used, prev, target, dropout_rng.as_deref_mut());
                let lp = cache.log_probs[target];
                if lp == f64::NEG_INFINITY {
                    return Err(Error::numeric(format!(
                        "sequence {labels:?} has zero probability at step {t}"
                    )));
                }
                loss -= w * lp;
                h1 = advance(&cache.g1);
                h2 = advance(&cache.g2);
                caches.push(cache);
            }
            if *w == 0.0 {
                continue;
            }

            // backward
            let wf = F::cast_from(*w);
            let mut dh1_carry: Array1<F> = Array1::zeros(hdim);
            let mut dh2_carry: Array1<F> = Array1::zeros(hdim);
            for cache in caches.iter().rev() {
                // masked softmax: d logit_j = w (p_j − 1{j = target})
                let mut d_logits: Array1<F> = Array1::zeros(self.cfg.num_labels + 1);
                for j in 0..d_logits.len() {
                    if !cache.allowed[j] {
                        continue;
                    }
                    let p = cache.log_probs[j].exp();
                    let indicator = if j == cache.target { 1.0 } else { 0.0 };
                    d_logits[j] = wf * F::cast_from(p - indicator);
                }

                // output MLP
                let du = self.params.output.w2.t().dot(&d_logits);
                outer_add(&mut grad.output.w2, &d_logits, &cache.hidden_mlp);
                grad.output.b2 += &d_logits;
                let da = du * &cache.hidden_mlp.mapv(|v| F::one() - v * v);
                outer_add(&mut grad.output.w1, &da, &cache.features);
                grad.output.b1 += &da;
                let d_features = self.params.output.w1.t().dot(&da);
                let d_context = d_features.slice(s![..hdim]).to_owned();
                let mut d_h2 = d_features.slice(s![hdim..2 * hdim]).to_owned();
                let mut d_x = d_features.slice(s![2 * hdim..]).to_owned();

                // attention
                let d_query = attention_backward(
                    &self.params.attention,
                    &mut grad.attention.w_query,
                    &mut grad.attention.bias,
                    &mut grad.attention.v,
                    &ctx.outputs,
                    &mut d_outputs,
                    &mut d_proj,
                    &cache.att,
                    &d_context,
                );
                d_h2 += &d_query;
                d_h2 += &dh2_carry;

                // decoder GRUs
                let (d_h1_from2, dh2_prev) =
                    gru_backward(&self.params.decoder[1], &mut grad.decoder[1], &cache.g2, &d_h2);
                let d_h1 = d_h1_from2 + &dh1_carry;
                let (dx_gru, dh1_prev) =
                    gru_backward(&self.params.decoder[0], &mut grad.decoder[0], &cache.g1, &d_h1);
                d_x += &dx_gru;
                if let Some(m) = &cache.mask {
                    d_x *= m;
                }
                let mut emb_row = grad.label_embeddings.row_mut(cache.prev);
                emb_row += &d_x;
                dh1_carry = dh1_prev;
                dh2_carry = dh2_prev;
            }
            d_h1_final += &dh1_carry;
            d_h2_final += &dh2_carry;
        }

        // encoder backward
        if t_len > 0 {
            let last = t_len - 1;
            let mut row = d_outputs.row_mut(last);
            row += &d_h2_final;
        }
        // attention projection: proj_t = W_enc · e_t
        for t in 0..t_len {
            let dp = d_proj.row(t).to_owned();
            let et = ctx.outputs.row(t).to_owned();
            outer_add(&mut grad.attention.w_enc, &dp, &et);
            let mut row = d_outputs.row_mut(t);
            row += &self.params.attention.w_enc.t().dot(&dp);
        }
        // BPTT layer 2
        let mut d_h1_rows: Vec<Array1<F>> = vec![Array1::zeros(hdim); t_len];
        let mut carry: Array1<F> = Array1::zeros(hdim);
        for t in (0..t_len).rev() {
            let dh = d_outputs.row(t).to_owned() + &carry;
            let (dx2, dh_prev) =
                gru_backward(&self.params.encoder[1], &mut grad.encoder[1], &enc_cache.layer2[t], &dh);
            d_h1_rows[t] = dx2;
            carry = dh_prev;
        }
        // BPTT layer 1
        let mut carry: Array1<F> = d_h1_final;
        for t in (0..t_len).rev() {
            let dh = &d_h1_rows[t] + &carry;
            let (mut dx1, dh_prev) =
                gru_backward(&self.params.encoder[0], &mut grad.encoder[0], &enc_cache.layer1[t], &dh);
            if let Some(masks) = &enc_cache.masks {
                dx1 *= &masks[t];
            }
            let mut row = grad.word_embeddings.row_mut(doc.tokens[t]);
            row += &dx1;
            carry = dh_prev;
        }

        Ok((loss, grad))
    }
}

/// Recomputes h' from a GRU step cache.
fn advance<F: Scalar>(c: &GruStepCache<F>) -> Array1<F> {
    let one = F::one();
    let mut h = c.candidate.clone();
    for i in 0..h.len() {
        h[i] = (one - c.z[i]) * c.h_prev[i] + c.z[i] * c.candidate[i];
    }
    h
}

impl<F: Scalar> SequenceModel for NeuralModel<F> {
    type Ctx = EncoderContext<F>;
    type State = NeuralState<F>;

    fn num_labels(&self) -> usize {
        self.cfg.num_labels
    }

    fn repeat_masking(&self) -> bool {
        self.cfg.repeat_masking
    }

    fn context(&self, doc: &Document) -> Result<EncoderContext<F>> {
        let (ctx, _) = self.encode_full(doc, None)?;
        Ok(ctx)
    }

    fn initial_state(&self, ctx: &EncoderContext<F>) -> NeuralState<F> {
        NeuralState {
            h1: ctx.h1_final.clone(),
            h2: ctx.h2_final.clone(),
            used: Vec::new(),
            started: false,
        }
    }

    fn decode_step(
        &self,
        ctx: &EncoderContext<F>,
        state: &NeuralState<F>,
        prev: LabelId,
    ) -> Result<(StepDistribution, NeuralState<F>)> {
        if prev == STOP {
            if state.started {
                return Err(Error::input("STOP input is only valid as begin-of-sequence"));
            }
        } else {
            if prev > self.cfg.num_labels {
                return Err(Error::input(format!("label {prev} out of range")));
            }
            if !state.started {
                return Err(Error::input("first decode input must be begin-of-sequence"));
            }
            if self.cfg.repeat_masking && state.used.contains(&prev) {
                return Err(Error::input(format!("label {prev} already emitted")));
            }
        }
        let cache = self.step_full(ctx, &state.h1, &state.h2, &state.used, prev, STOP, None);
        let mut used = state.used.clone();
        if prev != STOP {
            used.push(prev);
        }
        let next = NeuralState {
            h1: advance(&cache.g1),
            h2: advance(&cache.g2),
            used,
            started: true,
        };
        let attention = cache.att.weights.iter().map(|&w| w.cast_to_f64()).collect();
        Ok((
            StepDistribution {
                log_probs: cache.log_probs,
                attention: Some(attention),
            },
            next,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sequence_logprob;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            num_labels: 3,
            embed_dim: 4,
            hidden_dim: 5,
            max_doc_len: 6,
            dropout: 0.0,
            repeat_masking: true,
        }
    }

    fn tiny_model(seed: u64) -> NeuralModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NeuralModel::init(tiny_cfg(), &mut rng).unwrap()
    }

    fn doc() -> Document {
        Document::from_tokens(vec![3, 7, 4, 11], 6)
    }

    #[test]
    fn distributions_are_normalized_and_masked() {
        let m = tiny_model(1);
        let ctx = m.context(&doc()).unwrap();
        let s0 = m.initial_state(&ctx);
        let (d0, s1) = m.decode_step(&ctx, &s0, STOP).unwrap();
        let sum: f64 = d0.log_probs.iter().map(|lp| lp.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let att = d0.attention.as_ref().unwrap();
        let att_sum: f64 = att.iter().sum();
        assert!((att_sum - 1.0).abs() < 1e-9);
        assert!(att.iter().all(|&w| w >= 0.0));

        // after emitting label 3 its mass is gone and the rest renormalizes
        let (d1, _) = m.decode_step(&ctx, &s1, 3).unwrap();
        assert_eq!(d1.log_probs[3], f64::NEG_INFINITY);
        let sum: f64 = d1.log_probs.iter().map(|lp| lp.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sequence_probabilities_sum_to_one_with_masking() {
        let m = tiny_model(2);
        let ctx = m.context(&doc()).unwrap();
        let mut total = 0.0;
        let labels = [1usize, 2, 3];
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        while let Some(prefix) = stack.pop() {
            let seq = LabelSequence::new(prefix.clone()).unwrap();
            total += sequence_logprob(&m, &ctx, &seq, true).unwrap().exp();
            for &l in &labels {
                if !prefix.contains(&l) {
                    let mut c = prefix.clone();
                    c.push(l);
                    stack.push(c);
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-9, "total {total}");
    }

    #[test]
    fn deterministic_and_degenerate_inputs() {
        let m = tiny_model(3);
        let all_pad = Document::from_tokens(vec![], 6);
        let ctx = m.context(&all_pad).unwrap();
        let s0 = m.initial_state(&ctx);
        let (d, _) = m.decode_step(&ctx, &s0, STOP).unwrap();
        let sum: f64 = d.log_probs.iter().map(|lp| lp.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-9);

        // identical documents → bitwise identical encoder outputs
        let c1 = m.context(&doc()).unwrap();
        let c2 = m.context(&doc()).unwrap();
        assert_eq!(c1.outputs, c2.outputs);
        assert_eq!(c1.h1_final, c2.h1_final);
        assert_eq!(c1.outputs.nrows(), 6);
        assert_eq!(c1.outputs.ncols(), 5);
    }

    #[test]
    fn input_validation() {
        let m = tiny_model(4);
        let short = Document::from_tokens(vec![1, 2], 3);
        assert!(matches!(m.context(&short), Err(Error::Config(_))));
        let bad_tok = Document::from_tokens(vec![99, 1, 1, 1, 1, 1], 6);
        assert!(matches!(m.context(&bad_tok), Err(Error::Input(_))));
        let ctx = m.context(&doc()).unwrap();
        let s0 = m.initial_state(&ctx);
        let (_, s1) = m.decode_step(&ctx, &s0, STOP).unwrap();
        assert!(m.decode_step(&ctx, &s1, 9).is_err());
        assert!(m.decode_step(&ctx, &s1, STOP).is_err());
        assert!(m.decode_step(&ctx, &s0, 1).is_err(), "must begin with BOS");
        let bad_pairs = vec![(LabelSequence::new(vec![1]).unwrap(), f64::NAN)];
        assert!(m.weighted_nll_gradient(&doc(), &bad_pairs, None).is_err());
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let m = tiny_model(5);
        let pairs = vec![
            (LabelSequence::new(vec![1, 2]).unwrap(), 0.0),
            (LabelSequence::new(vec![2]).unwrap(), 0.0),
        ];
        let (loss, grad) = m.weighted_nll_gradient(&doc(), &pairs, None).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let m = tiny_model(6);
        let pairs = vec![
            (LabelSequence::new(vec![2, 1]).unwrap(), 0.7),
            (LabelSequence::new(vec![3]).unwrap(), 0.3),
        ];
        let d = doc();
        let (loss, grad) = m.weighted_nll_gradient(&d, &pairs, None).unwrap();
        assert_relative_eq!(loss, m.weighted_nll(&d, &pairs).unwrap(), max_relative = 1e-12);

        let flat = m.params().flatten();
        let grad_flat = grad.flatten();
        let step = 1e-5;
        let mut max_rel = 0.0f64;
        // probe a deterministic spread of coordinates for speed
        let n = flat.len();
        for i in (0..n).step_by(7) {
            let mut plus = flat.clone();
            plus[i] += step;
            let mut minus = flat.clone();
            minus[i] -= step;
            let mut mp = m.clone();
            mp.params_mut().assign_from_flat(&plus).unwrap();
            let mut mm = m.clone();
            mm.params_mut().assign_from_flat(&minus).unwrap();
            let fd = (mp.weighted_nll(&d, &pairs).unwrap() - mm.weighted_nll(&d, &pairs).unwrap())
                / (2.0 * step);
            let denom = fd.abs().max(grad_flat[i].abs()).max(1e-6);
            let rel = (fd - grad_flat[i]).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn dropout_gradient_is_consistent_with_its_own_masks() {
        // with a fixed rng the dropout path must still produce finite grads
        let mut cfg = tiny_cfg();
        cfg.dropout = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m: NeuralModel<f64> = NeuralModel::init(cfg, &mut rng).unwrap();
        let pairs = vec![(LabelSequence::new(vec![1, 3]).unwrap(), 1.0)];
        let mut drop_rng = ChaCha8Rng::seed_from_u64(9);
        let (loss, grad) = m
            .weighted_nll_gradient(&doc(), &pairs, Some(&mut drop_rng))
            .unwrap();
        assert!(loss.is_finite());
        assert!(grad.max_abs().is_finite());
        // same rng seed → bitwise identical result
        let mut drop_rng2 = ChaCha8Rng::seed_from_u64(9);
        let (loss2, grad2) = m
            .weighted_nll_gradient(&doc(), &pairs, Some(&mut drop_rng2))
            .unwrap();
        assert_eq!(loss, loss2);
        assert_eq!(grad, grad2);
    }

    #[test]
    fn f32_model_still_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m: NeuralModel<f32> = NeuralModel::init(tiny_cfg(), &mut rng).unwrap();
        let ctx = m.context(&doc()).unwrap();
        let s0 = m.initial_state(&ctx);
        let (d, _) = m.decode_step(&ctx, &s0, STOP).unwrap();
        let sum: f64 = d.log_probs.iter().map(|lp| lp.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-9); // normalization done in f64
    }
}
