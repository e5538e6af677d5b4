//! Single-head additive attention over encoder outputs.
//!
//!   score_i = v · tanh(W_enc e_i + W_query q + b)
//!   α = softmax(score),  context = Σ α_i e_i
//!
//! `W_enc e_i` depends only on the document, so it is projected once per
//! document and shared by every decode step and beam branch.

use ndarray::{Array1, Array2};

use crate::model::params::{AttentionParams, Scalar};

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    pub query: Array1<F>,
    /// tanh pre-activations, one row per position.
    pub activated: Array2<F>,
    pub weights: Array1<F>,
}

/// Returns (context, cache). `proj_enc` is `W_enc · e_i` per row.
pub fn attention_forward<F: Scalar>(
    p: &AttentionParams<F>,
    enc_outputs: &Array2<F>,
    proj_enc: &Array2<F>,
    query: &Array1<F>,
) -> (Array1<F>, AttentionCache<F>) {
    let n = enc_outputs.nrows();
    let q_proj = p.w_query.dot(query) + &p.bias;
    let mut activated = Array2::zeros((n, p.v.len()));
    let mut scores = Array1::zeros(n);
    for i in 0..n {
        let a = (&proj_enc.row(i) + &q_proj).mapv(F::tanh);
        scores[i] = a.dot(&p.v);
        activated.row_mut(i).assign(&a);
    }
    // softmax
    let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
    let mut weights = scores.mapv(|s| (s - max).exp());
    let sum = weights.sum();
    weights /= sum;
    let context = enc_outputs.t().dot(&weights);
    (
        context,
        AttentionCache {
            query: query.clone(),
            activated,
            weights,
        },
    )
}

/// Backward pass for one attended step. Accumulates into the attention
/// parameter gradients plus the per-document `d_enc_outputs` / `d_proj_enc`
/// buffers, and returns the gradient flowing back into the query.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Scalar>(
    p: &AttentionParams<F>,
    grad_w_query: &mut Array2<F>,
    grad_bias: &mut Array1<F>,
    grad_v: &mut Array1<F>,
    enc_outputs: &Array2<F>,
    d_enc_outputs: &mut Array2<F>,
    d_proj_enc: &mut Array2<F>,
    cache: &AttentionCache<F>,
    d_context: &Array1<F>,
) -> Array1<F> {
    let n = enc_outputs.nrows();
    let alpha = &cache.weights;

    // context = Σ α_i e_i
    let mut d_alpha = Array1::zeros(n);
    for i in 0..n {
        d_alpha[i] = enc_outputs.row(i).dot(d_context);
        let mut row = d_enc_outputs.row_mut(i);
        for (j, &dc) in d_context.iter().enumerate() {
            row[j] += alpha[i] * dc;
        }
    }
    // softmax backprop
    let dot: F = alpha
        .iter()
        .zip(d_alpha.iter())
        .map(|(&a, &d)| a * d)
        .sum();
    let d_scores: Array1<F> = alpha
        .iter()
        .zip(d_alpha.iter())
        .map(|(&a, &d)| a * (d - dot))
        .collect();

    let one = F::one();
    let mut d_q_proj = Array1::zeros(grad_bias.len());
    for i in 0..n {
        let ds = d_scores[i];
        if ds == F::zero() {
            continue;
        }
        let a = cache.activated.row(i);
        // score_i = v · a_i
        for (j, &aj) in a.iter().enumerate() {
            grad_v[j] += ds * aj;
        }
        // through tanh
        let mut row = d_proj_enc.row_mut(i);
        for j in 0..a.len() {
            let da = ds * p.v[j] * (one - a[j] * a[j]);
            row[j] += da;
            d_q_proj[j] += da;
        }
    }
    *grad_bias += &d_q_proj;
    crate::model::gru::outer_add(grad_w_query, &d_q_proj, &cache.query);
    p.w_query.t().dot(&d_q_proj)
}
