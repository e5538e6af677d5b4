//! One GRU layer: the forward step with an activation cache, and the
//! matching backward step used by the hand-written gradient engine.
//!
//!   z = σ(W_z x + U_z h + b_z)
//!   r = σ(W_r x + U_r h + b_r)
//!   h̃ = tanh(W_h x + U_h (r∘h) + b_h)
//!   h' = (1−z)∘h + z∘h̃

use ndarray::Array1;

use crate::model::params::{GruLayerParams, Scalar};

#[derive(Debug, Clone)]
pub struct GruStepCache<F> {
    pub x: Array1<F>,
    pub h_prev: Array1<F>,
    pub z: Array1<F>,
    pub r: Array1<F>,
    pub candidate: Array1<F>,
    pub rh: Array1<F>,
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Advances the hidden state; returns (h', cache).
pub fn gru_forward<F: Scalar>(
    p: &GruLayerParams<F>,
    x: &Array1<F>,
    h_prev: &Array1<F>,
) -> (Array1<F>, GruStepCache<F>) {
    let z = (p.w_z.dot(x) + p.u_z.dot(h_prev) + &p.b_z).mapv(sigmoid);
    let r = (p.w_r.dot(x) + p.u_r.dot(h_prev) + &p.b_r).mapv(sigmoid);
    let rh = &r * h_prev;
    let candidate = (p.w_h.dot(x) + p.u_h.dot(&rh) + &p.b_h).mapv(F::tanh);
    let one = F::one();
    let mut h_new = candidate.clone();
    for i in 0..h_new.len() {
        h_new[i] = (one - z[i]) * h_prev[i] + z[i] * candidate[i];
    }
    (
        h_new,
        GruStepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z,
            r,
            candidate,
            rh,
        },
    )
}

/// Accumulates parameter gradients for one step and returns (dx, dh_prev)
/// given the gradient flowing into h'.
pub fn gru_backward<F: Scalar>(
    p: &GruLayerParams<F>,
    grad: &mut GruLayerParams<F>,
    cache: &GruStepCache<F>,
    dh_new: &Array1<F>,
) -> (Array1<F>, Array1<F>) {
    let one = F::one();
    let z = &cache.z;
    let r = &cache.r;
    let c = &cache.candidate;
    let h = &cache.h_prev;

    // h' = (1−z)∘h + z∘c
    let dz = dh_new * &(c - h);
    let dc = dh_new * z;
    let mut dh_prev = dh_new * &z.mapv(|v| one - v);

    // candidate pre-activation
    let da_c = dc * &c.mapv(|v| one - v * v);
    outer_add(&mut grad.w_h, &da_c, &cache.x);
    outer_add(&mut grad.u_h, &da_c, &cache.rh);
    grad.b_h += &da_c;
    let d_rh = p.u_h.t().dot(&da_c);
    let dr = &d_rh * h;
    dh_prev += &(&d_rh * r);

    // gates
    let da_z = dz * &z.mapv(|v| v * (one - v));
    outer_add(&mut grad.w_z, &da_z, &cache.x);
    outer_add(&mut grad.u_z, &da_z, h);
    grad.b_z += &da_z;
    dh_prev += &p.u_z.t().dot(&da_z);

    let da_r = dr * &r.mapv(|v| v * (one - v));
    outer_add(&mut grad.w_r, &da_r, &cache.x);
    outer_add(&mut grad.u_r, &da_r, h);
    grad.b_r += &da_r;
    dh_prev += &p.u_r.t().dot(&da_r);

    let dx = p.w_z.t().dot(&da_z) + p.w_r.t().dot(&da_r) + p.w_h.t().dot(&da_c);
    (dx, dh_prev)
}

/// grad += col ⊗ row.
pub fn outer_add<F: Scalar>(grad: &mut ndarray::Array2<F>, col: &Array1<F>, row: &Array1<F>) {
    for (i, &c) in col.iter().enumerate() {
        if c == F::zero() {
            continue;
        }
        let mut g = grad.row_mut(i);
        for (j, &r) in row.iter().enumerate() {
            g[j] += c * r;
        }
    }
}
