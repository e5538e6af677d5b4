//! Trainable parameter storage with a flat view for the optimizer and the
//! finite-difference checks.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use num_traits::NumCast;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type of the trainable model. Tests and gradient
/// checks run in f64; f32 is available as a speed configuration.
pub trait Scalar: ndarray::NdFloat + num_traits::FromPrimitive + std::iter::Sum {
    fn cast_from(x: f64) -> Self {
        <Self as NumCast>::from(x).unwrap()
    }
    fn cast_to_f64(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Architecture hyperparameters. The encoder and decoder are both
/// two-layer GRUs; attention and the output MLP share the hidden size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_labels: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_doc_len: usize,
    /// Dropout rate on embedding inputs during gradient computation;
    /// 0 disables it (deterministic mode).
    #[serde(default)]
    pub dropout: f64,
    /// Mask already-emitted labels at each decode step and renormalize.
    #[serde(default = "default_true")]
    pub repeat_masking: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.num_labels == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
            || self.max_doc_len == 0
        {
            return Err(Error::config("all model dimensions must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        Ok(())
    }
}

/// One GRU layer: update gate z, reset gate r, candidate h̃.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams<F> {
    pub w_z: Array2<F>,
    pub u_z: Array2<F>,
    pub b_z: Array1<F>,
    pub w_r: Array2<F>,
    pub u_r: Array2<F>,
    pub b_r: Array1<F>,
    pub w_h: Array2<F>,
    pub u_h: Array2<F>,
    pub b_h: Array1<F>,
}

impl<F: Scalar> GruLayerParams<F> {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruLayerParams {
            w_z: Array2::zeros((hidden_dim, input_dim)),
            u_z: Array2::zeros((hidden_dim, hidden_dim)),
            b_z: Array1::zeros(hidden_dim),
            w_r: Array2::zeros((hidden_dim, input_dim)),
            u_r: Array2::zeros((hidden_dim, hidden_dim)),
            b_r: Array1::zeros(hidden_dim),
            w_h: Array2::zeros((hidden_dim, input_dim)),
            u_h: Array2::zeros((hidden_dim, hidden_dim)),
            b_h: Array1::zeros(hidden_dim),
        }
    }
}

/// Additive attention over the encoder outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<F> {
    /// Projects an encoder output into score space (precomputable per doc).
    pub w_enc: Array2<F>,
    /// Projects the decoder query.
    pub w_query: Array2<F>,
    pub bias: Array1<F>,
    pub v: Array1<F>,
}

/// The output function: concat(context, hidden, prev-embedding) → affine →
/// tanh → affine → logits over labels ∪ {STOP}.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams<F> {
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<F> {
    pub word_embeddings: Array2<F>,
    /// Row 0 is STOP; it doubles as the begin-of-sequence input.
    pub label_embeddings: Array2<F>,
    pub encoder: Vec<GruLayerParams<F>>,
    pub decoder: Vec<GruLayerParams<F>>,
    pub attention: AttentionParams<F>,
    pub output: OutputParams<F>,
}

impl<F: Scalar> ModelParameters<F> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let h = cfg.hidden_dim;
        let l1 = cfg.num_labels + 1;
        ModelParameters {
            word_embeddings: Array2::zeros((cfg.vocab_size, d)),
            label_embeddings: Array2::zeros((l1, d)),
            encoder: vec![GruLayerParams::zeros(d, h), GruLayerParams::zeros(h, h)],
            decoder: vec![GruLayerParams::zeros(d, h), GruLayerParams::zeros(h, h)],
            attention: AttentionParams {
                w_enc: Array2::zeros((h, h)),
                w_query: Array2::zeros((h, h)),
                bias: Array1::zeros(h),
                v: Array1::zeros(h),
            },
            output: OutputParams {
                w1: Array2::zeros((h, 2 * h + d)),
                b1: Array1::zeros(h),
                w2: Array2::zeros((l1, h)),
                b2: Array1::zeros(l1),
            },
        }
    }

    /// Uniform init scaled by fan-in, matrices and embeddings only.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        for (_, mut view) in p.named_arrays_mut() {
            if view.ndim() == 2 {
                let fan_in = view.shape()[1];
                let r = (1.0 / fan_in as f64).sqrt();
                for x in view.iter_mut() {
                    *x = F::cast_from(rng.gen_range(-r..r));
                }
            }
        }
        for x in p.word_embeddings.iter_mut() {
            *x = F::cast_from(rng.gen_range(-0.1..0.1));
        }
        for x in p.label_embeddings.iter_mut() {
            *x = F::cast_from(rng.gen_range(-0.1..0.1));
        }
        p
    }

    /// All arrays in a fixed, documented order. The same order backs the
    /// flat view, the optimizer state, and the checkpoint file.
    pub fn named_arrays(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out: Vec<(String, ArrayViewD<'_, F>)> = vec![
            ("word_embeddings".into(), self.word_embeddings.view().into_dyn()),
            ("label_embeddings".into(), self.label_embeddings.view().into_dyn()),
        ];
        for (tag, layers) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, l) in layers.iter().enumerate() {
                for (name, a) in [
                    ("w_z", &l.w_z),
                    ("u_z", &l.u_z),
                    ("w_r", &l.w_r),
                    ("u_r", &l.u_r),
                    ("w_h", &l.w_h),
                    ("u_h", &l.u_h),
                ] {
                    out.push((format!("{tag}.{i}.{name}"), a.view().into_dyn()));
                }
                for (name, a) in [("b_z", &l.b_z), ("b_r", &l.b_r), ("b_h", &l.b_h)] {
                    out.push((format!("{tag}.{i}.{name}"), a.view().into_dyn()));
                }
            }
        }
        out.push(("attention.w_enc".into(), self.attention.w_enc.view().into_dyn()));
        out.push(("attention.w_query".into(), self.attention.w_query.view().into_dyn()));
        out.push(("attention.bias".into(), self.attention.bias.view().into_dyn()));
        out.push(("attention.v".into(), self.attention.v.view().into_dyn()));
        out.push(("output.w1".into(), self.output.w1.view().into_dyn()));
        out.push(("output.b1".into(), self.output.b1.view().into_dyn()));
        out.push(("output.w2".into(), self.output.w2.view().into_dyn()));
        out.push(("output.b2".into(), self.output.b2.view().into_dyn()));
        out
    }

    pub fn named_arrays_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out: Vec<(String, ArrayViewMutD<'_, F>)> = vec![
            (
                "word_embeddings".into(),
                self.word_embeddings.view_mut().into_dyn(),
            ),
            (
                "label_embeddings".into(),
                self.label_embeddings.view_mut().into_dyn(),
            ),
        ];
        for (tag, layers) in [
            ("encoder", &mut self.encoder),
            ("decoder", &mut self.decoder),
        ] {
            for (i, l) in layers.iter_mut().enumerate() {
                for (name, a) in [
                    ("w_z", &mut l.w_z),
                    ("u_z", &mut l.u_z),
                    ("w_r", &mut l.w_r),
                    ("u_r", &mut l.u_r),
                    ("w_h", &mut l.w_h),
                    ("u_h", &mut l.u_h),
                ] {
                    out.push((format!("{tag}.{i}.{name}"), a.view_mut().into_dyn()));
                }
                for (name, a) in [
                    ("b_z", &mut l.b_z),
                    ("b_r", &mut l.b_r),
                    ("b_h", &mut l.b_h),
                ] {
                    out.push((format!("{tag}.{i}.{name}"), a.view_mut().into_dyn()));
                }
            }
        }
        out.push((
            "attention.w_enc".into(),
            self.attention.w_enc.view_mut().into_dyn(),
        ));
        out.push((
            "attention.w_query".into(),
            self.attention.w_query.view_mut().into_dyn(),
        ));
        out.push((
            "attention.bias".into(),
            self.attention.bias.view_mut().into_dyn(),
        ));
        out.push(("attention.v".into(), self.attention.v.view_mut().into_dyn()));
        out.push(("output.w1".into(), self.output.w1.view_mut().into_dyn()));
        out.push(("output.b1".into(), self.output.b1.view_mut().into_dyn()));
        out.push(("output.w2".into(), self.output.w2.view_mut().into_dyn()));
        out.push(("output.b2".into(), self.output.b2.view_mut().into_dyn()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, a) in self.named_arrays() {
            out.extend(a.iter().copied());
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::input(format!(
                "flat vector has {} entries, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for (_, mut a) in self.named_arrays_mut() {
            let n = a.len();
            for (dst, src) in a.iter_mut().zip(&flat[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        }
        Ok(())
    }

    /// self += scale · other, elementwise over every array.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        let views = other.named_arrays();
        for ((_, mut dst), (_, src)) in self.named_arrays_mut().into_iter().zip(views) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += scale * *s;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for (_, mut a) in self.named_arrays_mut() {
            for x in a.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> F {
        let mut m = F::zero();
        for (_, a) in self.named_arrays() {
            for &x in a.iter() {
                if x.abs() > m {
                    m = x.abs();
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            num_labels: 4,
            embed_dim: 3,
            hidden_dim: 5,
            max_doc_len: 6,
            dropout: 0.0,
            repeat_masking: true,
        }
    }

    #[test]
    fn flatten_round_trips() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: ModelParameters<f64> = ModelParameters::init(&cfg, &mut rng);
        let flat = p.flatten();
        assert_eq!(flat.len(), p.num_params());
        let mut q = ModelParameters::zeros(&cfg);
        q.assign_from_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(q.assign_from_flat(&flat[1..]).is_err());
    }

    #[test]
    fn named_array_orders_agree() {
        let cfg = tiny_config();
        let mut p: ModelParameters<f64> = ModelParameters::zeros(&cfg);
        let names: Vec<String> = p.named_arrays().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = p.named_arrays_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert!(names.contains(&"encoder.1.u_h".to_string()));
        assert!(names.contains(&"output.w2".to_string()));
    }

    #[test]
    fn add_scaled_and_scale() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: ModelParameters<f64> = ModelParameters::init(&cfg, &mut rng);
        let mut q = p.clone();
        q.add_scaled(&p, -1.0);
        assert_eq!(q.max_abs(), 0.0);
        let mut r = p.clone();
        r.scale(2.0);
        let flat_p = p.flatten();
        let flat_r = r.flatten();
        for (a, b) in flat_p.iter().zip(&flat_r) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config();
        assert!(cfg.validate().is_ok());
        cfg.hidden_dim = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
    }
}
