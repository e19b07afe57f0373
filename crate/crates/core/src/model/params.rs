//! Model configuration and the flat parameter vector. Everything that
//! touches parameters (optimizer, anchor penalty, checkpoints) sees one
//! `Vec<f64>`; the structured view used by the forward pass is materialized
//! on demand. The flat order is a serialization contract: changing it
//! invalidates every checkpoint.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};
use crate::table::MAX_CLASSES;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Width the feature dimension is padded to; tables may be narrower.
    pub max_features: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_features == 0
            || self.embed_dim == 0
            || self.n_heads == 0
            || self.n_layers == 0
            || self.ff_dim == 0
        {
            return Err(Error::Config("model dimensions must all be positive".into()));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn n_params(&self) -> usize {
        let (f, d, ff, c) = (self.max_features, self.embed_dim, self.ff_dim, MAX_CLASSES);
        let per_layer = 2 * d            // ln1
            + 4 * (d * d + d)            // q, k, v, o projections
            + 2 * d                      // ln2
            + (ff * d + ff)              // mlp in
            + (d * ff + d);              // mlp out
        d * f + d                        // feature embedding
            + c * d                      // label embedding
            + self.n_layers * per_layer
            + 2 * d                      // final ln
            + c * d + c                  // head
    }
}

/// Structured weights for one transformer layer; matrices are (out, in) and
/// applied as `x.dot(w.t())`.
#[derive(Clone, Debug)]
pub struct LayerWeights {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct Weights {
    pub we: Array2<f64>,
    pub be: Array1<f64>,
    pub label_embed: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

struct Cursor<'a> {
    flat: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take2(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let s = &self.flat[self.pos..self.pos + rows * cols];
        self.pos += rows * cols;
        Array2::from_shape_vec((rows, cols), s.to_vec()).expect("shape matches slice")
    }

    fn take1(&mut self, len: usize) -> Array1<f64> {
        let s = &self.flat[self.pos..self.pos + len];
        self.pos += len;
        Array1::from_vec(s.to_vec())
    }
}

impl Weights {
    pub fn from_flat(config: &ModelConfig, flat: &[f64]) -> Weights {
        assert_eq!(flat.len(), config.n_params(), "parameter vector length");
        let (f, d, ff, c) = (config.max_features, config.embed_dim, config.ff_dim, MAX_CLASSES);
        let mut cur = Cursor { flat, pos: 0 };
        let we = cur.take2(d, f);
        let be = cur.take1(d);
        let label_embed = cur.take2(c, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                ln1_g: cur.take1(d),
                ln1_b: cur.take1(d),
                wq: cur.take2(d, d),
                bq: cur.take1(d),
                wk: cur.take2(d, d),
                bk: cur.take1(d),
                wv: cur.take2(d, d),
                bv: cur.take1(d),
                wo: cur.take2(d, d),
                bo: cur.take1(d),
                ln2_g: cur.take1(d),
                ln2_b: cur.take1(d),
                w1: cur.take2(ff, d),
                b1: cur.take1(ff),
                w2: cur.take2(d, ff),
                b2: cur.take1(d),
            })
            .collect();
        let lnf_g = cur.take1(d);
        let lnf_b = cur.take1(d);
        let head_w = cur.take2(c, d);
        let head_b = cur.take1(c);
        assert_eq!(cur.pos, flat.len(), "layout consumed every parameter");
        Weights { we, be, label_embed, layers, lnf_g, lnf_b, head_w, head_b }
    }

    pub fn zeros(config: &ModelConfig) -> Weights {
        Weights::from_flat(config, &vec![0.0; config.n_params()])
    }

    pub fn to_flat(&self, config: &ModelConfig) -> Vec<f64> {
        let mut out = Vec::with_capacity(config.n_params());
        let push2 = |out: &mut Vec<f64>, m: &Array2<f64>| out.extend(m.iter().copied());
        let push1 = |out: &mut Vec<f64>, v: &Array1<f64>| out.extend(v.iter().copied());
        push2(&mut out, &self.we);
        push1(&mut out, &self.be);
        push2(&mut out, &self.label_embed);
        for l in &self.layers {
            push1(&mut out, &l.ln1_g);
            push1(&mut out, &l.ln1_b);
            push2(&mut out, &l.wq);
            push1(&mut out, &l.bq);
            push2(&mut out, &l.wk);
            push1(&mut out, &l.bk);
            push2(&mut out, &l.wv);
            push1(&mut out, &l.bv);
            push2(&mut out, &l.wo);
            push1(&mut out, &l.bo);
            push1(&mut out, &l.ln2_g);
            push1(&mut out, &l.ln2_b);
            push2(&mut out, &l.w1);
            push1(&mut out, &l.b1);
            push2(&mut out, &l.w2);
            push1(&mut out, &l.b2);
        }
        push1(&mut out, &self.lnf_g);
        push1(&mut out, &self.lnf_b);
        push2(&mut out, &self.head_w);
        push1(&mut out, &self.head_b);
        assert_eq!(out.len(), config.n_params(), "layout emitted every parameter");
        out
    }
}

/// Scaled-normal initialization: weight entries N(0, 1/in_dim), biases zero,
/// layer-norm gain one. Deterministic in (config, seed).
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    let mut rng = rng_for(seed, Stream::ParamInit, 0);
    let (f, d, ff) = (config.max_features, config.embed_dim, config.ff_dim);

    let mut w = Weights::zeros(config);
    fill_normal(&mut rng, &mut w.we, f);
    fill_normal(&mut rng, &mut w.label_embed, d);
    for layer in &mut w.layers {
        layer.ln1_g.fill(1.0);
        layer.ln2_g.fill(1.0);
        for m in [&mut layer.wq, &mut layer.wk, &mut layer.wv, &mut layer.wo] {
            fill_normal(&mut rng, m, d);
        }
        fill_normal(&mut rng, &mut layer.w1, d);
        fill_normal(&mut rng, &mut layer.w2, ff);
    }
    w.lnf_g.fill(1.0);
    fill_normal(&mut rng, &mut w.head_w, d);
    Ok(w.to_flat(config))
}

fn fill_normal(rng: &mut ChaCha12Rng, m: &mut Array2<f64>, fan_in: usize) {
    let scale = 1.0 / (fan_in as f64).sqrt();
    for v in m.iter_mut() {
        *v = scale * rng.sample::<f64, _>(StandardNormal);
    }
}
