//! Forward pass and exact manual gradients for the in-context classifier.
//!
//! Tokens are table rows: context rows carry a label embedding, query rows
//! do not. Attention is masked so context tokens see all context and query
//! tokens see context plus themselves; queries never see each other, which
//! makes each query's prediction independent of the rest. There is no
//! positional encoding, so permuting context rows cannot change anything but
//! floating-point summation order.

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::params::{LayerWeights, ModelConfig, Weights};
use crate::table::{znormalize, Split, Table, MAX_CLASSES};

const LN_EPS: f64 = 1e-5;

/// One preprocessed task instance, ready for the model: features normalized
/// from context statistics, zero-padded to `max_features` columns.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x_context: Array2<f64>,
    pub y_context: Vec<usize>,
    pub x_query: Array2<f64>,
    /// Empty when the batch is used for prediction only.
    pub y_query: Vec<usize>,
    /// Actual feature count before padding.
    pub n_features: usize,
    /// Distinct classes in the task; predictions are renormalized over the
    /// first `n_classes` outputs.
    pub n_classes: usize,
}

impl Batch {
    /// Assemble a batch from a table and a context/query split: extract
    /// features, z-normalize with context statistics, zero-fill missing
    /// cells, pad to the model width.
    pub fn from_table(table: &Table, split: &Split, max_features: usize) -> Result<Batch> {
        if table.n_features() > max_features {
            return Err(Error::Input(format!(
                "dataset {} has {} features, the model supports at most {max_features}",
                table.id,
                table.n_features()
            )));
        }
        if table.n_classes() > MAX_CLASSES {
            return Err(Error::Input(format!(
                "dataset {} has {} classes after merging; the head is {MAX_CLASSES}-way",
                table.id,
                table.n_classes()
            )));
        }
        if split.context.is_empty() || split.query.is_empty() {
            return Err(Error::Input("split leaves context or query empty".into()));
        }
        let (mut ctx, ctx_miss) = table.feature_matrix(&split.context);
        let (mut qry, qry_miss) = table.feature_matrix(&split.query);
        znormalize(&mut ctx, &ctx_miss, &mut qry, &qry_miss);
        Ok(Batch {
            x_context: pad_columns(&ctx, max_features),
            y_context: table.labels(&split.context),
            x_query: pad_columns(&qry, max_features),
            y_query: table.labels(&split.query),
            n_features: table.n_features(),
            n_classes: table.n_classes(),
        })
    }

    pub fn n_context(&self) -> usize {
        self.y_context.len()
    }

    pub fn n_query(&self) -> usize {
        self.x_query.nrows()
    }
}

fn pad_columns(m: &Array2<f64>, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((m.nrows(), width));
    out.slice_mut(s![.., ..m.ncols()]).assign(m);
    out
}

struct LayerCache {
    xhat1: Array2<f64>,
    rstd1: Vec<f64>,
    a1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn_concat: Array2<f64>,
    xhat2: Array2<f64>,
    rstd2: Vec<f64>,
    a2: Array2<f64>,
    z1: Array2<f64>,
    g: Array2<f64>,
}

pub struct Cache {
    x_tokens: Array2<f64>,
    layers: Vec<LayerCache>,
    xhat_f: Array2<f64>,
    rstd_f: Vec<f64>,
    hf: Array2<f64>,
    pub logits: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / d;
        let mut var = 0.0;
        for v in row.iter() {
            let c = v - mean;
            var += c * c;
        }
        var /= d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * r;
        }
        rstd.push(r);
    }
    let mut y = xhat.clone();
    for mut row in y.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * g[j] + b[j];
        }
    }
    (y, xhat, rstd)
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    rstd: &[f64],
    g: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    let mut dg = Array1::zeros(dy.ncols());
    let mut db = Array1::zeros(dy.ncols());
    for i in 0..dy.nrows() {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..dy.ncols() {
            let dxh = dy[[i, j]] * g[j];
            m1 += dxh;
            m2 += dxh * xhat[[i, j]];
            dg[j] += dy[[i, j]] * xhat[[i, j]];
            db[j] += dy[[i, j]];
        }
        m1 /= d;
        m2 /= d;
        for j in 0..dy.ncols() {
            let dxh = dy[[i, j]] * g[j];
            dx[[i, j]] = rstd[i] * (dxh - m1 - xhat[[i, j]] * m2);
        }
    }
    (dx, dg, db)
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax over the allowed positions: j < n_context or j == i.
fn masked_softmax(mut scores: Array2<f64>, n_context: usize) -> Array2<f64> {
    let n = scores.nrows();
    for i in 0..n {
        let allowed = move |j: usize| j < n_context || j == i;
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if allowed(j) && scores[[i, j]] > max {
                max = scores[[i, j]];
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if allowed(j) {
                let e = (scores[[i, j]] - max).exp();
                scores[[i, j]] = e;
                sum += e;
            } else {
                scores[[i, j]] = 0.0;
            }
        }
        for j in 0..n {
            scores[[i, j]] /= sum;
        }
    }
    scores
}

/// d(softmax)/d(scores) pullback; masked entries have prob 0 and stay 0.
fn softmax_backward(dp: &Array2<f64>, probs: &Array2<f64>) -> Array2<f64> {
    let mut ds = Array2::zeros(dp.raw_dim());
    for i in 0..dp.nrows() {
        let mut dot = 0.0;
        for j in 0..dp.ncols() {
            dot += dp[[i, j]] * probs[[i, j]];
        }
        for j in 0..dp.ncols() {
            ds[[i, j]] = probs[[i, j]] * (dp[[i, j]] - dot);
        }
    }
    ds
}

fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    for mut row in y.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b[j];
        }
    }
    y
}

/// Forward pass returning query logits and every activation the backward
/// pass needs.
pub fn forward(config: &ModelConfig, params: &[f64], batch: &Batch) -> Cache {
    let w = Weights::from_flat(config, params);
    let nc = batch.n_context();
    let nq = batch.n_query();
    let n = nc + nq;
    let dh = config.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    let mut x_tokens = Array2::zeros((n, config.max_features));
    x_tokens.slice_mut(s![..nc, ..]).assign(&batch.x_context);
    x_tokens.slice_mut(s![nc.., ..]).assign(&batch.x_query);

    let mut h = linear(&x_tokens, &w.we, &w.be);
    for (i, &y) in batch.y_context.iter().enumerate() {
        debug_assert!(y < MAX_CLASSES);
        let emb = w.label_embed.row(y);
        for (j, v) in h.row_mut(i).iter_mut().enumerate() {
            *v += emb[j];
        }
    }

    let mut layers = Vec::with_capacity(config.n_layers);
    for lw in &w.layers {
        let (a1, xhat1, rstd1) = layer_norm(&h, &lw.ln1_g, &lw.ln1_b);
        let q = linear(&a1, &lw.wq, &lw.bq);
        let k = linear(&a1, &lw.wk, &lw.bk);
        let v = linear(&a1, &lw.wv, &lw.bv);
        let mut probs = Vec::with_capacity(config.n_heads);
        let mut attn_concat = Array2::zeros((n, config.embed_dim));
        for head in 0..config.n_heads {
            let cols = s![.., head * dh..(head + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()) * inv_sqrt;
            let p = masked_softmax(scores, nc);
            attn_concat.slice_mut(cols).assign(&p.dot(&vh));
            probs.push(p);
        }
        let attn_out = linear(&attn_concat, &lw.wo, &lw.bo);
        h += &attn_out;

        let (a2, xhat2, rstd2) = layer_norm(&h, &lw.ln2_g, &lw.ln2_b);
        let z1 = linear(&a2, &lw.w1, &lw.b1);
        let g = z1.mapv(gelu);
        let z2 = linear(&g, &lw.w2, &lw.b2);
        h += &z2;

        layers.push(LayerCache {
            xhat1,
            rstd1,
            a1,
            q,
            k,
            v,
            probs,
            attn_concat,
            xhat2,
            rstd2,
            a2,
            z1,
            g,
        });
    }

    let (hf, xhat_f, rstd_f) = layer_norm(&h, &w.lnf_g, &w.lnf_b);
    let logits = linear(&hf.slice(s![nc.., ..]).to_owned(), &w.head_w, &w.head_b);

    Cache { x_tokens, layers, xhat_f, rstd_f, hf, logits }
}

/// Mean cross-entropy over query rows, softmax over all head outputs.
pub fn loss_ce(logits: &Array2<f64>, y_query: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), y_query.len());
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(y_query) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / y_query.len() as f64
}

/// Loss and exact gradient of the mean query cross-entropy with respect to
/// every parameter, in flat layout order.
pub fn gradient(config: &ModelConfig, params: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
    assert!(!batch.y_query.is_empty(), "gradient needs query labels");
    let w = Weights::from_flat(config, params);
    let cache = forward(config, params, batch);
    let nc = batch.n_context();
    let nq = batch.n_query();
    let n = nc + nq;
    let dh = config.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let loss = loss_ce(&cache.logits, &batch.y_query);

    let mut grads = Weights::zeros(config);

    // Softmax cross-entropy: dlogits = (softmax - onehot) / nq.
    let mut dlogits = Array2::zeros((nq, MAX_CLASSES));
    for (i, (row, &y)) in cache.logits.rows().into_iter().zip(&batch.y_query).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for j in 0..MAX_CLASSES {
            let p = exps[j] / sum;
            dlogits[[i, j]] = (p - if j == y { 1.0 } else { 0.0 }) / nq as f64;
        }
    }

    // Head.
    let hf_q = cache.hf.slice(s![nc.., ..]).to_owned();
    grads.head_w += &dlogits.t().dot(&hf_q);
    grads.head_b += &dlogits.sum_axis(Axis(0));
    let mut dhf = Array2::zeros((n, config.embed_dim));
    dhf.slice_mut(s![nc.., ..]).assign(&dlogits.dot(&w.head_w));

    // Final layer norm.
    let (dhf_in, dgf, dbf) = layer_norm_backward(&dhf, &cache.xhat_f, &cache.rstd_f, &w.lnf_g);
    grads.lnf_g += &dgf;
    grads.lnf_b += &dbf;
    let mut dhcur = dhf_in;

    for (lw, lc, gl) in layers_reversed(&w.layers, &cache.layers, &mut grads.layers) {
        // MLP block: h = h_mid + w2(gelu(w1 ln2(h_mid))).
        let dz2 = dhcur.clone();
        gl.w2 += &dz2.t().dot(&lc.g);
        gl.b2 += &dz2.sum_axis(Axis(0));
        let dg = dz2.dot(&lw.w2);
        let dz1 = &dg * &lc.z1.mapv(gelu_prime);
        gl.w1 += &dz1.t().dot(&lc.a2);
        gl.b1 += &dz1.sum_axis(Axis(0));
        let da2 = dz1.dot(&lw.w1);
        let (dmid, dg2, db2) = layer_norm_backward(&da2, &lc.xhat2, &lc.rstd2, &lw.ln2_g);
        gl.ln2_g += &dg2;
        gl.ln2_b += &db2;
        dhcur += &dmid;

        // Attention block: h_mid = h_in + wo(attn(ln1(h_in))).
        let dattn_out = dhcur.clone();
        gl.wo += &dattn_out.t().dot(&lc.attn_concat);
        gl.bo += &dattn_out.sum_axis(Axis(0));
        let dconcat = dattn_out.dot(&lw.wo);
        let mut dq = Array2::zeros((n, config.embed_dim));
        let mut dk = Array2::zeros((n, config.embed_dim));
        let mut dv = Array2::zeros((n, config.embed_dim));
        for head in 0..config.n_heads {
            let cols = s![.., head * dh..(head + 1) * dh];
            let doh = dconcat.slice(cols).to_owned();
            let p = &lc.probs[head];
            let vh = lc.v.slice(cols);
            let qh = lc.q.slice(cols);
            let kh = lc.k.slice(cols);
            let dp = doh.dot(&vh.t());
            dv.slice_mut(cols).assign(&p.t().dot(&doh));
            let ds = softmax_backward(&dp, p) * inv_sqrt;
            dq.slice_mut(cols).assign(&ds.dot(&kh));
            dk.slice_mut(cols).assign(&ds.t().dot(&qh));
        }
        gl.wq += &dq.t().dot(&lc.a1);
        gl.bq += &dq.sum_axis(Axis(0));
        gl.wk += &dk.t().dot(&lc.a1);
        gl.bk += &dk.sum_axis(Axis(0));
        gl.wv += &dv.t().dot(&lc.a1);
        gl.bv += &dv.sum_axis(Axis(0));
        let da1 = dq.dot(&lw.wq) + dk.dot(&lw.wk) + dv.dot(&lw.wv);
        let (din, dg1, db1) = layer_norm_backward(&da1, &lc.xhat1, &lc.rstd1, &lw.ln1_g);
        gl.ln1_g += &dg1;
        gl.ln1_b += &db1;
        dhcur += &din;
    }

    // Embedding.
    grads.we += &dhcur.t().dot(&cache.x_tokens);
    grads.be += &dhcur.sum_axis(Axis(0));
    for (i, &y) in batch.y_context.iter().enumerate() {
        let drow = dhcur.row(i);
        for (j, g) in grads.label_embed.row_mut(y).iter_mut().enumerate() {
            *g += drow[j];
        }
    }

    (loss, grads.to_flat(config))
}

/// Iterate layers in reverse, pairing weights, caches and gradient slots.
fn layers_reversed<'a>(
    weights: &'a [LayerWeights],
    caches: &'a [LayerCache],
    grads: &'a mut [LayerWeights],
) -> impl Iterator<Item = (&'a LayerWeights, &'a LayerCache, &'a mut LayerWeights)> {
    weights
        .iter()
        .rev()
        .zip(caches.iter().rev())
        .zip(grads.iter_mut().rev())
        .map(|((w, c), g)| (w, c, g))
}

/// Class probabilities for each query row: softmax over the full head.
pub fn predict_proba(config: &ModelConfig, params: &[f64], batch: &Batch) -> Array2<f64> {
    let cache = forward(config, params, batch);
    let mut probs = cache.logits;
    for mut row in probs.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}
