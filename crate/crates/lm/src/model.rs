//! Decoder-only transformer (pre-LayerNorm, learned positions, GELU MLP,
//! untied output projection) with an explicit backward pass.
//!
//! All parameters live in one flat buffer; [`Layout`] maps tensor names to
//! ranges so that the optimizer, checkpointing and gradient checks can treat
//! the model as a single vector.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::LmConfig;
use crate::error::{LmError, Result};
use crate::scalar::{gemm, Scalar, View};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

/// Offsets of every tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub vocab: usize,
    pub d: usize,
    pub heads: usize,
    pub ctx: usize,
    pub ff: usize,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) w_out: usize,
    pub(crate) b_out: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &LmConfig, vocab: usize) -> Self {
        let d = config.d_model;
        let ff = 4 * d;
        let mut cursor = 0;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let tok_emb = take(vocab * d);
        let pos_emb = take(config.context_len * d);
        let layers = (0..config.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * ff),
                b_fc: take(ff),
                w_proj: take(ff * d),
                b_proj: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let w_out = take(d * vocab);
        let b_out = take(vocab);
        Self {
            vocab,
            d,
            heads: config.n_heads,
            ctx: config.context_len,
            ff,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            total: cursor,
        }
    }

    /// Range of one token-embedding row.
    pub fn token_row(&self, id: u32) -> Range<usize> {
        let start = self.tok_emb + id as usize * self.d;
        start..start + self.d
    }
}

/// A training or scoring example: token ids plus the index of the first
/// token whose prediction contributes to the loss (≥ 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<u32>,
    pub loss_from: usize,
}

impl Example {
    pub fn new(ids: Vec<u32>) -> Self {
        Self { ids, loss_from: 1 }
    }

    pub fn targets(&self) -> usize {
        self.ids.len().saturating_sub(self.loss_from.max(1))
    }
}

/// All weights of the decoder in a flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: LmConfig,
    pub layout: Layout,
    pub(crate) data: Vec<T>,
}

pub(crate) struct LayerCache<T> {
    a_hat: Vec<T>,
    a_rstd: Vec<T>,
    a: Vec<T>,
    pub(crate) qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    m_hat: Vec<T>,
    m_rstd: Vec<T>,
    m: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

/// Activations of one forward pass over a single sequence.
pub(crate) struct Forward<T> {
    pub len: usize,
    pub layers: Vec<LayerCache<T>>,
    f_hat: Vec<T>,
    f_rstd: Vec<T>,
    xf: Vec<T>,
    /// Softmax over the vocabulary for every position, `len x vocab`.
    pub probs: Vec<T>,
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl<T: Scalar> ModelParams<T> {
    /// Normal(0, 0.02) weights, residual projections scaled by 1/sqrt(2L),
    /// unit LayerNorm gains, zero biases.
    pub fn init(config: &LmConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(LmError::Config("vocabulary must hold at least 2 tokens".into()));
        }
        let layout = Layout::new(config, vocab_size);
        let mut data = vec![T::ZERO; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let mut fill = |data: &mut [T], at: usize, n: usize, s: f64| {
            for v in &mut data[at..at + n] {
                *v = T::from_f64(box_muller(&mut rng) * s);
            }
        };
        let (d, v, ff) = (layout.d, layout.vocab, layout.ff);
        fill(&mut data, layout.tok_emb, v * d, std);
        fill(&mut data, layout.pos_emb, layout.ctx * d, std);
        for l in &layout.layers {
            fill(&mut data, l.w_qkv, d * 3 * d, std);
            fill(&mut data, l.w_o, d * d, resid_std);
            fill(&mut data, l.w_fc, d * ff, std);
            fill(&mut data, l.w_proj, ff * d, resid_std);
            data[l.ln1_g..l.ln1_g + d].fill(T::ONE);
            data[l.ln2_g..l.ln2_g + d].fill(T::ONE);
        }
        fill(&mut data, layout.w_out, d * v, std);
        data[layout.lnf_g..layout.lnf_g + d].fill(T::ONE);
        Ok(Self { config: config.clone(), layout, data })
    }

    pub fn from_raw(config: LmConfig, vocab_size: usize, data: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, vocab_size);
        if data.len() != layout.total {
            return Err(LmError::Config(format!("expected {} parameters, got {}", layout.total, data.len())));
        }
        Ok(Self { config, layout, data })
    }

    pub fn vocab_size(&self) -> usize {
        self.layout.vocab
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    fn p(&self, at: usize, n: usize) -> &[T] {
        &self.data[at..at + n]
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(LmError::Contract("empty sequence".into()));
        }
        if ids.len() > self.layout.ctx {
            return Err(LmError::Contract(format!(
                "sequence of {} tokens exceeds context length {}",
                ids.len(),
                self.layout.ctx
            )));
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.layout.vocab) {
            return Err(LmError::Contract(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Next-token distributions at every position (`len x vocab`).
    pub fn next_token_probs(&self, ids: &[u32]) -> Result<Vec<T>> {
        self.check_ids(ids)?;
        Ok(self.forward(ids).probs)
    }

    pub(crate) fn forward(&self, ids: &[u32]) -> Forward<T> {
        let lay = &self.layout;
        let (n, d, ff, v, h) = (ids.len(), lay.d, lay.ff, lay.vocab, lay.heads);
        let hd = d / h;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());

        let mut x = vec![T::ZERO; n * d];
        for (t, &id) in ids.iter().enumerate() {
            let te = self.p(lay.tok_emb + id as usize * d, d);
            let pe = self.p(lay.pos_emb + t * d, d);
            for ((o, &a), &b) in x[t * d..(t + 1) * d].iter_mut().zip(te).zip(pe) {
                *o = a + b;
            }
        }

        let mut layers = Vec::with_capacity(lay.layers.len());
        for l in &lay.layers {
            let mut a = vec![T::ZERO; n * d];
            let mut a_hat = vec![T::ZERO; n * d];
            let mut a_rstd = vec![T::ZERO; n];
            layer_norm(&x, self.p(l.ln1_g, d), self.p(l.ln1_b, d), &mut a, &mut a_hat, &mut a_rstd, d);

            let mut qkv = bias_rows(self.p(l.b_qkv, 3 * d), n);
            gemm(T::ONE, View::new(&a, n, d), View::new(self.p(l.w_qkv, d * 3 * d), d, 3 * d), T::ONE, &mut qkv, 3 * d);

            let mut probs = vec![T::ZERO; h * n * n];
            let mut att = vec![T::ZERO; n * d];
            for head in 0..h {
                let q = View::strided(&qkv[head * hd..], n, hd, 3 * d);
                let k = View::strided(&qkv[d + head * hd..], n, hd, 3 * d);
                let vv = View::strided(&qkv[2 * d + head * hd..], n, hd, 3 * d);
                let p = &mut probs[head * n * n..(head + 1) * n * n];
                gemm(scale, q, k.t(), T::ZERO, p, n);
                causal_softmax(p, n);
                gemm(T::ONE, View::new(p, n, n), vv, T::ZERO, &mut att[head * hd..], d);
            }
            add_bias_rows(&mut x, self.p(l.b_o, d));
            gemm(T::ONE, View::new(&att, n, d), View::new(self.p(l.w_o, d * d), d, d), T::ONE, &mut x, d);

            let mut m = vec![T::ZERO; n * d];
            let mut m_hat = vec![T::ZERO; n * d];
            let mut m_rstd = vec![T::ZERO; n];
            layer_norm(&x, self.p(l.ln2_g, d), self.p(l.ln2_b, d), &mut m, &mut m_hat, &mut m_rstd, d);
            let mut u = bias_rows(self.p(l.b_fc, ff), n);
            gemm(T::ONE, View::new(&m, n, d), View::new(self.p(l.w_fc, d * ff), d, ff), T::ONE, &mut u, ff);
            let g: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
            add_bias_rows(&mut x, self.p(l.b_proj, d));
            gemm(T::ONE, View::new(&g, n, ff), View::new(self.p(l.w_proj, ff * d), ff, d), T::ONE, &mut x, d);

            layers.push(LayerCache { a_hat, a_rstd, a, qkv, probs, att, m_hat, m_rstd, m, u, g });
        }

        let mut xf = vec![T::ZERO; n * d];
        let mut f_hat = vec![T::ZERO; n * d];
        let mut f_rstd = vec![T::ZERO; n];
        layer_norm(&x, self.p(lay.lnf_g, d), self.p(lay.lnf_b, d), &mut xf, &mut f_hat, &mut f_rstd, d);
        let mut probs = bias_rows(self.p(lay.b_out, v), n);
        gemm(T::ONE, View::new(&xf, n, d), View::new(self.p(lay.w_out, d * v), d, v), T::ONE, &mut probs, v);
        for row in probs.chunks_mut(v) {
            softmax_in_place(row);
        }
        Forward { len: n, layers, f_hat, f_rstd, xf, probs }
    }

    /// Summed cross-entropy of one example (natural log), and the number of
    /// target tokens it covers.
    pub fn example_loss(&self, ex: &Example) -> Result<(f64, usize)> {
        self.check_ids(&ex.ids)?;
        let fwd = self.forward(&ex.ids);
        Ok(sum_ce(&fwd.probs, ex, self.layout.vocab))
    }

    /// Mean per-token cross-entropy over a batch; gradient of that mean is
    /// accumulated into `grad` (same layout as the parameters).
    pub fn loss_and_grad(&self, batch: &[Example], grad: &mut [T]) -> Result<f64> {
        assert_eq!(grad.len(), self.data.len());
        let total: usize = batch.iter().map(Example::targets).sum();
        if total == 0 {
            return Err(LmError::Contract("batch has no target tokens".into()));
        }
        let norm = T::from_f64(1.0 / total as f64);
        let mut loss = 0.0;
        for ex in batch {
            self.check_ids(&ex.ids)?;
            let fwd = self.forward(&ex.ids);
            loss += sum_ce(&fwd.probs, ex, self.layout.vocab).0;
            self.backward(&ex.ids, ex.loss_from.max(1), fwd, norm, grad);
        }
        Ok(loss / total as f64)
    }

    fn backward(&self, ids: &[u32], loss_from: usize, fwd: Forward<T>, norm: T, grad: &mut [T]) {
        let lay = &self.layout;
        let (n, d, ff, v, h) = (fwd.len, lay.d, lay.ff, lay.vocab, lay.heads);
        let hd = d / h;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());

        // dlogits = (p - onehot) / total at target positions, zero elsewhere.
        let mut dlogits = fwd.probs;
        for t in 0..n {
            let row = &mut dlogits[t * v..(t + 1) * v];
            if t + 1 < loss_from || t + 1 >= n {
                row.fill(T::ZERO);
            } else {
                row[ids[t + 1] as usize] -= T::ONE;
                for g in row.iter_mut() {
                    *g *= norm;
                }
            }
        }
        col_sums_into(&dlogits, v, &mut grad[lay.b_out..lay.b_out + v]);
        gemm(
            T::ONE,
            View::new(&fwd.xf, n, d).t(),
            View::new(&dlogits, n, v),
            T::ONE,
            &mut grad[lay.w_out..lay.w_out + d * v],
            v,
        );
        let mut dxf = vec![T::ZERO; n * d];
        gemm(T::ONE, View::new(&dlogits, n, v), View::new(self.p(lay.w_out, d * v), d, v).t(), T::ZERO, &mut dxf, d);
        drop(dlogits);

        let mut dx = vec![T::ZERO; n * d];
        {
            let (gg, gb) = two_mut(grad, lay.lnf_g, lay.lnf_b, d);
            layer_norm_backward(&dxf, &fwd.f_hat, &fwd.f_rstd, self.p(lay.lnf_g, d), &mut dx, gg, gb, d);
        }

        for (l, c) in lay.layers.iter().zip(fwd.layers.iter()).rev() {
            // MLP block: x_out = x_mid + proj(gelu(fc(ln2(x_mid))))
            col_sums_into(&dx, d, &mut grad[l.b_proj..l.b_proj + d]);
            gemm(
                T::ONE,
                View::new(&c.g, n, ff).t(),
                View::new(&dx, n, d),
                T::ONE,
                &mut grad[l.w_proj..l.w_proj + ff * d],
                d,
            );
            let mut du = vec![T::ZERO; n * ff];
            gemm(T::ONE, View::new(&dx, n, d), View::new(self.p(l.w_proj, ff * d), ff, d).t(), T::ZERO, &mut du, ff);
            for (g, &z) in du.iter_mut().zip(&c.u) {
                *g *= gelu_grad(z);
            }
            col_sums_into(&du, ff, &mut grad[l.b_fc..l.b_fc + ff]);
            gemm(
                T::ONE,
                View::new(&c.m, n, d).t(),
                View::new(&du, n, ff),
                T::ONE,
                &mut grad[l.w_fc..l.w_fc + d * ff],
                ff,
            );
            let mut dm = vec![T::ZERO; n * d];
            gemm(T::ONE, View::new(&du, n, ff), View::new(self.p(l.w_fc, d * ff), d, ff).t(), T::ZERO, &mut dm, d);
            {
                let (gg, gb) = two_mut(grad, l.ln2_g, l.ln2_b, d);
                layer_norm_backward(&dm, &c.m_hat, &c.m_rstd, self.p(l.ln2_g, d), &mut dx, gg, gb, d);
            }

            // Attention block: x_mid = x_in + o(attn(ln1(x_in)))
            col_sums_into(&dx, d, &mut grad[l.b_o..l.b_o + d]);
            gemm(T::ONE, View::new(&c.att, n, d).t(), View::new(&dx, n, d), T::ONE, &mut grad[l.w_o..l.w_o + d * d], d);
            let mut datt = vec![T::ZERO; n * d];
            gemm(T::ONE, View::new(&dx, n, d), View::new(self.p(l.w_o, d * d), d, d).t(), T::ZERO, &mut datt, d);

            let mut dqkv = vec![T::ZERO; n * 3 * d];
            let mut dp = vec![T::ZERO; n * n];
            for head in 0..h {
                let p = &c.probs[head * n * n..(head + 1) * n * n];
                let d_out = View::strided(&datt[head * hd..], n, hd, d);
                let q = View::strided(&c.qkv[head * hd..], n, hd, 3 * d);
                let k = View::strided(&c.qkv[d + head * hd..], n, hd, 3 * d);
                let vv = View::strided(&c.qkv[2 * d + head * hd..], n, hd, 3 * d);
                gemm(T::ONE, d_out, vv.t(), T::ZERO, &mut dp, n);
                gemm(T::ONE, View::new(p, n, n).t(), d_out, T::ZERO, &mut dqkv[2 * d + head * hd..], 3 * d);
                // softmax backward, rows restricted to the causal prefix
                for i in 0..n {
                    let pr = &p[i * n..i * n + i + 1];
                    let dr = &mut dp[i * n..(i + 1) * n];
                    let mut dot = T::ZERO;
                    for (&a, &b) in pr.iter().zip(dr.iter()) {
                        dot += a * b;
                    }
                    for (j, g) in dr.iter_mut().enumerate() {
                        *g = if j <= i { pr[j] * (*g - dot) } else { T::ZERO };
                    }
                }
                gemm(scale, View::new(&dp, n, n), k, T::ZERO, &mut dqkv[head * hd..], 3 * d);
                gemm(scale, View::new(&dp, n, n).t(), q, T::ZERO, &mut dqkv[d + head * hd..], 3 * d);
            }
            col_sums_into(&dqkv, 3 * d, &mut grad[l.b_qkv..l.b_qkv + 3 * d]);
            gemm(
                T::ONE,
                View::new(&c.a, n, d).t(),
                View::new(&dqkv, n, 3 * d),
                T::ONE,
                &mut grad[l.w_qkv..l.w_qkv + d * 3 * d],
                3 * d,
            );
            let mut da = vec![T::ZERO; n * d];
            gemm(
                T::ONE,
                View::new(&dqkv, n, 3 * d),
                View::new(self.p(l.w_qkv, d * 3 * d), d, 3 * d).t(),
                T::ZERO,
                &mut da,
                d,
            );
            {
                let (gg, gb) = two_mut(grad, l.ln1_g, l.ln1_b, d);
                layer_norm_backward(&da, &c.a_hat, &c.a_rstd, self.p(l.ln1_g, d), &mut dx, gg, gb, d);
            }
        }

        for (t, &id) in ids.iter().enumerate().take(n) {
            let row = &dx[t * d..(t + 1) * d];
            let te = lay.tok_emb + id as usize * d;
            for (g, &r) in grad[te..te + d].iter_mut().zip(row) {
                *g += r;
            }
            let pe = lay.pos_emb + t * d;
            for (g, &r) in grad[pe..pe + d].iter_mut().zip(row) {
                *g += r;
            }
        }
    }
}

pub(crate) fn sum_ce<T: Scalar>(probs: &[T], ex: &Example, v: usize) -> (f64, usize) {
    let mut loss = 0.0;
    let mut count = 0;
    for t in ex.loss_from.max(1)..ex.ids.len() {
        let p = probs[(t - 1) * v + ex.ids[t] as usize].to_f64();
        loss -= p.max(f64::MIN_POSITIVE).ln();
        count += 1;
    }
    (loss, count)
}

fn two_mut<T>(buf: &mut [T], a: usize, b: usize, n: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + n <= b);
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + n], &mut hi[..n])
}

pub(crate) fn bias_rows<T: Scalar>(bias: &[T], rows: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(bias.len() * rows);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    out
}

pub(crate) fn add_bias_rows<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_mut(bias.len()) {
        for (a, &b) in row.iter_mut().zip(bias) {
            *a += b;
        }
    }
}

fn col_sums_into<T: Scalar>(x: &[T], cols: usize, out: &mut [T]) {
    for row in x.chunks(cols) {
        for (o, &r) in out.iter_mut().zip(row) {
            *o += r;
        }
    }
}

pub(crate) fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    out: &mut [T],
    hat: &mut [T],
    rstd: &mut [T],
    d: usize,
) {
    let inv_d = T::from_f64(1.0 / d as f64);
    let eps = T::from_f64(LN_EPS);
    for (r, ((xr, orow), hrow)) in x.chunks(d).zip(out.chunks_mut(d)).zip(hat.chunks_mut(d)).enumerate() {
        let mut mean = T::ZERO;
        for &v in xr {
            mean += v;
        }
        mean *= inv_d;
        let mut var = T::ZERO;
        for &v in xr {
            var += (v - mean) * (v - mean);
        }
        var *= inv_d;
        let rs = T::ONE / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let xh = (xr[i] - mean) * rs;
            hrow[i] = xh;
            orow[i] = xh * gain[i] + bias[i];
        }
    }
}

/// Accumulates into `dx`, `dgain`, `dbias`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    hat: &[T],
    rstd: &[T],
    gain: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
    d: usize,
) {
    let inv_d = T::from_f64(1.0 / d as f64);
    for (r, ((dyr, hr), dxr)) in dy.chunks(d).zip(hat.chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
        let mut mean_dh = T::ZERO;
        let mut mean_dh_h = T::ZERO;
        for i in 0..d {
            let dh = dyr[i] * gain[i];
            mean_dh += dh;
            mean_dh_h += dh * hr[i];
            dgain[i] += dyr[i] * hr[i];
            dbias[i] += dyr[i];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        for i in 0..d {
            let dh = dyr[i] * gain[i];
            dxr[i] += rstd[r] * (dh - mean_dh - hr[i] * mean_dh_h);
        }
    }
}

fn causal_softmax<T: Scalar>(p: &mut [T], n: usize) {
    for i in 0..n {
        let row = &mut p[i * n..(i + 1) * n];
        softmax_in_place(&mut row[..=i]);
        row[i + 1..].fill(T::ZERO);
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let mut max = row[0];
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::ONE / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inner = T::from_f64(GELU_C) * (x + T::from_f64(GELU_K) * x * x * x);
    half * x * (T::ONE + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let th = (c * (x + k * x * x * x)).tanh();
    half * (T::ONE + th) + half * x * (T::ONE - th * th) * c * (T::ONE + T::from_f64(3.0) * k * x * x)
}
