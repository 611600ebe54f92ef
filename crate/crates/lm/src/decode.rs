//! Incremental greedy decoding with a key/value cache.

use crate::error::{LmError, Result};
use crate::model::{add_bias_rows, bias_rows, gelu, layer_norm, ModelParams};
use crate::scalar::{gemm, View};

/// Decoding state for one sequence. Read-only over the parameters, so many
/// sessions may share one model.
pub struct Session<'m> {
    model: &'m ModelParams<f32>,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
    logits: Vec<f32>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m ModelParams<f32>) -> Self {
        let lay = &model.layout;
        let cache = vec![0.0; lay.ctx * lay.d];
        Self {
            model,
            keys: vec![cache.clone(); lay.layers.len()],
            values: vec![cache; lay.layers.len()],
            len: 0,
            logits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.model.layout.ctx
    }

    /// Unnormalized next-token scores (logits up to an additive constant)
    /// after everything fed so far.
    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    /// Feeds a block of tokens. An empty session uses one batched forward
    /// pass; otherwise tokens are appended one at a time.
    pub fn feed(&mut self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Ok(());
        }
        if self.len + ids.len() > self.capacity() {
            return Err(LmError::Contract(format!(
                "{} tokens exceed context length {}",
                self.len + ids.len(),
                self.capacity()
            )));
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.model.layout.vocab) {
            return Err(LmError::Contract(format!("token id {bad} outside vocabulary")));
        }
        if self.len == 0 && ids.len() > 1 {
            self.prefill(ids);
        } else {
            for &id in ids {
                self.step(id);
            }
        }
        Ok(())
    }

    fn prefill(&mut self, ids: &[u32]) {
        let fwd = self.model.forward(ids);
        let d = self.model.layout.d;
        let n = ids.len();
        for (l, cache) in fwd.layers.iter().enumerate() {
            for t in 0..n {
                let row = &cache.qkv[t * 3 * d..(t + 1) * 3 * d];
                self.keys[l][t * d..(t + 1) * d].copy_from_slice(&row[d..2 * d]);
                self.values[l][t * d..(t + 1) * d].copy_from_slice(&row[2 * d..]);
            }
        }
        let v = self.model.layout.vocab;
        self.logits = fwd.probs[(n - 1) * v..n * v].iter().map(|p| p.max(f32::MIN_POSITIVE).ln()).collect();
        self.len = n;
    }

    fn step(&mut self, id: u32) {
        let model = self.model;
        let lay = &model.layout;
        let data = model.as_slice();
        let p = |at: usize, n: usize| &data[at..at + n];
        let (d, ff, v, h) = (lay.d, lay.ff, lay.vocab, lay.heads);
        let hd = d / h;
        let scale = 1.0 / (hd as f32).sqrt();
        let pos = self.len;

        let mut x: Vec<f32> =
            p(lay.tok_emb + id as usize * d, d).iter().zip(p(lay.pos_emb + pos * d, d)).map(|(a, b)| a + b).collect();
        let mut a = vec![0.0; d];
        let mut hat = vec![0.0; d];
        let mut rstd = [0.0];
        let mut scores = vec![0.0f32; pos + 1];
        for (li, l) in lay.layers.iter().enumerate() {
            layer_norm(&x, p(l.ln1_g, d), p(l.ln1_b, d), &mut a, &mut hat, &mut rstd, d);
            let mut qkv = bias_rows(p(l.b_qkv, 3 * d), 1);
            gemm(1.0, View::new(&a, 1, d), View::new(p(l.w_qkv, d * 3 * d), d, 3 * d), 1.0, &mut qkv, 3 * d);
            self.keys[li][pos * d..(pos + 1) * d].copy_from_slice(&qkv[d..2 * d]);
            self.values[li][pos * d..(pos + 1) * d].copy_from_slice(&qkv[2 * d..]);
            let mut att = vec![0.0f32; d];
            for head in 0..h {
                let q = &qkv[head * hd..(head + 1) * hd];
                let keys = &self.keys[li];
                let mut max = f32::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * d + head * hd..j * d + (head + 1) * hd];
                    *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
                    max = max.max(*s);
                }
                let mut sum = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let out = &mut att[head * hd..(head + 1) * hd];
                for (j, &s) in scores.iter().enumerate() {
                    let w = s / sum;
                    let vrow = &self.values[li][j * d + head * hd..j * d + (head + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(vrow) {
                        *o += w * vv;
                    }
                }
            }
            add_bias_rows(&mut x, p(l.b_o, d));
            gemm(1.0, View::new(&att, 1, d), View::new(p(l.w_o, d * d), d, d), 1.0, &mut x, d);
            layer_norm(&x, p(l.ln2_g, d), p(l.ln2_b, d), &mut a, &mut hat, &mut rstd, d);
            let mut u = bias_rows(p(l.b_fc, ff), 1);
            gemm(1.0, View::new(&a, 1, d), View::new(p(l.w_fc, d * ff), d, ff), 1.0, &mut u, ff);
            for z in u.iter_mut() {
                *z = gelu(*z);
            }
            add_bias_rows(&mut x, p(l.b_proj, d));
            gemm(1.0, View::new(&u, 1, ff), View::new(p(l.w_proj, ff * d), ff, d), 1.0, &mut x, d);
        }
        layer_norm(&x, p(lay.lnf_g, d), p(lay.lnf_b, d), &mut a, &mut hat, &mut rstd, d);
        let mut logits = bias_rows(p(lay.b_out, v), 1);
        gemm(1.0, View::new(&a, 1, d), View::new(p(lay.w_out, d * v), d, v), 1.0, &mut logits, v);
        self.logits = logits;
        self.len += 1;
    }

    /// Greedy continuation; the stop token, when hit, is included.
    pub fn generate(&mut self, stop: &[u32], max_len: usize) -> Result<Vec<u32>> {
        if self.is_empty() {
            return Err(LmError::Contract("generation needs a non-empty prompt".into()));
        }
        let mut out = Vec::new();
        while out.len() < max_len && self.len < self.capacity() {
            let next = argmax(&self.logits);
            out.push(next);
            if stop.contains(&next) {
                break;
            }
            self.step(next);
        }
        Ok(out)
    }
}

/// Index of the largest score; ties go to the lowest id.
pub fn argmax(scores: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best as u32
}

/// Deterministic greedy decoding from `prompt` until a stop token or
/// `max_len` new tokens. The prompt must be shorter than the context length.
pub fn decode_greedy(params: &ModelParams<f32>, prompt: &[u32], stop: &[u32], max_len: usize) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(LmError::Contract("empty prompt".into()));
    }
    if prompt.len() >= params.layout.ctx {
        return Err(LmError::Contract(format!(
            "prompt of {} tokens does not fit context length {}",
            prompt.len(),
            params.layout.ctx
        )));
    }
    if max_len == 0 {
        return Ok(Vec::new());
    }
    let mut session = Session::new(params);
    session.feed(prompt)?;
    session.generate(stop, max_len)
}

/// Decodes several prompts independently; each lane's output is identical
/// to decoding it alone.
pub fn decode_greedy_batch(
    params: &ModelParams<f32>,
    prompts: &[Vec<u32>],
    stop: &[u32],
    max_len: usize,
) -> Result<Vec<Vec<u32>>> {
    prompts.iter().map(|p| decode_greedy(params, p, stop, max_len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LmConfig;

    fn model() -> ModelParams<f32> {
        let c = LmConfig { n_layers: 2, d_model: 16, n_heads: 2, context_len: 32, ..Default::default() };
        ModelParams::init(&c, 20, 5).unwrap()
    }

    #[test]
    fn incremental_logits_match_full_forward() {
        let m = model();
        let ids = [1u32, 7, 3, 9, 12, 4];
        let probs = m.next_token_probs(&ids).unwrap();
        let mut s = Session::new(&m);
        for (t, &id) in ids.iter().enumerate() {
            s.feed(&[id]).unwrap();
            let mut l = s.logits().to_vec();
            crate::model::softmax_in_place(&mut l);
            for (a, b) in l.iter().zip(&probs[t * 20..(t + 1) * 20]) {
                assert!((a - b).abs() < 1e-5, "pos {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_budget_is_empty() {
        assert!(decode_greedy(&model(), &[1, 2], &[2], 0).unwrap().is_empty());
    }

    #[test]
    fn overlong_prompt_is_rejected() {
        assert!(decode_greedy(&model(), &[1; 32], &[2], 4).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest_id() {
        assert_eq!(argmax(&[0.5, 1.0, 1.0, 0.2]), 1);
    }

    #[test]
    fn batch_lanes_are_independent() {
        let m = model();
        let a = vec![1u32, 5, 6];
        let alone = decode_greedy(&m, &a, &[2], 10).unwrap();
        let padded = decode_greedy_batch(&m, &[vec![1, 9, 9, 9, 9, 9], a.clone(), vec![1]], &[2], 10).unwrap();
        assert_eq!(padded[1], alone);
        assert_eq!(decode_greedy(&m, &a, &[2], 10).unwrap(), alone);
    }
}
