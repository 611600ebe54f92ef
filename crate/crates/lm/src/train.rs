use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::LmConfig;
use crate::error::{LmError, Result};
use crate::model::{Example, ModelParams};

/// Adam with bias correction.
pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f32) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-token loss before any update.
    pub initial_loss: f64,
    /// Mean per-token training loss of each epoch (running average over its batches).
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Examples shortened to fit the context window.
    pub truncated: usize,
}

fn lr_at(config: &LmConfig, step: usize, total: usize) -> f64 {
    let warm = ((total as f64) * config.warmup_frac).ceil() as usize;
    if step < warm {
        return config.learning_rate * (step + 1) as f64 / warm as f64;
    }
    let span = (total - warm).max(1) as f64;
    let progress = (step - warm) as f64 / span;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    config.learning_rate * (config.min_lr_frac + (1.0 - config.min_lr_frac) * cos)
}

fn fit_examples(examples: &[Example], config: &LmConfig) -> Result<(Vec<Example>, usize)> {
    let mut truncated = 0;
    let mut out = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        if ex.ids.len() <= config.context_len {
            out.push(ex.clone());
            continue;
        }
        if !config.truncate {
            return Err(LmError::Contract(format!(
                "example {i} has {} tokens, context length is {}",
                ex.ids.len(),
                config.context_len
            )));
        }
        let cut = ex.ids.len() - config.context_len;
        truncated += 1;
        out.push(Example { ids: ex.ids[cut..].to_vec(), loss_from: ex.loss_from.saturating_sub(cut).max(1) });
    }
    Ok((out, truncated))
}

/// Mean per-token loss of `params` over `examples`.
pub fn evaluate_loss(params: &ModelParams<f32>, examples: &[Example]) -> Result<f64> {
    let mut loss = 0.0;
    let mut count = 0;
    for ex in examples {
        let (l, c) = params.example_loss(ex)?;
        loss += l;
        count += c;
    }
    if count == 0 {
        return Err(LmError::Contract("no target tokens".into()));
    }
    Ok(loss / count as f64)
}

/// Trains a fresh model on `examples` with next-token cross-entropy.
pub fn train_lm(examples: &[Example], vocab_size: usize, config: &LmConfig) -> Result<(ModelParams<f32>, TrainReport)> {
    let params = ModelParams::init(config, vocab_size, config.seed)?;
    train_from(params, examples, config, |_, _| {})
}

/// Continues training `params`. `on_epoch(epoch, loss)` is called after each epoch.
pub fn train_from(
    mut params: ModelParams<f32>,
    examples: &[Example],
    config: &LmConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ModelParams<f32>, TrainReport)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(LmError::Contract("empty training corpus".into()));
    }
    let (examples, truncated) = fit_examples(examples, config)?;
    let sample: Vec<Example> = examples.iter().take(64).cloned().collect();
    let initial_loss = evaluate_loss(&params, &sample)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x05ee_d0fb_47c4);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let batches_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut adam = Adam::new(params.num_params());
    let mut grad = vec![0.0f32; params.num_params()];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut tokens = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let n_tok: usize = batch.iter().map(Example::targets).sum();
            if n_tok == 0 {
                continue;
            }
            grad.fill(0.0);
            let loss = params.loss_and_grad(&batch, &mut grad)?;
            if !loss.is_finite() {
                return Err(LmError::NonFiniteLoss { loss, epoch, step, batch: b });
            }
            let norm = grad.iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(LmError::NonFiniteLoss { loss: norm, epoch, step, batch: b });
            }
            if config.grad_clip > 0.0 && norm > config.grad_clip {
                let s = (config.grad_clip / norm) as f32;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(params.as_mut_slice(), &grad, lr_at(config, step, total_steps) as f32);
            sum += loss * n_tok as f64;
            tokens += n_tok;
            step += 1;
        }
        let epoch_loss = sum / tokens.max(1) as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.4}");
        on_epoch(epoch, epoch_loss);
        epoch_losses.push(epoch_loss);
    }
    Ok((params, TrainReport { initial_loss, epoch_losses, steps: step, truncated }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let c = LmConfig { learning_rate: 1.0, warmup_frac: 0.1, min_lr_frac: 0.1, ..Default::default() };
        assert!(lr_at(&c, 0, 100) < lr_at(&c, 9, 100));
        assert!((lr_at(&c, 9, 100) - 1.0).abs() < 1e-12);
        assert!((lr_at(&c, 99, 100) - 0.1).abs() < 1e-3);
    }

    #[test]
    fn truncation_keeps_the_tail() {
        let c = LmConfig { context_len: 4, ..Default::default() };
        let (ex, n) = fit_examples(&[Example { ids: vec![1, 2, 3, 4, 5, 6], loss_from: 3 }], &c).unwrap();
        assert_eq!(n, 1);
        assert_eq!(ex[0].ids, vec![3, 4, 5, 6]);
        assert_eq!(ex[0].loss_from, 1);
        let strict = LmConfig { truncate: false, ..c };
        assert!(fit_examples(&[Example::new(vec![1; 6])], &strict).is_err());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(train_lm(&[], 10, &LmConfig::default()).is_err());
    }
}
