//! Finite-difference verification of the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::LmConfig;
use crate::error::{LmError, Result};
use crate::model::{Example, ModelParams};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that two gradients that are
/// both numerically zero do not produce a meaningless ratio.
pub const REL_FLOOR: f64 = 1e-6;
/// Refuse to check models where a full sweep would be too slow.
pub const MAX_PARAMS: usize = 6_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Largest |gradient| over the embedding row of a token absent from the batch.
    pub unused_row_max_grad: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients against central differences in 64-bit
/// arithmetic on a random batch. The highest token id never appears in the
/// batch, so its embedding row must receive exactly zero gradient.
pub fn grad_check(config: &LmConfig, vocab_size: usize, seed: u64) -> Result<GradCheckReport> {
    let mut params = ModelParams::<f64>::init(config, vocab_size, seed)?;
    if params.num_params() > MAX_PARAMS {
        return Err(LmError::Config(format!(
            "grad_check needs at most {MAX_PARAMS} parameters, model has {}",
            params.num_params()
        )));
    }
    // Break the symmetry of the default init (zero biases, unit gains) so
    // every parameter gets a generic gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for v in params.as_mut_slice() {
        *v += rng.gen_range(-0.3..0.3);
    }
    let unused = (vocab_size - 1) as u32;
    let batch: Vec<Example> = (0..2)
        .map(|_| {
            let len = rng.gen_range(3..=config.context_len);
            let ids = (0..len).map(|_| rng.gen_range(0..unused)).collect();
            Example { ids, loss_from: rng.gen_range(1..3) }
        })
        .collect();

    let mut grad = vec![0.0; params.num_params()];
    params.loss_and_grad(&batch, &mut grad)?;

    let loss = |p: &ModelParams<f64>| -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for ex in &batch {
            let (l, c) = p.example_loss(ex)?;
            total += l;
            count += c;
        }
        Ok(total / count as f64)
    };

    let mut worst = (0.0, 0);
    for (i, &g) in grad.iter().enumerate() {
        let orig = params.as_slice()[i];
        params.as_mut_slice()[i] = orig + FD_STEP;
        let up = loss(&params)?;
        params.as_mut_slice()[i] = orig - FD_STEP;
        let down = loss(&params)?;
        params.as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(g, numeric);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    let unused_row_max_grad = grad[params.layout.token_row(unused)].iter().fold(0.0f64, |m, g| m.max(g.abs()));
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: params.num_params(),
        unused_row_max_grad,
    })
}

/// The configuration used by the gradient-check tests.
pub fn tiny_config() -> LmConfig {
    LmConfig { n_layers: 2, d_model: 8, n_heads: 2, context_len: 6, ..Default::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!(relative_error(1e-9, 2e-9) < 1e-2);
    }

    #[test]
    fn tiny_model_passes() {
        let r = grad_check(&tiny_config(), 7, 1).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert_eq!(r.unused_row_max_grad, 0.0);
    }

    #[test]
    fn oversized_models_are_refused() {
        assert!(grad_check(&LmConfig::default(), 100, 0).is_err());
    }
}
