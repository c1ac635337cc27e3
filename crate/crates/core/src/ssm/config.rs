use crate::error::{Error, Result};

/// Architecture and optimizer settings of the online predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub d_inner: usize,
    pub d_conv: usize,
    pub n_layers: usize,
    pub chunk_size: usize,
    pub label_smoothing: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_state: 16,
            d_inner: 64,
            d_conv: 4,
            n_layers: 2,
            chunk_size: 32,
            label_smoothing: 0.12,
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 5.0,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Same architecture shape rules with a different width.
    pub fn with_dims(d_model: usize, d_state: usize, d_conv: usize, n_layers: usize) -> Self {
        Self {
            d_model,
            d_state,
            d_inner: 2 * d_model,
            d_conv,
            n_layers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.d_model == 0
            || self.d_state == 0
            || self.d_conv == 0
            || self.n_layers == 0
            || self.chunk_size < 2
        {
            return bad("model dimensions must be at least 1 (chunk size at least 2)");
        }
        if self.d_inner != 2 * self.d_model {
            return bad("d_inner must equal 2 * d_model");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label smoothing must lie in [0, 1)");
        }
        if !(self.lr > 0.0 && self.grad_clip > 0.0 && self.adam_eps > 0.0) {
            return bad("optimizer constants must be positive");
        }
        Ok(())
    }
}
