//! Logistic observation model: the coefficient block becomes a random-walk
//! Metropolis step targeting
//!
//! ```text
//! Π_i Bernoulli(y_i | logistic(x_iᵀβ_t)) · Normal(β_t | α_t, σ²_β I)
//! ```
//!
//! while the state and variance blocks are shared with the Gaussian sampler.
//! Proposal scales adapt per time point during warmup and are frozen
//! afterwards, so the kept draws come from a fixed kernel.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{MetropolisConfig, Observation};
use crate::sampler::{ChainState, GibbsSampler};

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log of the unnormalized logistic conditional of `beta`.
pub fn log_target(
    obs_at_t: &[Observation],
    alpha_t: &[f64],
    var_beta: impl Fn(usize) -> f64,
    beta: &[f64],
) -> f64 {
    let loglik: f64 = obs_at_t
        .iter()
        .map(|o| {
            let eta: f64 = o.x.iter().zip(beta).map(|(x, b)| x * b).sum();
            o.y * eta - softplus(eta)
        })
        .sum();
    let logprior: f64 = beta
        .iter()
        .zip(alpha_t)
        .enumerate()
        .map(|(p, (b, a))| -(b - a).powi(2) / (2.0 * var_beta(p)))
        .sum();
    loglik + logprior
}

/// Per-time proposal scale with windowed Robbins-Monro style adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetropolisTuner {
    pub scale: f64,
    pub target_accept: f64,
    pub window: usize,
    /// Sweeps at or after this index never adapt.
    pub freeze_at: usize,
    window_accepts: usize,
    window_steps: usize,
    kept_accepts: usize,
    kept_steps: usize,
    warmup_accepts: usize,
    warmup_steps: usize,
}

impl MetropolisTuner {
    pub fn new(config: &MetropolisConfig, freeze_at: usize) -> Self {
        Self {
            scale: config.initial_scale,
            target_accept: config.target_accept,
            window: config.adapt_window,
            freeze_at,
            window_accepts: 0,
            window_steps: 0,
            kept_accepts: 0,
            kept_steps: 0,
            warmup_accepts: 0,
            warmup_steps: 0,
        }
    }

    /// A tuner that never adapts.
    pub fn frozen(scale: f64) -> Self {
        Self {
            scale,
            ..Self::new(&MetropolisConfig::default(), 0)
        }
    }

    pub fn observe(&mut self, sweep: usize, accepted: bool) {
        if sweep >= self.freeze_at {
            self.kept_steps += 1;
            self.kept_accepts += usize::from(accepted);
            return;
        }
        self.warmup_steps += 1;
        self.warmup_accepts += usize::from(accepted);
        self.window_steps += 1;
        self.window_accepts += usize::from(accepted);
        if self.window_steps == self.window {
            let rate = self.window_accepts as f64 / self.window as f64;
            self.scale *= (2.0 * (rate - self.target_accept)).exp();
            self.scale = self.scale.clamp(1e-8, 1e8);
            self.window_steps = 0;
            self.window_accepts = 0;
        }
    }

    /// Acceptance rate over post-freeze steps (NaN before any).
    pub fn kept_rate(&self) -> f64 {
        self.kept_accepts as f64 / self.kept_steps as f64
    }

    pub fn warmup_rate(&self) -> f64 {
        self.warmup_accepts as f64 / self.warmup_steps as f64
    }
}

/// One Metropolis step for β_t with a spherical Gaussian proposal of the
/// tuner's scale. Returns the new value and whether the proposal was
/// accepted.
pub fn sample_beta_block_logistic<R: Rng + ?Sized>(
    obs_at_t: &[Observation],
    alpha_t: &[f64],
    var_beta: impl Fn(usize) -> f64 + Copy,
    current_beta_t: &[f64],
    scale: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, bool)> {
    let current = log_target(obs_at_t, alpha_t, var_beta, current_beta_t);
    let proposal: Vec<f64> = current_beta_t
        .iter()
        .map(|b| b + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let proposed = log_target(obs_at_t, alpha_t, var_beta, &proposal);
    if !current.is_finite() || proposed.is_nan() {
        return Err(Error::Numerical(format!(
            "non-finite logistic log target ({current}, {proposed})"
        )));
    }
    let u: f64 = rng.random();
    if u.ln() < proposed - current {
        Ok((proposal, true))
    } else {
        Ok((current_beta_t.to_vec(), false))
    }
}

/// Logistic replacement for the Gaussian coefficient block, one tuner per
/// time point.
pub(crate) struct LogisticBlock {
    tuners: Vec<MetropolisTuner>,
    n_predictors: usize,
}

impl LogisticBlock {
    pub(crate) fn new(
        n_times: usize,
        n_predictors: usize,
        config: &MetropolisConfig,
        n_warmup: usize,
    ) -> Self {
        Self {
            tuners: (0..n_times)
                .map(|_| MetropolisTuner::new(config, n_warmup))
                .collect(),
            n_predictors,
        }
    }

    pub(crate) fn sweep(
        &mut self,
        sampler: &GibbsSampler<'_>,
        state: &mut ChainState,
        sweep: usize,
    ) -> Result<()> {
        let dataset = sampler.dataset();
        let mut beta_t = vec![0.0; self.n_predictors];
        let mut alpha_t = vec![0.0; self.n_predictors];
        for (i, tuner) in self.tuners.iter_mut().enumerate() {
            for p in 0..self.n_predictors {
                beta_t[p] = state.beta[(i, p)];
                alpha_t[p] = state.alpha[(i, p)];
            }
            let variances = &state.variances;
            let (next, accepted) = sample_beta_block_logistic(
                dataset.at(i + 1),
                &alpha_t,
                |p| variances.beta(p),
                &beta_t,
                tuner.scale,
                &mut state.rng,
            )?;
            tuner.observe(sweep, accepted);
            for (p, v) in next.into_iter().enumerate() {
                state.beta[(i, p)] = v;
            }
        }
        sampler.sample_states(state)?;
        sampler.sample_variance_block(state)
    }

    pub(crate) fn kept_accept_rates(&self) -> Vec<f64> {
        self.tuners.iter().map(MetropolisTuner::kept_rate).collect()
    }
}
