//! Three-block Gibbs sampler for the continuous-outcome model.
//!
//! Each sweep draws, in order:
//! 1. every β_t (jointly over predictors) from its Gaussian conditional,
//! 2. every predictor's level/slope path by forward filtering, backward
//!    sampling on the current β column, preceded by collapsed Metropolis
//!    moves of σ²_β, σ²_α, σ²_η (see [`collapsed`]),
//! 3. the variances from their inverse-gamma conditionals.
//!
//! # Reproducibility
//!
//! Chain `c` uses a ChaCha20 generator seeded with
//! `splitmix64(master_seed + (c + 1) * 0x9E3779B97F4A7C15)` (wrapping
//! arithmetic), so the draws are a pure function of the dataset and the
//! configuration no matter how chains are scheduled.

pub mod beta;
pub mod collapsed;
pub mod ffbs;
pub mod variances;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::binary::LogisticBlock;
use crate::draws::{ChainDraws, DrawStore, ParamLayout};
use crate::error::{Error, Result};
use crate::model::{Dataset, ModelConfig, OutcomeKind};

pub use beta::{sample_beta_block, BetaConditional, TimeBlock};
pub use ffbs::{ffbs_states, kalman_filter, FfbsModel, FilterMoments};
pub use variances::{sample_variances, variance_posterior, InvGamma, VariancePosterior, Variances};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `index` derived from `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn chain_seed(master_seed: u64, chain_index: usize) -> u64 {
    derive_seed(master_seed, chain_index as u64)
}

/// How chains are scheduled. Results do not depend on the choice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// At most this many worker threads.
    Threads(usize),
    #[default]
    Auto,
}

impl Parallelism {
    /// Reads the `TVCAST_THREADS` cap; unset or unparsable means `Auto`.
    pub fn from_env() -> Self {
        match std::env::var("TVCAST_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
            Some(0) | None => Parallelism::Auto,
            Some(1) => Parallelism::Sequential,
            Some(n) => Parallelism::Threads(n),
        }
    }

    pub(crate) fn map_chains<T, F>(self, n_chains: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        match self {
            Parallelism::Sequential => (0..n_chains).map(&f).collect(),
            Parallelism::Auto => (0..n_chains).into_par_iter().map(&f).collect(),
            Parallelism::Threads(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
                pool.install(|| (0..n_chains).into_par_iter().map(&f).collect())
            }
        }
    }
}

/// One Gibbs state. Matrices are `T × P`, rows indexed by `t - 1`.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub beta: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub nu: DMatrix<f64>,
    pub variances: Variances,
    pub rng: ChaCha20Rng,
}

impl ChainState {
    pub fn n_times(&self) -> usize {
        self.beta.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.beta.ncols()
    }

    /// Flattens the recorded parameters in [`ParamLayout::params`] order.
    pub(crate) fn record(&self, layout: &ParamLayout, out: &mut Vec<f64>) {
        let mut path = |m: &DMatrix<f64>| {
            for t in 0..m.nrows() {
                out.extend(m.row(t).iter());
            }
        };
        path(&self.beta);
        path(&self.alpha);
        if layout.include_trend {
            path(&self.nu);
        }
        if layout.has_var_y {
            out.push(self.variances.var_y);
        }
        out.extend(&self.variances.var_beta);
        out.extend(&self.variances.var_alpha);
        if layout.include_trend {
            out.extend(&self.variances.var_eta);
        }
    }
}

pub fn layout_for(dataset: &Dataset, config: &ModelConfig) -> ParamLayout {
    ParamLayout {
        n_times: dataset.n_times(),
        n_predictors: dataset.n_predictors(),
        include_trend: config.include_trend,
        has_var_y: config.outcome_kind == OutcomeKind::Continuous,
        per_predictor_variances: config.per_predictor_variances,
    }
}

fn variance_groups(dataset: &Dataset, config: &ModelConfig) -> usize {
    if config.per_predictor_variances {
        dataset.n_predictors()
    } else {
        1
    }
}

/// Pooled least-squares fit over all rows, ridge-regularized by 1e-6 when
/// the cross-product matrix is singular. Returns the coefficients and the
/// residual variance.
pub fn pooled_least_squares(blocks: &[TimeBlock], dataset: &Dataset) -> (DVector<f64>, f64) {
    let p = dataset.n_predictors();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for b in blocks {
        xtx += &b.xtx;
        xty += &b.xty;
    }
    let coef = match xtx.clone().cholesky() {
        Some(c) => c.solve(&xty),
        None => {
            let ridge = xtx + DMatrix::identity(p, p) * 1e-6;
            ridge
                .cholesky()
                .map(|c| c.solve(&xty))
                .unwrap_or_else(|| DVector::zeros(p))
        }
    };
    let sse: f64 = dataset
        .observations()
        .iter()
        .map(|o| {
            let fit: f64 = o.x.iter().zip(coef.iter()).map(|(x, b)| x * b).sum();
            (o.y - fit).powi(2)
        })
        .sum();
    let dof = dataset.len().saturating_sub(p).max(1);
    let var = sse / dof as f64;
    (coef, if var > 0.0 && var.is_finite() { var } else { 1.0 })
}

/// Precomputed per-time statistics plus the configuration of one fit.
pub struct GibbsSampler<'a> {
    dataset: &'a Dataset,
    config: &'a ModelConfig,
    blocks: Vec<TimeBlock>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(dataset: &'a Dataset, config: &'a ModelConfig) -> Result<Self> {
        config.validate()?;
        let p = dataset.n_predictors();
        let blocks = (1..=dataset.n_times())
            .map(|t| TimeBlock::from_rows(dataset.at(t), p))
            .collect();
        Ok(Self {
            dataset,
            config,
            blocks,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    pub fn blocks(&self) -> &[TimeBlock] {
        &self.blocks
    }

    /// Starting state: pooled least squares at every t (zeros for binary
    /// outcomes), `α = β`, `ν = 0`. For continuous outcomes the observation
    /// and fluctuation variances both start at the pooled residual variance,
    /// so the first coefficient draw follows the per-time data instead of
    /// the flat start; the remaining variances start at 1.
    pub fn initial_state(&self, seed: u64) -> ChainState {
        let (t_n, p_n) = (self.dataset.n_times(), self.dataset.n_predictors());
        let (coef, var_y) = match self.config.outcome_kind {
            OutcomeKind::Continuous => pooled_least_squares(&self.blocks, self.dataset),
            OutcomeKind::Binary => (DVector::zeros(p_n), 1.0),
        };
        let beta = DMatrix::from_fn(t_n, p_n, |_, p| coef[p]);
        let mut variances = Variances::uniform(variance_groups(self.dataset, self.config), var_y, 1.0);
        if self.config.outcome_kind == OutcomeKind::Continuous {
            variances.var_beta.fill(var_y);
        }
        ChainState {
            alpha: beta.clone(),
            beta,
            nu: DMatrix::zeros(t_n, p_n),
            variances,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn beta_conditional(&self, state: &ChainState, t: usize) -> Result<BetaConditional> {
        let alpha_t: Vec<f64> = state.alpha.row(t - 1).iter().copied().collect();
        let v = &state.variances;
        BetaConditional::new(&self.blocks[t - 1], &alpha_t, v.var_y, |p| v.beta(p))
    }

    pub fn ffbs_model(&self, variances: &Variances, p: usize) -> FfbsModel {
        FfbsModel {
            obs_var: variances.beta(p),
            level_var: variances.alpha(p),
            trend_var: variances.eta(p),
            include_trend: self.config.include_trend,
            init_var: self.config.init_state_sd.powi(2),
        }
    }

    fn sample_beta(&self, state: &mut ChainState) -> Result<()> {
        for t in 1..=self.dataset.n_times() {
            let draw = self.beta_conditional(state, t)?.sample(&mut state.rng);
            state.beta.row_mut(t - 1).copy_from(&draw.transpose());
        }
        Ok(())
    }

    pub(crate) fn sample_states(&self, state: &mut ChainState) -> Result<()> {
        collapsed::update_state_variances(self, state, self.config.state_variance_steps)?;
        for p in 0..self.dataset.n_predictors() {
            let model = self.ffbs_model(&state.variances, p);
            let column: Vec<f64> = state.beta.column(p).iter().copied().collect();
            let (alpha, nu) = ffbs_states(&column, &model, &mut state.rng)?;
            state.alpha.set_column(p, &DVector::from_vec(alpha));
            state.nu.set_column(p, &DVector::from_vec(nu));
        }
        Ok(())
    }

    pub fn variance_posterior(&self, state: &ChainState) -> VariancePosterior {
        variance_posterior(&state.beta, &state.alpha, &state.nu, self.dataset, self.config)
    }

    pub(crate) fn sample_variance_block(&self, state: &mut ChainState) -> Result<()> {
        let post = self.variance_posterior(state);
        sample_variances(&post, &mut state.variances, &mut state.rng)
    }

    /// One full sweep of the continuous-outcome sampler.
    pub fn sweep(&self, state: &mut ChainState) -> Result<()> {
        self.sample_beta(state)?;
        self.sample_states(state)?;
        self.sample_variance_block(state)
    }

    /// Runs warmup then kept sweeps for one chain.
    pub fn run_chain(&self, chain_index: usize) -> Result<ChainDraws> {
        let seed = chain_seed(self.config.master_seed, chain_index);
        let mut state = self.initial_state(seed);
        let layout = layout_for(self.dataset, self.config);
        let n_warmup = self.config.n_warmup;
        let mut logistic = match self.config.outcome_kind {
            OutcomeKind::Binary => Some(LogisticBlock::new(
                self.dataset.n_times(),
                self.dataset.n_predictors(),
                &self.config.metropolis,
                n_warmup,
            )),
            OutcomeKind::Continuous => None,
        };
        let total = n_warmup + self.config.n_keep;
        let mut values = Vec::with_capacity(self.config.n_keep * layout.n_params());
        for sweep in 0..total {
            let step = match logistic.as_mut() {
                None => self.sweep(&mut state),
                Some(block) => block.sweep(self, &mut state, sweep),
            };
            step.map_err(|e| Error::Chain {
                chain: chain_index,
                sweep,
                source: Box::new(e),
            })?;
            if sweep >= n_warmup {
                state.record(&layout, &mut values);
            }
        }
        let accept_rates = logistic.map(|b| b.kept_accept_rates());
        Ok(ChainDraws::new(values, accept_rates))
    }

    pub fn run(&self, parallelism: Parallelism) -> Result<DrawStore> {
        let chains = parallelism.map_chains(self.config.n_chains, |c| self.run_chain(c))?;
        DrawStore::new(layout_for(self.dataset, self.config), self.config.n_keep, chains)
    }
}

/// Applies one sweep to `state` in place.
pub fn gibbs_sweep(state: &mut ChainState, dataset: &Dataset, config: &ModelConfig) -> Result<()> {
    GibbsSampler::new(dataset, config)?.sweep(state)
}

fn require_kind(dataset: &Dataset, config: &ModelConfig, kind: OutcomeKind) -> Result<()> {
    if dataset.outcome_kind() != kind || config.outcome_kind != kind {
        return Err(Error::Config(format!(
            "{kind} sampler needs a {kind} dataset and configuration (dataset: {}, config: {})",
            dataset.outcome_kind(),
            config.outcome_kind
        )));
    }
    Ok(())
}

/// Draws of chain `chain_index` for a continuous-outcome fit.
pub fn run_chain(dataset: &Dataset, config: &ModelConfig, chain_index: usize) -> Result<ChainDraws> {
    require_kind(dataset, config, OutcomeKind::Continuous)?;
    GibbsSampler::new(dataset, config)?.run_chain(chain_index)
}

/// Runs every chain of a continuous-outcome fit.
pub fn run(dataset: &Dataset, config: &ModelConfig, parallelism: Parallelism) -> Result<DrawStore> {
    require_kind(dataset, config, OutcomeKind::Continuous)?;
    GibbsSampler::new(dataset, config)?.run(parallelism)
}

/// Runs every chain of a binary-outcome fit with the logistic coefficient
/// block.
pub fn run_binary(
    dataset: &Dataset,
    config: &ModelConfig,
    parallelism: Parallelism,
) -> Result<DrawStore> {
    require_kind(dataset, config, OutcomeKind::Binary)?;
    GibbsSampler::new(dataset, config)?.run(parallelism)
}
