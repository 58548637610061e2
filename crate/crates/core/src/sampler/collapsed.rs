//! Metropolis updates of the state-model variances (σ²_β, σ²_α, σ²_η) with
//! the level and slope paths integrated out by the Kalman filter.
//!
//! Conditioning these variances on the sampled state paths alone traps the
//! chain: a nearly flat level path forces a tiny σ²_α, which keeps the next
//! path flat. Targeting `p(σ² | β)` instead lets the chain move between such
//! regions. The state paths are redrawn by FFBS right after this step, so
//! the sweep remains a valid partially collapsed Gibbs sampler.
//!
//! Each update is a random walk on `log σ²`, cycling through the step sizes
//! in [`STEP_SCALES`].

use rand::Rng;
use rand_distr::StandardNormal;

use super::ffbs::{log_likelihood, FfbsModel};
use super::{ChainState, GibbsSampler};
use crate::error::Result;
use crate::model::InvGammaPrior;

pub const STEP_SCALES: [f64; 3] = [0.3, 1.0, 3.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Coord {
    Beta,
    Alpha,
    Eta,
}

fn log_prior(prior: &InvGammaPrior, v: f64) -> f64 {
    -(prior.shape + 1.0) * v.ln() - prior.rate / v
}

/// Variances of one group: the predictors `members` share them.
struct Group<'s> {
    columns: Vec<Vec<f64>>,
    base: FfbsModel,
    sampler: &'s GibbsSampler<'s>,
}

impl Group<'_> {
    fn log_target(&self, model: &FfbsModel) -> Result<f64> {
        let priors = &self.sampler.config().variance_priors;
        let mut lp = log_prior(&priors.var_beta, model.obs_var) + model.obs_var.ln();
        lp += log_prior(&priors.var_alpha, model.level_var) + model.level_var.ln();
        if model.include_trend {
            lp += log_prior(&priors.var_eta, model.trend_var) + model.trend_var.ln();
        }
        for col in &self.columns {
            lp += log_likelihood(col, model)?;
        }
        Ok(lp)
    }
}

fn with(model: FfbsModel, coord: Coord, v: f64) -> FfbsModel {
    match coord {
        Coord::Beta => FfbsModel { obs_var: v, ..model },
        Coord::Alpha => FfbsModel { level_var: v, ..model },
        Coord::Eta => FfbsModel { trend_var: v, ..model },
    }
}

fn get(model: &FfbsModel, coord: Coord) -> f64 {
    match coord {
        Coord::Beta => model.obs_var,
        Coord::Alpha => model.level_var,
        Coord::Eta => model.trend_var,
    }
}

/// Runs `steps` rounds of single-coordinate updates for every variance
/// group. Returns the number of accepted proposals.
pub(crate) fn update_state_variances(
    sampler: &GibbsSampler<'_>,
    state: &mut ChainState,
    steps: usize,
) -> Result<usize> {
    if steps == 0 {
        return Ok(0);
    }
    let n_pred = state.n_predictors();
    let groups = state.variances.var_beta.len();
    let trend = sampler.config().include_trend;
    let coords: &[Coord] = if trend {
        &[Coord::Beta, Coord::Alpha, Coord::Eta]
    } else {
        &[Coord::Beta, Coord::Alpha]
    };
    let mut accepted = 0;
    for g in 0..groups {
        let members: Vec<usize> = if groups == 1 { (0..n_pred).collect() } else { vec![g] };
        let group = Group {
            columns: members
                .iter()
                .map(|&p| state.beta.column(p).iter().copied().collect())
                .collect(),
            base: sampler.ffbs_model(&state.variances, members[0]),
            sampler,
        };
        let mut model = group.base;
        let mut current = group.log_target(&model)?;
        for step in 0..steps {
            let scale = STEP_SCALES[step % STEP_SCALES.len()];
            for &coord in coords {
                let z: f64 = state.rng.sample(StandardNormal);
                let proposal = get(&model, coord) * (scale * z).exp();
                let u: f64 = state.rng.random();
                if !(proposal > 0.0 && proposal.is_finite()) {
                    continue;
                }
                let candidate = with(model, coord, proposal);
                // a proposal whose filter breaks down is rejected
                let Ok(lp) = group.log_target(&candidate) else {
                    continue;
                };
                if u.ln() < lp - current {
                    model = candidate;
                    current = lp;
                    accepted += 1;
                }
            }
        }
        state.variances.var_beta[g] = model.obs_var;
        state.variances.var_alpha[g] = model.level_var;
        if trend {
            state.variances.var_eta[g] = model.trend_var;
        }
    }
    Ok(accepted)
}
