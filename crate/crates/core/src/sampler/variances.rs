//! Conjugate inverse-gamma updates for the four variance families.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::model::{Dataset, InvGammaPrior, ModelConfig, OutcomeKind};

/// Posterior `IG(shape, rate)` parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InvGamma {
    fn update(prior: &InvGammaPrior, count: f64, sum_sq: f64) -> Self {
        Self {
            shape: prior.shape + count / 2.0,
            rate: prior.rate + sum_sq / 2.0,
        }
    }

    /// `1 / Gamma(shape, scale = 1 / rate)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let g = Gamma::new(self.shape, 1.0 / self.rate)
            .map_err(|e| Error::Numerical(format!("inverse-gamma {self:?}: {e}")))?;
        let v = 1.0 / g.sample(rng);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("inverse-gamma {self:?} produced {v}")))
        }
    }
}

/// Current variances. Each fluctuation/level/trend vector has one entry when
/// shared across predictors, otherwise one per predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct Variances {
    pub var_y: f64,
    pub var_beta: Vec<f64>,
    pub var_alpha: Vec<f64>,
    pub var_eta: Vec<f64>,
}

fn group(v: &[f64], p: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[p]
    }
}

impl Variances {
    pub fn uniform(groups: usize, var_y: f64, rest: f64) -> Self {
        Self {
            var_y,
            var_beta: vec![rest; groups],
            var_alpha: vec![rest; groups],
            var_eta: vec![rest; groups],
        }
    }

    pub fn beta(&self, p: usize) -> f64 {
        group(&self.var_beta, p)
    }

    pub fn alpha(&self, p: usize) -> f64 {
        group(&self.var_alpha, p)
    }

    pub fn eta(&self, p: usize) -> f64 {
        group(&self.var_eta, p)
    }
}

/// Full-conditional parameters of every sampled variance. `var_y` is absent
/// for binary outcomes, `var_eta` empty without trend.
#[derive(Clone, Debug, PartialEq)]
pub struct VariancePosterior {
    pub var_y: Option<InvGamma>,
    pub var_beta: Vec<InvGamma>,
    pub var_alpha: Vec<InvGamma>,
    pub var_eta: Vec<InvGamma>,
}

/// Sums of squared residuals of the fluctuation, level and trend equations,
/// per predictor.
fn path_sums(beta: &DMatrix<f64>, alpha: &DMatrix<f64>, nu: &DMatrix<f64>) -> [Vec<f64>; 3] {
    let (n_times, n_pred) = beta.shape();
    let mut fl = vec![0.0; n_pred];
    let mut lv = vec![0.0; n_pred];
    let mut tr = vec![0.0; n_pred];
    for p in 0..n_pred {
        for t in 0..n_times {
            fl[p] += (beta[(t, p)] - alpha[(t, p)]).powi(2);
            if t + 1 < n_times {
                lv[p] += (alpha[(t + 1, p)] - alpha[(t, p)] - nu[(t, p)]).powi(2);
                tr[p] += (nu[(t + 1, p)] - nu[(t, p)]).powi(2);
            }
        }
    }
    [fl, lv, tr]
}

/// Residual sum of squares of the observation equation.
pub fn observation_sse(beta: &DMatrix<f64>, dataset: &Dataset) -> f64 {
    dataset
        .observations()
        .iter()
        .map(|o| {
            let fit: f64 = o.x.iter().enumerate().map(|(p, x)| x * beta[(o.t - 1, p)]).sum();
            (o.y - fit).powi(2)
        })
        .sum()
}

pub fn variance_posterior(
    beta: &DMatrix<f64>,
    alpha: &DMatrix<f64>,
    nu: &DMatrix<f64>,
    dataset: &Dataset,
    config: &ModelConfig,
) -> VariancePosterior {
    let pri = &config.variance_priors;
    let (n_times, n_pred) = beta.shape();
    let [fl, lv, tr] = path_sums(beta, alpha, nu);
    let pool = |sums: &[f64], prior: &InvGammaPrior, per_path: f64| -> Vec<InvGamma> {
        if config.per_predictor_variances {
            sums.iter().map(|s| InvGamma::update(prior, per_path, *s)).collect()
        } else {
            vec![InvGamma::update(prior, per_path * n_pred as f64, sums.iter().sum())]
        }
    };
    let steps = n_times.saturating_sub(1) as f64;
    VariancePosterior {
        var_y: (config.outcome_kind == OutcomeKind::Continuous).then(|| {
            InvGamma::update(&pri.var_y, dataset.len() as f64, observation_sse(beta, dataset))
        }),
        var_beta: pool(&fl, &pri.var_beta, n_times as f64),
        var_alpha: pool(&lv, &pri.var_alpha, steps),
        var_eta: if config.include_trend {
            pool(&tr, &pri.var_eta, steps)
        } else {
            Vec::new()
        },
    }
}

/// Draws new variances into `current`. Entries with no posterior (the
/// observation variance for binary outcomes, trend variances without a
/// trend) keep their placeholder values.
pub fn sample_variances<R: Rng + ?Sized>(
    posterior: &VariancePosterior,
    current: &mut Variances,
    rng: &mut R,
) -> Result<()> {
    if let Some(ig) = &posterior.var_y {
        current.var_y = ig.sample(rng)?;
    }
    let draw = |igs: &[InvGamma], into: &mut Vec<f64>, rng: &mut R| -> Result<()> {
        if !igs.is_empty() {
            *into = igs.iter().map(|ig| ig.sample(rng)).collect::<Result<_>>()?;
        }
        Ok(())
    };
    draw(&posterior.var_beta, &mut current.var_beta, rng)?;
    draw(&posterior.var_alpha, &mut current.var_alpha, rng)?;
    draw(&posterior.var_eta, &mut current.var_eta, rng)?;
    Ok(())
}
