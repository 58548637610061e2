//! Forward filtering, backward sampling for one predictor's smooth state.
//!
//! The coefficient path β_{·p} acts as the observed series of a local-level
//! model (state `α`) or a local-linear-trend model (state `(α, ν)`):
//!
//! ```text
//! β_t     = α_t + N(0, σ²_β)
//! α_{t+1} = α_t + ν_t + N(0, σ²_α)
//! ν_{t+1} = ν_t + N(0, σ²_η)          (trend only)
//! ```
//!
//! with `(α_1, ν_1) ~ N(0, init_var · I)`. Covariance-form recursions,
//! symmetrized after every update.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FfbsModel {
    pub obs_var: f64,
    pub level_var: f64,
    pub trend_var: f64,
    pub include_trend: bool,
    pub init_var: f64,
}

impl FfbsModel {
    fn check(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.obs_var) || !pos(self.level_var) || !pos(self.init_var) {
            return Err(Error::Numerical(format!("invalid state-model variances {self:?}")));
        }
        if self.include_trend && !pos(self.trend_var) {
            return Err(Error::Numerical(format!("invalid trend variance {}", self.trend_var)));
        }
        Ok(())
    }
}

/// Predicted and filtered state moments for every time point.
#[derive(Clone, Debug)]
pub struct FilterMoments {
    pub pred_mean: Vec<DVector<f64>>,
    pub pred_cov: Vec<DMatrix<f64>>,
    pub filt_mean: Vec<DVector<f64>>,
    pub filt_cov: Vec<DMatrix<f64>>,
    /// Log density of the whole coefficient path with the states integrated
    /// out, from the one-step prediction errors.
    pub log_likelihood: f64,
}

struct Moments<const D: usize> {
    pred_mean: Vec<SVector<f64, D>>,
    pred_cov: Vec<SMatrix<f64, D, D>>,
    filt_mean: Vec<SVector<f64, D>>,
    filt_cov: Vec<SMatrix<f64, D, D>>,
    log_likelihood: f64,
}

fn transition<const D: usize>() -> SMatrix<f64, D, D> {
    // level picks up the slope: [[1, 1], [0, 1]] or [[1]]
    let mut g = SMatrix::<f64, D, D>::identity();
    if D == 2 {
        g[(0, 1)] = 1.0;
    }
    g
}

fn process_cov<const D: usize>(model: &FfbsModel) -> SMatrix<f64, D, D> {
    let mut w = SMatrix::<f64, D, D>::zeros();
    w[(0, 0)] = model.level_var;
    if D == 2 {
        w[(1, 1)] = model.trend_var;
    }
    w
}

fn symmetrize<const D: usize>(m: SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

fn filter<const D: usize>(y: &[f64], model: &FfbsModel) -> Result<Moments<D>> {
    let g = transition::<D>();
    let w = process_cov::<D>(model);
    let n = y.len();
    let mut mo = Moments {
        pred_mean: Vec::with_capacity(n),
        pred_cov: Vec::with_capacity(n),
        filt_mean: Vec::with_capacity(n),
        filt_cov: Vec::with_capacity(n),
        log_likelihood: 0.0,
    };
    for (t, &obs) in y.iter().enumerate() {
        let (a, r) = if t == 0 {
            (
                SVector::<f64, D>::zeros(),
                SMatrix::<f64, D, D>::identity() * model.init_var,
            )
        } else {
            let m = &mo.filt_mean[t - 1];
            let c = &mo.filt_cov[t - 1];
            (g * m, symmetrize(g * c * g.transpose() + w))
        };
        let q = r[(0, 0)] + model.obs_var;
        let gain: SVector<f64, D> = r.column(0) / q;
        let err = obs - a[0];
        mo.log_likelihood -= 0.5 * ((2.0 * std::f64::consts::PI * q).ln() + err * err / q);
        let m = a + gain * err;
        let c = symmetrize(r - gain * gain.transpose() * q);
        if !q.is_finite() || m.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite filter moments at t={}", t + 1)));
        }
        mo.pred_mean.push(a);
        mo.pred_cov.push(r);
        mo.filt_mean.push(m);
        mo.filt_cov.push(c);
    }
    Ok(mo)
}

/// Draws from `N(mean, cov)` for a PSD `cov`; falls back to a clamped
/// eigendecomposition when the Cholesky factorization fails on a
/// numerically singular matrix.
fn sample_gaussian<const D: usize, R: Rng + ?Sized>(
    mean: &SVector<f64, D>,
    cov: SMatrix<f64, D, D>,
    rng: &mut R,
) -> SVector<f64, D> {
    let z = SVector::<f64, D>::from_fn(|_, _| rng.sample(StandardNormal));
    if let Some(chol) = cov.cholesky() {
        return mean + chol.l() * z;
    }
    let eig = nalgebra::DMatrix::from_column_slice(D, D, cov.as_slice()).symmetric_eigen();
    mean + SVector::<f64, D>::from_fn(|i, _| {
        (0..D)
            .map(|k| eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt() * z[k])
            .sum()
    })
}

fn backward<const D: usize, R: Rng + ?Sized>(
    mo: &Moments<D>,
    rng: &mut R,
) -> Result<Vec<SVector<f64, D>>> {
    let n = mo.filt_mean.len();
    let g = transition::<D>();
    let mut out = vec![SVector::<f64, D>::zeros(); n];
    out[n - 1] = sample_gaussian(&mo.filt_mean[n - 1], mo.filt_cov[n - 1], rng);
    for t in (0..n - 1).rev() {
        let c = &mo.filt_cov[t];
        let r_next = &mo.pred_cov[t + 1];
        let r_inv = r_next.try_inverse().ok_or_else(|| {
            Error::Numerical(format!("singular predicted covariance at t={}", t + 2))
        })?;
        let j = c * g.transpose() * r_inv;
        let mean = mo.filt_mean[t] + j * (out[t + 1] - mo.pred_mean[t + 1]);
        let cov = symmetrize(c - j * r_next * j.transpose());
        out[t] = sample_gaussian(&mean, cov, rng);
        if out[t].iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state draw at t={}", t + 1)));
        }
    }
    Ok(out)
}

/// Runs the Kalman filter over `beta_column` and returns every predicted
/// and filtered moment.
pub fn kalman_filter(beta_column: &[f64], model: &FfbsModel) -> Result<FilterMoments> {
    model.check()?;
    fn convert<const D: usize>(mo: Moments<D>) -> FilterMoments {
        let v = |xs: Vec<SVector<f64, D>>| {
            xs.into_iter()
                .map(|x| DVector::from_column_slice(x.as_slice()))
                .collect()
        };
        let m = |xs: Vec<SMatrix<f64, D, D>>| {
            xs.into_iter()
                .map(|x| DMatrix::from_column_slice(D, D, x.as_slice()))
                .collect()
        };
        FilterMoments {
            pred_mean: v(mo.pred_mean),
            pred_cov: m(mo.pred_cov),
            filt_mean: v(mo.filt_mean),
            filt_cov: m(mo.filt_cov),
            log_likelihood: mo.log_likelihood,
        }
    }
    if model.include_trend {
        Ok(convert(filter::<2>(beta_column, model)?))
    } else {
        Ok(convert(filter::<1>(beta_column, model)?))
    }
}

/// Log density of `beta_column` under the state model with the states
/// integrated out.
pub fn log_likelihood(beta_column: &[f64], model: &FfbsModel) -> Result<f64> {
    model.check()?;
    let ll = if model.include_trend {
        filter::<2>(beta_column, model)?.log_likelihood
    } else {
        filter::<1>(beta_column, model)?.log_likelihood
    };
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(Error::Numerical("non-finite state-model likelihood".into()))
    }
}

/// One joint draw of the level path and (if enabled) the slope path given
/// the coefficient path. Without trend the slope path is all zeros.
pub fn ffbs_states<R: Rng + ?Sized>(
    beta_column: &[f64],
    model: &FfbsModel,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check()?;
    if beta_column.is_empty() {
        return Err(Error::Input("empty coefficient path".into()));
    }
    if model.include_trend {
        let states = backward(&filter::<2>(beta_column, model)?, rng)?;
        Ok(states.iter().map(|s| (s[0], s[1])).unzip())
    } else {
        let states = backward(&filter::<1>(beta_column, model)?, rng)?;
        Ok((states.iter().map(|s| s[0]).collect(), vec![0.0; beta_column.len()]))
    }
}
