//! Posterior-predictive forecasting over a held-out horizon and its
//! evaluation against observed outcomes and simulation truth.
//!
//! Every posterior draw is propagated forward with its own variances:
//!
//! ```text
//! α_{T+h} = α_{T+h-1} + ν_{T+h-1} + N(0, σ²_α)
//! ν_{T+h} = ν_{T+h-1} + N(0, σ²_η)          (trend only)
//! β_{T+h} = α_{T+h} + N(0, σ²_β)
//! ```
//!
//! Draw `d` uses a ChaCha20 stream seeded with `derive_seed(seed, d)`, and
//! test row `i` one seeded with `derive_seed(seed ^ ROW_STREAM, i)`, so the
//! output does not depend on thread scheduling.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{equal_tailed, find_row, SummaryRow};
use crate::draws::{DrawStore, ParamId};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_text};
use crate::model::{Dataset, OutcomeKind};
use crate::sampler::derive_seed;
use crate::io::TruthRow;
use crate::simulate::{logistic, SimTruth};

const ROW_STREAM: u64 = 0x5EED_0F_7E57_0000;

/// Forward-propagated state draws, `[draw][h][p]` flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct StateForecast {
    pub t_train: usize,
    pub horizon: usize,
    pub n_predictors: usize,
    pub n_draws: usize,
    pub include_trend: bool,
    alpha: Vec<f64>,
    nu: Vec<f64>,
    beta: Vec<f64>,
    /// Observation variance per draw (1 for binary fits).
    pub var_y: Vec<f64>,
    // α_T and ν_T per draw and predictor, for conditional means
    origin: Vec<(f64, f64)>,
}

impl StateForecast {
    fn idx(&self, d: usize, h: usize, p: usize) -> usize {
        (d * self.horizon + (h - 1)) * self.n_predictors + p
    }

    /// Draws of α at `t_train + h`, one per posterior draw.
    pub fn alpha_at(&self, h: usize, p: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.alpha[self.idx(d, h, p)]).collect()
    }

    pub fn nu_at(&self, h: usize, p: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.nu[self.idx(d, h, p)]).collect()
    }

    pub fn beta_at(&self, h: usize, p: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.beta[self.idx(d, h, p)]).collect()
    }

    pub fn beta_draw(&self, d: usize, h: usize) -> &[f64] {
        let i = self.idx(d, h, 0);
        &self.beta[i..i + self.n_predictors]
    }

    /// Posterior mean of `E[α_{T+h} | draw] = α_T + h·ν_T`, which averages
    /// out the propagation noise.
    pub fn expected_level(&self, h: usize, p: usize) -> f64 {
        (0..self.n_draws)
            .map(|d| {
                let (a, n) = self.origin[d * self.n_predictors + p];
                a + h as f64 * n
            })
            .sum::<f64>()
            / self.n_draws as f64
    }
}

fn param(store: &DrawStore, id: ParamId) -> Result<usize> {
    store
        .index_of(id)
        .ok_or_else(|| Error::Forecast(format!("draw store lacks {id}")))
}

/// Propagates every posterior draw `horizon` steps past the last fitted
/// time point.
pub fn forecast_states(store: &DrawStore, horizon: usize, seed: u64) -> Result<StateForecast> {
    if horizon == 0 {
        return Err(Error::Forecast("horizon must be >= 1".into()));
    }
    if store.n_draws() == 0 {
        return Err(Error::Forecast("empty draw store".into()));
    }
    let layout = *store.layout();
    let (t_last, n_pred) = (layout.n_times, layout.n_predictors);
    let trend = layout.include_trend;
    let var_idx = |mk: fn(Option<usize>) -> ParamId, p: usize| {
        param(store, mk(layout.per_predictor_variances.then_some(p)))
    };
    let mut cols = Vec::with_capacity(n_pred);
    for p in 0..n_pred {
        cols.push((
            param(store, ParamId::Alpha { t: t_last, p })?,
            if trend { Some(param(store, ParamId::Nu { t: t_last, p })?) } else { None },
            var_idx(ParamId::VarBeta, p)?,
            var_idx(ParamId::VarAlpha, p)?,
            if trend { Some(var_idx(ParamId::VarEta, p)?) } else { None },
        ));
    }
    let var_y_idx = store.index_of(ParamId::VarY);
    let draws: Vec<(usize, usize)> = store.draw_indices().collect();
    let per_draw: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, f64, Vec<(f64, f64)>)> = draws
        .par_iter()
        .enumerate()
        .map(|(d, &(c, i))| {
            let row = store.iteration(c, i);
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, d as u64));
            let mut alpha = vec![0.0; horizon * n_pred];
            let mut nu = vec![0.0; horizon * n_pred];
            let mut beta = vec![0.0; horizon * n_pred];
            let mut origin = Vec::with_capacity(n_pred);
            for (p, &(ai, ni, vb, va, ve)) in cols.iter().enumerate() {
                let mut a = row[ai];
                let mut n = ni.map_or(0.0, |k| row[k]);
                origin.push((a, n));
                let (sb, sa) = (row[vb].sqrt(), row[va].sqrt());
                let se = ve.map_or(0.0, |k| row[k].sqrt());
                for h in 0..horizon {
                    a += n + sa * rng.sample::<f64, _>(StandardNormal);
                    if trend {
                        n += se * rng.sample::<f64, _>(StandardNormal);
                    }
                    let k = h * n_pred + p;
                    alpha[k] = a;
                    nu[k] = n;
                    beta[k] = a + sb * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let vy = var_y_idx.map_or(1.0, |k| row[k]);
            (alpha, nu, beta, vy, origin)
        })
        .collect();
    let mut out = StateForecast {
        t_train: t_last,
        horizon,
        n_predictors: n_pred,
        n_draws: draws.len(),
        include_trend: trend,
        alpha: Vec::with_capacity(draws.len() * horizon * n_pred),
        nu: Vec::with_capacity(draws.len() * horizon * n_pred),
        beta: Vec::with_capacity(draws.len() * horizon * n_pred),
        var_y: Vec::with_capacity(draws.len()),
        origin: Vec::with_capacity(draws.len() * n_pred),
    };
    for (a, n, b, vy, o) in per_draw {
        out.alpha.extend(a);
        out.nu.extend(n);
        out.beta.extend(b);
        out.var_y.push(vy);
        out.origin.extend(o);
    }
    Ok(out)
}

/// Predictive summary of one test row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub t: usize,
    pub id: String,
    pub y_true: f64,
    pub mean: f64,
    pub sd: f64,
    pub q_low: f64,
    pub q_high: f64,
}

/// Summary of a forecast state at one future time point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub t: usize,
    pub p: usize,
    pub alpha_mean: f64,
    pub alpha_q: (f64, f64),
    pub alpha_expected: f64,
    pub nu_mean: f64,
    pub beta_mean: f64,
    pub beta_q: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub interval_mass: f64,
    pub t_train: usize,
    pub horizon: usize,
    pub predictions: Vec<Prediction>,
    /// Ordered by `t`, then `p`.
    pub states: Vec<StateSummary>,
}

impl ForecastResult {
    pub fn state(&self, t: usize, p: usize) -> Option<&StateSummary> {
        self.states.iter().find(|s| s.t == t && s.p == p)
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

pub fn summarize_states(forecast: &StateForecast, interval_mass: f64) -> Vec<StateSummary> {
    let mut out = Vec::with_capacity(forecast.horizon * forecast.n_predictors);
    for h in 1..=forecast.horizon {
        for p in 0..forecast.n_predictors {
            let a = forecast.alpha_at(h, p);
            let b = forecast.beta_at(h, p);
            let n = forecast.nu_at(h, p);
            out.push(StateSummary {
                t: forecast.t_train + h,
                p,
                alpha_mean: mean_sd(&a).0,
                alpha_q: equal_tailed(&a, interval_mass),
                alpha_expected: forecast.expected_level(h, p),
                nu_mean: mean_sd(&n).0,
                beta_mean: mean_sd(&b).0,
                beta_q: equal_tailed(&b, interval_mass),
            });
        }
    }
    out
}

/// Posterior-predictive draws for every test row. Continuous outcomes add
/// observation noise `N(0, σ²_y)` per draw; binary outcomes are summarized
/// on the probability scale, `logistic(xᵀβ)`.
pub fn predict_outcomes(
    forecast: &StateForecast,
    test: &Dataset,
    outcome_kind: OutcomeKind,
    interval_mass: f64,
    seed: u64,
) -> Result<ForecastResult> {
    let last = forecast.t_train + forecast.horizon;
    if let Some(o) = test
        .observations()
        .iter()
        .find(|o| o.t <= forecast.t_train || o.t > last)
    {
        return Err(Error::Forecast(format!(
            "test row {} at t={} is outside the forecast window {}..={last}",
            o.id,
            o.t,
            forecast.t_train + 1
        )));
    }
    if test.n_predictors() != forecast.n_predictors {
        return Err(Error::Forecast(format!(
            "test rows have {} predictors, fit has {}",
            test.n_predictors(),
            forecast.n_predictors
        )));
    }
    let predictions = test
        .observations()
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed ^ ROW_STREAM, i as u64));
            let h = o.t - forecast.t_train;
            let draws: Vec<f64> = (0..forecast.n_draws)
                .map(|d| {
                    let mu: f64 = o.x.iter().zip(forecast.beta_draw(d, h)).map(|(x, b)| x * b).sum();
                    match outcome_kind {
                        OutcomeKind::Continuous => {
                            mu + forecast.var_y[d].sqrt() * rng.sample::<f64, _>(StandardNormal)
                        }
                        OutcomeKind::Binary => logistic(mu),
                    }
                })
                .collect();
            let (mean, sd) = mean_sd(&draws);
            let (q_low, q_high) = equal_tailed(&draws, interval_mass);
            Prediction {
                t: o.t,
                id: o.id.clone(),
                y_true: o.y,
                mean,
                sd,
                q_low,
                q_high,
            }
        })
        .collect();
    Ok(ForecastResult {
        interval_mass,
        t_train: forecast.t_train,
        horizon: forecast.horizon,
        predictions,
        states: summarize_states(forecast, interval_mass),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefCoverage {
    pub p: usize,
    /// Fraction of fitted time points whose interval contains the truth.
    pub fraction: f64,
    pub n_times: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonWidth {
    pub h: usize,
    /// Interval width of the forecast level of predictor 0.
    pub level_width: f64,
    /// Mean predictive interval width of the test rows at this horizon.
    pub outcome_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_test: usize,
    pub interval_mass: f64,
    pub coverage: f64,
    pub rmse: f64,
    /// Mean of predicted minus observed; negative when outcomes come in
    /// above the forecasts.
    pub mean_signed_error: f64,
    pub mean_predictive_sd: f64,
    pub mean_interval_width: f64,
    pub widths: Vec<HorizonWidth>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coef_coverage: Vec<CoefCoverage>,
    /// Correlation of the posterior-mean level of predictor 0 with the
    /// driving series over the fitted time points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_correlation: Option<f64>,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Scores a forecast against the test rows and, for simulated data, the
/// generator truth. `fit_summary` supplies the fitted-period intervals used
/// for coefficient coverage and level tracking.
pub fn evaluate(
    result: &ForecastResult,
    test: &Dataset,
    truth: Option<&Truth>,
    fit_summary: Option<&[SummaryRow]>,
) -> Result<Metrics> {
    let rows = test.observations();
    if rows.len() != result.predictions.len()
        || rows
            .iter()
            .zip(&result.predictions)
            .any(|(o, p)| o.t != p.t || o.id != p.id || o.y != p.y_true)
    {
        return Err(Error::Forecast(
            "predictions do not match the test rows".into(),
        ));
    }
    if rows.is_empty() {
        return Err(Error::Forecast("no test rows".into()));
    }
    let n = rows.len() as f64;
    let preds = &result.predictions;
    let inside = preds
        .iter()
        .filter(|p| p.q_low <= p.y_true && p.y_true <= p.q_high)
        .count();
    let rmse = (preds.iter().map(|p| (p.mean - p.y_true).powi(2)).sum::<f64>() / n).sqrt();
    let mse = preds.iter().map(|p| p.mean - p.y_true).sum::<f64>() / n;
    let widths = (1..=result.horizon)
        .filter_map(|h| {
            let t = result.t_train + h;
            let s = result.state(t, 0)?;
            let at_h: Vec<f64> = preds.iter().filter(|p| p.t == t).map(|p| p.q_high - p.q_low).collect();
            Some(HorizonWidth {
                h,
                level_width: s.alpha_q.1 - s.alpha_q.0,
                outcome_width: (!at_h.is_empty()).then(|| at_h.iter().sum::<f64>() / at_h.len() as f64),
            })
        })
        .collect();
    let mut metrics = Metrics {
        n_test: rows.len(),
        interval_mass: result.interval_mass,
        coverage: inside as f64 / n,
        rmse,
        mean_signed_error: mse,
        mean_predictive_sd: preds.iter().map(|p| p.sd).sum::<f64>() / n,
        mean_interval_width: preds.iter().map(|p| p.q_high - p.q_low).sum::<f64>() / n,
        widths,
        coef_coverage: Vec::new(),
        level_correlation: None,
    };
    if let (Some(truth), Some(summary)) = (truth, fit_summary) {
        let t_fit = result.t_train.min(truth.beta.len());
        let n_pred = truth.beta.first().map_or(0, Vec::len);
        for p in 0..n_pred {
            let mut hits = 0;
            let mut total = 0;
            for t in 1..=t_fit {
                if let Some(r) = find_row(summary, ParamId::Beta { t, p }) {
                    total += 1;
                    let v = truth.beta[t - 1][p];
                    hits += usize::from(r.q_low <= v && v <= r.q_high);
                }
            }
            if total > 0 {
                metrics.coef_coverage.push(CoefCoverage {
                    p,
                    fraction: hits as f64 / total as f64,
                    n_times: total,
                });
            }
        }
        let pairs: Option<Vec<(f64, f64)>> = (1..=t_fit)
            .map(|t| {
                Some((find_row(summary, ParamId::Alpha { t, p: 0 })?.mean, truth.level(t)?))
            })
            .collect();
        if let Some(pairs) = pairs.filter(|v| v.len() >= 2) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            metrics.level_correlation = Some(pearson(&a, &b));
        }
    }
    Ok(metrics)
}

/// Generator truth used for scoring: `beta[t-1][p]`, with predictor 0
/// carrying the driving series.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub beta: Vec<Vec<f64>>,
}

impl Truth {
    pub fn from_rows(rows: &[TruthRow]) -> Result<Self> {
        let n_t = rows.iter().map(|r| r.t).max().unwrap_or(0);
        let n_p = rows.iter().map(|r| r.p + 1).max().unwrap_or(0);
        let mut beta = vec![vec![f64::NAN; n_p]; n_t];
        for r in rows {
            if r.t == 0 {
                return Err(Error::Input("truth rows need t >= 1".into()));
            }
            beta[r.t - 1][r.p] = r.beta_true;
        }
        if beta.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Input("truth file does not cover every (t, p)".into()));
        }
        Ok(Self { beta })
    }

    pub fn value(&self, t: usize, p: usize) -> Option<f64> {
        self.beta.get(t.checked_sub(1)?)?.get(p).copied()
    }

    pub fn level(&self, t: usize) -> Option<f64> {
        self.value(t, 0)
    }
}

impl From<&SimTruth> for Truth {
    fn from(sim: &SimTruth) -> Self {
        Self { beta: sim.beta.iter().map(|b| b.to_vec()).collect() }
    }
}

/// Where [`export_plot_data`] wrote each figure's data.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotFiles {
    pub smoothed: PathBuf,
    pub coefficients: PathBuf,
    pub predictions: PathBuf,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_f64)
}

/// Smoothed level vs driving series:
/// `t,ts_true,alpha0_mean,alpha0_qlow,alpha0_qhigh,phase`.
pub fn smoothed_csv(summary: &[SummaryRow], result: &ForecastResult, truth: Option<&Truth>) -> String {
    let ts = |t: usize| truth.and_then(|tr| tr.level(t));
    let mut s = String::from("t,ts_true,alpha0_mean,alpha0_qlow,alpha0_qhigh,phase\n");
    for t in 1..=result.t_train {
        if let Some(r) = find_row(summary, ParamId::Alpha { t, p: 0 }) {
            s.push_str(&format!(
                "{t},{},{},{},{},train\n",
                opt(ts(t)),
                fmt_f64(r.mean),
                fmt_f64(r.q_low),
                fmt_f64(r.q_high)
            ));
        }
    }
    for st in result.states.iter().filter(|st| st.p == 0) {
        s.push_str(&format!(
            "{},{},{},{},{},test\n",
            st.t,
            opt(ts(st.t)),
            fmt_f64(st.alpha_mean),
            fmt_f64(st.alpha_q.0),
            fmt_f64(st.alpha_q.1)
        ));
    }
    s
}

/// Coefficient paths of the non-intercept predictors over fitted and
/// forecast time points: `t,p,beta_mean,beta_qlow,beta_qhigh,beta_true`.
pub fn coefficients_csv(
    summary: &[SummaryRow],
    result: &ForecastResult,
    truth: Option<&Truth>,
    n_predictors: usize,
    first_predictor: usize,
) -> String {
    let tv = |t: usize, p: usize| truth.and_then(|tr| tr.value(t, p));
    let mut s = String::from("t,p,beta_mean,beta_qlow,beta_qhigh,beta_true\n");
    for t in 1..=result.t_train + result.horizon {
        for p in first_predictor..n_predictors {
            let row = if t <= result.t_train {
                find_row(summary, ParamId::Beta { t, p }).map(|r| (r.mean, r.q_low, r.q_high))
            } else {
                result.state(t, p).map(|st| (st.beta_mean, st.beta_q.0, st.beta_q.1))
            };
            if let Some((m, lo, hi)) = row {
                s.push_str(&format!(
                    "{t},{p},{},{},{},{}\n",
                    fmt_f64(m),
                    fmt_f64(lo),
                    fmt_f64(hi),
                    opt(tv(t, p))
                ));
            }
        }
    }
    s
}

/// Per test row: `t,id,y_true,y_pred_mean,y_pred_qlow,y_pred_qhigh`.
pub fn predictions_csv(result: &ForecastResult) -> String {
    let mut s = String::from("t,id,y_true,y_pred_mean,y_pred_qlow,y_pred_qhigh\n");
    for p in &result.predictions {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.t,
            p.id,
            fmt_f64(p.y_true),
            fmt_f64(p.mean),
            fmt_f64(p.q_low),
            fmt_f64(p.q_high)
        ));
    }
    s
}

/// Writes `smoothed.csv`, `coefficients.csv` and `predictions.csv` into
/// `dir`.
pub fn export_plot_data(
    summary: &[SummaryRow],
    result: &ForecastResult,
    truth: Option<&Truth>,
    n_predictors: usize,
    has_intercept: bool,
    dir: &Path,
) -> Result<PlotFiles> {
    let files = PlotFiles {
        smoothed: dir.join("smoothed.csv"),
        coefficients: dir.join("coefficients.csv"),
        predictions: dir.join("predictions.csv"),
    };
    write_text(&files.smoothed, &smoothed_csv(summary, result, truth))?;
    write_text(
        &files.coefficients,
        &coefficients_csv(summary, result, truth, n_predictors, usize::from(has_intercept)),
    )?;
    write_text(&files.predictions, &predictions_csv(result))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draws::{ChainDraws, ParamLayout};
    use crate::model::{validate_dataset, ModelConfig, RawRecord};

    /// Store with `T = 1`, one predictor, every draw identical.
    fn pinned_store(alpha: f64, nu: f64, var: f64, var_y: f64, trend: bool, n: usize) -> DrawStore {
        let layout = ParamLayout {
            n_times: 1,
            n_predictors: 1,
            include_trend: trend,
            has_var_y: true,
            per_predictor_variances: false,
        };
        // beta, alpha, [nu], var_y, var_beta, var_alpha, [var_eta]
        let row: Vec<f64> = if trend {
            vec![alpha, alpha, nu, var_y, var, var, var]
        } else {
            vec![alpha, alpha, var_y, var, var]
        };
        let values = row.iter().copied().cycle().take(row.len() * n).collect();
        DrawStore::new(layout, n, vec![ChainDraws::new(values, None)]).unwrap()
    }

    fn test_rows(ts: &[(i64, f64, f64)]) -> Dataset {
        let raw: Vec<_> = ts
            .iter()
            .enumerate()
            .map(|(i, (t, y, x))| RawRecord { t: *t, id: i.to_string(), y: *y, x: vec![*x] })
            .collect();
        let cfg = ModelConfig { add_intercept: false, ..ModelConfig::default() };
        validate_dataset(&raw, &cfg).unwrap()
    }

    #[test]
    fn pinned_variances_hold_the_last_state() {
        let store = pinned_store(4.0, 0.0, 1e-20, 1e-20, false, 50);
        let f = forecast_states(&store, 5, 1).unwrap();
        for h in 1..=5 {
            assert!(f.beta_at(h, 0).iter().all(|b| (b - 4.0).abs() < 1e-8));
        }
        let test = test_rows(&[(3, 8.0, 2.0)]);
        let r = predict_outcomes(&f, &test, OutcomeKind::Continuous, 0.95, 2).unwrap();
        assert!((r.predictions[0].mean - 8.0).abs() < 1e-7);
    }

    #[test]
    fn fixed_trend_grows_linearly() {
        let store = pinned_store(10.0, 2.0, 1e-20, 1e-20, true, 20);
        let f = forecast_states(&store, 6, 1).unwrap();
        for h in 1..=6 {
            let a = f.alpha_at(h, 0);
            assert!((a[0] - (10.0 + 2.0 * h as f64)).abs() < 1e-8);
            assert!((f.expected_level(h, 0) - (10.0 + 2.0 * h as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn level_interval_widens_with_horizon() {
        let store = pinned_store(0.0, 0.0, 1.0, 1.0, true, 4000);
        let f = forecast_states(&store, 20, 3).unwrap();
        let states = summarize_states(&f, 0.95);
        let widths: Vec<f64> = states.iter().map(|s| s.alpha_q.1 - s.alpha_q.0).collect();
        for w in widths.windows(2) {
            assert!(w[1] >= w[0] * 0.97, "{widths:?}");
        }
        assert!(widths[19] > 3.0 * widths[0]);
    }

    #[test]
    fn trend_off_level_is_a_martingale() {
        let store = pinned_store(5.0, 0.0, 1.0, 1.0, false, 40_000);
        let f = forecast_states(&store, 10, 9).unwrap();
        for h in [1, 5, 10] {
            let a = f.alpha_at(h, 0);
            let m = a.iter().sum::<f64>() / a.len() as f64;
            // sd of alpha_{T+h} is sqrt(h)
            assert!((m - 5.0).abs() < 4.0 * (h as f64).sqrt() / 200.0, "h={h} mean={m}");
        }
    }

    #[test]
    fn predictive_includes_observation_noise() {
        let store = pinned_store(3.0, 0.0, 1e-20, 4.0, false, 20_000);
        let f = forecast_states(&store, 1, 4).unwrap();
        let test = test_rows(&[(2, 3.0, 1.0)]);
        let r = predict_outcomes(&f, &test, OutcomeKind::Continuous, 0.95, 5).unwrap();
        let p = &r.predictions[0];
        assert!((p.mean - 3.0).abs() < 0.05);
        assert!((p.sd - 2.0).abs() < 0.05);
        assert!((p.q_high - 3.0 - 1.96 * 2.0).abs() < 0.1);
    }

    #[test]
    fn outside_window_and_determinism() {
        let store = pinned_store(0.0, 0.0, 1.0, 1.0, true, 30);
        let f = forecast_states(&store, 2, 6).unwrap();
        assert_eq!(f, forecast_states(&store, 2, 6).unwrap());
        assert!(forecast_states(&store, 0, 6).is_err());
        let late = test_rows(&[(4, 0.0, 1.0)]);
        assert!(predict_outcomes(&f, &late, OutcomeKind::Continuous, 0.95, 1).is_err());
        let early = test_rows(&[(1, 0.0, 1.0)]);
        assert!(predict_outcomes(&f, &early, OutcomeKind::Continuous, 0.95, 1).is_err());
    }

    fn result_with(preds: Vec<(f64, f64, f64, f64)>) -> (ForecastResult, Dataset) {
        let test = test_rows(&preds.iter().map(|p| (2, p.0, 1.0)).collect::<Vec<_>>());
        let predictions = test
            .observations()
            .iter()
            .zip(&preds)
            .map(|(o, &(y, m, lo, hi))| Prediction {
                t: o.t,
                id: o.id.clone(),
                y_true: y,
                mean: m,
                sd: 1.0,
                q_low: lo,
                q_high: hi,
            })
            .collect();
        (
            ForecastResult { interval_mass: 0.95, t_train: 1, horizon: 1, predictions, states: vec![] },
            test,
        )
    }

    #[test]
    fn perfect_forecasts_score_perfectly() {
        let (r, test) = result_with(vec![(1.0, 1.0, 0.5, 1.5), (2.0, 2.0, 1.5, 2.5)]);
        let m = evaluate(&r, &test, None, None).unwrap();
        assert_eq!(m.coverage, 1.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.mean_signed_error, 0.0);
    }

    #[test]
    fn coverage_counts_and_signed_error() {
        // predictions at 5, truth 2 below: signed error +2; two of four inside
        let (r, test) = result_with(vec![
            (3.0, 5.0, 2.5, 7.0),
            (3.0, 5.0, 4.0, 6.0),
            (3.0, 5.0, 3.0, 9.0),
            (3.0, 5.0, 3.5, 9.0),
        ]);
        let m = evaluate(&r, &test, None, None).unwrap();
        assert_eq!(m.coverage, 0.5);
        assert_eq!(m.mean_signed_error, 2.0);
        assert_eq!(m.rmse, 2.0);
        let (r2, _) = result_with(vec![(3.0, 5.0, 2.5, 7.0)]);
        assert!(evaluate(&r2, &test, None, None).is_err());
    }
}
