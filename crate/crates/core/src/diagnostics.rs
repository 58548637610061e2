//! Convergence diagnostics and posterior summaries.
//!
//! Quantiles use linear interpolation between order statistics (the
//! "type 7" rule): for sorted draws `x[0..n]` and probability `q`,
//! `h = (n - 1) q` and the quantile is `x[⌊h⌋] + (h - ⌊h⌋)(x[⌊h⌋+1] - x[⌊h⌋])`.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::draws::{DrawStore, ParamId};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

pub const QUANTILE_RULE: &str = "type7 (linear interpolation between order statistics)";
pub const DEFAULT_RHAT_THRESHOLD: f64 = 1.05;

/// Type-7 quantile of already sorted draws.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(draws: &[f64], q: f64) -> f64 {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Lower and upper probabilities of the equal-tailed interval with `mass`.
pub fn interval_probs(mass: f64) -> (f64, f64) {
    let tail = (1.0 - mass) / 2.0;
    (tail, 1.0 - tail)
}

/// Equal-tailed interval `(q_low, q_high)`.
pub fn equal_tailed(draws: &[f64], mass: f64) -> (f64, f64) {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let (lo, hi) = interval_probs(mass);
    (quantile_sorted(&v, lo), quantile_sorted(&v, hi))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return Err(Error::TooFewDraws { needed: 4, found: n });
    }
    Ok(n)
}

/// Split-chain potential scale reduction factor. Every chain is cut in half
/// (the middle draw is dropped for odd lengths, longer chains are trimmed to
/// the shortest). `None` when the within-sequence variance is zero.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    let n_full = check_chains(chains)?;
    let half = n_full / 2;
    let mut seqs: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        seqs.push(&c[..half]);
        seqs.push(&c[n_full - half..n_full]);
    }
    let n = half as f64;
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let w = mean(&seqs.iter().map(|s| sample_var(s)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return Ok(None);
    }
    let b = n * sample_var(&means);
    Ok(Some((((n - 1.0) / n * w + b / n) / w).sqrt()))
}

/// Biased autocovariance at every lag, via zero-padded FFT.
fn autocovariance(xs: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = xs.len();
    let m = mean(xs);
    let size = (2 * n).next_power_of_two();
    let fwd = planner.plan_fft_forward(size);
    let inv: Arc<dyn rustfft::Fft<f64>> = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = xs
        .iter()
        .map(|x| Complex::new(x - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fwd.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    buf[..n]
        .iter()
        .map(|c| c.re / (size as f64 * n as f64))
        .collect()
}

/// Multi-chain effective sample size with Geyer's initial monotone
/// positive-sequence truncation, capped at the total draw count. `None`
/// for zero-variance draws.
pub fn ess(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    let n = check_chains(chains)?;
    let m = chains.len();
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c, &mut planner)).collect();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let var_plus = w * (nf - 1.0) / nf + if m > 1 { sample_var(&means) } else { 0.0 };
    if !(w > 0.0 && var_plus > 0.0) {
        return Ok(None);
    }
    let rho = |lag: usize| 1.0 - (w - acov.iter().map(|a| a[lag]).sum::<f64>() / m as f64) / var_plus;
    let total = (m * n) as f64;
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        lag += 2;
    }
    Ok(Some((total / tau).min(total)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub parameter: ParamId,
    pub mean: f64,
    pub sd: f64,
    pub q_low: f64,
    pub q_high: f64,
    /// `None` for zero-variance (degenerate) draws.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    /// Mean Metropolis acceptance rate at this time point, for logistic
    /// coefficient parameters.
    pub accept_rate: Option<f64>,
}

/// Summaries of every parameter, pooled across chains.
pub fn summarize(store: &DrawStore, interval_mass: f64) -> Result<Vec<SummaryRow>> {
    if store.n_draws() == 0 {
        return Err(Error::Input("empty draw store".into()));
    }
    store
        .params()
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let chains = store.per_chain(i);
            let pooled = chains.concat();
            let m = mean(&pooled);
            let sd = if pooled.len() > 1 { sample_var(&pooled).sqrt() } else { 0.0 };
            let (q_low, q_high) = equal_tailed(&pooled, interval_mass);
            let (rhat, ess) = if store.n_keep() >= 4 {
                (split_rhat(&chains)?, ess(&chains)?)
            } else {
                (None, None)
            };
            let accept_rate = match id {
                ParamId::Beta { t, .. } => store.accept_rate(*t),
                _ => None,
            };
            Ok(SummaryRow {
                parameter: *id,
                mean: m,
                sd,
                q_low,
                q_high,
                rhat,
                ess,
                accept_rate,
            })
        })
        .collect()
}

pub fn find_row(rows: &[SummaryRow], id: ParamId) -> Option<&SummaryRow> {
    rows.iter().find(|r| r.parameter == id)
}

/// Summary CSV: `parameter,t,p,mean,sd,q_low,q_high,rhat,ess`, plus
/// `accept_rate` when any row carries one. Undefined values are `NA`.
pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let with_accept = rows.iter().any(|r| r.accept_rate.is_some());
    let mut s = String::from("parameter,t,p,mean,sd,q_low,q_high,rhat,ess");
    if with_accept {
        s.push_str(",accept_rate");
    }
    s.push('\n');
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt_f64);
    let idx = |v: Option<usize>| v.map_or_else(String::new, |v| v.to_string());
    for r in rows {
        let (t, p) = r.parameter.indices();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            r.parameter.base_name(),
            idx(t),
            idx(p),
            fmt_f64(r.mean),
            fmt_f64(r.sd),
            fmt_f64(r.q_low),
            fmt_f64(r.q_high),
            opt(r.rhat),
            opt(r.ess),
        ));
        if with_accept {
            s.push(',');
            if let Some(a) = r.accept_rate {
                s.push_str(&fmt_f64(a));
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlaggedParam {
    pub parameter: String,
    pub rhat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub verdict: String,
    pub rhat_threshold: f64,
    pub n_parameters: usize,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    /// Parameters whose R-hat exceeds the threshold, worst first.
    pub not_converged: Vec<FlaggedParam>,
    /// Parameters with zero-variance draws (undefined R-hat).
    pub degenerate: Vec<String>,
    pub quantile_rule: String,
    /// Range of per-time Metropolis acceptance rates (logistic fits only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accept_rate_range: Option<(f64, f64)>,
}

pub fn convergence_report(rows: &[SummaryRow], rhat_threshold: f64) -> ConvergenceReport {
    let mut not_converged: Vec<FlaggedParam> = rows
        .iter()
        .filter_map(|r| match r.rhat {
            Some(v) if v > rhat_threshold || v.is_nan() => Some(FlaggedParam {
                parameter: r.parameter.to_string(),
                rhat: v,
            }),
            _ => None,
        })
        .collect();
    not_converged.sort_by(|a, b| b.rhat.total_cmp(&a.rhat));
    let degenerate: Vec<String> = rows
        .iter()
        .filter(|r| r.rhat.is_none())
        .map(|r| r.parameter.to_string())
        .collect();
    let max_rhat = rows.iter().filter_map(|r| r.rhat).reduce(f64::max);
    let min_ess = rows.iter().filter_map(|r| r.ess).reduce(f64::min);
    let rates: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.accept_rate)
        .filter(|v| v.is_finite())
        .collect();
    let accept_rate_range = (!rates.is_empty()).then(|| {
        (
            rates.iter().copied().fold(f64::INFINITY, f64::min),
            rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    let converged = not_converged.is_empty() && degenerate.is_empty();
    ConvergenceReport {
        converged,
        verdict: if converged { "converged" } else { "not converged" }.to_string(),
        rhat_threshold,
        n_parameters: rows.len(),
        max_rhat,
        min_ess,
        not_converged,
        degenerate,
        quantile_rule: QUANTILE_RULE.to_string(),
        accept_rate_range,
    }
}
