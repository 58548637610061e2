//! Ground-truth generators for recovery studies.
//!
//! Every individual at time `t` gets `x1 ~ N(0, x1_sd²)`, `x2 ~ N(0, x2_sd²)`
//! and `y = ts_t + coef1·x1 + coef2·x2 + N(0, noise_sd²)`. The binary
//! schemes derive a 0/1 outcome from those same draws:
//!
//! * `b1`: `Bernoulli(logistic(ts_t − mean(ts) + coef1·x1 + coef2·x2))`
//! * `b2`: `1` if `y > ts_t + coef1·x1 + coef2·x2`
//! * `b3`: `1` if `y > threshold`

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{self, TruthRow};
use crate::model::{Dataset, Observation, OutcomeKind};
use crate::sampler::derive_seed;

const NILE_CSV: &str = include_str!("../data/nile.csv");

/// Driving series `ts_1..ts_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSpec {
    pub values: Vec<f64>,
    pub label: String,
}

impl SeriesSpec {
    pub fn new(values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Series(format!(
                "series needs at least 2 points, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Series(format!("non-finite value at t={}", i + 1)));
        }
        Ok(Self {
            values,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// The bundled 100-point annual Nile flow series (1871–1970).
    pub fn nile() -> Self {
        let rdr = csv::Reader::from_reader(NILE_CSV.as_bytes());
        let pairs = parse_bundled(rdr).expect("bundled series is well formed");
        Self::from_pairs(pairs, "nile").expect("bundled series is well formed")
    }

    fn from_pairs(pairs: Vec<(i64, f64)>, label: &str) -> Result<Self> {
        for (i, (t, _)) in pairs.iter().enumerate() {
            if *t != i as i64 + 1 {
                return Err(Error::Series(format!(
                    "time index must run 1..T without gaps: expected {}, found {t}",
                    i + 1
                )));
            }
        }
        Self::new(pairs.into_iter().map(|(_, v)| v).collect(), label)
    }
}

fn parse_bundled(mut rdr: csv::Reader<&[u8]>) -> Result<Vec<(i64, f64)>> {
    let records = rdr
        .records()
        .map(|r| r.map_err(|e| Error::Series(e.to_string())));
    io::parse_series_records(records)
}

/// Reads a `t,value` series file with contiguous `t = 1..T`, `T >= 2`.
pub fn load_series(path: &Path) -> Result<SeriesSpec> {
    let pairs = io::read_series_csv(path)?;
    SeriesSpec::from_pairs(pairs, &path.display().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Continuous,
    B1,
    B2,
    B3,
}

impl Scheme {
    pub fn outcome_kind(self) -> OutcomeKind {
        match self {
            Scheme::Continuous => OutcomeKind::Continuous,
            _ => OutcomeKind::Binary,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Continuous => "continuous",
            Scheme::B1 => "b1",
            Scheme::B2 => "b2",
            Scheme::B3 => "b3",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Scheme::Continuous),
            "b1" | "1" => Ok(Scheme::B1),
            "b2" | "2" => Ok(Scheme::B2),
            "b3" | "3" => Ok(Scheme::B3),
            other => Err(Error::Input(format!(
                "unknown scheme {other:?} (expected continuous, b1, b2 or b3)"
            ))),
        }
    }
}

/// Generator settings. Every `*_sd` is a standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimParams {
    pub n_per_t: usize,
    pub coef1: f64,
    pub coef2: f64,
    pub noise_sd: f64,
    pub x1_sd: f64,
    pub x2_sd: f64,
    /// Cut-off of scheme `b3`.
    pub threshold: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            n_per_t: 5,
            coef1: 30.0,
            coef2: 0.0,
            noise_sd: 5.0,
            x1_sd: 1.0,
            x2_sd: 20.0,
            threshold: 900.0,
        }
    }
}

impl SimParams {
    fn validate(&self) -> Result<()> {
        if self.n_per_t == 0 {
            return Err(Error::Input("n_per_t must be >= 1".into()));
        }
        if !(self.x1_sd > 0.0 && self.x2_sd > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::Input(
                "covariate sds must be > 0 and noise sd >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// What the generator used, kept next to the data for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTruth {
    /// `beta[t-1][p]` for the intercept, `x1` and `x2` coefficients.
    pub beta: Vec<[f64; 3]>,
    pub series: SeriesSpec,
    pub noise_sd: f64,
    pub scheme: Scheme,
    pub seed: u64,
    /// Continuous outcome of every generated row, in dataset order.
    pub latent_y: Vec<f64>,
}

impl SimTruth {
    pub fn rows(&self) -> Vec<TruthRow> {
        self.beta
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                b.iter().enumerate().map(move |(p, v)| TruthRow {
                    t: i + 1,
                    p,
                    beta_true: *v,
                })
            })
            .collect()
    }
}

struct Draws {
    t: usize,
    x1: f64,
    x2: f64,
    y: f64,
}

fn draw_rows(series: &SeriesSpec, params: &SimParams, seed: u64) -> Vec<Draws> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(series.len() * params.n_per_t);
    for (i, ts) in series.values.iter().enumerate() {
        for _ in 0..params.n_per_t {
            let x1 = params.x1_sd * rng.sample::<f64, _>(StandardNormal);
            let x2 = params.x2_sd * rng.sample::<f64, _>(StandardNormal);
            let e = params.noise_sd * rng.sample::<f64, _>(StandardNormal);
            out.push(Draws {
                t: i + 1,
                x1,
                x2,
                y: ts + params.coef1 * x1 + params.coef2 * x2 + e,
            });
        }
    }
    out
}

fn assemble(rows: &[Draws], outcomes: &[f64], n_times: usize, kind: OutcomeKind) -> Dataset {
    let obs = rows
        .iter()
        .zip(outcomes)
        .enumerate()
        .map(|(i, (r, y))| Observation {
            t: r.t,
            id: (i + 1).to_string(),
            y: *y,
            x: vec![1.0, r.x1, r.x2],
        })
        .collect();
    Dataset::from_observations(obs, n_times, 3, true, kind)
}

/// Continuous-outcome dataset (with intercept column) and its truth.
pub fn gen_continuous(
    series: &SeriesSpec,
    params: &SimParams,
    seed: u64,
) -> Result<(Dataset, SimTruth)> {
    params.validate()?;
    let rows = draw_rows(series, params, seed);
    let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let dataset = assemble(&rows, &y, series.len(), OutcomeKind::Continuous);
    let truth = SimTruth {
        beta: series
            .values
            .iter()
            .map(|ts| [*ts, params.coef1, params.coef2])
            .collect(),
        series: series.clone(),
        noise_sd: params.noise_sd,
        scheme: Scheme::Continuous,
        seed,
        latent_y: y,
    };
    Ok((dataset, truth))
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary-outcome dataset derived from the continuous draws of the same
/// seed. Scheme `b1` takes its Bernoulli uniforms from a separate stream so
/// the covariates match [`gen_continuous`] exactly.
pub fn gen_binary(
    scheme: Scheme,
    series: &SeriesSpec,
    params: &SimParams,
    seed: u64,
) -> Result<(Dataset, SimTruth)> {
    params.validate()?;
    if scheme == Scheme::Continuous {
        return Err(Error::Input("gen_binary needs scheme b1, b2 or b3".into()));
    }
    let rows = draw_rows(series, params, seed);
    let center = series.mean();
    let mut bern = ChaCha20Rng::seed_from_u64(derive_seed(seed, 1));
    let outcomes: Vec<f64> = rows
        .iter()
        .map(|r| {
            let ts = series.values[r.t - 1];
            let hit = match scheme {
                Scheme::B1 => {
                    let p = logistic(ts - center + params.coef1 * r.x1 + params.coef2 * r.x2);
                    bern.random::<f64>() < p
                }
                Scheme::B2 => r.y > ts + params.coef1 * r.x1 + params.coef2 * r.x2,
                Scheme::B3 => r.y > params.threshold,
                Scheme::Continuous => unreachable!(),
            };
            f64::from(u8::from(hit))
        })
        .collect();
    let dataset = assemble(&rows, &outcomes, series.len(), OutcomeKind::Binary);
    let shift = if scheme == Scheme::B1 { center } else { 0.0 };
    let truth = SimTruth {
        beta: series
            .values
            .iter()
            .map(|ts| [ts - shift, params.coef1, params.coef2])
            .collect(),
        series: series.clone(),
        noise_sd: params.noise_sd,
        scheme,
        seed,
        latent_y: rows.iter().map(|r| r.y).collect(),
    };
    Ok((dataset, truth))
}

/// Dispatches on the scheme.
pub fn generate(
    scheme: Scheme,
    series: &SeriesSpec,
    params: &SimParams,
    seed: u64,
) -> Result<(Dataset, SimTruth)> {
    match scheme {
        Scheme::Continuous => gen_continuous(series, params, seed),
        _ => gen_binary(scheme, series, params, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_series_has_100_points() {
        let s = SeriesSpec::nile();
        assert_eq!(s.len(), 100);
        assert_eq!(s.values[0], 1120.0);
        assert_eq!(s.values[99], 740.0);
    }

    #[test]
    fn load_series_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        io::write_text(&p, "t,value\n1,3\n2,4\n4,5\n").unwrap();
        assert!(matches!(load_series(&p), Err(Error::Series(_))));
        io::write_text(&p, "t,value\n1,3\n").unwrap();
        assert!(matches!(load_series(&p), Err(Error::Series(_))));
        io::write_text(&p, "t,value\n1,3\n2,abc\n").unwrap();
        assert!(matches!(load_series(&p), Err(Error::Series(_))));
        io::write_text(&p, "t,value\n1,3\n2,4.5\n").unwrap();
        assert_eq!(load_series(&p).unwrap().values, vec![3.0, 4.5]);
    }

    #[test]
    fn default_generation_sizes_and_determinism() {
        let s = SeriesSpec::nile();
        let (d, truth) = gen_continuous(&s, &SimParams::default(), 9).unwrap();
        assert_eq!(d.len(), 500);
        assert_eq!(d.n_predictors(), 3);
        assert_eq!(truth.rows().len(), 300);
        assert_eq!(truth.beta[4], [1160.0, 30.0, 0.0]);
        let (d2, _) = gen_continuous(&s, &SimParams::default(), 9).unwrap();
        assert_eq!(d, d2);
        let (d3, _) = gen_continuous(&s, &SimParams::default(), 10).unwrap();
        assert_ne!(d, d3);
    }

    #[test]
    fn zero_noise_follows_the_formula_exactly() {
        let s = SeriesSpec::nile();
        let params = SimParams {
            noise_sd: 0.0,
            ..SimParams::default()
        };
        let (d, _) = gen_continuous(&s, &params, 1).unwrap();
        for o in d.observations() {
            assert_eq!(o.y, s.values[o.t - 1] + 30.0 * o.x[1] + 0.0 * o.x[2]);
        }
    }

    #[test]
    fn scheme3_is_threshold_indicator_of_continuous_outcome() {
        let s = SeriesSpec::nile();
        let p = SimParams::default();
        let (cont, _) = gen_continuous(&s, &p, 4).unwrap();
        let (bin, truth) = gen_binary(Scheme::B3, &s, &p, 4).unwrap();
        for ((c, b), latent) in cont.observations().iter().zip(bin.observations()).zip(&truth.latent_y) {
            assert_eq!(c.x, b.x);
            assert_eq!(c.y, *latent);
            assert_eq!(b.y, if c.y > 900.0 { 1.0 } else { 0.0 });
        }
        assert_eq!(bin.outcome_kind(), OutcomeKind::Binary);
    }

    #[test]
    fn scheme2_is_a_fair_coin_independent_of_covariates() {
        let s = SeriesSpec::nile();
        let p = SimParams {
            n_per_t: 100,
            ..SimParams::default()
        };
        let (d, _) = gen_binary(Scheme::B2, &s, &p, 8).unwrap();
        let n = d.len() as f64;
        let rate = d.observations().iter().map(|o| o.y).sum::<f64>() / n;
        assert!((rate - 0.5).abs() < 3.0 * (0.25 / n).sqrt());
        for j in [1, 2] {
            let xs: Vec<f64> = d.observations().iter().map(|o| o.x[j]).collect();
            let ys: Vec<f64> = d.observations().iter().map(|o| o.y).collect();
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
            let r = cov / (vx * vy).sqrt();
            assert!(r.abs() < 3.0 / n.sqrt(), "corr with x{j} = {r}");
        }
    }

    #[test]
    fn scheme1_saturates_for_large_deviations() {
        let values: Vec<f64> = (0..20).map(|t| if t % 2 == 0 { 200.0 } else { -200.0 }).collect();
        let s = SeriesSpec::new(values, "pm200").unwrap();
        let p = SimParams {
            n_per_t: 50,
            ..SimParams::default()
        };
        let (d, _) = gen_binary(Scheme::B1, &s, &p, 3).unwrap();
        for t in 1..=20 {
            let rows = d.at(t);
            let rate = rows.iter().map(|o| o.y).sum::<f64>() / rows.len() as f64;
            // |30 x1| rarely reaches 200: rates pinned to the series sign
            let expect = if t % 2 == 1 { 1.0 } else { 0.0 };
            assert!((rate - expect).abs() <= 0.02, "t={t} rate={rate}");
        }
        assert!(logistic(-10.5) < 5e-5 && logistic(10.5) > 1.0 - 5e-5);
    }

    #[test]
    fn row_means_converge_to_series() {
        let s = SeriesSpec::new(vec![100.0, 900.0, 1200.0], "short").unwrap();
        let p = SimParams {
            n_per_t: 10_000,
            ..SimParams::default()
        };
        let (d, _) = gen_continuous(&s, &p, 2).unwrap();
        // sd of y given t: sqrt(30^2 + 5^2)
        let se = (900.0f64 + 25.0).sqrt() / 100.0;
        for t in 1..=3 {
            let m = d.at(t).iter().map(|o| o.y).sum::<f64>() / 10_000.0;
            assert!((m - s.values[t - 1]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn bad_scheme_and_params() {
        assert!("b4".parse::<Scheme>().is_err());
        assert_eq!("b2".parse::<Scheme>().unwrap(), Scheme::B2);
        let s = SeriesSpec::nile();
        assert!(gen_binary(Scheme::Continuous, &s, &SimParams::default(), 0).is_err());
        let bad = SimParams { n_per_t: 0, ..SimParams::default() };
        assert!(gen_continuous(&s, &bad, 0).is_err());
    }
}
