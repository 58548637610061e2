//! Domain types shared by every stage: observations, configuration and the
//! time-indexed dataset the samplers consume.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    #[default]
    Continuous,
    Binary,
}

impl std::fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutcomeKind::Continuous => f.write_str("continuous"),
            OutcomeKind::Binary => f.write_str("binary"),
        }
    }
}

/// Inverse-gamma prior `IG(shape, rate)` on a variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaPrior {
    pub const fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }
}

impl Default for InvGammaPrior {
    fn default() -> Self {
        Self::new(0.001, 0.001)
    }
}

/// Priors for the observation, fluctuation, level and trend variances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariancePriors {
    pub var_y: InvGammaPrior,
    pub var_beta: InvGammaPrior,
    pub var_alpha: InvGammaPrior,
    pub var_eta: InvGammaPrior,
}

impl VariancePriors {
    fn iter(&self) -> impl Iterator<Item = (&'static str, &InvGammaPrior)> {
        [
            ("var_y", &self.var_y),
            ("var_beta", &self.var_beta),
            ("var_alpha", &self.var_alpha),
            ("var_eta", &self.var_eta),
        ]
        .into_iter()
    }
}

/// Random-walk Metropolis settings for the logistic coefficient block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetropolisConfig {
    pub target_accept: f64,
    pub initial_scale: f64,
    /// Iterations between proposal-scale adjustments during warmup.
    pub adapt_window: usize,
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        Self {
            target_accept: 0.234,
            initial_scale: 0.1,
            adapt_window: 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub include_trend: bool,
    pub outcome_kind: OutcomeKind,
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_keep: usize,
    pub master_seed: u64,
    pub variance_priors: VariancePriors,
    /// Prior standard deviation of the initial level and slope.
    pub init_state_sd: f64,
    pub interval_mass: f64,
    pub add_intercept: bool,
    /// Learn a separate fluctuation/level/trend variance for each predictor.
    pub per_predictor_variances: bool,
    /// Rounds of collapsed Metropolis updates of the state-model variances
    /// per sweep; 0 keeps the plain three-block sweep.
    pub state_variance_steps: usize,
    pub metropolis: MetropolisConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            include_trend: true,
            outcome_kind: OutcomeKind::Continuous,
            n_chains: 4,
            n_warmup: 1000,
            n_keep: 2000,
            master_seed: 20_221_012,
            variance_priors: VariancePriors::default(),
            init_state_sd: 1e3,
            interval_mass: 0.95,
            add_intercept: true,
            per_predictor_variances: false,
            state_variance_steps: 3,
            metropolis: MetropolisConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn total_draws(&self) -> usize {
        self.n_chains * self.n_keep
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_chains == 0 {
            return bad("n_chains must be >= 1".into());
        }
        if self.n_warmup == 0 || self.n_keep == 0 {
            return bad("n_warmup and n_keep must be >= 1".into());
        }
        for (name, prior) in self.variance_priors.iter() {
            if !(prior.shape > 0.0 && prior.shape.is_finite())
                || !(prior.rate > 0.0 && prior.rate.is_finite())
            {
                return bad(format!(
                    "{name} prior needs shape > 0 and rate > 0, got ({}, {})",
                    prior.shape, prior.rate
                ));
            }
        }
        if !(self.init_state_sd > 0.0 && self.init_state_sd.is_finite()) {
            return bad(format!("init_state_sd must be > 0, got {}", self.init_state_sd));
        }
        if !(self.interval_mass > 0.0 && self.interval_mass < 1.0) {
            return bad(format!(
                "interval_mass must lie in (0, 1), got {}",
                self.interval_mass
            ));
        }
        let m = &self.metropolis;
        if !(m.target_accept > 0.0 && m.target_accept < 1.0) {
            return bad("metropolis.target_accept must lie in (0, 1)".into());
        }
        if !(m.initial_scale > 0.0 && m.initial_scale.is_finite()) || m.adapt_window == 0 {
            return bad("metropolis.initial_scale must be > 0 and adapt_window >= 1".into());
        }
        Ok(())
    }
}

/// One parsed input row before validation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub t: i64,
    pub id: String,
    pub y: f64,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// 1-based time index.
    pub t: usize,
    pub id: String,
    pub y: f64,
    /// Predictor vector; starts with the constant 1 when the dataset has an
    /// intercept column.
    pub x: Vec<f64>,
}

/// Validated observations sorted by time, with per-time row ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    n_times: usize,
    n_predictors: usize,
    has_intercept: bool,
    outcome_kind: OutcomeKind,
    // ranges[t - 1] indexes the rows observed at t
    ranges: Vec<Range<usize>>,
}

impl Dataset {
    fn from_sorted(
        observations: Vec<Observation>,
        n_times: usize,
        n_predictors: usize,
        has_intercept: bool,
        outcome_kind: OutcomeKind,
    ) -> Self {
        let mut ranges = Vec::with_capacity(n_times);
        let mut start = 0;
        for t in 1..=n_times {
            let mut end = start;
            while end < observations.len() && observations[end].t == t {
                end += 1;
            }
            ranges.push(start..end);
            start = end;
        }
        debug_assert_eq!(start, observations.len());
        Self {
            observations,
            n_times,
            n_predictors,
            has_intercept,
            outcome_kind,
            ranges,
        }
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// T, the largest time index covered.
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// P, including the intercept column when present.
    pub fn n_predictors(&self) -> usize {
        self.n_predictors
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    /// Rows observed at time `t` (1-based). Empty for gaps and for `t`
    /// beyond the covered range.
    pub fn at(&self, t: usize) -> &[Observation] {
        match t.checked_sub(1).and_then(|i| self.ranges.get(i)) {
            Some(r) => &self.observations[r.clone()],
            None => &[],
        }
    }

    pub fn count_at(&self, t: usize) -> usize {
        self.at(t).len()
    }

    /// Smallest time index that has at least one row.
    pub fn first_time(&self) -> Option<usize> {
        self.observations.first().map(|o| o.t)
    }

    /// Turns validated rows back into raw records, dropping the intercept
    /// column so that re-validation with the same config reproduces `self`.
    pub fn to_raw_records(&self) -> Vec<RawRecord> {
        let skip = usize::from(self.has_intercept);
        self.observations
            .iter()
            .map(|o| RawRecord {
                t: o.t as i64,
                id: o.id.clone(),
                y: o.y,
                x: o.x[skip..].to_vec(),
            })
            .collect()
    }

    /// Builds a dataset from already-validated parts, e.g. a generator that
    /// fills in the intercept itself.
    pub(crate) fn from_observations(
        mut observations: Vec<Observation>,
        n_times: usize,
        n_predictors: usize,
        has_intercept: bool,
        outcome_kind: OutcomeKind,
    ) -> Self {
        observations.sort_by_key(|o| o.t);
        Self::from_sorted(observations, n_times, n_predictors, has_intercept, outcome_kind)
    }
}

/// Checks raw rows against the dataset invariants and assembles a
/// [`Dataset`]. Rows are stably sorted by time.
pub fn validate_dataset(raw: &[RawRecord], config: &ModelConfig) -> Result<Dataset> {
    let first = raw.first().ok_or(Error::EmptyDataset)?;
    let width = first.x.len();
    let binary = config.outcome_kind == OutcomeKind::Binary;
    let mut observations = Vec::with_capacity(raw.len());
    let mut n_times = 0usize;
    for (row, rec) in raw.iter().enumerate() {
        if rec.x.len() != width {
            return Err(Error::RaggedRow {
                row,
                expected: width,
                found: rec.x.len(),
            });
        }
        if rec.t < 1 {
            return Err(Error::TimeIndex { row, t: rec.t });
        }
        if !rec.y.is_finite() || rec.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("row {row}: non-finite value")));
        }
        if binary && rec.y != 0.0 && rec.y != 1.0 {
            return Err(Error::NonBinaryOutcome { row, value: rec.y });
        }
        let t = rec.t as usize;
        n_times = n_times.max(t);
        let mut x = Vec::with_capacity(width + 1);
        if config.add_intercept {
            x.push(1.0);
        }
        x.extend_from_slice(&rec.x);
        observations.push(Observation {
            t,
            id: rec.id.clone(),
            y: rec.y,
            x,
        });
    }
    let n_predictors = width + usize::from(config.add_intercept);
    if n_predictors == 0 {
        return Err(Error::Input("no predictors and no intercept".into()));
    }
    Ok(Dataset::from_observations(
        observations,
        n_times,
        n_predictors,
        config.add_intercept,
        config.outcome_kind,
    ))
}

/// Splits at `t_train`: rows with `t <= t_train` train (with `T = t_train`),
/// the remainder test with their original time indices.
pub fn split_by_time(dataset: &Dataset, t_train: usize) -> Result<(Dataset, Dataset)> {
    let max = dataset.n_times();
    if t_train < 1 || t_train >= max {
        return Err(Error::SplitOutOfRange { t_train, max });
    }
    let (train, test): (Vec<_>, Vec<_>) = dataset
        .observations
        .iter()
        .cloned()
        .partition(|o| o.t <= t_train);
    let mk = |obs, n_times| {
        Dataset::from_sorted(
            obs,
            n_times,
            dataset.n_predictors,
            dataset.has_intercept,
            dataset.outcome_kind,
        )
    };
    Ok((mk(train, t_train), mk(test, max)))
}
