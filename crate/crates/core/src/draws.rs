//! Storage for post-warmup draws, addressable by (chain, iteration,
//! parameter), and the long-format `chain,iter,parameter,value` file.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// A named model parameter. Time indices are 1-based, predictor indices
/// 0-based (predictor 0 is the intercept when present).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamId {
    Beta { t: usize, p: usize },
    Alpha { t: usize, p: usize },
    Nu { t: usize, p: usize },
    VarY,
    /// `None` when one variance is shared by all predictors.
    VarBeta(Option<usize>),
    VarAlpha(Option<usize>),
    VarEta(Option<usize>),
}

impl ParamId {
    /// `(t, p)` for path parameters; variances carry at most `p`.
    pub fn indices(&self) -> (Option<usize>, Option<usize>) {
        match *self {
            ParamId::Beta { t, p } | ParamId::Alpha { t, p } | ParamId::Nu { t, p } => {
                (Some(t), Some(p))
            }
            ParamId::VarY => (None, None),
            ParamId::VarBeta(p) | ParamId::VarAlpha(p) | ParamId::VarEta(p) => (None, p),
        }
    }

    pub fn base_name(&self) -> &'static str {
        match self {
            ParamId::Beta { .. } => "beta",
            ParamId::Alpha { .. } => "alpha",
            ParamId::Nu { .. } => "nu",
            ParamId::VarY => "var_y",
            ParamId::VarBeta(_) => "var_beta",
            ParamId::VarAlpha(_) => "var_alpha",
            ParamId::VarEta(_) => "var_eta",
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.base_name();
        match self.indices() {
            (Some(t), Some(p)) => write!(f, "{name}[{t},{p}]"),
            (None, Some(p)) => write!(f, "{name}[{p}]"),
            _ => f.write_str(name),
        }
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("unknown parameter name {s:?}"));
        let (name, idx) = match s.find('[') {
            Some(i) if s.ends_with(']') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            Some(_) => return Err(bad()),
            None => (s, None),
        };
        let nums: Vec<usize> = match idx {
            Some(idx) => idx
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| bad()))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let one = |nums: &[usize]| match nums {
            [] => Ok(None),
            [p] => Ok(Some(*p)),
            _ => Err(bad()),
        };
        match (name, nums.as_slice()) {
            ("beta", [t, p]) => Ok(ParamId::Beta { t: *t, p: *p }),
            ("alpha", [t, p]) => Ok(ParamId::Alpha { t: *t, p: *p }),
            ("nu", [t, p]) => Ok(ParamId::Nu { t: *t, p: *p }),
            ("var_y", []) => Ok(ParamId::VarY),
            ("var_beta", n) => Ok(ParamId::VarBeta(one(n)?)),
            ("var_alpha", n) => Ok(ParamId::VarAlpha(one(n)?)),
            ("var_eta", n) => Ok(ParamId::VarEta(one(n)?)),
            _ => Err(bad()),
        }
    }
}

/// Which parameters a fit records, and in what order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_times: usize,
    pub n_predictors: usize,
    pub include_trend: bool,
    pub has_var_y: bool,
    pub per_predictor_variances: bool,
}

impl ParamLayout {
    fn path_len(&self) -> usize {
        self.n_times * self.n_predictors
    }

    fn variance_groups(&self) -> usize {
        if self.per_predictor_variances {
            self.n_predictors
        } else {
            1
        }
    }

    /// Parameter order: beta, alpha, nu (trend only), var_y (continuous
    /// only), var_beta, var_alpha, var_eta (trend only). Paths are
    /// time-major.
    pub fn params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        let paths: &[fn(usize, usize) -> ParamId] = if self.include_trend {
            &[
                |t, p| ParamId::Beta { t, p },
                |t, p| ParamId::Alpha { t, p },
                |t, p| ParamId::Nu { t, p },
            ]
        } else {
            &[|t, p| ParamId::Beta { t, p }, |t, p| ParamId::Alpha { t, p }]
        };
        for mk in paths {
            for t in 1..=self.n_times {
                for p in 0..self.n_predictors {
                    out.push(mk(t, p));
                }
            }
        }
        if self.has_var_y {
            out.push(ParamId::VarY);
        }
        let groups = |mk: fn(Option<usize>) -> ParamId, out: &mut Vec<ParamId>| {
            if self.per_predictor_variances {
                out.extend((0..self.n_predictors).map(|p| mk(Some(p))));
            } else {
                out.push(mk(None));
            }
        };
        groups(ParamId::VarBeta, &mut out);
        groups(ParamId::VarAlpha, &mut out);
        if self.include_trend {
            groups(ParamId::VarEta, &mut out);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        let paths = if self.include_trend { 3 } else { 2 };
        let groups = self.variance_groups() * if self.include_trend { 3 } else { 2 };
        paths * self.path_len() + usize::from(self.has_var_y) + groups
    }

    /// Position of `id` in [`params`](Self::params), if recorded.
    pub fn index_of(&self, id: ParamId) -> Option<usize> {
        let path = |block: usize, t: usize, p: usize| {
            (t >= 1 && t <= self.n_times && p < self.n_predictors)
                .then(|| block * self.path_len() + (t - 1) * self.n_predictors + p)
        };
        let n_paths = if self.include_trend { 3 } else { 2 };
        let var_start = n_paths * self.path_len() + usize::from(self.has_var_y);
        let group = |block: usize, p: Option<usize>| match (p, self.per_predictor_variances) {
            (None, false) => Some(var_start + block),
            (Some(p), true) if p < self.n_predictors => {
                Some(var_start + block * self.n_predictors + p)
            }
            _ => None,
        };
        match id {
            ParamId::Beta { t, p } => path(0, t, p),
            ParamId::Alpha { t, p } => path(1, t, p),
            ParamId::Nu { t, p } if self.include_trend => path(2, t, p),
            ParamId::VarY if self.has_var_y => Some(n_paths * self.path_len()),
            ParamId::VarBeta(p) => group(0, p),
            ParamId::VarAlpha(p) => group(1, p),
            ParamId::VarEta(p) if self.include_trend => group(2, p),
            _ => None,
        }
    }

    /// Infers the layout from a parameter list written in layout order.
    pub fn from_params(params: &[ParamId]) -> Result<Self> {
        let mut n_times = 0;
        let mut n_predictors = 0;
        let mut include_trend = false;
        let mut has_var_y = false;
        let mut per_predictor = false;
        for id in params {
            match *id {
                ParamId::Beta { t, p } => {
                    n_times = n_times.max(t);
                    n_predictors = n_predictors.max(p + 1);
                }
                ParamId::Nu { .. } => include_trend = true,
                ParamId::VarY => has_var_y = true,
                ParamId::VarBeta(Some(_)) => per_predictor = true,
                _ => {}
            }
        }
        let layout = Self {
            n_times,
            n_predictors,
            include_trend,
            has_var_y,
            per_predictor_variances: per_predictor,
        };
        if layout.params() != params {
            return Err(Error::Input(
                "parameter list does not match any fit layout".into(),
            ));
        }
        Ok(layout)
    }
}

/// Kept draws of one chain, iteration-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainDraws {
    pub(crate) values: Vec<f64>,
    /// Per-time Metropolis acceptance rates over kept iterations (binary
    /// outcomes only).
    pub accept_rates: Option<Vec<f64>>,
}

impl ChainDraws {
    pub fn new(values: Vec<f64>, accept_rates: Option<Vec<f64>>) -> Self {
        Self {
            values,
            accept_rates,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrawStore {
    layout: ParamLayout,
    params: Vec<ParamId>,
    n_keep: usize,
    chains: Vec<ChainDraws>,
}

impl DrawStore {
    pub fn new(layout: ParamLayout, n_keep: usize, chains: Vec<ChainDraws>) -> Result<Self> {
        let params = layout.params();
        for (c, ch) in chains.iter().enumerate() {
            if ch.values.len() != n_keep * params.len() {
                return Err(Error::Input(format!(
                    "chain {c} holds {} values, expected {} iterations x {} parameters",
                    ch.values.len(),
                    n_keep,
                    params.len()
                )));
            }
        }
        if chains.is_empty() {
            return Err(Error::Input("draw store needs at least one chain".into()));
        }
        Ok(Self {
            layout,
            params,
            n_keep,
            chains,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_keep(&self) -> usize {
        self.n_keep
    }

    pub fn n_draws(&self) -> usize {
        self.n_keep * self.chains.len()
    }

    pub fn chains(&self) -> &[ChainDraws] {
        &self.chains
    }

    pub fn index_of(&self, id: ParamId) -> Option<usize> {
        self.layout.index_of(id)
    }

    pub fn value(&self, chain: usize, iter: usize, param: usize) -> f64 {
        self.chains[chain].values[iter * self.params.len() + param]
    }

    /// All parameter values of one iteration.
    pub fn iteration(&self, chain: usize, iter: usize) -> &[f64] {
        let n = self.params.len();
        &self.chains[chain].values[iter * n..(iter + 1) * n]
    }

    /// One parameter's draws for one chain, in generation order.
    pub fn series(&self, chain: usize, param: usize) -> Vec<f64> {
        (0..self.n_keep).map(|i| self.value(chain, i, param)).collect()
    }

    pub fn per_chain(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains()).map(|c| self.series(c, param)).collect()
    }

    /// Draws of one parameter pooled across chains, chain-major.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.per_chain(param).concat()
    }

    /// Chain-major iterator over (chain, iteration) pairs.
    pub fn draw_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_chains()).flat_map(move |c| (0..self.n_keep).map(move |i| (c, i)))
    }

    /// Mean per-time acceptance rate across chains, when recorded.
    pub fn accept_rate(&self, t: usize) -> Option<f64> {
        let rates: Option<Vec<f64>> = self
            .chains
            .iter()
            .map(|c| c.accept_rates.as_ref().and_then(|r| r.get(t - 1).copied()))
            .collect();
        rates.map(|r| r.iter().sum::<f64>() / r.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let names: Vec<String> = self.params.iter().map(|p| p.to_string()).collect();
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "chain,iter,parameter,value")?;
            for (c, i) in self.draw_indices() {
                for (name, v) in names.iter().zip(self.iteration(c, i)) {
                    writeln!(w, "{},{},\"{}\",{}", c + 1, i + 1, name, fmt_f64(*v))?;
                }
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }

    /// Reads a draws file written by [`write_csv`](Self::write_csv).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["chain", "iter", "parameter", "value"] {
            return Err(Error::Input(format!(
                "{}: header must be chain,iter,parameter,value",
                path.display()
            )));
        }
        let bad = |msg: String| Error::Input(format!("{}: {msg}", path.display()));
        let mut params: Vec<ParamId> = Vec::new();
        let mut chains: Vec<Vec<f64>> = Vec::new();
        let mut n_params = None;
        let mut record = csv::StringRecord::new();
        let mut row = 0usize;
        while rdr
            .read_record(&mut record)
            .map_err(|e| Error::csv(path, e))?
        {
            let chain: usize = record[0].parse().map_err(|_| bad(format!("bad chain {:?}", &record[0])))?;
            let iter: usize = record[1].parse().map_err(|_| bad(format!("bad iter {:?}", &record[1])))?;
            let value: f64 = record[3].parse().map_err(|_| bad(format!("bad value {:?}", &record[3])))?;
            if n_params.is_none() {
                if chain == 1 && iter == 1 {
                    params.push(record[2].parse()?);
                } else {
                    n_params = Some(params.len());
                }
            }
            if let Some(n) = n_params {
                let expect = &params[row % n];
                if record[2] != expect.to_string() {
                    return Err(bad(format!("row {}: unexpected parameter {}", row + 2, &record[2])));
                }
            }
            if chain == 0 || chain > chains.len() + 1 {
                return Err(bad(format!("row {}: chain {chain} out of order", row + 2)));
            }
            if chain > chains.len() {
                chains.push(Vec::new());
            }
            chains[chain - 1].push(value);
            row += 1;
        }
        let layout = ParamLayout::from_params(&params)?;
        let n = params.len();
        let n_keep = chains.first().map_or(0, |c| c.len() / n.max(1));
        let chains = chains
            .into_iter()
            .map(|v| ChainDraws::new(v, None))
            .collect();
        Self::new(layout, n_keep, chains)
    }

    /// Attaches per-chain acceptance rates read from a side file.
    pub fn set_accept_rates(&mut self, rates: Vec<Vec<f64>>) -> Result<()> {
        if rates.len() != self.chains.len() {
            return Err(Error::Input("acceptance rates do not match chain count".into()));
        }
        for (c, r) in self.chains.iter_mut().zip(rates) {
            c.accept_rates = Some(r);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(trend: bool, per_p: bool) -> ParamLayout {
        ParamLayout {
            n_times: 4,
            n_predictors: 3,
            include_trend: trend,
            has_var_y: true,
            per_predictor_variances: per_p,
        }
    }

    #[test]
    fn names_round_trip_and_index_matches_order() {
        for trend in [false, true] {
            for per_p in [false, true] {
                let l = layout(trend, per_p);
                let params = l.params();
                assert_eq!(params.len(), l.n_params());
                for (i, id) in params.iter().enumerate() {
                    assert_eq!(l.index_of(*id), Some(i), "{id}");
                    assert_eq!(id.to_string().parse::<ParamId>().unwrap(), *id);
                }
                assert_eq!(ParamLayout::from_params(&params).unwrap(), l);
            }
        }
        let l = layout(false, false);
        assert_eq!(l.index_of(ParamId::Nu { t: 1, p: 0 }), None);
        assert_eq!(l.index_of(ParamId::VarBeta(Some(0))), None);
        assert_eq!(l.index_of(ParamId::Beta { t: 5, p: 0 }), None);
        assert_eq!(ParamId::Beta { t: 3, p: 1 }.to_string(), "beta[3,1]");
        assert!("gamma[1,2]".parse::<ParamId>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let l = ParamLayout {
            n_times: 2,
            n_predictors: 1,
            include_trend: false,
            has_var_y: true,
            per_predictor_variances: false,
        };
        let n = l.n_params();
        let chains = (0..2)
            .map(|c| ChainDraws::new((0..3 * n).map(|i| (c * 100 + i) as f64 * 0.1 + 1e-7).collect(), None))
            .collect();
        let store = DrawStore::new(l, 3, chains).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        store.write_csv(&path).unwrap();
        assert_eq!(DrawStore::read_csv(&path).unwrap(), store);
        let expect: Vec<f64> = (0..3).map(|i| (100 + i * n) as f64 * 0.1 + 1e-7).collect();
        assert_eq!(store.series(1, 0), expect);
    }

    #[test]
    fn rejects_wrong_chain_length() {
        let l = layout(false, false);
        assert!(DrawStore::new(l, 2, vec![ChainDraws::new(vec![0.0; 3], None)]).is_err());
    }
}
