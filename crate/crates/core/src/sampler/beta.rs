//! Conjugate Gaussian update of the per-time coefficient vector.
//!
//! Given the rows observed at one time point, the smooth state and the two
//! variances, the coefficients have a Gaussian full conditional with
//!
//! ```text
//! precision Q = XᵀX / σ²_y + diag(1 / σ²_β)
//! Q m = Xᵀy / σ²_y + α_t / σ²_β
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::Observation;

/// Sufficient statistics of one time point's rows.
#[derive(Clone, Debug)]
pub struct TimeBlock {
    pub n: usize,
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
}

impl TimeBlock {
    pub fn from_rows(rows: &[Observation], n_predictors: usize) -> Self {
        let mut xtx = DMatrix::zeros(n_predictors, n_predictors);
        let mut xty = DVector::zeros(n_predictors);
        for o in rows {
            let x = DVector::from_column_slice(&o.x);
            xtx.syger(1.0, &x, &x, 1.0);
            xty.axpy(o.y, &x, 1.0);
        }
        // syger fills only the lower triangle
        xtx.fill_upper_triangle_with_lower_triangle();
        Self {
            n: rows.len(),
            xtx,
            xty,
        }
    }
}

/// Gaussian full conditional of β_t, held in precision form.
#[derive(Clone, Debug)]
pub struct BetaConditional {
    pub mean: DVector<f64>,
    // lower Cholesky factor of the precision
    chol: DMatrix<f64>,
}

impl BetaConditional {
    pub fn new(
        block: &TimeBlock,
        alpha_t: &[f64],
        var_y: f64,
        var_beta: impl Fn(usize) -> f64,
    ) -> Result<Self> {
        let p = alpha_t.len();
        let mut precision = if block.n > 0 {
            &block.xtx / var_y
        } else {
            DMatrix::zeros(p, p)
        };
        let mut rhs = if block.n > 0 {
            &block.xty / var_y
        } else {
            DVector::zeros(p)
        };
        for j in 0..p {
            let vb = var_beta(j);
            precision[(j, j)] += 1.0 / vb;
            rhs[j] += alpha_t[j] / vb;
        }
        let chol = precision.cholesky().ok_or_else(|| {
            Error::Numerical(format!(
                "coefficient precision not positive definite (var_y={var_y})"
            ))
        })?;
        let mean = chol.solve(&rhs);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite coefficient mean".into()));
        }
        Ok(Self {
            mean,
            chol: chol.unpack(),
        })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.mean.len();
        let linv = self
            .chol
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .expect("Cholesky factor has a positive diagonal");
        linv.transpose() * linv
    }

    /// `mean + L⁻ᵀ z` has covariance `(L Lᵀ)⁻¹`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let p = self.mean.len();
        let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let w = self
            .chol
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + w
    }
}

/// One exact draw of β_t from its conditional given the rows at `t`.
/// With no rows it reduces to `Normal(α_t, σ²_β I)`.
pub fn sample_beta_block<R: Rng + ?Sized>(
    obs_at_t: &[Observation],
    alpha_t: &[f64],
    var_y: f64,
    var_beta: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(var_y > 0.0 && var_beta > 0.0) {
        return Err(Error::Numerical(format!(
            "variances must be positive (var_y={var_y}, var_beta={var_beta})"
        )));
    }
    let block = TimeBlock::from_rows(obs_at_t, alpha_t.len());
    Ok(BetaConditional::new(&block, alpha_t, var_y, |_| var_beta)?.sample(rng))
}
