//! Target density zoo: the standard Cauchy t(1), Gaussian mixtures, the
//! Bayesian logistic-regression posterior, and synthetic data generation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::rng::CounterRng;
use crate::types::{GaussianModel, TargetDensity};

/// t-distribution with one degree of freedom (standard Cauchy), normalized:
/// log sqrt(p0(x)) = -log(pi)/2 - log(1 + x^2)/2.
pub fn student_t1_target() -> TargetDensity {
    TargetDensity::new(1, true, |z| {
        let x = z[0];
        -0.5 * std::f64::consts::PI.ln() - 0.5 * x.mul_add(x, 1.0).ln()
    })
    // Heavy tails: keep a wide core; quadrature grids extend further as the
    // model demands via range merging.
    .with_grid_hint(-60.0, 60.0)
}

/// Weights, means, and variances of a 1-D Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let spec = Self {
            weights,
            means,
            variances,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.means.len() || self.weights.len() != self.variances.len() {
            return Err(GapError::InvalidSpec(
                "component lists differ in length".into(),
            ));
        }
        if self.weights.is_empty() {
            return Err(GapError::InvalidSpec(
                "mixture needs at least one component".into(),
            ));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(GapError::InvalidSpec("weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(GapError::InvalidSpec(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        if self.variances.iter().any(|&v| !(v > 0.0)) {
            return Err(GapError::InvalidSpec("variances must be positive".into()));
        }
        Ok(())
    }

    /// Range containing essentially all the mixture mass.
    pub fn range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (m, v) in self.means.iter().zip(&self.variances) {
            let s = v.sqrt();
            lo = lo.min(m - crate::geometry::GRID_SIGMA_SPAN * s);
            hi = hi.max(m + crate::geometry::GRID_SIGMA_SPAN * s);
        }
        (lo, hi)
    }
}

/// Normalized 1-D Gaussian mixture target; the log square root is a
/// log-sum-exp over components.
pub fn mixture_target(spec: &MixtureSpec) -> TargetDensity {
    let spec = spec.clone();
    debug_assert!(spec.validate().is_ok());
    let (lo, hi) = spec.range();
    let log_halves: Vec<(f64, f64, f64)> = spec
        .weights
        .iter()
        .zip(spec.means.iter().zip(&spec.variances))
        .map(|(&w, (&m, &v))| (w.ln() - 0.5 * (2.0 * std::f64::consts::PI * v).ln(), m, v))
        .collect();
    TargetDensity::new(1, true, move |z| {
        let x = z[0];
        // Two passes avoid allocating in this hot path.
        let mut max = f64::NEG_INFINITY;
        for &(lw, m, v) in &log_halves {
            let t = lw - (x - m) * (x - m) / (2.0 * v);
            if t > max {
                max = t;
            }
        }
        let sum: f64 = log_halves
            .iter()
            .map(|&(lw, m, v)| (lw - (x - m) * (x - m) / (2.0 * v) - max).exp())
            .sum();
        0.5 * (max + sum.ln())
    })
    .with_grid_hint(lo, hi)
}

/// Design matrix (leading intercept column), 0/1 labels, and the Gaussian
/// prior for the logistic-regression posterior.
#[derive(Debug, Clone)]
pub struct LogisticDataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl LogisticDataset {
    pub fn validate(&self) -> Result<()> {
        let d = self.prior_mean.len();
        if self.x.ncols() != d || self.prior_cov.nrows() != d || self.prior_cov.ncols() != d {
            return Err(GapError::DimensionMismatch(format!(
                "design has {} columns, prior dimension {d}",
                self.x.ncols()
            )));
        }
        if self.x.nrows() != self.y.len() {
            return Err(GapError::DimensionMismatch(format!(
                "{} rows vs {} labels",
                self.x.nrows(),
                self.y.len()
            )));
        }
        if self.y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(GapError::InvalidSpec("labels must be 0 or 1".into()));
        }
        if nalgebra::Cholesky::new(self.prior_cov.clone()).is_none() {
            return Err(GapError::NotSpd("prior covariance".into()));
        }
        Ok(())
    }

    /// CSV export with header `y,x1,x2,...` (intercept column omitted).
    pub fn to_csv(&self) -> String {
        let covariates = self.x.ncols() - 1;
        let mut out = String::from("y");
        for j in 1..=covariates {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for i in 0..self.x.nrows() {
            out.push_str(&format!("{}", self.y[i] as i64));
            for j in 1..self.x.ncols() {
                out.push_str(&format!(",{}", crate::types::fmt_full(self.x[(i, j)])));
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV produced by [`Self::to_csv`]; the prior is supplied by
    /// the caller since it is not part of the data file.
    pub fn from_csv(text: &str, prior_mean: DVector<f64>, prior_cov: DMatrix<f64>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| GapError::InvalidSpec("empty dataset file".into()))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"y") {
            return Err(GapError::InvalidSpec(
                "dataset header must start with `y`".into(),
            ));
        }
        let covariates = cols.len() - 1;
        let mut ys = Vec::new();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != covariates + 1 {
                return Err(GapError::InvalidSpec(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    covariates + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    GapError::InvalidSpec(format!("bad number {s:?} on row {}", lineno + 2))
                })
            };
            ys.push(parse(fields[0])?);
            let mut row = vec![1.0];
            for f in &fields[1..] {
                row.push(parse(f)?);
            }
            rows.push(row);
        }
        let n = rows.len();
        let x = DMatrix::from_fn(n, covariates + 1, |i, j| rows[i][j]);
        let data = Self {
            x,
            y: DVector::from_vec(ys),
            prior_mean,
            prior_cov,
        };
        data.validate()?;
        Ok(data)
    }
}

/// log(1 + exp(u)) without overflow.
#[inline]
pub fn log1p_exp(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Unnormalized logistic-regression posterior over the coefficients:
/// log_sqrt(beta) = [sum_i (y_i u_i - log(1+e^{u_i})) + log N(beta; prior)] / 2
/// with u_i the linear predictor. The unknown marginal-likelihood factor is
/// omitted and signaled through `normalized = false`.
pub fn logistic_posterior_target(data: &LogisticDataset) -> Result<TargetDensity> {
    data.validate()?;
    let d = data.prior_mean.len();
    let prior = GaussianModel::new(
        data.prior_mean.clone(),
        nalgebra::Cholesky::new(data.prior_cov.clone())
            .ok_or_else(|| GapError::NotSpd("prior covariance".into()))?
            .l(),
    )?;
    let x = data.x.clone();
    let y = data.y.clone();
    Ok(TargetDensity::new(d, false, move |beta| {
        let b = DVector::from_column_slice(beta);
        let u = &x * &b;
        let mut log_lik = 0.0;
        for i in 0..u.len() {
            log_lik += y[i] * u[i] - log1p_exp(u[i]);
        }
        let log_prior = 2.0
            * crate::types::gaussian_log_sqrt_density(&prior, &b).expect("prior dimension matches");
        0.5 * (log_lik + log_prior)
    }))
}

/// Synthetic logistic data: covariate pairs from a bivariate normal with the
/// given correlation, labels Bernoulli(sigmoid(X beta)). Deterministic in the
/// seed; row i consumes counters 3i..3i+2 of the stream.
pub fn generate_logistic_data(
    n: usize,
    beta: &DVector<f64>,
    rho: f64,
    seed: u64,
    prior_mean: DVector<f64>,
    prior_cov: DMatrix<f64>,
) -> Result<LogisticDataset> {
    if n == 0 {
        return Err(GapError::InvalidSpec(
            "need at least one observation".into(),
        ));
    }
    if beta.len() != 3 {
        return Err(GapError::DimensionMismatch(format!(
            "coefficient vector has length {}, expected 3",
            beta.len()
        )));
    }
    if !(rho.abs() < 1.0) {
        return Err(GapError::BadCorrelation(rho));
    }
    let rng = CounterRng::new(seed);
    let cross = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, 3);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let base = 3 * i as u64;
        let xi1 = rng.standard_normal(base);
        let xi2 = rng.standard_normal(base + 1);
        let x1 = xi1;
        let x2 = rho * xi1 + cross * xi2;
        x[(i, 0)] = 1.0;
        x[(i, 1)] = x1;
        x[(i, 2)] = x2;
        let u = beta[0] + beta[1] * x1 + beta[2] * x2;
        let p = 1.0 / (1.0 + (-u).exp());
        y[i] = if rng.bernoulli(base + 2, p) { 1.0 } else { 0.0 };
    }
    let data = LogisticDataset {
        x,
        y,
        prior_mean,
        prior_cov,
    };
    data.validate()?;
    Ok(data)
}
