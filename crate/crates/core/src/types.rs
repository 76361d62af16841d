//! Shared domain types: the Gaussian approximating point, evaluatable targets,
//! optimizer configuration, and the per-iteration trace.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};

/// Magnitude below which a Cholesky diagonal entry counts as singular.
pub const DIAG_FLOOR: f64 = 1e-12;

/// A point on the Gaussian model manifold: mean plus lower-triangular
/// Cholesky factor of the covariance. Entries of the factor are unconstrained
/// in sign; only the diagonal magnitudes must stay above [`DIAG_FLOOR`].
///
/// Immutable after construction; constructors validate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    dim: usize,
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let model = Self {
            dim: mean.len(),
            mean,
            chol,
        };
        model.validate()?;
        Ok(model)
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            dim,
            mean: DVector::zeros(dim),
            chol: DMatrix::identity(dim, dim),
        }
    }

    /// 1-D Gaussian with the given mean and (possibly negative) root scale.
    pub fn scalar(mean: f64, sigma: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, sigma),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Covariance Sigma = L L^T.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// Column-major lower-triangle vectorization of L, length D(D+1)/2.
    pub fn vech_chol(&self) -> DVector<f64> {
        crate::matops::vech(&self.chol).expect("factor is square")
    }

    /// Rebuild a model from mean and vech(L). Fails if a diagonal entry of
    /// the implied factor falls below the singularity floor.
    pub fn from_mean_and_vech(mean: DVector<f64>, vech: &DVector<f64>) -> Result<Self> {
        let d = mean.len();
        if vech.len() != d * (d + 1) / 2 {
            return Err(GapError::DimensionMismatch(format!(
                "vech length {} does not match dimension {d}",
                vech.len()
            )));
        }
        let mut chol = DMatrix::zeros(d, d);
        let mut k = 0;
        for j in 0..d {
            for i in j..d {
                chol[(i, j)] = vech[k];
                k += 1;
            }
        }
        Self::new(mean, chol)
    }

    /// log |Sigma| from the factor diagonal.
    pub fn log_det_sigma(&self) -> f64 {
        2.0 * (0..self.dim)
            .map(|i| self.chol[(i, i)].abs().ln())
            .sum::<f64>()
    }

    /// Solve L x = b (forward substitution).
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.chol.solve_lower_triangular_mut(&mut x);
        x
    }

    /// Sigma^{-1} v via the two triangular solves.
    pub fn solve_sigma(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut x = v.clone();
        self.chol.solve_lower_triangular_mut(&mut x);
        self.chol.transpose().solve_upper_triangular_mut(&mut x);
        x
    }

    /// Sigma^{-1} assembled as L^{-T} L^{-1} (symmetric by construction).
    pub fn sigma_inverse(&self) -> DMatrix<f64> {
        let mut linv = DMatrix::identity(self.dim, self.dim);
        self.chol.solve_lower_triangular_mut(&mut linv);
        linv.transpose() * linv
    }

    pub fn validate(&self) -> Result<()> {
        validate_gaussian(self)
    }
}

/// Check all `GaussianModel` invariants.
pub fn validate_gaussian(model: &GaussianModel) -> Result<()> {
    let d = model.dim;
    if d == 0 {
        return Err(GapError::DimensionMismatch(
            "dimension must be positive".into(),
        ));
    }
    if model.mean.len() != d || model.chol.nrows() != d || model.chol.ncols() != d {
        return Err(GapError::DimensionMismatch(format!(
            "mean length {} vs factor {}x{} vs dim {d}",
            model.mean.len(),
            model.chol.nrows(),
            model.chol.ncols()
        )));
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if model.chol[(i, j)] != 0.0 {
                return Err(GapError::NotLowerTriangular);
            }
        }
    }
    for i in 0..d {
        if model.chol[(i, i)].abs() < DIAG_FLOOR {
            return Err(GapError::ZeroDiagonal {
                index: i,
                floor: DIAG_FLOOR,
            });
        }
    }
    Ok(())
}

/// log q(z | mu, Sigma) for the square-root density
/// q = (2 pi)^{-D/4} |Sigma|^{-1/4} exp(-(z-mu)^T Sigma^{-1} (z-mu) / 4),
/// computed through triangular solves against L.
pub fn gaussian_log_sqrt_density(model: &GaussianModel, z: &DVector<f64>) -> Result<f64> {
    if z.len() != model.dim {
        return Err(GapError::DimensionMismatch(format!(
            "point length {} vs model dimension {}",
            z.len(),
            model.dim
        )));
    }
    let centered = z - &model.mean;
    let half = model.solve_lower(&centered);
    let quad = half.norm_squared();
    Ok(
        -(model.dim as f64) / 4.0 * (2.0 * std::f64::consts::PI).ln()
            - 0.25 * model.log_det_sigma()
            - 0.25 * quad,
    )
}

/// 1-D Gaussian parameterized by mean and signed root scale sigma
/// (variance sigma^2; sigma itself is unconstrained apart from sigma != 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarGaussian {
    pub mean: f64,
    pub sigma: f64,
}

impl ScalarGaussian {
    pub fn new(mean: f64, sigma: f64) -> Result<Self> {
        if sigma.abs() < DIAG_FLOOR {
            return Err(GapError::ZeroDiagonal {
                index: 0,
                floor: DIAG_FLOOR,
            });
        }
        Ok(Self { mean, sigma })
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn to_model(&self) -> GaussianModel {
        GaussianModel::scalar(self.mean, self.sigma).expect("validated at construction")
    }
}

/// Evaluator of half the log density, as a function of the point.
pub type LogSqrtFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// An evaluatable (possibly unnormalized) target density, carried through its
/// log square root: log_sqrt(z) = log sqrt(p~(z)) = log p~(z) / 2.
///
/// Unknown normalizers are never folded into `log_sqrt`; the `normalized`
/// flag tells the Monte Carlo estimators whether self-normalization is
/// required.
pub struct TargetDensity {
    dim: usize,
    log_sqrt: LogSqrtFn,
    normalized: bool,
    log_normalizer: Option<f64>,
    /// Interval carrying essentially all 1-D mass; used to build quadrature
    /// grids. `None` for multivariate targets.
    grid_hint: Option<(f64, f64)>,
}

impl TargetDensity {
    pub fn new(
        dim: usize,
        normalized: bool,
        log_sqrt: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            log_sqrt: Box::new(log_sqrt),
            normalized,
            log_normalizer: None,
            grid_hint: None,
        }
    }

    pub fn with_log_normalizer(mut self, log_z: f64) -> Self {
        self.log_normalizer = Some(log_z);
        self
    }

    pub fn with_grid_hint(mut self, lo: f64, hi: f64) -> Self {
        self.grid_hint = Some((lo, hi));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn log_normalizer(&self) -> Option<f64> {
        self.log_normalizer
    }

    pub fn grid_hint(&self) -> Option<(f64, f64)> {
        self.grid_hint
    }

    pub fn log_sqrt(&self, z: &[f64]) -> f64 {
        (self.log_sqrt)(z)
    }

    pub fn log_sqrt_1d(&self, x: f64) -> f64 {
        (self.log_sqrt)(&[x])
    }

    /// Density value p~(z) = exp(2 log_sqrt(z)).
    pub fn density(&self, z: &[f64]) -> f64 {
        (2.0 * self.log_sqrt(z)).exp()
    }
}

impl std::fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TargetDensity")
            .field("dim", &self.dim)
            .field("normalized", &self.normalized)
            .field("log_normalizer", &self.log_normalizer)
            .finish()
    }
}

/// Step sizes, sample budget, and stopping thresholds for the descent loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Step size for the mean block (epsilon_alpha).
    pub step_mu: f64,
    /// Step size for the Cholesky block (epsilon_beta).
    pub step_l: f64,
    /// Optional per-coordinate overrides for the mean block.
    pub step_mu_coords: Option<Vec<f64>>,
    /// Optional per-coordinate overrides for the Cholesky block.
    pub step_l_coords: Option<Vec<f64>>,
    /// Monte Carlo samples per iteration (T).
    pub mc_samples: usize,
    pub max_iters: usize,
    /// Stop once the gradient norm stays below this for 3 consecutive iterations.
    pub grad_tol: f64,
    /// Stop once the distance change over a 25-iteration window falls below this.
    pub dist_tol: f64,
    /// Overlap clamp applied before arccos and the gradient denominator; in (0, 1e-3].
    pub overlap_clamp: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_mu: 0.1,
            step_l: 5.0,
            step_mu_coords: None,
            step_l_coords: None,
            mc_samples: 10_000,
            max_iters: 1000,
            grad_tol: 1e-3,
            dist_tol: 1e-4,
            overlap_clamp: 1e-9,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_mu", self.step_mu),
            ("step_l", self.step_l),
            ("grad_tol", self.grad_tol),
            ("dist_tol", self.dist_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(GapError::InvalidSpec(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.mc_samples < 2 {
            return Err(GapError::InvalidSpec(
                "mc_samples must be at least 2".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(GapError::InvalidSpec("max_iters must be positive".into()));
        }
        if !(self.overlap_clamp > 0.0 && self.overlap_clamp <= 1e-3) {
            return Err(GapError::InvalidSpec(format!(
                "overlap_clamp must lie in (0, 1e-3], got {}",
                self.overlap_clamp
            )));
        }
        if let Some(v) = &self.step_mu_coords {
            if v.iter().any(|&s| !(s > 0.0)) {
                return Err(GapError::InvalidSpec("step_mu_coords must be > 0".into()));
            }
        }
        if let Some(v) = &self.step_l_coords {
            if v.iter().any(|&s| !(s > 0.0)) {
                return Err(GapError::InvalidSpec("step_l_coords must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// One iteration of the descent, recorded before the parameter update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub mean: Vec<f64>,
    pub vech_chol: Vec<f64>,
    /// Clamped overlap estimate; `distance` is exactly its arccosine.
    pub overlap: f64,
    pub distance: f64,
    pub grad_norm: f64,
}

/// Full per-iteration history of a descent run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GapTrace {
    pub records: Vec<TraceRecord>,
}

impl GapTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// CSV with header `iter,mu_1..mu_D,l_1..l_m,overlap,distance,grad_norm`,
    /// LF line endings, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let (d, m) = self
            .records
            .first()
            .map(|r| (r.mean.len(), r.vech_chol.len()))
            .unwrap_or((0, 0));
        let mut out = String::from("iter");
        for i in 1..=d {
            out.push_str(&format!(",mu_{i}"));
        }
        for i in 1..=m {
            out.push_str(&format!(",l_{i}"));
        }
        out.push_str(",overlap,distance,grad_norm\n");
        for r in &self.records {
            out.push_str(&r.iter.to_string());
            for v in r.mean.iter().chain(r.vech_chol.iter()) {
                out.push_str(&format!(",{}", fmt_full(*v)));
            }
            out.push_str(&format!(
                ",{},{},{}\n",
                fmt_full(r.overlap),
                fmt_full(r.distance),
                fmt_full(r.grad_norm)
            ));
        }
        out
    }
}

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Plain-data mirror of [`GaussianModel`] for JSON files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianModelJson {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub chol: Vec<Vec<f64>>,
}

impl GaussianModelJson {
    pub fn from_model(model: &GaussianModel) -> Self {
        let d = model.dim();
        Self {
            dim: d,
            mean: model.mean().iter().copied().collect(),
            chol: (0..d)
                .map(|i| (0..d).map(|j| model.chol()[(i, j)]).collect())
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<GaussianModel> {
        if self.mean.len() != self.dim || self.chol.len() != self.dim {
            return Err(GapError::DimensionMismatch(format!(
                "dim field {} vs mean length {} vs factor rows {}",
                self.dim,
                self.mean.len(),
                self.chol.len()
            )));
        }
        if self.chol.iter().any(|row| row.len() != self.dim) {
            return Err(GapError::DimensionMismatch("ragged factor rows".into()));
        }
        let mean = DVector::from_vec(self.mean.clone());
        let chol = DMatrix::from_fn(self.dim, self.dim, |i, j| self.chol[i][j]);
        GaussianModel::new(mean, chol)
    }
}
