//! Comparison methods: Laplace approximation and quadrature-based 1-D
//! divergence minimizers (alpha family, both KL directions, Hellinger).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::geometry::{self, GridDensity};
use crate::simplex::{self, SimplexOptions};
use crate::types::{GaussianModel, ScalarGaussian, TargetDensity};

/// Divergence selector for the 1-D quadrature minimizers. `Kl` is
/// KL(model || target), the zero-forcing direction the alpha family reaches
/// as alpha -> 0; `ReverseKl` is KL(target || model), the zero-avoiding
/// direction at alpha -> 1; `Hellinger` sits at alpha = 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceKind {
    Alpha(f64),
    Kl,
    ReverseKl,
    Hellinger,
}

impl DivergenceKind {
    pub fn label(&self) -> String {
        match self {
            DivergenceKind::Alpha(a) => format!("alpha_{a}"),
            DivergenceKind::Kl => "kl".into(),
            DivergenceKind::ReverseKl => "reverse_kl".into(),
            DivergenceKind::Hellinger => "hellinger".into(),
        }
    }
}

/// Finite-difference step scale for gradients and Hessians.
const FD_STEP: f64 = 1e-5;

fn fd_gradient(f: &impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let h = FD_STEP * (1.0 + x[i].abs());
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        g[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

fn fd_hessian(f: &impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = FD_STEP * (1.0 + x[j].abs());
        let mut plus = x.clone();
        plus[j] += step;
        let mut minus = x.clone();
        minus[j] -= step;
        let gp = fd_gradient(f, &plus);
        let gm = fd_gradient(f, &minus);
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    // Symmetrize the finite-difference noise away.
    let ht = h.transpose();
    (h + ht) * 0.5
}

/// Gaussian at the posterior mode with covariance from the inverse negative
/// Hessian of the log density. The mode is found by damped Newton on
/// -2 log_sqrt (the negative log density), with gradient norm below 1e-6
/// required at exit.
pub fn laplace_approx(
    target: &TargetDensity,
    init: &DVector<f64>,
    max_newton: usize,
) -> Result<GaussianModel> {
    if init.len() != target.dim() {
        return Err(GapError::DimensionMismatch(format!(
            "init length {} vs target dimension {}",
            init.len(),
            target.dim()
        )));
    }
    let objective = |x: &DVector<f64>| -2.0 * target.log_sqrt(x.as_slice());
    let mut x = init.clone();
    let mut fx = objective(&x);
    let mut converged = false;
    for _ in 0..max_newton {
        let grad = fd_gradient(&objective, &x);
        if grad.norm() < 1e-6 {
            converged = true;
            break;
        }
        let hess = fd_hessian(&objective, &x);
        // Newton direction when the local Hessian is PD, gradient descent
        // otherwise.
        let direction = match nalgebra::Cholesky::new(hess.clone()) {
            Some(chol) => -chol.solve(&grad),
            None => -&grad / grad.norm().max(1.0),
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &x + &direction * step;
            let fc = objective(&cand);
            if fc < fx {
                x = cand;
                fx = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let grad = fd_gradient(&objective, &x);
    if !converged && grad.norm() >= 1e-6 {
        return Err(GapError::NoConvergence(format!(
            "gradient norm {:.3e} after {max_newton} Newton iterations",
            grad.norm()
        )));
    }
    let hess = fd_hessian(&objective, &x);
    let hess_chol = nalgebra::Cholesky::new(hess).ok_or(GapError::IndefiniteHessian)?;
    // Sigma = H^{-1}; its Cholesky factor is obtained by inverting the
    // factor of H and re-factoring the product.
    let n = x.len();
    let mut hinv = DMatrix::identity(n, n);
    hess_chol.solve_mut(&mut hinv);
    let hinv = (&hinv + hinv.transpose()) * 0.5;
    let cov_chol = nalgebra::Cholesky::new(hinv).ok_or(GapError::IndefiniteHessian)?;
    GaussianModel::new(x, cov_chol.l())
}

/// Alpha-divergence between two grid densities:
/// integral of [alpha p + (1-alpha) p' - p^alpha p'^(1-alpha)] / (alpha(1-alpha)).
pub fn alpha_divergence_1d(p: &GridDensity, p2: &GridDensity, alpha: f64) -> Result<f64> {
    if p.grid() != p2.grid() {
        return Err(GapError::GridMismatch);
    }
    if alpha == 0.0 || alpha == 1.0 {
        return Err(GapError::DomainError(
            "alpha in {0, 1} dispatches to the KL limits".into(),
        ));
    }
    let integrand: Vec<f64> = p
        .values()
        .iter()
        .zip(p2.values())
        .map(|(&a, &b)| {
            let geometric = if a > 0.0 && b > 0.0 {
                (alpha * a.ln() + (1.0 - alpha) * b.ln()).exp()
            } else {
                0.0
            };
            (alpha * a + (1.0 - alpha) * b - geometric) / (alpha * (1.0 - alpha))
        })
        .collect();
    Ok(geometry::trapezoid(p.grid(), &integrand))
}

/// KL(p || p2) by trapezoid quadrature; zero-density nodes of p contribute 0.
pub fn kl_divergence_1d(p: &GridDensity, p2: &GridDensity) -> Result<f64> {
    if p.grid() != p2.grid() {
        return Err(GapError::GridMismatch);
    }
    let integrand: Vec<f64> = p
        .values()
        .iter()
        .zip(p2.values())
        .map(|(&a, &b)| {
            if a <= 0.0 {
                0.0
            } else if b <= 0.0 {
                f64::INFINITY
            } else {
                a * (a.ln() - b.ln())
            }
        })
        .collect();
    Ok(geometry::trapezoid(p.grid(), &integrand))
}

/// Divergence from N(mu, var) to a 1-D target, by quadrature on a grid
/// covering both. The model is p' in the alpha formula; `Kl` integrates
/// model-against-target, `ReverseKl` target-against-model.
pub fn divergence_to_gaussian(
    target: &TargetDensity,
    kind: DivergenceKind,
    mu: f64,
    var: f64,
    nodes: usize,
) -> Result<f64> {
    let range = match target.grid_hint() {
        Some(hint) => geometry::merge_ranges(hint, geometry::gaussian_range(mu, var)),
        None => geometry::gaussian_range(mu, var),
    };
    let p = GridDensity::from_target(target, range.0, range.1, nodes)?;
    let q = GridDensity::gaussian(mu, var, range.0, range.1, nodes)?;
    match kind {
        DivergenceKind::Alpha(a) => alpha_divergence_1d(&p, &q, a),
        DivergenceKind::Kl => kl_divergence_1d(&q, &p),
        DivergenceKind::ReverseKl => kl_divergence_1d(&p, &q),
        DivergenceKind::Hellinger => {
            let overlap = geometry::overlap_quadrature_1d(&p, &q)?;
            // H^2; same minimizer as H.
            Ok(1.0 - overlap.min(1.0))
        }
    }
}

/// Minimize the chosen quadrature divergence over (mu, log sigma) with
/// Nelder-Mead; the grid is rebuilt around the current iterate at every
/// evaluation. `NoConvergence` when the simplex has not collapsed to 1e-6
/// within 2000 evaluations.
pub fn minimize_divergence_1d(
    target: &TargetDensity,
    kind: DivergenceKind,
    init: &ScalarGaussian,
) -> Result<ScalarGaussian> {
    if target.dim() != 1 {
        return Err(GapError::DimensionMismatch(
            "divergence minimizers are 1-D".into(),
        ));
    }
    let objective = |x: &[f64]| {
        let mu = x[0];
        let var = (2.0 * x[1]).exp();
        divergence_to_gaussian(target, kind, mu, var, geometry::DEFAULT_GRID_NODES)
            .unwrap_or(f64::INFINITY)
    };
    let x0 = [init.mean, init.sigma.abs().ln()];
    let options = SimplexOptions {
        initial_step: 0.5,
        diameter_tol: 1e-8,
        max_evals: 2000,
    };
    let result = simplex::minimize(objective, &x0, &options);
    if result.diameter > 1e-6 {
        return Err(GapError::NoConvergence(format!(
            "simplex diameter {:.3e} after {} evaluations",
            result.diameter, result.evals
        )));
    }
    ScalarGaussian::new(result.x[0], result.x[1].exp())
}
