//! Closed-form tangent-space machinery for the Gaussian family: Gram
//! matrices of the mean- and covariance-direction bases, the U/V operator
//! chain, the fourth-moment expectation E(W^T W), and the orthonormalization
//! coefficients consumed by the projection estimators.
//!
//! Conventions: at theta_0 = (mu_0, L_0) the non-orthonormal tangent basis is
//!   v_mu  = q(z) * (z - mu_0)^T Sigma_0^{-1} / 2                (1 x D)
//!   v_l   = q(z) * W_D(z) U_D V_D                               (1 x m)
//! with m = D(D+1)/2,
//!   W_D(z) = -vec(Sigma^{-1})^T/4 + ((z-mu)^T kron (z-mu)^T)(Sigma^{-1} kron Sigma^{-1})/4,
//!   U_D    = I + T_{D,D} - R_D,
//!   V_D    = [(I kron L_0) T_{D,D} + (L_0 kron I)] S_D^T.

use nalgebra::{DMatrix, DVector};

use crate::error::{GapError, Result};
use crate::matops::{self, OperatorMatrices};
use crate::types::{GaussianModel, DIAG_FLOOR};

/// Relative eigenvalue floor below which a covariance-direction Gram is
/// treated as numerically singular.
const GRAM_EIGEN_FLOOR: f64 = 1e-10;

/// Gram matrices and orthonormalization coefficients of the tangent basis at
/// one Gaussian model point. Immutable once built.
#[derive(Debug, Clone)]
pub struct TangentGram {
    /// Gram of the mean directions: Sigma^{-1} / 4 (D x D).
    pub a: DMatrix<f64>,
    /// Gram of the covariance directions (m x m).
    pub b: DMatrix<f64>,
    /// U_D (D^2 x D^2).
    pub u: DMatrix<f64>,
    /// V_D (D^2 x m).
    pub v: DMatrix<f64>,
    /// Lower-triangular coefficients with coeff_mu * a * coeff_mu^T = I.
    pub coeff_mu: DMatrix<f64>,
    /// Lower-triangular coefficients with coeff_l * b * coeff_l^T = I.
    pub coeff_l: DMatrix<f64>,
}

/// Gram of the mean-direction basis: <v_mu_i, v_mu_j> = (Sigma^{-1})_ij / 4,
/// assembled through triangular solves.
pub fn gram_mean_block(model: &GaussianModel) -> DMatrix<f64> {
    model.sigma_inverse() * 0.25
}

/// U_D and V_D at the model point. `RankDeficient` when the Cholesky factor
/// is singular (the only way V can lose column rank).
pub fn build_uv(
    model: &GaussianModel,
    ops: &OperatorMatrices,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = model.dim();
    assert_eq!(ops.dim(), d, "operator dimension mismatch");
    for i in 0..d {
        if model.chol()[(i, i)].abs() < DIAG_FLOOR {
            return Err(GapError::RankDeficient);
        }
    }
    let t = ops.t_dense();
    let r = ops.r_dense();
    let eye_d2 = DMatrix::identity(d * d, d * d);
    let u = eye_d2 + &t - r;
    let eye = DMatrix::identity(d, d);
    let v = (matops::kron(&eye, model.chol()) * &t + matops::kron(model.chol(), &eye))
        * ops.s_dense().transpose();
    Ok((u, v))
}

/// E(W_D^T W_D): the four-term closed form driven by Isserlis' theorem,
/// everything scaled by 1/16.
pub fn expected_wtw(model: &GaussianModel) -> DMatrix<f64> {
    let sigma = model.covariance();
    let sigma_inv = model.sigma_inverse();
    let vec_sigma = matops::vec(&sigma);
    let vec_sigma_inv = matops::vec(&sigma_inv);
    let inv_kron_inv = matops::kron(&sigma_inv, &sigma_inv);
    let fourth = matops::isserlis_fourth_moment(&sigma).expect("model covariance is SPD");

    let term1 = &vec_sigma_inv * vec_sigma_inv.transpose();
    let term2 = &vec_sigma_inv * (vec_sigma.transpose() * &inv_kron_inv);
    let term3 = (&inv_kron_inv * &vec_sigma) * vec_sigma_inv.transpose();
    let term4 = &inv_kron_inv * fourth * &inv_kron_inv;
    (term1 - term2 - term3 + term4) / 16.0
}

/// Gram of the covariance-direction basis: B = V^T U^T E(W^T W) U V,
/// symmetrized, with a near-singularity guard.
pub fn gram_cov_block(model: &GaussianModel, ops: &OperatorMatrices) -> Result<DMatrix<f64>> {
    let (u, v) = build_uv(model, ops)?;
    let ew = expected_wtw(model);
    let uv = &u * &v;
    let b = uv.transpose() * ew * &uv;
    // Absorb ~1e-14 assembly asymmetry so downstream Cholesky sees an
    // exactly symmetric matrix.
    let b = (&b + b.transpose()) * 0.5;
    let eigen = b.symmetric_eigenvalues();
    let max_ev = eigen.max();
    if !(eigen.min() > GRAM_EIGEN_FLOOR * max_ev) {
        return Err(GapError::NotSpd(format!(
            "covariance-direction Gram has eigenvalue ratio {:e}",
            eigen.min() / max_ev
        )));
    }
    Ok(b)
}

/// Orthonormalization coefficients for both blocks.
pub fn orthonormal_coefficients(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    Ok((
        matops::gram_orthonormal_coeffs(a)?,
        matops::gram_orthonormal_coeffs(b)?,
    ))
}

impl TangentGram {
    /// Assemble the full tangent-space data at a model point.
    pub fn build(model: &GaussianModel) -> Result<Self> {
        let ops = matops::build_operator_matrices(model.dim());
        let a = gram_mean_block(model);
        let (u, v) = build_uv(model, &ops)?;
        let b = gram_cov_block(model, &ops)?;
        let (coeff_mu, coeff_l) = orthonormal_coefficients(&a, &b)?;
        Ok(Self {
            a,
            b,
            u,
            v,
            coeff_mu,
            coeff_l,
        })
    }

    /// U_D V_D, the per-sample factor chain of the covariance-direction
    /// estimator.
    pub fn uv(&self) -> DMatrix<f64> {
        &self.u * &self.v
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn vech_len(&self) -> usize {
        self.b.nrows()
    }
}

/// The 1 x D^2 row W_D(z) evaluated at a point, returned as a vector:
/// (vec(s s^T) - vec(Sigma^{-1})) / 4 with s = Sigma^{-1} (z - mu).
pub fn w_row(model: &GaussianModel, z: &DVector<f64>) -> DVector<f64> {
    let centered = z - model.mean();
    let s = model.solve_sigma(&centered);
    let outer = &s * s.transpose();
    (matops::vec(&outer) - matops::vec(&model.sigma_inverse())) * 0.25
}
