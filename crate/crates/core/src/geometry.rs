//! The unit sphere of square-root densities: overlaps, the spherical Fisher
//! (arccosine) distance, Hellinger distance, great-circle geodesics, and the
//! scalar that turns projection coefficients into the negative gradient.

use nalgebra::DVector;

use crate::error::{GapError, Result};
use crate::types::{GaussianModel, TargetDensity};

/// Default clamp keeping overlaps strictly inside (-1, 1).
pub const DEFAULT_OVERLAP_CLAMP: f64 = 1e-9;

/// Number of nodes in the default quadrature grids.
pub const DEFAULT_GRID_NODES: usize = 4001;

/// How many root scales a default grid extends beyond a Gaussian mean.
pub const GRID_SIGMA_SPAN: f64 = 12.0;

/// A 1-D density sampled on a strictly increasing grid.
#[derive(Debug, Clone)]
pub struct GridDensity {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(GapError::DimensionMismatch(format!(
                "grid length {} vs values length {}",
                grid.len(),
                values.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GapError::InvalidSpec(
                "grid must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(GapError::InvalidSpec(
                "density values must be finite and >= 0".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    /// Uniform grid over [lo, hi] with the density given pointwise.
    pub fn from_fn(lo: f64, hi: f64, nodes: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = (hi - lo) / (nodes - 1) as f64;
        let grid: Vec<f64> = (0..nodes).map(|k| lo + h * k as f64).collect();
        let values = grid.iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    /// Sample an evaluatable 1-D target on a uniform grid.
    pub fn from_target(target: &TargetDensity, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if target.dim() != 1 {
            return Err(GapError::DimensionMismatch("grid densities are 1-D".into()));
        }
        Self::from_fn(lo, hi, nodes, |x| target.density(&[x]))
    }

    /// N(mu, sigma^2) sampled on a uniform grid.
    pub fn gaussian(mu: f64, var: f64, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
        Self::from_fn(lo, hi, nodes, |x| {
            norm * (-(x - mu) * (x - mu) / (2.0 * var)).exp()
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Trapezoid integral of the stored values.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.integral() - 1.0).abs() <= tol
    }

    /// Pointwise square root, leaving the p-scale for the q-scale.
    pub fn sqrt(&self) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.sqrt()).collect(),
        }
    }
}

/// A (possibly signed) function on a grid; used for square-root densities
/// and tangent functions, which need not stay nonnegative.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(GapError::DimensionMismatch(
                "grid/value length mismatch".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// L^2 inner product by trapezoid rule.
    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        if self.grid != other.grid {
            return Err(GapError::GridMismatch);
        }
        let prod: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(trapezoid(&self.grid, &prod))
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).expect("same grid").sqrt()
    }
}

/// Trapezoid rule on a (possibly nonuniform) grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 1..grid.len() {
        acc += 0.5 * (grid[k] - grid[k - 1]) * (values[k] + values[k - 1]);
    }
    acc
}

/// Root-density overlap of two grid densities on identical grids:
/// the trapezoid estimate of the integral of sqrt(p * p2).
pub fn overlap_quadrature_1d(p: &GridDensity, p2: &GridDensity) -> Result<f64> {
    if p.grid != p2.grid {
        return Err(GapError::GridMismatch);
    }
    let integrand: Vec<f64> = p
        .values
        .iter()
        .zip(&p2.values)
        .map(|(a, b)| (a * b).sqrt())
        .collect();
    Ok(trapezoid(&p.grid, &integrand))
}

pub fn clamp_overlap(overlap: f64, clamp: f64) -> f64 {
    overlap.max(-1.0 + clamp).min(1.0 - clamp)
}

/// arccos of the clamped overlap; the great-circle distance on the sphere of
/// root densities. Always lands strictly inside (0, pi).
pub fn spherical_fisher_distance(overlap: f64, clamp: f64) -> f64 {
    clamp_overlap(overlap, clamp).acos()
}

/// Hellinger distance from an overlap in [0, 1]: sqrt(1 - overlap).
pub fn hellinger_distance(overlap: f64) -> f64 {
    (1.0 - overlap.clamp(0.0, 1.0)).sqrt()
}

/// 1 / sqrt(1 - clamped_overlap^2): the common factor that turns projection
/// coefficients into the negative gradient of the distance.
pub fn negative_gradient_scale(overlap: f64, clamp: f64) -> f64 {
    let c = clamp_overlap(overlap, clamp);
    1.0 / (1.0 - c * c).sqrt()
}

/// Closed-form root-density overlap of two Gaussians (the Bhattacharyya
/// coefficient); serves as the exact oracle for the quadrature overlap.
pub fn bhattacharyya_overlap_gaussians(g1: &GaussianModel, g2: &GaussianModel) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(GapError::DimensionMismatch(format!(
            "models have dimensions {} and {}",
            g1.dim(),
            g2.dim()
        )));
    }
    let sigma_bar = (g1.covariance() + g2.covariance()) * 0.5;
    let chol = nalgebra::Cholesky::new(sigma_bar)
        .ok_or_else(|| GapError::NotSpd("averaged covariance".into()))?;
    let log_det_bar = 2.0 * (0..g1.dim()).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    let diff = g1.mean() - g2.mean();
    let mut half = diff.clone();
    chol.l().solve_lower_triangular_mut(&mut half);
    let quad = half.norm_squared();
    let log_bc =
        -0.125 * quad - 0.5 * (log_det_bar - 0.5 * (g1.log_det_sigma() + g2.log_det_sigma()));
    Ok(log_bc.exp())
}

/// Point at arc length `t` along the great circle from `q` towards `q2`.
///
/// Inputs are unit-norm root densities on identical grids; they are
/// re-normalized in grid metric so the output is exactly unit norm and the
/// endpoint t = arccos(overlap) lands exactly on `q2`.
pub fn geodesic_point(q: &GridFunction, q2: &GridFunction, t: f64) -> Result<GridFunction> {
    if q.grid != q2.grid {
        return Err(GapError::GridMismatch);
    }
    let nq = q.l2_norm();
    let nq2 = q2.l2_norm();
    let ip = q.inner(q2)? / (nq * nq2);
    if ip.abs() >= 1.0 - 1e-9 {
        return Err(GapError::AntipodalOrEqual);
    }
    let dir_norm = (1.0 - ip * ip).sqrt();
    let (st, ct) = t.sin_cos();
    let values: Vec<f64> = q
        .values
        .iter()
        .zip(&q2.values)
        .map(|(&a, &b)| {
            let ua = a / nq;
            let ub = b / nq2;
            ua * ct + (ub - ua * ip) / dir_norm * st
        })
        .collect();
    Ok(GridFunction {
        grid: q.grid.clone(),
        values,
    })
}

/// Default quadrature range for a Gaussian: mean +/- 12 root scales.
pub fn gaussian_range(mu: f64, var: f64) -> (f64, f64) {
    let s = var.sqrt();
    (mu - GRID_SIGMA_SPAN * s, mu + GRID_SIGMA_SPAN * s)
}

/// Hull of two ranges.
pub fn merge_ranges(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.min(b.0), a.1.max(b.1))
}

/// Overlap between a 1-D target and N(mu, var) by trapezoid quadrature on a
/// grid covering both: the low-noise oracle behind the Monte Carlo paths.
pub fn target_gaussian_overlap_quadrature(
    target: &TargetDensity,
    mu: f64,
    var: f64,
    nodes: usize,
) -> Result<f64> {
    let range = match target.grid_hint() {
        Some(hint) => merge_ranges(hint, gaussian_range(mu, var)),
        None => gaussian_range(mu, var),
    };
    let p = GridDensity::from_target(target, range.0, range.1, nodes)?;
    let q = GridDensity::gaussian(mu, var, range.0, range.1, nodes)?;
    overlap_quadrature_1d(&p, &q)
}

/// Mean- and scale-direction tangent functions of a 1-D Gaussian at
/// (mu, sigma), sampled on a grid: the push-forwards of d/dmu and d/dsigma
/// through the square-root map. Used by directional-derivative checks.
pub fn scalar_tangent_functions(mu: f64, sigma: f64, grid: &[f64]) -> (GridFunction, GridFunction) {
    let var = sigma * sigma;
    let model = GaussianModel::scalar(mu, sigma).expect("valid scalar model");
    let q_vals: Vec<f64> = grid
        .iter()
        .map(|&x| {
            crate::types::gaussian_log_sqrt_density(&model, &DVector::from_element(1, x))
                .expect("dimension 1")
                .exp()
        })
        .collect();
    let v_mu: Vec<f64> = grid
        .iter()
        .zip(&q_vals)
        .map(|(&x, &q)| q * (x - mu) / (2.0 * var))
        .collect();
    let v_sigma: Vec<f64> = grid
        .iter()
        .zip(&q_vals)
        .map(|(&x, &q)| q * (-0.5 / sigma + 0.5 * (x - mu) * (x - mu) / (sigma * var)))
        .collect();
    (
        GridFunction {
            grid: grid.to_vec(),
            values: v_mu,
        },
        GridFunction {
            grid: grid.to_vec(),
            values: v_sigma,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use approx::assert_abs_diff_eq;

    fn standard_grid() -> (f64, f64, usize) {
        (-10.0, 10.0, DEFAULT_GRID_NODES)
    }

    #[test]
    fn self_overlap_is_one() {
        let (lo, hi, n) = standard_grid();
        let p = GridDensity::gaussian(0.0, 1.0, lo, hi, n).unwrap();
        assert_abs_diff_eq!(overlap_quadrature_1d(&p, &p).unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn unit_mean_shift_overlap_matches_closed_form() {
        let (lo, hi, n) = standard_grid();
        let p = GridDensity::gaussian(0.0, 1.0, lo, hi, n).unwrap();
        let q = GridDensity::gaussian(1.0, 1.0, lo, hi, n).unwrap();
        assert_abs_diff_eq!(
            overlap_quadrature_1d(&p, &q).unwrap(),
            (-0.125f64).exp(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn distant_gaussians_do_not_overlap() {
        let p = GridDensity::gaussian(0.0, 1.0, -20.0, 70.0, 18001).unwrap();
        let q = GridDensity::gaussian(50.0, 1.0, -20.0, 70.0, 18001).unwrap();
        assert!(overlap_quadrature_1d(&p, &q).unwrap() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let p = GridDensity::gaussian(0.0, 1.0, -10.0, 10.0, 101).unwrap();
        let q = GridDensity::gaussian(0.0, 1.0, -10.0, 10.0, 102).unwrap();
        assert!(matches!(
            overlap_quadrature_1d(&p, &q),
            Err(GapError::GridMismatch)
        ));
    }

    #[test]
    fn distance_clamps_and_maps_known_points() {
        assert_abs_diff_eq!(
            spherical_fisher_distance(1.0, 1e-9),
            (1.0f64 - 1e-9).acos(),
            epsilon = 1e-12
        );
        assert!(spherical_fisher_distance(1.0, 1e-9) < 5e-5);
        assert_abs_diff_eq!(
            spherical_fisher_distance(0.0, 1e-9),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
        // Value from the closed-form Gaussian overlap oracle.
        assert_abs_diff_eq!(
            spherical_fisher_distance((-0.125f64).exp(), 1e-9),
            (-0.125f64).exp().acos(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            (-0.125f64).exp().acos(),
            0.4896513204696193,
            epsilon = 1e-12
        );
    }

    #[test]
    fn hellinger_from_overlap() {
        assert_abs_diff_eq!(hellinger_distance(1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hellinger_distance(0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            hellinger_distance((-0.125f64).exp()),
            (1.0 - (-0.125f64).exp()).sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            hellinger_distance((-0.125f64).exp()),
            0.34278,
            epsilon = 1e-5
        );
    }

    #[test]
    fn distance_hellinger_identity() {
        // d = arccos(1 - H^2) exactly, for overlaps across the range.
        for k in 0..=50 {
            let ov = k as f64 / 50.5;
            let h = hellinger_distance(ov);
            let d = spherical_fisher_distance(ov, 1e-12);
            assert_abs_diff_eq!(d, (1.0 - h * h).acos(), epsilon = 1e-8);
        }
    }

    #[test]
    fn gradient_scale_values() {
        assert_abs_diff_eq!(negative_gradient_scale(0.0, 1e-9), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            negative_gradient_scale(0.8, 1e-9),
            1.0 / 0.6,
            epsilon = 1e-12
        );
        let near_one = negative_gradient_scale(1.0 - 1e-12, 1e-6);
        assert_abs_diff_eq!(
            near_one,
            1.0 / (1.0 - (1.0 - 1e-6f64) * (1.0 - 1e-6)).sqrt(),
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(near_one, 707.1, epsilon = 0.1);
    }

    #[test]
    fn closed_form_overlap_matches_quadrature() {
        let g1 = GaussianModel::scalar(0.0, 1.0).unwrap();
        let g2 = GaussianModel::scalar(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            bhattacharyya_overlap_gaussians(&g1, &g1).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bhattacharyya_overlap_gaussians(&g1, &g2).unwrap(),
            (-0.125f64).exp(),
            epsilon = 1e-12
        );
        let g3 = GaussianModel::scalar(0.0, 2.0).unwrap();
        assert_abs_diff_eq!(
            bhattacharyya_overlap_gaussians(&g1, &g3).unwrap(),
            (0.8f64).sqrt(),
            epsilon = 1e-12
        );
        // Quadrature agreement for both nontrivial pairs.
        let (lo, hi, n) = (-30.0, 30.0, 12001);
        let p1 = GridDensity::gaussian(0.0, 1.0, lo, hi, n).unwrap();
        let p2 = GridDensity::gaussian(1.0, 1.0, lo, hi, n).unwrap();
        let p3 = GridDensity::gaussian(0.0, 4.0, lo, hi, n).unwrap();
        assert_abs_diff_eq!(
            overlap_quadrature_1d(&p1, &p2).unwrap(),
            (-0.125f64).exp(),
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            overlap_quadrature_1d(&p1, &p3).unwrap(),
            (0.8f64).sqrt(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn closed_form_overlap_multivariate_consistency() {
        // 2-D: overlap of independent products equals product of overlaps.
        let id = nalgebra::DMatrix::identity(2, 2);
        let g1 = GaussianModel::new(nalgebra::dvector![0.0, 0.0], id.clone()).unwrap();
        let g2 = GaussianModel::new(nalgebra::dvector![1.0, 1.0], id).unwrap();
        let expected = (-0.25f64).exp();
        assert_abs_diff_eq!(
            bhattacharyya_overlap_gaussians(&g1, &g2).unwrap(),
            expected,
            epsilon = 1e-12
        );
        let g3 = GaussianModel::standard(3);
        assert!(bhattacharyya_overlap_gaussians(&g1, &g3).is_err());
    }

    #[test]
    fn geodesic_properties() {
        let (lo, hi, n) = standard_grid();
        let q = GridDensity::gaussian(0.0, 1.0, lo, hi, n).unwrap().sqrt();
        let q2 = GridDensity::gaussian(1.2, 0.6, lo, hi, n).unwrap().sqrt();

        // t = 0 returns the start point.
        let start = geodesic_point(&q, &q2, 0.0).unwrap();
        let diff: f64 = start
            .values()
            .iter()
            .zip(q.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9);

        // t = d lands on the far endpoint within grid tolerance.
        let ip = q.inner(&q2).unwrap();
        let d = spherical_fisher_distance(ip, 1e-12);
        let end = geodesic_point(&q, &q2, d).unwrap();
        let err: f64 = end
            .values()
            .iter()
            .zip(q2.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "endpoint max deviation {err}");

        // The great circle stays on the sphere at any t.
        for &t in &[0.1, 0.5, 1.3, 2.9] {
            let point = geodesic_point(&q, &q2, t).unwrap();
            assert_abs_diff_eq!(point.l2_norm(), 1.0, epsilon = 1e-6);
        }

        // Unit speed: ||q_{t+h} - q_t|| / h -> 1, checked at h = 1e-4.
        let h = 1e-4;
        let a = geodesic_point(&q, &q2, 0.7).unwrap();
        let b = geodesic_point(&q, &q2, 0.7 + h).unwrap();
        let delta = GridFunction::new(
            a.grid().to_vec(),
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| y - x)
                .collect(),
        )
        .unwrap();
        assert_abs_diff_eq!(delta.l2_norm() / h, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn geodesic_rejects_equal_or_antipodal() {
        let (lo, hi, n) = standard_grid();
        let q = GridDensity::gaussian(0.0, 1.0, lo, hi, n).unwrap().sqrt();
        assert!(matches!(
            geodesic_point(&q, &q, 0.3),
            Err(GapError::AntipodalOrEqual)
        ));
        let neg =
            GridFunction::new(q.grid().to_vec(), q.values().iter().map(|v| -v).collect()).unwrap();
        assert!(matches!(
            geodesic_point(&q, &neg, 0.3),
            Err(GapError::AntipodalOrEqual)
        ));
    }

    #[test]
    fn sqrt_map_is_an_isometry_on_random_pairs() {
        // Distance computed from p-grids via the overlap equals distance
        // computed from q = sqrt(p) grids via the L2 inner product.
        let rng = CounterRng::new(42);
        let (lo, hi, n) = (-25.0, 25.0, 8001);
        for case in 0..20u64 {
            let base = case * 8;
            let mu1 = 3.0 * rng.standard_normal(base);
            let mu2 = 3.0 * rng.standard_normal(base + 1);
            let v1 = (0.3 + rng.uniform(base + 2) * 2.0).powi(2);
            let v2 = (0.3 + rng.uniform(base + 3) * 2.0).powi(2);
            let p1 = GridDensity::gaussian(mu1, v1, lo, hi, n).unwrap();
            let p2 = GridDensity::gaussian(mu2, v2, lo, hi, n).unwrap();
            let via_p = overlap_quadrature_1d(&p1, &p2).unwrap();
            let via_q = p1.sqrt().inner(&p2.sqrt()).unwrap();
            assert_abs_diff_eq!(
                spherical_fisher_distance(via_p, 1e-9),
                spherical_fisher_distance(via_q, 1e-9),
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn directional_derivative_matches_finite_differences() {
        // Analytic -<qdot, sqrt(p0)> / sqrt(1 - <q, sqrt(p0)>^2) against a
        // central difference of the arccos-overlap along the parameter path.
        let target = crate::targets::mixture_target(
            &crate::targets::MixtureSpec::new(vec![0.6, 0.4], vec![-1.0, 2.0], vec![1.0, 0.5])
                .unwrap(),
        );
        let rng = CounterRng::new(7);
        for case in 0..12u64 {
            let base = case * 8;
            let mu = rng.standard_normal(base) * 1.5;
            let sigma = 0.8 + rng.uniform(base + 1) * 1.5;
            let mut dmu = rng.standard_normal(base + 2);
            let mut dsig = rng.standard_normal(base + 3);
            let norm = (dmu * dmu + dsig * dsig).sqrt();
            dmu /= norm;
            dsig /= norm;

            let range = merge_ranges(
                target.grid_hint().unwrap(),
                gaussian_range(mu, sigma * sigma),
            );
            let nodes = 8001;
            let p0 = GridDensity::from_target(&target, range.0, range.1, nodes).unwrap();
            let sqrt_p0 = p0.sqrt();
            let q_of = |m: f64, s: f64| {
                GridDensity::gaussian(m, s * s, range.0, range.1, nodes)
                    .unwrap()
                    .sqrt()
            };

            let q = q_of(mu, sigma);
            let ov = q.inner(&sqrt_p0).unwrap();
            let (v_mu, v_sigma) = scalar_tangent_functions(mu, sigma, q.grid());
            let qdot_ip =
                dmu * v_mu.inner(&sqrt_p0).unwrap() + dsig * v_sigma.inner(&sqrt_p0).unwrap();
            let analytic = -qdot_ip / (1.0 - ov * ov).sqrt();

            let eps = 1e-5;
            let d_plus = q_of(mu + eps * dmu, sigma + eps * dsig)
                .inner(&sqrt_p0)
                .unwrap()
                .acos();
            let d_minus = q_of(mu - eps * dmu, sigma - eps * dsig)
                .inner(&sqrt_p0)
                .unwrap()
                .acos();
            let fd = (d_plus - d_minus) / (2.0 * eps);
            assert_abs_diff_eq!(analytic, fd, epsilon = 1e-4 * analytic.abs().max(1.0));
        }
    }
}
