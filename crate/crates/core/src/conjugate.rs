//! Exact Normal-Gamma machinery: the closed-form posterior, the overlap
//! functional g whose maximizer is that posterior, and the first-order
//! stationarity residuals. This is the analytic ground truth the descent
//! machinery is checked against.

use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::simplex::{self, SimplexOptions};
use crate::special::{digamma, ln_gamma};

/// Parameters (mu, lambda, alpha, beta) of a Normal-Gamma distribution:
/// mean | precision ~ N(mu, (lambda tau)^{-1}), precision ~ Gamma(alpha, beta).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGammaParams {
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NormalGammaParams {
    pub fn new(mu: f64, lambda: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self {
            mu,
            lambda,
            alpha,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v > 0.0) {
                return Err(GapError::DomainError(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mu, self.lambda, self.alpha, self.beta]
    }
}

/// Sufficient statistics of a Gaussian sample: count, mean, and the centered
/// sum of squares S = sum (x_i - xbar)^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianDataSummary {
    pub n: usize,
    pub xbar: f64,
    pub s: f64,
}

impl GaussianDataSummary {
    pub fn new(n: usize, xbar: f64, s: f64) -> Result<Self> {
        if s < 0.0 {
            return Err(GapError::DomainError(format!("S must be >= 0, got {s}")));
        }
        if n <= 1 && s != 0.0 {
            return Err(GapError::DomainError("S must be 0 when n <= 1".into()));
        }
        Ok(Self { n, xbar, s })
    }

    pub fn from_observations(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                n: 0,
                xbar: 0.0,
                s: 0.0,
            };
        }
        let xbar = xs.iter().sum::<f64>() / n as f64;
        let s = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
        Self { n, xbar, s }
    }
}

/// Closed-form posterior update of a Normal-Gamma prior.
pub fn ng_posterior(prior: &NormalGammaParams, data: &GaussianDataSummary) -> NormalGammaParams {
    let n = data.n as f64;
    let mu = (n * data.xbar + prior.lambda * prior.mu) / (n + prior.lambda);
    let lambda = prior.lambda + n;
    let alpha = prior.alpha + n / 2.0;
    let beta = prior.beta
        + data.s / 2.0
        + n * prior.lambda * (data.xbar - prior.mu) * (data.xbar - prior.mu)
            / (2.0 * (n + prior.lambda));
    NormalGammaParams {
        mu,
        lambda,
        alpha,
        beta,
    }
}

/// The starred parameters of the geometric-mean density sqrt(p p'):
/// the Normal-Gamma whose density appears when the two root densities are
/// multiplied, carrying the half-averaged shape values and the three-way
/// quadratic coupling in beta*.
pub fn ng_star_params(
    prior: &NormalGammaParams,
    cand: &NormalGammaParams,
    data: &GaussianDataSummary,
) -> NormalGammaParams {
    let n = data.n as f64;
    let l0 = prior.lambda;
    let ln = cand.lambda;
    let total = n + l0 + ln;
    let mu = (n * data.xbar + l0 * prior.mu + ln * cand.mu) / total;
    let lambda = total / 2.0;
    let alpha = n / 4.0 + (prior.alpha + cand.alpha) / 2.0;
    let beta = data.s / 4.0
        + (prior.beta + cand.beta) / 2.0
        + (n * l0 * (data.xbar - prior.mu) * (data.xbar - prior.mu)
            + n * ln * (data.xbar - cand.mu) * (data.xbar - cand.mu)
            + l0 * ln * (prior.mu - cand.mu) * (prior.mu - cand.mu))
            / (4.0 * total);
    NormalGammaParams {
        mu,
        lambda,
        alpha,
        beta,
    }
}

/// log g, the quantity whose maximization over the candidate parameters is
/// equivalent to minimizing the spherical Fisher distance to the posterior:
/// (alpha_N/2) log beta_N - log Gamma(alpha_N)/2 + log(lambda_N)/4
///   + log Gamma(alpha*) - alpha* log beta* - log(lambda*)/2.
pub fn ng_log_g(
    prior: &NormalGammaParams,
    cand: &NormalGammaParams,
    data: &GaussianDataSummary,
) -> Result<f64> {
    prior.validate()?;
    cand.validate()?;
    let star = ng_star_params(prior, cand, data);
    star.validate()?;
    Ok(
        cand.alpha / 2.0 * cand.beta.ln() - 0.5 * ln_gamma(cand.alpha)?
            + 0.25 * cand.lambda.ln()
            + ln_gamma(star.alpha)?
            - star.alpha * star.beta.ln()
            - 0.5 * star.lambda.ln(),
    )
}

/// Residuals of the four first-order conditions of log g, in candidate order
/// (mu_N, lambda_N, alpha_N, beta_N). All four vanish at the closed-form
/// posterior.
pub fn ng_stationarity_residuals(
    prior: &NormalGammaParams,
    cand: &NormalGammaParams,
    data: &GaussianDataSummary,
) -> Result<[f64; 4]> {
    prior.validate()?;
    cand.validate()?;
    let star = ng_star_params(prior, cand, data);
    star.validate()?;
    let n = data.n as f64;
    let l0 = prior.lambda;
    let ln = cand.lambda;
    let total = n + l0 + ln;

    // d log g / d mu_N = -(alpha*/beta*) d beta*/d mu_N.
    let dbeta_dmu =
        (ln * cand.mu * (n + l0) - ln * (n * data.xbar + l0 * prior.mu)) / (2.0 * total);
    let r_mu = -(star.alpha / star.beta) * dbeta_dmu;

    // d log g / d lambda_N = 1/(4 lambda_N) - 1/(4 lambda*)
    //   - (alpha*/beta*) (n(mu_N - xbar) + l0(mu_N - mu_0))^2 / (4 total^2).
    let pull = n * (cand.mu - data.xbar) + l0 * (cand.mu - prior.mu);
    let r_lambda = 0.25 / cand.lambda
        - 0.25 / star.lambda
        - (star.alpha / star.beta) * pull * pull / (4.0 * total * total);

    // d log g / d alpha_N = 0 in the displayed form:
    // log beta_N - log beta* = psi(alpha_N) - psi(alpha*).
    let r_alpha = (cand.beta.ln() - star.beta.ln()) - (digamma(cand.alpha)? - digamma(star.alpha)?);

    // d log g / d beta_N = 0 in the displayed form: beta_N/beta* = alpha_N/alpha*.
    let r_beta = cand.beta / star.beta - cand.alpha / star.alpha;

    Ok([r_mu, r_lambda, r_alpha, r_beta])
}

/// Numerically maximize log g over the candidate parameters (positives in
/// log space) with simplex restarts. Returns the maximizer; serves as the
/// independent check that the optimum is the closed-form posterior.
pub fn ng_maximize_log_g(
    prior: &NormalGammaParams,
    data: &GaussianDataSummary,
    start: &NormalGammaParams,
) -> Result<NormalGammaParams> {
    let prior = *prior;
    let data = *data;
    let objective = move |x: &[f64]| {
        let cand = NormalGammaParams {
            mu: x[0],
            lambda: x[1].exp(),
            alpha: x[2].exp(),
            beta: x[3].exp(),
        };
        match ng_log_g(&prior, &cand, &data) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let x0 = [
        start.mu,
        start.lambda.ln(),
        start.alpha.ln(),
        start.beta.ln(),
    ];
    let options = SimplexOptions {
        initial_step: 0.4,
        diameter_tol: 1e-10,
        max_evals: 4000,
    };
    let best = simplex::minimize_with_restarts(objective, &x0, &options, 3);
    if !best.value.is_finite() {
        return Err(GapError::NoConvergence(
            "log g maximization diverged".into(),
        ));
    }
    NormalGammaParams::new(best.x[0], best.x[1].exp(), best.x[2].exp(), best.x[3].exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_prior() -> NormalGammaParams {
        NormalGammaParams::new(0.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn posterior_with_no_data_is_the_prior() {
        let prior = unit_prior();
        let data = GaussianDataSummary::new(0, 0.0, 0.0).unwrap();
        assert_eq!(ng_posterior(&prior, &data), prior);
    }

    #[test]
    fn posterior_closed_form_values() {
        let prior = unit_prior();
        let data = GaussianDataSummary::new(3, 2.0, 0.0).unwrap();
        let post = ng_posterior(&prior, &data);
        assert_abs_diff_eq!(post.mu, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(post.lambda, 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post.alpha, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(post.beta, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn posterior_matches_sequential_updates() {
        // Batch update equals one-observation-at-a-time updates.
        let prior = NormalGammaParams::new(0.7, 2.0, 1.5, 0.8).unwrap();
        let xs = [1.2, -0.4, 2.2, 0.9, 1.4];
        let batch = ng_posterior(&prior, &GaussianDataSummary::from_observations(&xs));
        let mut seq = prior;
        for &x in &xs {
            seq = ng_posterior(&seq, &GaussianDataSummary::new(1, x, 0.0).unwrap());
        }
        assert_abs_diff_eq!(batch.mu, seq.mu, epsilon = 1e-12);
        assert_abs_diff_eq!(batch.lambda, seq.lambda, epsilon = 1e-12);
        assert_abs_diff_eq!(batch.alpha, seq.alpha, epsilon = 1e-12);
        assert_abs_diff_eq!(batch.beta, seq.beta, epsilon = 1e-12);
    }

    #[test]
    fn star_params_at_identical_halves() {
        let prior = unit_prior();
        let data = GaussianDataSummary::new(0, 0.0, 0.0).unwrap();
        let star = ng_star_params(&prior, &prior, &data);
        assert_abs_diff_eq!(star.mu, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(star.lambda, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(star.alpha, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(star.beta, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn star_lambda_is_half_the_total() {
        let prior = unit_prior();
        let cand = NormalGammaParams::new(1.5, 4.0, 2.5, 2.5).unwrap();
        let data = GaussianDataSummary::new(3, 2.0, 0.0).unwrap();
        let star = ng_star_params(&prior, &cand, &data);
        assert_abs_diff_eq!(star.lambda, 4.0, epsilon = 1e-15);
    }

    #[test]
    fn star_beta_matches_expanded_polynomial() {
        // Independent evaluation by expanding the quadratic coupling fully.
        let prior = NormalGammaParams::new(-0.3, 1.7, 2.2, 0.9).unwrap();
        let cand = NormalGammaParams::new(0.8, 0.6, 1.1, 2.4).unwrap();
        let data = GaussianDataSummary::new(7, 0.35, 4.1).unwrap();
        let star = ng_star_params(&prior, &cand, &data);
        let n = 7.0f64;
        let total = n + 1.7 + 0.6;
        let quad = n * 1.7 * (0.35f64 + 0.3).powi(2)
            + n * 0.6 * (0.35f64 - 0.8).powi(2)
            + 1.7 * 0.6 * (-0.3f64 - 0.8).powi(2);
        let expected = 4.1 / 4.0 + (0.9 + 2.4) / 2.0 + quad / (4.0 * total);
        assert_abs_diff_eq!(star.beta, expected, epsilon = 1e-12);
    }

    #[test]
    fn star_beta_collapses_at_the_posterior() {
        // With mu_N and lambda_N at their optima, beta* evaluated at the
        // posterior reduces to beta_0 + S/2 + n l0 (xbar - mu0)^2 / (2(n+l0)).
        let prior = NormalGammaParams::new(0.6, 1.9, 1.4, 2.2).unwrap();
        let data = GaussianDataSummary::new(11, 1.3, 5.7).unwrap();
        let post = ng_posterior(&prior, &data);
        let star = ng_star_params(&prior, &post, &data);
        let n = data.n as f64;
        let simplified = prior.beta
            + data.s / 2.0
            + n * prior.lambda * (data.xbar - prior.mu) * (data.xbar - prior.mu)
                / (2.0 * (n + prior.lambda));
        assert_abs_diff_eq!(star.beta, simplified, epsilon = 1e-12 * simplified);
        assert_abs_diff_eq!(star.beta, post.beta, epsilon = 1e-12 * post.beta);
        assert_abs_diff_eq!(star.alpha, post.alpha, epsilon = 1e-12 * post.alpha);
        assert_abs_diff_eq!(star.lambda, post.lambda, epsilon = 1e-12 * post.lambda);
    }

    #[test]
    fn residuals_vanish_at_the_posterior() {
        let prior = NormalGammaParams::new(0.4, 1.3, 2.0, 1.1).unwrap();
        let data = GaussianDataSummary::new(12, 1.8, 6.3).unwrap();
        let post = ng_posterior(&prior, &data);
        let residuals = ng_stationarity_residuals(&prior, &post, &data).unwrap();
        for (k, r) in residuals.iter().enumerate() {
            assert!(r.abs() < 1e-10, "residual {k} = {r}");
        }
    }

    #[test]
    fn residual_signs_match_finite_differences() {
        // Perturb mu_N: the residual must match the numeric slope of log g.
        let prior = unit_prior();
        let data = GaussianDataSummary::new(3, 2.0, 0.0).unwrap();
        let post = ng_posterior(&prior, &data);
        let mut cand = post;
        cand.mu += 0.1;
        let [r_mu, ..] = ng_stationarity_residuals(&prior, &cand, &data).unwrap();
        assert!(r_mu != 0.0);
        let h = 1e-6;
        let mut plus = cand;
        plus.mu += h;
        let mut minus = cand;
        minus.mu -= h;
        let fd = (ng_log_g(&prior, &plus, &data).unwrap()
            - ng_log_g(&prior, &minus, &data).unwrap())
            / (2.0 * h);
        assert_abs_diff_eq!(r_mu, fd, epsilon = 1e-6 * fd.abs().max(1.0));
        assert_eq!(r_mu.signum(), fd.signum());
    }

    #[test]
    fn gradient_of_log_g_vanishes_at_posterior_by_finite_differences() {
        let prior = NormalGammaParams::new(1.1, 0.9, 1.7, 2.3).unwrap();
        let data = GaussianDataSummary::new(9, 0.6, 3.2).unwrap();
        let post = ng_posterior(&prior, &data);
        let h = 1e-5;
        type Bump = Box<dyn Fn(&mut NormalGammaParams, f64)>;
        let perturbations: [Bump; 4] = [
            Box::new(|p, e| p.mu += e),
            Box::new(|p, e| p.lambda += e),
            Box::new(|p, e| p.alpha += e),
            Box::new(|p, e| p.beta += e),
        ];
        for (k, bump) in perturbations.iter().enumerate() {
            let mut plus = post;
            bump(&mut plus, h);
            let mut minus = post;
            bump(&mut minus, -h);
            let fd = (ng_log_g(&prior, &plus, &data).unwrap()
                - ng_log_g(&prior, &minus, &data).unwrap())
                / (2.0 * h);
            assert!(fd.abs() < 1e-8, "coordinate {k}: slope {fd}");
        }
    }

    #[test]
    fn maximizing_log_g_recovers_the_posterior() {
        let prior = NormalGammaParams::new(0.9, 1.4, 2.1, 1.6).unwrap();
        let data = GaussianDataSummary::new(15, 1.2, 8.4).unwrap();
        let post = ng_posterior(&prior, &data);
        // Perturbed start.
        let start = NormalGammaParams::new(
            post.mu + 0.8,
            post.lambda * 1.9,
            post.alpha * 0.6,
            post.beta * 1.4,
        )
        .unwrap();
        let found = ng_maximize_log_g(&prior, &data, &start).unwrap();
        for (got, want) in found.as_array().iter().zip(post.as_array()) {
            assert!(
                ((got - want) / want).abs() < 1e-5,
                "recovered {got} vs exact {want}"
            );
        }
    }

    #[test]
    fn higher_log_g_means_smaller_distance() {
        // arccos is decreasing and log increasing, so the ordering of log g
        // matches the reverse ordering of the distance; check on random
        // candidate pairs through the monotone map d = arccos(c * g) with the
        // constant chosen small enough to stay in arccos's domain.
        let prior = unit_prior();
        let data = GaussianDataSummary::new(5, 1.0, 2.0).unwrap();
        let rng = crate::rng::CounterRng::new(3);
        for case in 0..20u64 {
            let base = case * 8;
            let mk = |o: u64, scale: f64| -> NormalGammaParams {
                NormalGammaParams {
                    mu: rng.standard_normal(base + o),
                    lambda: (rng.standard_normal(base + o + 1) * 0.5).exp() * scale,
                    alpha: (rng.standard_normal(base + o + 2) * 0.5).exp() * scale,
                    beta: (rng.standard_normal(base + o + 3) * 0.5).exp() * scale,
                }
            };
            let c1 = mk(0, 1.0);
            let c2 = mk(4, 1.3);
            let g1 = ng_log_g(&prior, &c1, &data).unwrap();
            let g2 = ng_log_g(&prior, &c2, &data).unwrap();
            let scale = 1e-3; // keeps c * g inside (0, 1)
            let d1 = (scale * g1.exp()).acos();
            let d2 = (scale * g2.exp()).acos();
            assert_eq!(g1 > g2, d1 < d2);
        }
    }
}
