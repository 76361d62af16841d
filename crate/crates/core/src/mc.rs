//! Monte Carlo estimation of the projection integrals <w_j, sqrt(p0)> and
//! the overlap <theta_0, sqrt(p0)>, with self-normalization for unnormalized
//! targets.
//!
//! Numerical contract: weights are carried in the log domain and shifted by
//! their maximum before exponentiation, so batches remain usable when the
//! weight range spans hundreds of orders of magnitude. Reductions are
//! fixed-shape pairwise trees over fixed-size chunks, which makes every
//! estimate bit-identical for a given (seed, T) regardless of how many
//! worker threads evaluate the samples.

use nalgebra::{DMatrix, DVector};

use crate::error::{GapError, Result};
use crate::geometry::clamp_overlap;
use crate::tangent::TangentGram;
use crate::types::{gaussian_log_sqrt_density, GaussianModel, TargetDensity};

/// All weights below e^{LOG_WEIGHT_FLOOR} (= 1e-300) means the batch carries
/// no usable information.
#[allow(clippy::excessive_precision)]
const LOG_WEIGHT_FLOOR: f64 = -690.77552789821368; // ln(1e-300)

/// Rows per work unit; fixed so the reduction tree does not depend on the
/// number of workers.
const CHUNK: usize = 2048;

/// Monte Carlo estimates from one sample batch. `a` and `b` are already
/// divided by sqrt(Z-hat) when the target is unnormalized, i.e. they estimate
/// projections onto the normalized root density.
#[derive(Debug, Clone)]
pub struct MCEstimates {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    /// Clamped overlap estimate <theta_0, sqrt(p0)>.
    pub overlap: f64,
    /// Normalizer estimate Z-hat; `None` for normalized targets.
    pub norm_est: Option<f64>,
    pub se_a: DVector<f64>,
    pub se_b: DVector<f64>,
    pub se_overlap: f64,
    pub n_samples: usize,
}

/// Worker threads: `GAP_THREADS` if set, else available parallelism, capped.
pub fn default_threads() -> usize {
    if let Ok(v) = std::env::var("GAP_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.clamp(1, 64);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
}

/// Fixed-shape pairwise summation; identical result for identical input.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Draw T samples z = mu + L xi with xi from the counter-based stream;
/// sample t consumes counters t*D .. t*D + D - 1, so any sample can be
/// regenerated independently of the rest.
pub fn draw_samples(model: &GaussianModel, t: usize, seed: u64) -> DMatrix<f64> {
    let d = model.dim();
    let rng = crate::rng::CounterRng::new(seed);
    let mut out = DMatrix::zeros(t, d);
    let chol = model.chol();
    let mean = model.mean();
    let mut xi = vec![0.0f64; d];
    for row in 0..t {
        for (j, slot) in xi.iter_mut().enumerate() {
            *slot = rng.standard_normal((row * d + j) as u64);
        }
        for i in 0..d {
            let mut acc = mean[i];
            for (j, &x) in xi.iter().enumerate().take(i + 1) {
                acc += chol[(i, j)] * x;
            }
            out[(row, i)] = acc;
        }
    }
    out
}

/// log of the importance ratio sqrt(p0(z)) / q(z | mu, Sigma).
pub fn log_weight(model: &GaussianModel, target: &TargetDensity, z: &DVector<f64>) -> Result<f64> {
    if target.dim() != model.dim() {
        return Err(GapError::DimensionMismatch(format!(
            "target dimension {} vs model dimension {}",
            target.dim(),
            model.dim()
        )));
    }
    Ok(target.log_sqrt(z.as_slice()) - gaussian_log_sqrt_density(model, z)?)
}

/// Raw per-batch means in the max-shifted domain.
struct BatchSums {
    max_lw: f64,
    /// mean of y = exp(lw - max).
    mean_y: f64,
    /// mean of y^2 (the shifted normalizer estimate).
    mean_y2: f64,
    /// mean of y^4, for the normalizer standard error.
    mean_y4: f64,
    mean_a: Vec<f64>,
    mean_a2: Vec<f64>,
    mean_b: Vec<f64>,
    mean_b2: Vec<f64>,
    n: usize,
}

/// Run `eval_chunk` over every fixed-size chunk, on one thread or many; the
/// chunk boundaries (and therefore all results) are the same either way.
fn for_each_chunk<T: Send>(
    jobs: Vec<(usize, T)>,
    threads: usize,
    eval_chunk: impl Fn(usize, T) + Sync,
) {
    let n = jobs.len();
    if threads <= 1 || n <= 1 {
        for (ci, job) in jobs {
            eval_chunk(ci, job);
        }
        return;
    }
    let queue = std::sync::Mutex::new(jobs);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(n) {
            scope.spawn(|| loop {
                let job = queue.lock().expect("work queue").pop();
                match job {
                    Some((ci, job)) => eval_chunk(ci, job),
                    None => break,
                }
            });
        }
    });
}

/// Evaluate log weights for every row.
fn compute_log_weights(
    model: &GaussianModel,
    target: &TargetDensity,
    samples: &DMatrix<f64>,
    threads: usize,
) -> Result<Vec<f64>> {
    if target.dim() != model.dim() || samples.ncols() != model.dim() {
        return Err(GapError::DimensionMismatch(format!(
            "samples are {}-dimensional, model is {}-dimensional, target is {}-dimensional",
            samples.ncols(),
            model.dim(),
            target.dim()
        )));
    }
    let t = samples.nrows();
    let d = model.dim();
    let mut lw = vec![0.0f64; t];
    let jobs: Vec<(usize, &mut [f64])> = lw.chunks_mut(CHUNK).enumerate().collect();
    for_each_chunk(jobs, threads, |ci, out: &mut [f64]| {
        let start = ci * CHUNK;
        let mut z = DVector::zeros(d);
        for (offset, slot) in out.iter_mut().enumerate() {
            let row = start + offset;
            for j in 0..d {
                z[j] = samples[(row, j)];
            }
            *slot = target.log_sqrt(z.as_slice())
                - gaussian_log_sqrt_density(model, &z).expect("dimensions checked");
        }
    });
    Ok(lw)
}

/// Second pass: shifted means of weights and factor products, chunk partials
/// combined pairwise in chunk order.
fn accumulate(
    model: &GaussianModel,
    samples: &DMatrix<f64>,
    lw: &[f64],
    max_lw: f64,
    uv: Option<&DMatrix<f64>>,
    threads: usize,
) -> BatchSums {
    let t = samples.nrows();
    let d = model.dim();
    let m = uv.map(|u| u.ncols()).unwrap_or(0);
    let n_chunks = t.div_ceil(CHUNK);
    let sigma_inv = model.sigma_inverse();

    // Partial sums per chunk: y, y^2, y^4, then D (value, square) pairs for
    // the a-factors, then m pairs for the b-factors.
    let width = 3 + 2 * d + 2 * m;
    let mut partials = vec![vec![0.0f64; width]; n_chunks];

    let jobs: Vec<(usize, &mut Vec<f64>)> = partials.iter_mut().enumerate().collect();
    for_each_chunk(jobs, threads, |ci, acc: &mut Vec<f64>| {
        let start = ci * CHUNK;
        let stop = (start + CHUNK).min(t);
        let mut c = DVector::zeros(d);
        let mut w_vec = DVector::zeros(d * d);
        for row in start..stop {
            for j in 0..d {
                c[j] = samples[(row, j)] - model.mean()[j];
            }
            let s = model.solve_sigma(&c);
            let y = (lw[row] - max_lw).exp();
            acc[0] += y;
            acc[1] += y * y;
            acc[2] += y * y * y * y;
            for i in 0..d {
                let term = y * 0.5 * s[i];
                acc[3 + 2 * i] += term;
                acc[3 + 2 * i + 1] += term * term;
            }
            if let Some(uv) = uv {
                // W row: (vec(s s^T) - vec(Sigma^{-1})) / 4.
                for i in 0..d {
                    for j in 0..d {
                        w_vec[j * d + i] = 0.25 * (s[i] * s[j] - sigma_inv[(i, j)]);
                    }
                }
                for k in 0..m {
                    let mut dot = 0.0;
                    for r in 0..d * d {
                        dot += w_vec[r] * uv[(r, k)];
                    }
                    let term = y * dot;
                    acc[3 + 2 * d + 2 * k] += term;
                    acc[3 + 2 * d + 2 * k + 1] += term * term;
                }
            }
        }
    });

    let combine = |idx: usize| -> f64 {
        let column: Vec<f64> = partials.iter().map(|p| p[idx]).collect();
        pairwise_sum(&column) / t as f64
    };
    BatchSums {
        max_lw,
        mean_y: combine(0),
        mean_y2: combine(1),
        mean_y4: combine(2),
        mean_a: (0..d).map(|i| combine(3 + 2 * i)).collect(),
        mean_a2: (0..d).map(|i| combine(3 + 2 * i + 1)).collect(),
        mean_b: (0..m).map(|k| combine(3 + 2 * d + 2 * k)).collect(),
        mean_b2: (0..m).map(|k| combine(3 + 2 * d + 2 * k + 1)).collect(),
        n: t,
    }
}

fn batch_sums(
    model: &GaussianModel,
    target: &TargetDensity,
    samples: &DMatrix<f64>,
    uv: Option<&DMatrix<f64>>,
    threads: usize,
) -> Result<BatchSums> {
    if samples.nrows() < 2 {
        return Err(GapError::InvalidSpec("need at least 2 samples".into()));
    }
    let lw = compute_log_weights(model, target, samples, threads)?;
    let max_lw = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max_lw > LOG_WEIGHT_FLOOR) {
        return Err(GapError::DegenerateWeights);
    }
    Ok(accumulate(model, samples, &lw, max_lw, uv, threads))
}

impl BatchSums {
    /// sqrt of the shifted normalizer; 1 for normalized targets.
    fn denom(&self, normalized: bool) -> f64 {
        if normalized {
            1.0
        } else {
            self.mean_y2.sqrt()
        }
    }

    /// Back-shift for values that are NOT divided by sqrt(Z-hat); the shift
    /// cancels exactly in the self-normalized ratio.
    fn unshift(&self, normalized: bool) -> f64 {
        if normalized {
            self.max_lw.exp()
        } else {
            1.0
        }
    }

    fn value_and_se(&self, mean: f64, mean_sq: f64, normalized: bool) -> (f64, f64) {
        let var = (mean_sq - mean * mean).max(0.0);
        let se = (var / self.n as f64).sqrt();
        let scale = self.unshift(normalized) / self.denom(normalized);
        (mean * scale, se * scale)
    }

    fn normalizer(&self) -> (f64, f64) {
        let var = (self.mean_y4 - self.mean_y2 * self.mean_y2).max(0.0);
        let scale = (2.0 * self.max_lw).exp();
        (scale * self.mean_y2, scale * (var / self.n as f64).sqrt())
    }
}

/// Overlap estimate (clamped) with its standard error.
pub fn estimate_overlap(
    model: &GaussianModel,
    target: &TargetDensity,
    samples: &DMatrix<f64>,
    clamp: f64,
) -> Result<(f64, f64)> {
    let sums = batch_sums(model, target, samples, None, default_threads())?;
    let (value, se) = sums.value_and_se(sums.mean_y, sums.mean_y2, target.normalized());
    Ok((clamp_overlap(value, clamp), se))
}

/// Z-hat = mean of p0~(z) / q^2(z), with standard error. Only meaningful for
/// unnormalized targets.
pub fn estimate_normalizer(
    model: &GaussianModel,
    target: &TargetDensity,
    samples: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    if target.normalized() {
        return Err(GapError::InvalidSpec(
            "normalizer estimation applies to unnormalized targets".into(),
        ));
    }
    let sums = batch_sums(model, target, samples, None, default_threads())?;
    Ok(sums.normalizer())
}

/// Projection integrals onto the raw mean directions:
/// a_i = mean of w(z) [ (z-mu)^T Sigma^{-1} ]_i / 2, self-normalized if the
/// target is unnormalized. Returns values and standard errors.
pub fn estimate_a(
    model: &GaussianModel,
    target: &TargetDensity,
    samples: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let sums = batch_sums(model, target, samples, None, default_threads())?;
    let d = model.dim();
    let mut values = DVector::zeros(d);
    let mut ses = DVector::zeros(d);
    for i in 0..d {
        let (v, se) = sums.value_and_se(sums.mean_a[i], sums.mean_a2[i], target.normalized());
        values[i] = v;
        ses[i] = se;
    }
    Ok((values, ses))
}

/// Projection integrals onto the raw covariance directions:
/// b_k = mean of w(z) [ W(z) U V ]_k, self-normalized if needed.
pub fn estimate_b(
    model: &GaussianModel,
    target: &TargetDensity,
    samples: &DMatrix<f64>,
    gram: &TangentGram,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let uv = gram.uv();
    let sums = batch_sums(model, target, samples, Some(&uv), default_threads())?;
    let m = gram.vech_len();
    let mut values = DVector::zeros(m);
    let mut ses = DVector::zeros(m);
    for k in 0..m {
        let (v, se) = sums.value_and_se(sums.mean_b[k], sums.mean_b2[k], target.normalized());
        values[k] = v;
        ses[k] = se;
    }
    Ok((values, ses))
}

/// Everything from one shared batch: a, b, overlap, and the normalizer.
pub fn estimate_all(
    model: &GaussianModel,
    target: &TargetDensity,
    samples: &DMatrix<f64>,
    gram: &TangentGram,
    clamp: f64,
) -> Result<MCEstimates> {
    estimate_all_with_threads(model, target, samples, gram, clamp, default_threads())
}

/// [`estimate_all`] with an explicit worker count; results are bit-identical
/// across worker counts.
pub fn estimate_all_with_threads(
    model: &GaussianModel,
    target: &TargetDensity,
    samples: &DMatrix<f64>,
    gram: &TangentGram,
    clamp: f64,
    threads: usize,
) -> Result<MCEstimates> {
    let uv = gram.uv();
    let sums = batch_sums(model, target, samples, Some(&uv), threads)?;
    let normalized = target.normalized();
    let d = model.dim();
    let m = gram.vech_len();

    let (ov, se_ov) = sums.value_and_se(sums.mean_y, sums.mean_y2, normalized);
    let mut a = DVector::zeros(d);
    let mut se_a = DVector::zeros(d);
    for i in 0..d {
        let (v, se) = sums.value_and_se(sums.mean_a[i], sums.mean_a2[i], normalized);
        a[i] = v;
        se_a[i] = se;
    }
    let mut b = DVector::zeros(m);
    let mut se_b = DVector::zeros(m);
    for k in 0..m {
        let (v, se) = sums.value_and_se(sums.mean_b[k], sums.mean_b2[k], normalized);
        b[k] = v;
        se_b[k] = se;
    }
    let norm_est = if normalized {
        None
    } else {
        Some(sums.normalizer().0)
    };
    Ok(MCEstimates {
        a,
        b,
        overlap: clamp_overlap(ov, clamp),
        norm_est,
        se_a,
        se_b,
        se_overlap: se_ov,
        n_samples: sums.n,
    })
}

/// Rotate raw projections into the orthonormal basis:
/// `<w_mu_j, sqrt(p0)> = sum_i coeff_mu[j,i] a_i` and likewise for the
/// covariance block. This is the coefficient-matrix form of the
/// minor-expansion sums.
pub fn project_onto_orthobasis(
    est: &MCEstimates,
    gram: &TangentGram,
) -> (DVector<f64>, DVector<f64>) {
    (&gram.coeff_mu * &est.a, &gram.coeff_l * &est.b)
}
