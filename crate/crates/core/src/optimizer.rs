//! The descent loop: estimate projections, scale into the negative gradient,
//! step the mean and Cholesky parameters, track the distance, stop.

use crate::error::{GapError, Result};
use crate::geometry::{negative_gradient_scale, spherical_fisher_distance};
use crate::mc;
use crate::rng::CounterRng;
use crate::tangent::TangentGram;
use crate::types::{
    GapTrace, GaussianModel, OptimizerConfig, ScalarGaussian, TargetDensity, TraceRecord,
    DIAG_FLOOR,
};

/// Iterations the distance-change stopping rule looks back over.
pub const STOP_WINDOW: usize = 25;
/// Consecutive sub-threshold gradient norms required to stop.
const GRAD_STREAK: usize = 3;
/// Step halvings allowed when an update lands on a singular factor.
const MAX_STEP_RETRIES: usize = 5;

/// Iterations the converged-parameter readout looks back over (capped at a
/// quarter of the trace).
pub const REPORT_WINDOW: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StopReason {
    GradTol,
    DistTol,
    MaxIters,
}

/// Outcome of a full descent run.
///
/// `final_model` is the converged readout: per-coordinate medians over the
/// trailing window of the trace, with Cholesky columns sign-canonicalized
/// first. The Monte Carlo gradient noise is heavy-tailed (importance weights
/// against heavy-tailed targets), so a single raw iterate is a lottery draw;
/// the plateau median is what the trajectories actually converge to. The
/// raw path is preserved untouched in `trace`.
#[derive(Debug, Clone)]
pub struct GapResult {
    pub final_model: GaussianModel,
    pub trace: GapTrace,
    pub converged: bool,
    pub stop_reason: StopReason,
}

fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Flip Cholesky columns so diagonal entries are positive; Sigma = L L^T is
/// unchanged, and per-coordinate statistics across iterates become
/// meaningful.
fn canonicalize_vech(vech: &mut [f64], dim: usize) {
    let mut offset = 0;
    for j in 0..dim {
        let len = dim - j;
        if vech[offset] < 0.0 {
            for v in &mut vech[offset..offset + len] {
                *v = -*v;
            }
        }
        offset += len;
    }
}

/// Per-coordinate tail-window medians of the trace, as a model. Falls back
/// to the last recorded state if the median factor is somehow singular.
fn tail_median_model(trace: &GapTrace, dim: usize) -> Result<GaussianModel> {
    let len = trace.len();
    if len == 0 {
        return Err(GapError::InvalidSpec("empty trace".into()));
    }
    let window = (len / 4).clamp(1, REPORT_WINDOW.min(len));
    let records = &trace.records[len - window..];
    let m = records[0].vech_chol.len();
    let mean = nalgebra::DVector::from_fn(dim, |i, _| {
        let mut column: Vec<f64> = records.iter().map(|r| r.mean[i]).collect();
        median_in_place(&mut column)
    });
    let mut vech = nalgebra::DVector::zeros(m);
    let canonical: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let mut v = r.vech_chol.clone();
            canonicalize_vech(&mut v, dim);
            v
        })
        .collect();
    for k in 0..m {
        let mut column: Vec<f64> = canonical.iter().map(|v| v[k]).collect();
        vech[k] = median_in_place(&mut column);
    }
    GaussianModel::from_mean_and_vech(mean, &vech).or_else(|_| {
        let last = trace.records.last().expect("nonempty");
        GaussianModel::from_mean_and_vech(
            nalgebra::DVector::from_vec(last.mean.clone()),
            &nalgebra::DVector::from_vec(last.vech_chol.clone()),
        )
    })
}

fn per_coord_steps(base: f64, coords: &Option<Vec<f64>>, len: usize) -> Result<Vec<f64>> {
    match coords {
        None => Ok(vec![base; len]),
        Some(v) => {
            if v.len() != len {
                return Err(GapError::DimensionMismatch(format!(
                    "{} per-coordinate steps for {len} coordinates",
                    v.len()
                )));
            }
            Ok(v.clone())
        }
    }
}

/// One iteration of the general Gaussian descent: draw a fresh batch at the
/// current point, estimate the projections, and move mean and vech(L) along
/// the scaled orthonormal coefficients. The trace record carries the
/// pre-update state. Steps that land a diagonal entry of L below the
/// singularity floor are retried with halved steps, up to 5 times.
pub fn gap_step(
    model: &GaussianModel,
    target: &TargetDensity,
    gram: &TangentGram,
    config: &OptimizerConfig,
    iter_seed: u64,
) -> Result<(GaussianModel, TraceRecord)> {
    let samples = mc::draw_samples(model, config.mc_samples, iter_seed);
    let est = mc::estimate_all(model, target, &samples, gram, config.overlap_clamp)?;
    let (proj_mu, proj_l) = mc::project_onto_orthobasis(&est, gram);
    let scale = negative_gradient_scale(est.overlap, config.overlap_clamp);
    let grad_norm = (proj_mu.norm_squared() + proj_l.norm_squared()).sqrt() * scale;

    let record = TraceRecord {
        iter: 0,
        mean: model.mean().iter().copied().collect(),
        vech_chol: model.vech_chol().iter().copied().collect(),
        overlap: est.overlap,
        distance: spherical_fisher_distance(est.overlap, config.overlap_clamp),
        grad_norm,
    };

    let steps_mu = per_coord_steps(config.step_mu, &config.step_mu_coords, proj_mu.len())?;
    let steps_l = per_coord_steps(config.step_l, &config.step_l_coords, proj_l.len())?;

    let mut shrink = 1.0;
    for _retry in 0..=MAX_STEP_RETRIES {
        let mut mean = model.mean().clone();
        for i in 0..mean.len() {
            mean[i] += shrink * steps_mu[i] * proj_mu[i] * scale;
        }
        let mut vech = model.vech_chol();
        for k in 0..vech.len() {
            vech[k] += shrink * steps_l[k] * proj_l[k] * scale;
        }
        match GaussianModel::from_mean_and_vech(mean, &vech) {
            // The factor must stay usable for the next iteration's tangent
            // Gram; a step that collapses a conditional scale is rejected
            // like one that crosses the singularity floor.
            Ok(next) => match TangentGram::build(&next) {
                Ok(_) => return Ok((next, record)),
                Err(GapError::NotSpd(_)) | Err(GapError::RankDeficient) => shrink *= 0.5,
                Err(e) => return Err(e),
            },
            Err(GapError::ZeroDiagonal { .. }) => shrink *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(GapError::StepProducedSingularL {
        retries: MAX_STEP_RETRIES,
    })
}

struct StopTracker {
    grad_streak: usize,
    distances: Vec<f64>,
    grad_tol: f64,
    dist_tol: f64,
}

impl StopTracker {
    fn new(config: &OptimizerConfig) -> Self {
        Self {
            grad_streak: 0,
            distances: Vec::new(),
            grad_tol: config.grad_tol,
            dist_tol: config.dist_tol,
        }
    }

    fn observe(&mut self, record: &TraceRecord) -> Option<StopReason> {
        if record.grad_norm < self.grad_tol {
            self.grad_streak += 1;
        } else {
            self.grad_streak = 0;
        }
        self.distances.push(record.distance);
        if self.grad_streak >= GRAD_STREAK {
            return Some(StopReason::GradTol);
        }
        let k = self.distances.len();
        if k > STOP_WINDOW
            && (self.distances[k - 1] - self.distances[k - 1 - STOP_WINDOW]).abs() < self.dist_tol
        {
            return Some(StopReason::DistTol);
        }
        None
    }
}

/// Full descent over the Gaussian family from `init`. Per-iteration sample
/// batches come from streams derived as (seed, iteration), so a run is
/// reproducible and any iteration can be replayed in isolation.
pub fn gap_run(
    init: &GaussianModel,
    target: &TargetDensity,
    config: &OptimizerConfig,
) -> Result<GapResult> {
    config.validate()?;
    init.validate()?;
    let root = CounterRng::new(config.seed);
    let mut model = init.clone();
    let mut trace = GapTrace::default();
    let mut tracker = StopTracker::new(config);
    let mut stop_reason = StopReason::MaxIters;

    for iter in 0..config.max_iters {
        let gram = TangentGram::build(&model)?;
        let iter_seed = root.derive(iter as u64).raw(0);
        let (next, mut record) = gap_step(&model, target, &gram, config, iter_seed)?;
        record.iter = iter;
        let done = tracker.observe(&record);
        trace.records.push(record);
        model = next;
        if let Some(reason) = done {
            stop_reason = reason;
            break;
        }
    }
    let final_model = tail_median_model(&trace, init.dim())?;
    Ok(GapResult {
        final_model,
        trace,
        converged: stop_reason != StopReason::MaxIters,
        stop_reason,
    })
}

/// The 1-D specialization: weighted moments c~_k = E[w (x - mu)^k] give
///   overlap          = c~_0
///   <w_mu, sqrt p0>  = c~_1 / |sigma|
///   <w_sig, sqrt p0> = sign(sigma) * (c~_2 / sigma^2 - c~_0) / sqrt 2
/// and the updates move (mu, sigma) directly. Reaches the same stationary
/// points as the general path at D = 1.
pub fn gap1d_run(
    init: &ScalarGaussian,
    target: &TargetDensity,
    config: &OptimizerConfig,
) -> Result<GapResult> {
    config.validate()?;
    if target.dim() != 1 {
        return Err(GapError::DimensionMismatch(format!(
            "scalar path needs a 1-D target, got dimension {}",
            target.dim()
        )));
    }
    let root = CounterRng::new(config.seed);
    let mut mu = init.mean;
    let mut sigma = init.sigma;
    if sigma.abs() < DIAG_FLOOR {
        return Err(GapError::ZeroDiagonal {
            index: 0,
            floor: DIAG_FLOOR,
        });
    }
    let mut trace = GapTrace::default();
    let mut tracker = StopTracker::new(config);
    let mut stop_reason = StopReason::MaxIters;

    for iter in 0..config.max_iters {
        let model = GaussianModel::scalar(mu, sigma)?;
        let iter_seed = root.derive(iter as u64).raw(0);
        let samples = mc::draw_samples(&model, config.mc_samples, iter_seed);
        let moments = scalar_weighted_moments(&model, target, &samples)?;

        let overlap = crate::geometry::clamp_overlap(moments.c0, config.overlap_clamp);
        let scale = negative_gradient_scale(overlap, config.overlap_clamp);
        let proj_mu = moments.c1 / sigma.abs();
        let proj_sigma = sigma.signum()
            * std::f64::consts::FRAC_1_SQRT_2
            * (moments.c2 / (sigma * sigma) - moments.c0);
        let grad_norm = (proj_mu * proj_mu + proj_sigma * proj_sigma).sqrt() * scale;

        let record = TraceRecord {
            iter,
            mean: vec![mu],
            vech_chol: vec![sigma],
            overlap,
            distance: spherical_fisher_distance(overlap, config.overlap_clamp),
            grad_norm,
        };
        let done = tracker.observe(&record);
        trace.records.push(record);

        let mut shrink = 1.0;
        let mut stepped = false;
        for _retry in 0..=MAX_STEP_RETRIES {
            let next_mu = mu + shrink * config.step_mu * proj_mu * scale;
            let next_sigma = sigma + shrink * config.step_l * proj_sigma * scale;
            if next_sigma.abs() >= DIAG_FLOOR {
                mu = next_mu;
                sigma = next_sigma;
                stepped = true;
                break;
            }
            shrink *= 0.5;
        }
        if !stepped {
            return Err(GapError::StepProducedSingularL {
                retries: MAX_STEP_RETRIES,
            });
        }
        if let Some(reason) = done {
            stop_reason = reason;
            break;
        }
    }
    let final_model = tail_median_model(&trace, 1)?;
    Ok(GapResult {
        final_model,
        trace,
        converged: stop_reason != StopReason::MaxIters,
        stop_reason,
    })
}

/// Self-normalized weighted moments of (x - mu)^k, k = 0, 1, 2, in the
/// max-shifted log domain.
struct ScalarMoments {
    c0: f64,
    c1: f64,
    c2: f64,
}

fn scalar_weighted_moments(
    model: &GaussianModel,
    target: &TargetDensity,
    samples: &nalgebra::DMatrix<f64>,
) -> Result<ScalarMoments> {
    let t = samples.nrows();
    let mu = model.mean()[0];
    let mut lw = vec![0.0f64; t];
    for row in 0..t {
        let z = nalgebra::dvector![samples[(row, 0)]];
        lw[row] = mc::log_weight(model, target, &z)?;
    }
    let max_lw = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max_lw > -690.0) {
        return Err(GapError::DegenerateWeights);
    }
    let mut s0 = vec![0.0f64; t];
    let mut s1 = vec![0.0f64; t];
    let mut s2 = vec![0.0f64; t];
    let mut sq = vec![0.0f64; t];
    for row in 0..t {
        let y = (lw[row] - max_lw).exp();
        let c = samples[(row, 0)] - mu;
        s0[row] = y;
        s1[row] = y * c;
        s2[row] = y * c * c;
        sq[row] = y * y;
    }
    let n = t as f64;
    let m0 = mc::pairwise_sum(&s0) / n;
    let m1 = mc::pairwise_sum(&s1) / n;
    let m2 = mc::pairwise_sum(&s2) / n;
    let shift = if target.normalized() {
        max_lw.exp()
    } else {
        let mq = mc::pairwise_sum(&sq) / n;
        1.0 / mq.sqrt()
    };
    Ok(ScalarMoments {
        c0: m0 * shift,
        c1: m1 * shift,
        c2: m2 * shift,
    })
}
