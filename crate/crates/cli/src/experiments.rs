//! Experiment runner: builds the target, runs the descent and the requested
//! baselines, and emits trace.csv, result.json, and density_curves.csv.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gap_core::baselines;
use gap_core::conjugate::{self, GaussianDataSummary, NormalGammaParams};
use gap_core::geometry;
use gap_core::mc;
use gap_core::optimizer::{self, GapResult, StopReason};
use gap_core::rng::CounterRng;
use gap_core::targets::{self, LogisticDataset};
use gap_core::types::{fmt_full, GapTrace, GaussianModel, ScalarGaussian, TargetDensity};
use gap_core::GapError;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind, TargetSpec};

/// Errors with their process exit codes: configuration problems exit 2,
/// numerical non-convergence exits 3, filesystem failures exit 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Optimizer(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Optimizer(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Optimizer(m) | CliError::Io(m) => m,
        }
    }
}

fn io_err(context: &str, err: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {err}"))
}

const SCHEMA_VERSION: u32 = 1;
/// Sample budget for Monte Carlo distance reporting on multivariate targets.
const DISTANCE_MC_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModelJson {
    pub mean: Vec<f64>,
    pub chol: Vec<Vec<f64>>,
    pub distance_to_target: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultJson {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<FittedModelJson>,
    pub baselines: BTreeMap<String, FittedModelJson>,
    pub runtime_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
    /// Conjugate-oracle experiment: worst relative parameter error across
    /// instances.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rel_param_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_instances: Option<usize>,
}

/// Everything an experiment needs at run time.
struct PreparedTarget {
    target: TargetDensity,
    dataset: Option<LogisticDataset>,
}

fn build_target(config: &ExperimentConfig) -> Result<PreparedTarget, CliError> {
    let spec = config
        .target
        .as_ref()
        .ok_or_else(|| CliError::Config("experiment needs a `target` section".into()))?;
    match spec {
        TargetSpec::T1 => Ok(PreparedTarget {
            target: targets::student_t1_target(),
            dataset: None,
        }),
        TargetSpec::Mixture {
            weights,
            means,
            variances,
        } => {
            let spec = targets::MixtureSpec::new(weights.clone(), means.clone(), variances.clone())
                .map_err(|e| CliError::Config(format!("mixture target: {e}")))?;
            Ok(PreparedTarget {
                target: targets::mixture_target(&spec),
                dataset: None,
            })
        }
        TargetSpec::Logistic {
            dataset_csv,
            n,
            beta,
            rho,
            data_seed,
            prior_mean,
            prior_variance,
        } => {
            #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
            if !(*prior_variance > 0.0) {
                return Err(CliError::Config("prior variance must be > 0".into()));
            }
            let dataset = if let Some(path) = dataset_csv {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read dataset {path}: {e}")))?;
                let covariates = text
                    .lines()
                    .next()
                    .map(|h| h.split(',').count().saturating_sub(1))
                    .unwrap_or(0);
                let dim = covariates + 1;
                let pm = prior_vec(prior_mean, dim)?;
                LogisticDataset::from_csv(&text, pm, DMatrix::identity(dim, dim) * *prior_variance)
                    .map_err(|e| CliError::Config(format!("dataset {path}: {e}")))?
            } else {
                let dim = beta.len();
                let pm = prior_vec(prior_mean, dim)?;
                let seed = data_seed.unwrap_or_else(|| {
                    CounterRng::new(config.optimizer.seed).derive(0xda7a).raw(0)
                });
                targets::generate_logistic_data(
                    *n,
                    &DVector::from_vec(beta.clone()),
                    *rho,
                    seed,
                    pm,
                    DMatrix::identity(dim, dim) * *prior_variance,
                )
                .map_err(|e| CliError::Config(format!("data generation: {e}")))?
            };
            let target = targets::logistic_posterior_target(&dataset)
                .map_err(|e| CliError::Config(format!("logistic target: {e}")))?;
            Ok(PreparedTarget {
                target,
                dataset: Some(dataset),
            })
        }
    }
}

fn prior_vec(prior_mean: &Option<Vec<f64>>, dim: usize) -> Result<DVector<f64>, CliError> {
    match prior_mean {
        None => Ok(DVector::zeros(dim)),
        Some(v) if v.len() == dim => Ok(DVector::from_vec(v.clone())),
        Some(v) => Err(CliError::Config(format!(
            "prior mean has length {}, expected {dim}",
            v.len()
        ))),
    }
}

/// Spherical Fisher distance from a fitted Gaussian to the target:
/// quadrature for 1-D targets, a seeded Monte Carlo overlap (the fitted model
/// as the sampler) otherwise.
fn distance_to_target(
    target: &TargetDensity,
    model: &GaussianModel,
    seed: u64,
) -> Result<f64, CliError> {
    let overlap = if target.dim() == 1 {
        let mu = model.mean()[0];
        let var = model.covariance()[(0, 0)];
        geometry::target_gaussian_overlap_quadrature(
            target,
            mu,
            var,
            2 * geometry::DEFAULT_GRID_NODES,
        )
        .map_err(|e| CliError::Optimizer(format!("distance quadrature: {e}")))?
    } else {
        let samples = mc::draw_samples(model, DISTANCE_MC_SAMPLES, seed);
        mc::estimate_overlap(model, target, &samples, 1e-9)
            .map_err(|e| CliError::Optimizer(format!("distance estimate: {e}")))?
            .0
    };
    Ok(overlap.clamp(-1.0, 1.0).acos())
}

fn fitted_json(
    target: &TargetDensity,
    model: &GaussianModel,
    seed: u64,
) -> Result<FittedModelJson, CliError> {
    let d = model.dim();
    Ok(FittedModelJson {
        mean: model.mean().iter().copied().collect(),
        chol: (0..d)
            .map(|i| (0..d).map(|j| model.chol()[(i, j)]).collect())
            .collect(),
        distance_to_target: distance_to_target(target, model, seed)?,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| io_err(&format!("create {}", path.display()), e))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| io_err(&format!("write {}", path.display()), e))
}

fn stop_reason_label(reason: StopReason) -> &'static str {
    match reason {
        StopReason::GradTol => "grad-tol",
        StopReason::DistTol => "dist-tol",
        StopReason::MaxIters => "max-iters",
    }
}

fn classify(e: GapError) -> CliError {
    CliError::Optimizer(e.to_string())
}

/// Run one experiment end to end, writing its artifacts into the output
/// directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(), CliError> {
    config
        .optimizer
        .validate()
        .map_err(|e| CliError::Config(format!("optimizer config: {e}")))?;
    let out_dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| io_err(&format!("create {}", out_dir.display()), e))?;

    if config.experiment == ExperimentKind::NormalGammaOracle {
        return run_oracle_experiment(config, &out_dir);
    }

    let prepared = build_target(config)?;
    let target = &prepared.target;
    if let Some(dataset) = &prepared.dataset {
        write_file(&out_dir.join("dataset.csv"), &dataset.to_csv())?;
    }

    let init_json = config
        .init
        .as_ref()
        .ok_or_else(|| CliError::Config("experiment needs an `init` model".into()))?;
    let init = init_json
        .to_model()
        .map_err(|e| CliError::Config(format!("init model: {e}")))?;
    if init.dim() != target.dim() {
        return Err(CliError::Config(format!(
            "init dimension {} vs target dimension {}",
            init.dim(),
            target.dim()
        )));
    }
    if !config.baselines.divergences.is_empty() && target.dim() != 1 {
        return Err(CliError::Config(
            "divergence baselines require a 1-D target".into(),
        ));
    }

    let started = Instant::now();
    let run: Result<GapResult, GapError> = if target.dim() == 1 {
        let scalar = ScalarGaussian::new(init.mean()[0], init.chol()[(0, 0)])
            .map_err(|e| CliError::Config(format!("init model: {e}")))?;
        optimizer::gap1d_run(&scalar, target, &config.optimizer)
    } else {
        optimizer::gap_run(&init, target, &config.optimizer)
    };
    let result = match run {
        Ok(result) => result,
        Err(e) => {
            // Leave whatever evidence exists: an empty trace with the right
            // header shape.
            let empty = GapTrace::default();
            write_file(&out_dir.join("trace.csv"), &empty.to_csv())?;
            return Err(classify(e));
        }
    };
    write_file(&out_dir.join("trace.csv"), &result.trace.to_csv())?;

    let seed = config.optimizer.seed;
    let distance_seed = CounterRng::new(seed).derive(0xd157).raw(0);
    let mut baselines_json = BTreeMap::new();
    let mut baseline_models: Vec<(String, GaussianModel)> = Vec::new();

    if config.baselines.laplace {
        let fitted = baselines::laplace_approx(target, init.mean(), 200).map_err(classify)?;
        baselines_json.insert(
            "laplace".to_string(),
            fitted_json(target, &fitted, distance_seed)?,
        );
        baseline_models.push(("laplace".to_string(), fitted));
    }
    for kind in &config.baselines.divergences {
        let init_scalar =
            ScalarGaussian::new(init.mean()[0], init.chol()[(0, 0)].abs()).map_err(classify)?;
        let fitted =
            baselines::minimize_divergence_1d(target, *kind, &init_scalar).map_err(classify)?;
        let model = fitted.to_model();
        baselines_json.insert(kind.label(), fitted_json(target, &model, distance_seed)?);
        baseline_models.push((kind.label(), model));
    }

    let gap_json = fitted_json(target, &result.final_model, distance_seed)?;
    let runtime_seconds = started.elapsed().as_secs_f64();

    if target.dim() == 1 {
        let curves = density_curves_csv(target, &result.final_model, &baseline_models);
        write_file(&out_dir.join("density_curves.csv"), &curves)?;
    }

    let result_json = ResultJson {
        schema_version: SCHEMA_VERSION,
        experiment: config.experiment.label().to_string(),
        seed,
        gap: Some(gap_json),
        baselines: baselines_json,
        runtime_seconds,
        converged: Some(result.converged),
        stop_reason: Some(stop_reason_label(result.stop_reason).to_string()),
        max_rel_param_error: None,
        oracle_instances: None,
    };
    let text = serde_json::to_string_pretty(&result_json)
        .map_err(|e| CliError::Io(format!("serialize result.json: {e}")))?;
    write_file(&out_dir.join("result.json"), &text)
}

/// Grid of the target density and each fitted Gaussian, for plotting.
fn density_curves_csv(
    target: &TargetDensity,
    gap_model: &GaussianModel,
    baselines: &[(String, GaussianModel)],
) -> String {
    let mut range = target.grid_hint().unwrap_or((-10.0, 10.0));
    let mut models: Vec<(&str, &GaussianModel)> = vec![("gap", gap_model)];
    for (name, model) in baselines {
        models.push((name.as_str(), model));
    }
    for (_, model) in &models {
        range = geometry::merge_ranges(
            range,
            geometry::gaussian_range(model.mean()[0], model.covariance()[(0, 0)]),
        );
    }
    let nodes = 2001;
    let h = (range.1 - range.0) / (nodes - 1) as f64;
    let mut header = String::from("x,target");
    for (name, _) in &models {
        header.push(',');
        header.push_str(name);
    }
    let mut out = header;
    out.push('\n');
    for k in 0..nodes {
        let x = range.0 + h * k as f64;
        out.push_str(&fmt_full(x));
        out.push(',');
        out.push_str(&fmt_full(target.density(&[x])));
        for (_, model) in &models {
            let mu = model.mean()[0];
            let var = model.covariance()[(0, 0)];
            let v = (-(x - mu) * (x - mu) / (2.0 * var)).exp()
                / (2.0 * std::f64::consts::PI * var).sqrt();
            out.push(',');
            out.push_str(&fmt_full(v));
        }
        out.push('\n');
    }
    out
}

/// One seeded random (prior, data) instance for the conjugate-oracle
/// experiment. Means stay in [0.5, 3] so plain relative errors are
/// well-conditioned.
pub fn oracle_instance(rng: &CounterRng, k: u64) -> (NormalGammaParams, GaussianDataSummary) {
    let base = k * 8;
    let prior = NormalGammaParams {
        mu: 0.5 + 2.5 * rng.uniform(base),
        lambda: (0.7 * rng.standard_normal(base + 1)).exp(),
        alpha: (0.4 * rng.standard_normal(base + 2) + 0.4).exp(),
        beta: (0.4 * rng.standard_normal(base + 3) + 0.4).exp(),
    };
    let n = (rng.uniform(base + 4) * 41.0) as usize;
    let xbar = if n == 0 {
        0.0
    } else {
        0.5 + 2.5 * rng.uniform(base + 5)
    };
    let s = if n >= 2 {
        (0.5 * rng.standard_normal(base + 6)).exp() * (n as f64 - 1.0)
    } else {
        0.0
    };
    (prior, GaussianDataSummary { n, xbar, s })
}

/// Worst relative parameter error of the numeric log-g maximizer against the
/// closed-form posterior over `instances` seeded cases.
pub fn oracle_max_rel_error(seed: u64, instances: usize) -> Result<f64, GapError> {
    let rng = CounterRng::new(seed).derive(0x0aac1e);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let (prior, data) = oracle_instance(&rng, k as u64);
        let exact = conjugate::ng_posterior(&prior, &data);
        let found = conjugate::ng_maximize_log_g(&prior, &data, &prior)?;
        for (got, want) in found.as_array().iter().zip(exact.as_array()) {
            worst = worst.max(((got - want) / want).abs());
        }
    }
    Ok(worst)
}

fn run_oracle_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let seed = config.optimizer.seed;
    let worst = oracle_max_rel_error(seed, config.oracle_instances).map_err(classify)?;
    let result_json = ResultJson {
        schema_version: SCHEMA_VERSION,
        experiment: config.experiment.label().to_string(),
        seed,
        gap: None,
        baselines: BTreeMap::new(),
        runtime_seconds: started.elapsed().as_secs_f64(),
        converged: None,
        stop_reason: None,
        max_rel_param_error: Some(worst),
        oracle_instances: Some(config.oracle_instances),
    };
    let text = serde_json::to_string_pretty(&result_json)
        .map_err(|e| CliError::Io(format!("serialize result.json: {e}")))?;
    write_file(&out_dir.join("result.json"), &text)
}
