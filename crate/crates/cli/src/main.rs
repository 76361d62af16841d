//! `gap`: run posterior-approximation experiments and inspect the results.
//!
//! Subcommands:
//!
//! ```text
//! gap run (--experiment NAME | --config FILE) [options]
//! gap distance MODEL_A.json MODEL_B.json
//! ```

use gap_cli::config::{preset, ExperimentConfig, ExperimentKind, Overrides};
use gap_cli::experiments::{self, CliError};
use gap_core::types::GaussianModelJson;

const USAGE: &str = "\
gap - approximate a target density by a Gaussian on the root-density sphere

USAGE:
    gap run (--experiment NAME | --config FILE) [OPTIONS]
    gap distance MODEL_A.json MODEL_B.json

EXPERIMENTS:
    t1, logistic-regression, mixture-near, mixture-far, normal-gamma-oracle

RUN OPTIONS (override the preset or config file):
    --seed N          RNG seed (default 0)
    --samples N       Monte Carlo samples per iteration
    --max-iters N     iteration budget
    --step-mu X       mean-block step size
    --step-l X        Cholesky-block step size
    --out DIR         output directory (trace.csv, result.json, ...)

EXIT CODES:
    0 success, 2 bad usage or config, 3 solver did not converge, 4 I/O error
";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = match args.first().map(String::as_str) {
        Some("run") => cmd_run(&args[1..]),
        Some("distance") => cmd_distance(&args[1..]),
        Some("--help") | Some("-h") | Some("help") => {
            print!("{USAGE}");
            0
        }
        _ => {
            eprint!("{USAGE}");
            2
        }
    };
    std::process::exit(code);
}

fn parse_value<T: std::str::FromStr>(flag: &str, value: Option<&String>) -> Result<T, String> {
    let raw = value.ok_or_else(|| format!("flag {flag} needs a value"))?;
    raw.parse::<T>()
        .map_err(|_| format!("flag {flag}: cannot parse {raw:?}"))
}

fn cmd_run(args: &[String]) -> i32 {
    let mut experiment: Option<String> = None;
    let mut config_path: Option<String> = None;
    let mut overrides = Overrides::default();

    let mut iter = args.iter().peekable();
    while let Some(flag) = iter.next() {
        let result: Result<(), String> = (|| {
            match flag.as_str() {
                "--experiment" => experiment = Some(parse_value(flag, iter.next())?),
                "--config" => config_path = Some(parse_value(flag, iter.next())?),
                "--seed" => overrides.seed = Some(parse_value(flag, iter.next())?),
                "--samples" => overrides.samples = Some(parse_value(flag, iter.next())?),
                "--max-iters" => overrides.max_iters = Some(parse_value(flag, iter.next())?),
                "--step-mu" => overrides.step_mu = Some(parse_value(flag, iter.next())?),
                "--step-l" => overrides.step_l = Some(parse_value(flag, iter.next())?),
                "--out" => overrides.out = Some(parse_value(flag, iter.next())?),
                other => return Err(format!("unknown flag {other}")),
            }
            Ok(())
        })();
        if let Err(message) = result {
            eprintln!("error: {message}");
            eprint!("{USAGE}");
            return 2;
        }
    }

    let mut config: ExperimentConfig = match (&experiment, &config_path) {
        (Some(_), Some(_)) => {
            eprintln!("error: pass either --experiment or --config, not both");
            return 2;
        }
        (None, None) => {
            eprintln!("error: one of --experiment or --config is required");
            eprint!("{USAGE}");
            return 2;
        }
        (Some(name), None) => match ExperimentKind::parse(name) {
            Some(ExperimentKind::Custom) => {
                eprintln!("error: the custom experiment needs --config");
                return 2;
            }
            Some(kind) => preset(kind),
            None => {
                eprintln!("error: unknown experiment {name:?}");
                return 2;
            }
        },
        (None, Some(path)) => {
            let text = match std::fs::read_to_string(path) {
                Ok(text) => text,
                Err(e) => {
                    eprintln!("error: cannot read config {path}: {e}");
                    return 2;
                }
            };
            match serde_json::from_str(&text) {
                Ok(config) => config,
                Err(e) => {
                    eprintln!("error: config {path}: {e}");
                    return 2;
                }
            }
        }
    };
    overrides.apply(&mut config);

    match experiments::run_experiment(&config) {
        Ok(()) => {
            println!("wrote {}", config.output_dir);
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn load_model(path: &str) -> Result<gap_core::GaussianModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?;
    let json: GaussianModelJson =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
    json.to_model()
        .map_err(|e| CliError::Config(format!("{path}: {e}")))
}

fn cmd_distance(args: &[String]) -> i32 {
    if args.len() != 2 {
        eprintln!("error: distance needs exactly two model files");
        eprint!("{USAGE}");
        return 2;
    }
    let models = (load_model(&args[0]), load_model(&args[1]));
    let (a, b) = match models {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {}", e.message());
            return e.exit_code();
        }
    };
    match gap_core::geometry::bhattacharyya_overlap_gaussians(&a, &b) {
        Ok(overlap) => {
            let clamped = overlap.clamp(-1.0, 1.0);
            println!("spherical_fisher_distance: {:.8}", clamped.acos());
            println!("hellinger_distance: {:.8}", (1.0 - clamped.max(0.0)).sqrt());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
