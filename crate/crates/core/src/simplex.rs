//! Nelder-Mead simplex minimizer with the standard coefficients
//! (reflection 1, expansion 2, contraction 0.5, shrink 0.5).

/// Outcome of a simplex run.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// Simplex diameter (max vertex distance) at exit.
    pub diameter: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Per-coordinate initial simplex spread.
    pub initial_step: f64,
    /// Stop once the simplex diameter falls below this.
    pub diameter_tol: f64,
    /// Evaluation budget.
    pub max_evals: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            diameter_tol: 1e-8,
            max_evals: 2000,
        }
    }
}

/// Minimize `f` from `x0`. Runs until the simplex collapses below the
/// diameter tolerance or the evaluation budget is spent.
pub fn minimize(f: impl Fn(&[f64]) -> f64, x0: &[f64], options: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    assert!(n >= 1, "need at least one coordinate");
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // Initial simplex: x0 plus one vertex per coordinate.
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    simplex.push((eval(x0), x0.to_vec()));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += options.initial_step;
        simplex.push((eval(&v), v));
    }

    let diameter = |s: &[(f64, Vec<f64>)]| -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                let dist: f64 = s[i]
                    .1
                    .iter()
                    .zip(&s[j].1)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                d = d.max(dist);
            }
        }
        d
    };

    while evals.get() < options.max_evals {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        if diameter(&simplex) < options.diameter_tol {
            break;
        }
        let best = simplex[0].0;
        let second_worst = simplex[n - 1].0;
        let worst = simplex[n].0;

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (_, v) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }
        let blend = |alpha: f64| -> Vec<f64> {
            (0..n)
                .map(|i| centroid[i] + alpha * (centroid[i] - simplex[n].1[i]))
                .collect()
        };

        let reflected = blend(1.0);
        let fr = eval(&reflected);
        if fr < best {
            let expanded = blend(2.0);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr {
                (fe, expanded)
            } else {
                (fr, reflected)
            };
            continue;
        }
        if fr < second_worst {
            simplex[n] = (fr, reflected);
            continue;
        }
        let contracted = if fr < worst { blend(0.5) } else { blend(-0.5) };
        let fc = eval(&contracted);
        if fc < worst.min(fr) {
            simplex[n] = (fc, contracted);
            continue;
        }
        // Shrink toward the best vertex.
        let anchor = simplex[0].1.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let v: Vec<f64> = vertex
                .1
                .iter()
                .zip(&anchor)
                .map(|(x, a)| a + 0.5 * (x - a))
                .collect();
            *vertex = (eval(&v), v);
        }
    }

    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    let d = diameter(&simplex);
    SimplexResult {
        x: simplex[0].1.clone(),
        value: simplex[0].0,
        evals: evals.get(),
        diameter: d,
        converged: d < options.diameter_tol,
    }
}

/// Re-run the minimizer from the previous best point with a tighter initial
/// simplex each time.
pub fn minimize_with_restarts(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    options: &SimplexOptions,
    restarts: usize,
) -> SimplexResult {
    let mut result = minimize(&f, x0, options);
    let mut step = options.initial_step;
    for _ in 0..restarts {
        step *= 0.25;
        let opts = SimplexOptions {
            initial_step: step,
            ..options.clone()
        };
        let again = minimize(&f, &result.x, &opts);
        if again.value <= result.value {
            result = SimplexResult {
                evals: result.evals + again.evals,
                ..again
            };
        } else {
            result.evals += again.evals;
        }
    }
    result
}
