use super::{FitConfig, FitResult};
use crate::error::{Error, Result};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` with the Nelder-Mead simplex method.
///
/// The initial simplex is `x0` plus one vertex per coordinate, displaced by
/// `initial_simplex_scale · |x0_i|` (or `initial_simplex_scale` when
/// `x0_i = 0`). Iteration stops when both the spread of objective values is
/// within `ftol` and every vertex lies within `xtol` (max-norm) of the best,
/// or after `max_iter` iterations.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], cfg: &FitConfig) -> Result<FitResult>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let n = x0.len();
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(Error::Invalid("objective is not finite at the starting point".into()));
    }
    if n == 0 {
        return Ok(FitResult {
            theta_hat: Vec::new(),
            nll: f0,
            iterations: 0,
            evaluations: 1,
            converged: true,
            trace: Some(vec![f0]),
        });
    }

    let mut evals = 1usize;
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    values.push(f0);
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = if x0[i] != 0.0 {
            cfg.initial_simplex_scale * x0[i].abs()
        } else {
            cfg.initial_simplex_scale
        };
        v[i] += step;
        values.push(f(&v));
        evals += 1;
        simplex.push(v);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut trace = Vec::new();
    let mut centroid = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // stable sort keeps the older vertex first on ties
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);
        trace.push(values[best]);

        let f_spread = order[1..].iter().map(|&i| (values[i] - values[best]).abs()).fold(0.0, f64::max);
        let x_spread = order[1..]
            .iter()
            .flat_map(|&i| simplex[i].iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread <= cfg.ftol && x_spread <= cfg.xtol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);

        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[worst]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(REFLECT);
        let fr = f(&xr);
        evals += 1;
        if fr < values[best] {
            let xe = along(REFLECT * EXPAND);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst] = xr;
            values[worst] = fr;
            continue;
        }
        // contraction: outside if the reflection improved on the worst
        let (xc, fc) = if fr < values[worst] {
            let xc = along(REFLECT * CONTRACT);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = f(&xc);
            (xc, fc)
        };
        evals += 1;
        if fc < values[worst].min(fr) {
            simplex[worst] = xc;
            values[worst] = fc;
            continue;
        }
        let xb = simplex[best].clone();
        for &i in &order[1..] {
            for (x, b) in simplex[i].iter_mut().zip(&xb) {
                *x = b + SHRINK * (*x - b);
            }
            values[i] = f(&simplex[i]);
            evals += 1;
        }
    }

    let best = order[0];
    Ok(FitResult {
        theta_hat: simplex[best].clone(),
        nll: values[best],
        iterations,
        evaluations: evals,
        converged,
        trace: Some(trace),
    })
}
