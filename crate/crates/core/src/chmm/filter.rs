use super::ClassicalHmm;
use crate::error::{Error, Result};
use crate::specfun::ln_gaussian_pdf;

/// Order of the emission weighting and the transition inside one filter step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterOrder {
    /// w = x ⊙ e, then x' = Aᵀ(w / Σw). The emission at t is conditioned on
    /// the state at the start of the interval; increments sum to the exact
    /// sequence log-probability.
    #[default]
    WeightThenPropagate,
    /// x̃ = Aᵀx, then x' = x̃ ⊙ e / Σ(x̃ ⊙ e).
    PropagateThenWeight,
}

/// What the filter consumes.
#[derive(Debug, Clone, Copy)]
pub enum Observations<'a> {
    Symbols(&'a [usize]),
    Returns(&'a [f64]),
}

impl Observations<'_> {
    pub fn len(&self) -> usize {
        match self {
            Observations::Symbols(s) => s.len(),
            Observations::Returns(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    /// Belief over the spot grid after each observation.
    pub states: Vec<Vec<f64>>,
    pub loglik_increments: Vec<f64>,
    /// One-step-ahead expected integrated variance, Σ_i x_{t−1}[i] E[V̄ | i].
    pub filtered_vbar: Vec<f64>,
}

impl FilterTrace {
    pub fn loglik(&self) -> f64 {
        self.loglik_increments.iter().sum()
    }
}

/// x' = Aᵀ w, written out to avoid allocating a matrix view.
fn propagate(hmm: &ClassicalHmm, w: &[f64], out: &mut [f64]) {
    let a = hmm.a().probs();
    let n = w.len();
    for (j, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..n {
            s += w[i] * a[(i, j)];
        }
        *o = s;
    }
}

/// Core step on log-weights `ln_e` (emission likelihood per state).
fn step_log(
    x_prev: &[f64],
    hmm: &ClassicalHmm,
    ln_e: &[f64],
    order: FilterOrder,
    step: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = x_prev.len();
    let prior: Vec<f64> = match order {
        FilterOrder::WeightThenPropagate => x_prev.to_vec(),
        FilterOrder::PropagateThenWeight => {
            let mut p = vec![0.0; n];
            propagate(hmm, x_prev, &mut p);
            p
        }
    };
    let shift = ln_e
        .iter()
        .zip(&prior)
        .filter(|(_, &x)| x > 0.0)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::ZeroProbability { step });
    }
    let mut w: Vec<f64> = prior
        .iter()
        .zip(ln_e)
        .map(|(&x, &l)| if x > 0.0 { x * (l - shift).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroProbability { step });
    }
    w.iter_mut().for_each(|v| *v /= total);
    let inc = total.ln() + shift;
    let next = match order {
        FilterOrder::WeightThenPropagate => {
            let mut out = vec![0.0; n];
            propagate(hmm, &w, &mut out);
            let s: f64 = out.iter().sum();
            out.iter_mut().for_each(|v| *v /= s);
            out
        }
        FilterOrder::PropagateThenWeight => w,
    };
    Ok((next, inc))
}

fn ln_emission_symbol(hmm: &ClassicalHmm, symbol: usize, step: usize) -> Result<Vec<f64>> {
    let e = hmm.emission().probs();
    if symbol >= e.ncols() {
        return Err(Error::Invalid(format!(
            "symbol {symbol} at step {step} is outside the {}-symbol alphabet",
            e.ncols()
        )));
    }
    Ok(e.column(symbol).iter().map(|p| p.ln()).collect())
}

/// ln Σ_j g[i, j] φ(dy; 0, V̄_j) for each state i.
fn ln_emission_return(hmm: &ClassicalHmm, dy: f64) -> Vec<f64> {
    let table = hmm.table();
    let ln_phi: Vec<f64> = table.vbar_values().iter().map(|&v| ln_gaussian_pdf(dy, v)).collect();
    table
        .g()
        .row_iter()
        .map(|row| {
            let m = row
                .iter()
                .zip(&ln_phi)
                .filter(|(&g, _)| g > 0.0)
                .map(|(_, &l)| l)
                .fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row
                .iter()
                .zip(&ln_phi)
                .filter(|(&g, _)| g > 0.0)
                .map(|(&g, &l)| g * (l - m).exp())
                .sum();
            m + s.ln()
        })
        .collect()
}

/// One weight-then-propagate step on a binned observation.
pub fn forward_step(x_prev: &[f64], hmm: &ClassicalHmm, symbol: usize) -> Result<(Vec<f64>, f64)> {
    forward_step_with(x_prev, hmm, symbol, FilterOrder::WeightThenPropagate)
}

pub fn forward_step_with(
    x_prev: &[f64],
    hmm: &ClassicalHmm,
    symbol: usize,
    order: FilterOrder,
) -> Result<(Vec<f64>, f64)> {
    if x_prev.len() != hmm.n_states() {
        return Err(Error::Dimension(format!(
            "belief has {} entries, model has {} states",
            x_prev.len(),
            hmm.n_states()
        )));
    }
    let ln_e = ln_emission_symbol(hmm, symbol, 0)?;
    step_log(x_prev, hmm, &ln_e, order, 0)
}

/// Σ_t ln P(y_t | y_1..y_{t−1}) from x0.
pub fn log_likelihood_binned(hmm: &ClassicalHmm, obs: &[usize]) -> Result<f64> {
    log_likelihood_binned_with(hmm, obs, FilterOrder::WeightThenPropagate)
}

pub fn log_likelihood_binned_with(hmm: &ClassicalHmm, obs: &[usize], order: FilterOrder) -> Result<f64> {
    let mut x = hmm.x0().to_vec();
    let mut total = 0.0;
    for (t, &s) in obs.iter().enumerate() {
        let ln_e = ln_emission_symbol(hmm, s, t)?;
        let (next, inc) = step_log(&x, hmm, &ln_e, order, t)?;
        total += inc;
        x = next;
    }
    Ok(total)
}

/// Log-likelihood of raw returns with Gaussian mixture emissions.
pub fn log_likelihood_continuous(hmm: &ClassicalHmm, returns: &[f64]) -> Result<f64> {
    let mut x = hmm.x0().to_vec();
    let mut total = 0.0;
    for (t, &dy) in returns.iter().enumerate() {
        let ln_e = ln_emission_return(hmm, dy);
        let (next, inc) = step_log(&x, hmm, &ln_e, FilterOrder::WeightThenPropagate, t)?;
        total += inc;
        x = next;
    }
    Ok(total)
}

/// Runs the filter and records beliefs, increments and the one-step-ahead
/// integrated variance.
pub fn filter_path(hmm: &ClassicalHmm, obs: Observations<'_>) -> Result<FilterTrace> {
    let expected = hmm.table().expected_vbar();
    let mut x = hmm.x0().to_vec();
    let mut trace = FilterTrace {
        states: Vec::with_capacity(obs.len()),
        loglik_increments: Vec::with_capacity(obs.len()),
        filtered_vbar: Vec::with_capacity(obs.len()),
    };
    for t in 0..obs.len() {
        let ln_e = match obs {
            Observations::Symbols(s) => ln_emission_symbol(hmm, s[t], t)?,
            Observations::Returns(r) => ln_emission_return(hmm, r[t]),
        };
        trace
            .filtered_vbar
            .push(x.iter().zip(&expected).map(|(p, v)| p * v).sum());
        let (next, inc) = step_log(&x, hmm, &ln_e, FilterOrder::WeightThenPropagate, t)?;
        trace.loglik_increments.push(inc);
        trace.states.push(next.clone());
        x = next;
    }
    Ok(trace)
}

/// P(y_1..y_T) = 1ᵀ 𝕋_{y_T} ⋯ 𝕋_{y_1} x0 with 𝕋_y = Aᵀ diag(E[:, y]).
pub fn sequence_probability(hmm: &ClassicalHmm, obs: &[usize]) -> Result<f64> {
    let e = hmm.emission().probs();
    let mut v = hmm.x0().to_vec();
    let mut w = vec![0.0; v.len()];
    for (t, &s) in obs.iter().enumerate() {
        if s >= e.ncols() {
            return Err(Error::Invalid(format!("symbol {s} at step {t} is out of range")));
        }
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = v[i] * e[(i, s)];
        }
        propagate(hmm, &w, &mut v);
    }
    Ok(v.iter().sum())
}
