use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_classical, ClassicalSpec, FitConfig, FitResult, ModelKind};
use crate::chmm::{ClassicalHmm, Observations};
use crate::error::{Error, Result};

/// Constants of the order-selection penalty and the non-asymptotic bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConstants {
    /// C_Λ > 0
    pub c_lambda: f64,
    /// η ∈ (0, 1]
    pub eta: f64,
    /// w_M ≥ 0
    pub w_m: f64,
    /// C_aux ≥ 1
    pub c_aux: f64,
    /// A > 0
    pub a_const: f64,
    /// τ ≥ 1
    pub tau: f64,
}

impl Default for PenaltyConstants {
    fn default() -> Self {
        Self {
            c_lambda: 1.0,
            eta: 1.0,
            w_m: 1.0,
            c_aux: 1.0,
            a_const: 1.0,
            tau: 1.0,
        }
    }
}

impl PenaltyConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c_lambda > 0.0
            && self.eta > 0.0
            && self.eta <= 1.0
            && self.w_m >= 0.0
            && self.c_aux >= 1.0
            && self.a_const > 0.0
            && self.tau >= 1.0
            && [self.c_lambda, self.w_m, self.c_aux, self.a_const, self.tau].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("penalty constants out of range: {self:?}")))
        }
    }
}

/// Λ_T = (C_Λ/η)·((ln T)^10/T)·{w_M + (ln T)^4·(m·n + n² − 1)·((ln T)^3·ln ln T + ln C_aux)}.
pub fn penalty_lambda(t: usize, n_l: usize, m: usize, consts: &PenaltyConstants) -> Result<f64> {
    if t < 3 {
        return Err(Error::domain("penalty_lambda", format!("T = {t} < 3")));
    }
    if n_l == 0 {
        return Err(Error::domain("penalty_lambda", "n_L must be positive"));
    }
    consts.validate()?;
    let lt = (t as f64).ln();
    let (n, m) = (n_l as f64, m as f64);
    let size = m * n + n * n - 1.0;
    let inner = consts.w_m + lt.powi(4) * size * (lt.powi(3) * lt.ln() + consts.c_aux.ln());
    Ok(consts.c_lambda / consts.eta * lt.powi(10) / t as f64 * inner)
}

/// One line of the selection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub kind: ModelKind,
    pub n_l: usize,
    pub n_params: usize,
    pub nll: f64,
    pub loglik_per_t: f64,
    pub lambda: f64,
    /// loglik/T − Λ_T; the selected candidate maximizes it.
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub best: usize,
    pub model: ClassicalHmm,
    pub fit: FitResult,
    pub table: Vec<CandidateRow>,
}

fn is_square(n: usize) -> bool {
    let r = (n as f64).sqrt().round() as usize;
    r * r == n
}

/// Fits every candidate and selects the maximizer of loglik/T − Λ_T.
/// Candidate state counts must be perfect squares. Ties go to the earlier
/// candidate.
pub fn penalized_select(
    data: Observations<'_>,
    candidates: &[ClassicalSpec],
    consts: &PenaltyConstants,
    cfg: &FitConfig,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no candidates".into()));
    }
    consts.validate()?;
    if let Some(c) = candidates.iter().find(|c| !is_square(c.n_l())) {
        return Err(Error::Invalid(format!("n_L = {} is not a perfect square", c.n_l())));
    }
    let t = data.len();
    let fits: Vec<Result<(FitResult, ClassicalHmm)>> =
        candidates.par_iter().map(|c| fit_classical(data, c, cfg)).collect();
    let mut table = Vec::with_capacity(candidates.len());
    let mut models = Vec::with_capacity(candidates.len());
    for (c, f) in candidates.iter().zip(fits) {
        let (fit, model) = f?;
        let lambda = penalty_lambda(t, c.n_l(), c.n_params(), consts)?;
        let ll_t = -fit.nll / t as f64;
        table.push(CandidateRow {
            kind: c.model_kind(),
            n_l: c.n_l(),
            n_params: c.n_params(),
            nll: fit.nll,
            loglik_per_t: ll_t,
            lambda,
            objective: ll_t - lambda,
            converged: fit.converged,
        });
        models.push((fit, model));
    }
    let mut best = 0;
    for (i, row) in table.iter().enumerate().skip(1) {
        if row.objective > table[best].objective {
            best = i;
        }
    }
    let (fit, model) = models.swap_remove(best);
    Ok(Selection { best, model, fit, table })
}
