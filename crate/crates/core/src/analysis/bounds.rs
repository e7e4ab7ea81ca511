use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{penalty_lambda, PenaltyConstants};

/// Non-asymptotic KL bounds for the quantum class with √n_L states and the
/// classical class with n_L states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kl_inf_estimate: f64,
    pub t: usize,
    pub n_l: usize,
    pub m_classical: usize,
    pub m_quantum: usize,
    pub consts: PenaltyConstants,
    /// Λ_T at (√n_L, m_quantum).
    pub lambda_quantum: f64,
    /// f(T) = (C_Λ/η)(ln T)^17 ln ln T / T
    pub f_t: f64,
    pub nab_q: f64,
    /// f(T)·((m_c − 1)n_L + n_L² − m_q√n_L)
    pub classical_excess: f64,
    /// nab_q + classical_excess
    pub nab_p: f64,
}

pub fn f_t(t: usize, consts: &PenaltyConstants) -> f64 {
    let lt = (t as f64).ln();
    consts.c_lambda / consts.eta * lt.powi(17) * lt.ln() / t as f64
}

/// Evaluates NAB_Q, the classical excess and NAB_P.
///
/// nab_q = (1+η)(KL + 2Λ_T(√n_L, m_q)) + (A/η)·τ·(ln T)^10/T.
pub fn nab_bounds(
    kl_inf_estimate: f64,
    t: usize,
    n_l: usize,
    m_classical: usize,
    m_quantum: usize,
    consts: &PenaltyConstants,
) -> Result<BoundReport> {
    if t < 3 {
        return Err(Error::domain("nab_bounds", format!("T = {t} < 3")));
    }
    let root = (n_l as f64).sqrt().round() as usize;
    if n_l == 0 || root * root != n_l {
        return Err(Error::Invalid(format!("n_L = {n_l} is not a positive perfect square")));
    }
    if !kl_inf_estimate.is_finite() {
        return Err(Error::Invalid("KL estimate must be finite".into()));
    }
    consts.validate()?;
    let lt = (t as f64).ln();
    let lambda_quantum = penalty_lambda(t, root, m_quantum, consts)?;
    let nab_q = (1.0 + consts.eta) * (kl_inf_estimate + 2.0 * lambda_quantum)
        + consts.a_const / consts.eta * consts.tau * lt.powi(10) / t as f64;
    let f = f_t(t, consts);
    let (n, mc, mq) = (n_l as f64, m_classical as f64, m_quantum as f64);
    let classical_excess = f * ((mc - 1.0) * n + n * n - mq * root as f64);
    Ok(BoundReport {
        kl_inf_estimate,
        t,
        n_l,
        m_classical,
        m_quantum,
        consts: *consts,
        lambda_quantum,
        f_t: f,
        nab_q,
        classical_excess,
        nab_p: nab_q + classical_excess,
    })
}

/// (1/(2T)) Σ_t (V̄*_t / V̂_t − 1).
pub fn filtered_vol_divergence(true_vbar: &[f64], filtered_vbar: &[f64]) -> Result<f64> {
    if true_vbar.len() != filtered_vbar.len() {
        return Err(Error::Dimension(format!(
            "lengths differ: {} vs {}",
            true_vbar.len(),
            filtered_vbar.len()
        )));
    }
    if true_vbar.is_empty() {
        return Err(Error::Invalid("empty sequences".into()));
    }
    if true_vbar.iter().chain(filtered_vbar).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Invalid("variances must be positive".into()));
    }
    let s: f64 = true_vbar.iter().zip(filtered_vbar).map(|(a, b)| a / b - 1.0).sum();
    Ok(s / (2.0 * true_vbar.len() as f64))
}
