//! Maximum likelihood fitting with a barrier-augmented Nelder-Mead search,
//! and penalized model-order selection.

mod nelder_mead;
mod penalty;

pub use nelder_mead::nelder_mead;
pub use penalty::{penalized_select, penalty_lambda, CandidateRow, PenaltyConstants, Selection};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chmm::{log_likelihood_binned, log_likelihood_continuous, ClassicalHmm, Observations, TableMode};
use crate::error::{Error, Result};
use crate::model::SequenceModel;
use crate::qhmm::{qhmm_sequence_logprob, random_params, AnsatzSpec, QhmmModel};
use crate::seed::derive_rng;
use crate::volgrid::{CirParams, ObservationScheme, SpotGrid};

/// Objective value reported for feasible parameters whose model cannot be
/// built or assigns zero probability to the data.
pub const FAILURE_OBJECTIVE: f64 = 1e12;
const BARRIER: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub initial_simplex_scale: f64,
    pub seed: u64,
    /// Random starts for QHMM fits.
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            ftol: 1e-10,
            xtol: 1e-8,
            initial_simplex_scale: 0.1,
            seed: 0,
            restarts: 5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be at least 1".into()));
        }
        if !(self.ftol > 0.0 && self.xtol > 0.0) {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        if !(self.initial_simplex_scale > 0.0 && self.initial_simplex_scale.is_finite()) {
            return Err(Error::Invalid("initial_simplex_scale must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Invalid("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    /// Objective at `theta_hat`: the negative log-likelihood.
    pub nll: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective value at the start of each iteration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Cir,
    Nonparam,
    Qhmm,
}

/// Zero inside the feasible region, `1e8 · (1 + violation)` outside.
///
/// cir: every parameter positive. nonparam: every parameter in (0, 1) and
/// each row group of n_L − 1 parameters sums below 1. qhmm: unconstrained.
pub fn constraint_penalty(theta: &[f64], kind: ModelKind, n_l: usize) -> f64 {
    let mut violation = 0.0;
    let mut feasible = true;
    let mut note = |v: f64| {
        feasible = false;
        violation += if v.is_finite() { v } else { 1.0 };
    };
    match kind {
        ModelKind::Qhmm => {}
        ModelKind::Cir => {
            for &t in theta {
                if !(t > 0.0) || !t.is_finite() {
                    note(-t);
                }
            }
        }
        ModelKind::Nonparam => {
            for &t in theta {
                if !(t > 0.0 && t.is_finite()) {
                    note(-t);
                } else if t >= 1.0 {
                    note(t - 1.0);
                }
            }
            for row in theta.chunks(n_l.saturating_sub(1).max(1)) {
                let s: f64 = row.iter().sum();
                if s >= 1.0 || !s.is_finite() {
                    note(s - 1.0);
                }
            }
        }
    }
    if feasible {
        0.0
    } else {
        BARRIER * (1.0 + violation)
    }
}

/// Parameterization of a classical candidate.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassicalKind {
    /// (α, β, σ) of a CIR diffusion; the grid follows the parameters.
    Cir { n_l: usize },
    /// Free substep transition matrix on a fixed grid.
    Nonparam { grid: SpotGrid },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalSpec {
    pub kind: ClassicalKind,
    /// Substeps per observation interval.
    pub k: usize,
    pub mode: TableMode,
    pub scheme: ObservationScheme,
    /// Starting point; a data-driven default when `None`.
    pub start: Option<Vec<f64>>,
}

impl ClassicalSpec {
    pub fn n_l(&self) -> usize {
        match &self.kind {
            ClassicalKind::Cir { n_l } => *n_l,
            ClassicalKind::Nonparam { grid } => grid.len(),
        }
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.kind {
            ClassicalKind::Cir { .. } => ModelKind::Cir,
            ClassicalKind::Nonparam { .. } => ModelKind::Nonparam,
        }
    }

    /// Free parameter count m_M.
    pub fn n_params(&self) -> usize {
        let n = self.n_l();
        match self.kind {
            ClassicalKind::Cir { .. } => 3,
            ClassicalKind::Nonparam { .. } => n * (n - 1),
        }
    }

    /// Model at parameter vector `theta`.
    pub fn build(&self, theta: &[f64]) -> Result<ClassicalHmm> {
        match &self.kind {
            ClassicalKind::Cir { n_l } => {
                if theta.len() != 3 {
                    return Err(Error::Dimension(format!("cir takes 3 parameters, got {}", theta.len())));
                }
                let p = CirParams::new(theta[0], theta[1], theta[2])?;
                ClassicalHmm::cir(&p, *n_l, self.k, self.scheme.clone(), self.mode)
            }
            ClassicalKind::Nonparam { grid } => {
                ClassicalHmm::nonparam(theta, grid.clone(), self.k, self.scheme.clone(), self.mode)
            }
        }
    }

    fn default_start(&self, data: &Observations<'_>) -> Vec<f64> {
        match &self.kind {
            ClassicalKind::Cir { .. } => {
                let beta = second_moment(data, &self.scheme).clamp(1e-6, 1e3);
                // unit mean reversion, ergodic Gamma shape 1
                vec![1.0, beta, (2.0 * beta).sqrt()]
            }
            ClassicalKind::Nonparam { grid } => {
                let n = grid.len();
                // persistent chain: half the mass stays put
                let off = 0.5 / n as f64;
                let mut theta = Vec::with_capacity(n * (n - 1));
                for r in 0..n {
                    for c in 0..n {
                        if c == n - 1 {
                            continue;
                        }
                        theta.push(if c == r { 0.5 + off } else { off });
                    }
                }
                theta
            }
        }
    }
}

/// Mean squared return; for binned data each symbol stands for its bin
/// midpoint (1.25 × the finite edge for the outer bins).
fn second_moment(data: &Observations<'_>, scheme: &ObservationScheme) -> f64 {
    match data {
        Observations::Returns(r) => r.iter().map(|x| x * x).sum::<f64>() / r.len().max(1) as f64,
        Observations::Symbols(s) => {
            let rep = |i: usize| {
                let (lo, hi) = scheme.bounds(i);
                match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (false, true) => 1.25 * hi,
                    (true, false) => 1.25 * lo,
                    (false, false) => 1.0,
                }
            };
            s.iter().map(|&i| rep(i).powi(2)).sum::<f64>() / s.len().max(1) as f64
        }
    }
}

/// Log-likelihood of `data` under `hmm` (binned or continuous).
pub fn classical_loglik(hmm: &ClassicalHmm, data: &Observations<'_>) -> Result<f64> {
    match data {
        Observations::Symbols(s) => log_likelihood_binned(hmm, s),
        Observations::Returns(r) => log_likelihood_continuous(hmm, r),
    }
}

/// Barrier-augmented negative log-likelihood of a classical candidate.
pub fn classical_objective(theta: &[f64], spec: &ClassicalSpec, data: &Observations<'_>) -> f64 {
    let pen = constraint_penalty(theta, spec.model_kind(), spec.n_l());
    if pen > 0.0 {
        return pen;
    }
    match spec.build(theta).and_then(|m| classical_loglik(&m, data)) {
        Ok(ll) if ll.is_finite() => -ll,
        _ => FAILURE_OBJECTIVE,
    }
}

/// Fits a classical candidate by Nelder-Mead from `spec.start` (or its
/// default).
pub fn fit_classical(data: Observations<'_>, spec: &ClassicalSpec, cfg: &FitConfig) -> Result<(FitResult, ClassicalHmm)> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot fit an empty sequence".into()));
    }
    if spec.n_l() < 2 {
        return Err(Error::Invalid("need at least 2 hidden states".into()));
    }
    if let Observations::Symbols(s) = data {
        if let Some(&bad) = s.iter().find(|&&x| x >= spec.scheme.n_symbols()) {
            return Err(Error::Invalid(format!("symbol {bad} out of range")));
        }
    }
    let start = spec.start.clone().unwrap_or_else(|| spec.default_start(&data));
    if start.len() != spec.n_params() {
        return Err(Error::Dimension(format!(
            "starting point has {} parameters, model needs {}",
            start.len(),
            spec.n_params()
        )));
    }
    if constraint_penalty(&start, spec.model_kind(), spec.n_l()) > 0.0 {
        return Err(Error::Invalid("starting point violates the parameter constraints".into()));
    }
    // surface construction errors at the start instead of hiding them
    let ll0 = classical_loglik(&spec.build(&start)?, &data)?;
    if !ll0.is_finite() {
        return Err(Error::ZeroProbability { step: 0 });
    }
    let res = nelder_mead(|th| classical_objective(th, spec, &data), &start, cfg)?;
    let model = spec.build(&res.theta_hat)?;
    Ok((res, model))
}

/// Barrier-free negative log-likelihood of a QHMM parameter vector
/// (θ_init, θ).
pub fn qhmm_objective(params: &[f64], spec: &AnsatzSpec, data: &[usize]) -> f64 {
    match QhmmModel::from_params(*spec, params).and_then(|m| qhmm_sequence_logprob(&m, data)) {
        Ok(ll) if ll.is_finite() => -ll,
        _ => FAILURE_OBJECTIVE,
    }
}

/// Multi-start QHMM fit. Start r draws every angle uniformly from [0, 2π)
/// with a stream derived from `(cfg.seed, r)`; starts run concurrently and
/// the lowest objective wins (earlier start on ties).
pub fn fit_qhmm(data: &[usize], spec: &AnsatzSpec, cfg: &FitConfig) -> Result<(FitResult, QhmmModel)> {
    cfg.validate()?;
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("cannot fit an empty sequence".into()));
    }
    if let Some(&bad) = data.iter().find(|&&x| x >= spec.n_obs()) {
        return Err(Error::Invalid(format!("symbol {bad} out of range for n_O = {}", spec.n_obs())));
    }
    let starts: Vec<Vec<f64>> = (0..cfg.restarts)
        .map(|r| random_params(spec, &mut derive_rng(cfg.seed, r as u64, "qhmm-start")))
        .collect();
    let results: Vec<Result<FitResult>> = starts
        .par_iter()
        .map(|x0| nelder_mead(|p| qhmm_objective(p, spec, data), x0, cfg))
        .collect();
    let mut best: Option<FitResult> = None;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.nll < b.nll) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let best = match (best, first_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("restarts >= 1"),
    };
    if best.nll >= FAILURE_OBJECTIVE {
        return Err(Error::NonConvergence {
            func: "fit_qhmm",
            iterations: best.iterations,
            detail: "no start reached a positive-probability model".into(),
        });
    }
    let model = QhmmModel::from_params(*spec, &best.theta_hat)?;
    Ok((best, model))
}

/// Any candidate model class.
#[derive(Debug, Clone, PartialEq)]
pub enum FitSpec {
    Classical(ClassicalSpec),
    Qhmm(AnsatzSpec),
}

impl FitSpec {
    pub fn model_kind(&self) -> ModelKind {
        match self {
            FitSpec::Classical(c) => c.model_kind(),
            FitSpec::Qhmm(_) => ModelKind::Qhmm,
        }
    }

    /// Free parameter count m_M.
    pub fn n_params(&self) -> usize {
        match self {
            FitSpec::Classical(c) => c.n_params(),
            FitSpec::Qhmm(q) => q.n_params_total(),
        }
    }

    /// Hidden-state dimension (n_L or n_L^q).
    pub fn n_latent(&self) -> usize {
        match self {
            FitSpec::Classical(c) => c.n_l(),
            FitSpec::Qhmm(q) => q.n_latent(),
        }
    }

    pub fn n_symbols(&self) -> usize {
        match self {
            FitSpec::Classical(c) => c.scheme.n_symbols(),
            FitSpec::Qhmm(q) => q.n_obs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Classical(ClassicalHmm),
    Qhmm(QhmmModel),
}

impl SequenceModel for FittedModel {
    fn n_symbols(&self) -> usize {
        match self {
            FittedModel::Classical(m) => m.n_symbols(),
            FittedModel::Qhmm(m) => m.n_symbols(),
        }
    }

    fn log_prob(&self, obs: &[usize]) -> Result<f64> {
        match self {
            FittedModel::Classical(m) => m.log_prob(obs),
            FittedModel::Qhmm(m) => m.log_prob(obs),
        }
    }

    fn prob(&self, obs: &[usize]) -> f64 {
        match self {
            FittedModel::Classical(m) => m.prob(obs),
            FittedModel::Qhmm(m) => m.prob(obs),
        }
    }

    fn sample_symbols(&self, len: usize, rng: &mut crate::seed::Rng) -> Vec<usize> {
        match self {
            FittedModel::Classical(m) => m.sample_symbols(len, rng),
            FittedModel::Qhmm(m) => m.sample_symbols(len, rng),
        }
    }
}

/// Fits any candidate class to a symbol sequence.
pub fn fit(data: &[usize], spec: &FitSpec, cfg: &FitConfig) -> Result<(FitResult, FittedModel)> {
    match spec {
        FitSpec::Classical(c) => {
            fit_classical(Observations::Symbols(data), c, cfg).map(|(r, m)| (r, FittedModel::Classical(m)))
        }
        FitSpec::Qhmm(q) => fit_qhmm(data, q, cfg).map(|(r, m)| (r, FittedModel::Qhmm(m))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chmm::simulate;
    use crate::qhmm::{qhmm_simulate, Entanglement};
    use crate::volgrid::{build_observation_scheme, cir_spot_grid};

    fn sp500() -> CirParams {
        CirParams::new(2.2, 0.077, 1.1).unwrap()
    }

    fn scheme() -> ObservationScheme {
        build_observation_scheme(4, 4.0 * 0.077f64.sqrt()).unwrap()
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(constraint_penalty(&[2.2, 0.077, 1.1], ModelKind::Cir, 16), 0.0);
        assert_eq!(constraint_penalty(&[0.7, 0.4], ModelKind::Nonparam, 2), 0.0);
        assert!(constraint_penalty(&[-1.0, 0.1, 1.0], ModelKind::Cir, 16) >= 2e8);
        assert!(constraint_penalty(&[0.0, 0.1, 1.0], ModelKind::Cir, 16) >= 1e8);
        assert!(constraint_penalty(&[0.6, 0.5, 0.1, 0.1, 0.2, 0.2], ModelKind::Nonparam, 3) > 1e8);
        assert!(constraint_penalty(&[f64::NAN, 0.5], ModelKind::Nonparam, 2).is_finite());
        assert_eq!(constraint_penalty(&[-50.0, 1e9], ModelKind::Qhmm, 2), 0.0);
    }

    #[test]
    fn cir_fit_beats_truth_in_sample() {
        let p = sp500();
        let truth = ClassicalHmm::cir(&p, 16, 4, scheme(), TableMode::Multiset).unwrap();
        let sim = simulate(&truth, 500, 99);
        let data = Observations::Symbols(&sim.symbols);
        let spec = ClassicalSpec {
            kind: ClassicalKind::Cir { n_l: 16 },
            k: 4,
            mode: TableMode::Multiset,
            scheme: scheme(),
            start: None,
        };
        let nll_true = -classical_loglik(&truth, &data).unwrap();
        let cfg = FitConfig { max_iter: 400, ..FitConfig::default() };
        let (fit, model) = fit_classical(data, &spec, &cfg).unwrap();
        assert!(fit.nll <= nll_true + 1e-6, "{} vs {}", fit.nll, nll_true);
        assert!((-classical_loglik(&model, &data).unwrap() - fit.nll).abs() < 1e-9);
    }

    #[test]
    fn nonparam_fit_fixed_point() {
        let p = sp500();
        let truth = ClassicalHmm::cir(&p, 16, 4, scheme(), TableMode::Multiset).unwrap();
        let sim = simulate(&truth, 200, 5);
        let data = Observations::Symbols(&sim.symbols);
        let mut spec = ClassicalSpec {
            kind: ClassicalKind::Nonparam { grid: cir_spot_grid(&p, 3).unwrap() },
            k: 2,
            mode: TableMode::Multiset,
            scheme: scheme(),
            start: None,
        };
        assert_eq!(spec.n_params(), 6);
        let cfg = FitConfig::default();
        let (fit, _) = fit_classical(data, &spec, &cfg).unwrap();
        assert!(fit.converged);
        let start_nll = classical_objective(&spec.default_start(&data), &spec, &data);
        assert!(fit.nll <= start_nll);
        spec.start = Some(fit.theta_hat.clone());
        let (refit, _) = fit_classical(data, &spec, &cfg).unwrap();
        assert!(refit.nll <= fit.nll);
        assert!(fit.nll - refit.nll < 1e-6, "{} → {}", fit.nll, refit.nll);
    }

    #[test]
    fn nonparam_dimension_for_sixteen_states() {
        let spec = ClassicalSpec {
            kind: ClassicalKind::Nonparam { grid: cir_spot_grid(&sp500(), 16).unwrap() },
            k: 4,
            mode: TableMode::Multiset,
            scheme: scheme(),
            start: None,
        };
        assert_eq!(spec.n_params(), 240);
        let x0 = spec.default_start(&Observations::Symbols(&[0]));
        assert_eq!(constraint_penalty(&x0, ModelKind::Nonparam, 16), 0.0);
    }

    #[test]
    fn qhmm_fit_on_fair_coin() {
        let h = crate::qhmm::tests::hadamard_model();
        let t = 20_000;
        let data = qhmm_simulate(&h, t, 31);
        let spec = AnsatzSpec::new(1, 1, 3, Entanglement::Full).unwrap();
        assert_eq!(spec.n_params(), 16);
        let cfg = FitConfig { restarts: 2, max_iter: 3000, ftol: 1e-8, ..FitConfig::default() };
        let (fit, model) = fit_qhmm(&data, &spec, &cfg).unwrap();
        let per_step = fit.nll / t as f64;
        assert!((per_step - std::f64::consts::LN_2).abs() < 1e-3, "{per_step}");
        assert!(fit.trace.as_ref().unwrap().first().unwrap() >= &fit.nll);
        assert!((-qhmm_sequence_logprob(&model, &data).unwrap() - fit.nll).abs() < 1e-9);
        let (again, _) = fit_qhmm(&data, &spec, &cfg).unwrap();
        assert_eq!(fit, again);
    }

    #[test]
    fn bad_inputs() {
        let spec = AnsatzSpec::new(1, 1, 1, Entanglement::Full).unwrap();
        assert!(fit_qhmm(&[0, 2], &spec, &FitConfig::default()).is_err());
        assert!(fit_qhmm(&[], &spec, &FitConfig::default()).is_err());
        let bad = FitConfig { restarts: 0, ..FitConfig::default() };
        assert!(fit_qhmm(&[0, 1], &spec, &bad).is_err());
    }
}
