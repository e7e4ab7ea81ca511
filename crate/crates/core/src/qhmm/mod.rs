//! Unitary quantum HMM simulated exactly as a Kraus channel on the latent
//! register.
//!
//! One step of the process couples the latent register to a fresh observed
//! register in |0⟩, applies the ansatz unitary U, and measures the observed
//! register. Conditioning on outcome i acts on the latent state through
//! K_i = (I ⊗ ⟨i|) U (I ⊗ |0⟩).

mod ansatz;

pub use ansatz::{build_ansatz_unitary, initial_latent_state, random_params, AnsatzSpec, Entanglement};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::SequenceModel;
use crate::seed::{rng_from_seed, Rng};

pub type ComplexMatrix = DMatrix<Complex64>;

/// Tolerance for Hermiticity, trace and positivity checks.
pub const STATE_TOL: f64 = 1e-10;
/// Probabilities below this are reported as impossible.
pub const MIN_PROB: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positive semidefiniteness.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Dimension("density matrix must be square and nonempty".into()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Invalid("density matrix has non-finite entries".into()));
        }
        let herm = (&m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > STATE_TOL {
            return Err(Error::Invalid(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::Invalid(format!("trace is {tr}, expected 1")));
        }
        let d = Self(m);
        let min = d.min_eigenvalue();
        if min < -STATE_TOL {
            return Err(Error::Invalid(format!("not positive semidefinite (eigenvalue {min:e})")));
        }
        Ok(d)
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) nonzero vector.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if psi.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(Error::Invalid("state vector must be nonzero".into()));
        }
        let v = ComplexMatrix::from_iterator(psi.len(), 1, psi.iter().map(|z| z / norm));
        Ok(Self(&v * v.adjoint()))
    }

    /// diag(p) for a probability vector p.
    pub fn diagonal(p: &[f64]) -> Result<Self> {
        let m = ComplexMatrix::from_fn(p.len(), p.len(), |i, j| {
            if i == j {
                Complex64::new(p[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Self::new(m)
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        Self::diagonal(&vec![1.0 / dim as f64; dim])
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// tr(ρ²)
    pub fn purity(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Real diagonal (the computational-basis populations).
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)].re).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Latent,
    Observed,
}

/// Reduces a state on latent ⊗ observed (index a·d_O + i) to one factor.
pub fn partial_trace(r: &DensityMatrix, keep: Subsystem, dims: (usize, usize)) -> Result<DensityMatrix> {
    let (dl, d_o) = dims;
    if r.dim() != dl * d_o || dl == 0 || d_o == 0 {
        return Err(Error::Dimension(format!("state has dim {}, expected {dl}·{d_o}", r.dim())));
    }
    let m = r.matrix();
    let out = match keep {
        Subsystem::Latent => {
            ComplexMatrix::from_fn(dl, dl, |a, b| (0..d_o).map(|i| m[(a * d_o + i, b * d_o + i)]).sum())
        }
        Subsystem::Observed => {
            ComplexMatrix::from_fn(d_o, d_o, |i, j| (0..dl).map(|a| m[(a * d_o + i, a * d_o + j)]).sum())
        }
    };
    Ok(DensityMatrix(out))
}

/// K_i[a, b] = U[(a, i), (b, 0)].
pub fn kraus_from_unitary(u: &ComplexMatrix, spec: &AnsatzSpec) -> Result<Vec<ComplexMatrix>> {
    let (nl, no) = (spec.n_latent(), spec.n_obs());
    if u.nrows() != nl * no || u.ncols() != nl * no {
        return Err(Error::Dimension(format!(
            "unitary is {}×{}, expected {}",
            u.nrows(),
            u.ncols(),
            nl * no
        )));
    }
    Ok((0..no)
        .map(|i| ComplexMatrix::from_fn(nl, nl, |a, b| u[(a * no + i, b * no)]))
        .collect())
}

/// Largest entry of |Σ K_i†K_i − I|.
pub fn completeness_error(kraus: &[ComplexMatrix]) -> f64 {
    let Some(first) = kraus.first() else {
        return f64::INFINITY;
    };
    let d = first.ncols();
    let mut s = ComplexMatrix::zeros(d, d);
    for k in kraus {
        s += k.adjoint() * k;
    }
    (s - ComplexMatrix::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// S[(a,b),(c,e)] = K[a,c]·conj(K[b,e]).
fn superoperator(k: &ComplexMatrix) -> Vec<Complex64> {
    let d = k.nrows();
    let mut s = Vec::with_capacity(d.pow(4));
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    s.push(k[(a, c)] * k[(b, e)].conj());
                }
            }
        }
    }
    s
}

/// Quantum HMM: one Kraus operator per symbol plus the initial latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct QhmmModel {
    kraus: Vec<ComplexMatrix>,
    kraus_adj: Vec<ComplexMatrix>,
    /// Row-major d²×d² maps vec(ρ) ↦ vec(K_i ρ K_i†), ρ flattened row-major.
    superops: Vec<Vec<Complex64>>,
    rho0: DensityMatrix,
    spec: Option<AnsatzSpec>,
    theta: Vec<f64>,
    theta_init: Vec<f64>,
}

impl QhmmModel {
    /// Model generated by the ansatz circuit with rotation angles `theta`
    /// and initial-state angles `theta_init`.
    pub fn from_ansatz(spec: AnsatzSpec, theta: &[f64], theta_init: &[f64]) -> Result<Self> {
        let u = build_ansatz_unitary(&spec, theta)?;
        let kraus = kraus_from_unitary(&u, &spec)?;
        let rho0 = initial_latent_state(&spec, theta_init)?;
        let mut m = Self::from_kraus(kraus, rho0)?;
        m.spec = Some(spec);
        m.theta = theta.to_vec();
        m.theta_init = theta_init.to_vec();
        Ok(m)
    }

    /// Model from the concatenated vector (θ_init, θ) used by the fitter.
    pub fn from_params(spec: AnsatzSpec, params: &[f64]) -> Result<Self> {
        if params.len() != spec.n_params_total() {
            return Err(Error::Invalid(format!(
                "expected {} parameters, got {}",
                spec.n_params_total(),
                params.len()
            )));
        }
        let (init, rot) = params.split_at(spec.latent_qubits);
        Self::from_ansatz(spec, rot, init)
    }

    /// Model from explicit Kraus operators, checked for completeness.
    pub fn from_kraus(kraus: Vec<ComplexMatrix>, rho0: DensityMatrix) -> Result<Self> {
        let d = rho0.dim();
        if kraus.len() < 2 {
            return Err(Error::Invalid("need at least two Kraus operators".into()));
        }
        if kraus.len() > d * d {
            return Err(Error::Invalid(format!("n_O = {} exceeds n_L^2 = {}", kraus.len(), d * d)));
        }
        if kraus.iter().any(|k| k.nrows() != d || k.ncols() != d) {
            return Err(Error::Dimension(format!("Kraus operators must be {d}×{d}")));
        }
        let err = completeness_error(&kraus);
        if err > STATE_TOL {
            return Err(Error::Invalid(format!("Kraus set is not complete (deviation {err:e})")));
        }
        let kraus_adj = kraus.iter().map(|k| k.adjoint()).collect();
        let superops = kraus.iter().map(superoperator).collect();
        Ok(Self {
            kraus,
            kraus_adj,
            superops,
            rho0,
            spec: None,
            theta: Vec::new(),
            theta_init: Vec::new(),
        })
    }

    pub fn kraus(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    pub fn rho0(&self) -> &DensityMatrix {
        &self.rho0
    }

    pub fn spec(&self) -> Option<&AnsatzSpec> {
        self.spec.as_ref()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_init(&self) -> &[f64] {
        &self.theta_init
    }

    pub fn n_latent(&self) -> usize {
        self.rho0.dim()
    }

    pub fn n_obs(&self) -> usize {
        self.kraus.len()
    }

    /// Number of free parameters (rotation angles + initial-state angles).
    pub fn n_params(&self) -> usize {
        self.spec.map_or(0, |s| s.n_params_total())
    }

    /// K_i ρ K_i† without normalization.
    fn apply(&self, rho: &ComplexMatrix, symbol: usize) -> ComplexMatrix {
        &self.kraus[symbol] * rho * &self.kraus_adj[symbol]
    }

    fn check_symbol(&self, symbol: usize) -> Result<()> {
        if symbol >= self.n_obs() {
            return Err(Error::Invalid(format!("symbol {symbol} out of range for n_O = {}", self.n_obs())));
        }
        Ok(())
    }

    /// Probabilities tr(K_i ρ K_i†) of every symbol.
    pub fn symbol_probs(&self, rho: &DensityMatrix) -> Vec<f64> {
        (0..self.n_obs()).map(|i| self.apply(rho.matrix(), i).trace().re.max(0.0)).collect()
    }
}

/// Conditions the latent state on one observed symbol.
pub fn qhmm_step(rho: &DensityMatrix, model: &QhmmModel, symbol: usize) -> Result<(DensityMatrix, f64)> {
    step_at(rho, model, symbol, 0)
}

fn step_at(rho: &DensityMatrix, model: &QhmmModel, symbol: usize, t: usize) -> Result<(DensityMatrix, f64)> {
    model.check_symbol(symbol)?;
    if rho.dim() != model.n_latent() {
        return Err(Error::Dimension(format!("state has dim {}, model {}", rho.dim(), model.n_latent())));
    }
    let sigma = model.apply(rho.matrix(), symbol);
    let p = sigma.trace().re;
    if !(p >= MIN_PROB) {
        return Err(Error::ZeroProbability { step: t });
    }
    let mut next = sigma / Complex64::new(p, 0.0);
    // keep exact Hermiticity against round-off drift
    next = (&next + next.adjoint()) * Complex64::new(0.5, 0.0);
    Ok((DensityMatrix(next), p))
}

/// Latent states after each symbol (ρ_1 … ρ_T) and their per-step
/// log-probabilities.
pub fn qhmm_filter(model: &QhmmModel, obs: &[usize]) -> Result<(Vec<DensityMatrix>, Vec<f64>)> {
    let mut rho = model.rho0.clone();
    let mut states = Vec::with_capacity(obs.len());
    let mut incs = Vec::with_capacity(obs.len());
    for (t, &s) in obs.iter().enumerate() {
        let (next, p) = step_at(&rho, model, s, t)?;
        incs.push(p.ln());
        states.push(next.clone());
        rho = next;
    }
    Ok((states, incs))
}

fn filter_from(model: &QhmmModel, start: &DensityMatrix, obs: &[usize]) -> Result<(DensityMatrix, f64)> {
    let mut rho = start.clone();
    let mut ll = 0.0;
    for (t, &s) in obs.iter().enumerate() {
        let (next, p) = step_at(&rho, model, s, t)?;
        ll += p.ln();
        rho = next;
    }
    Ok((rho, ll))
}

/// ln P(obs), accumulated as a sum of per-step log-probabilities.
pub fn qhmm_sequence_logprob(model: &QhmmModel, obs: &[usize]) -> Result<f64> {
    if let Some(&bad) = obs.iter().find(|&&s| s >= model.n_obs()) {
        model.check_symbol(bad)?;
    }
    let d = model.n_latent();
    let dd = d * d;
    let mut v: Vec<Complex64> = model.rho0.matrix().transpose().iter().copied().collect();
    let mut w = vec![Complex64::new(0.0, 0.0); dd];
    let mut ll = 0.0;
    for (t, &s) in obs.iter().enumerate() {
        let op = &model.superops[s];
        for (r, out) in w.iter_mut().enumerate() {
            let row = &op[r * dd..(r + 1) * dd];
            *out = row.iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let p: f64 = (0..d).map(|a| w[a * d + a].re).sum();
        if !(p >= MIN_PROB) {
            return Err(Error::ZeroProbability { step: t });
        }
        let inv = 1.0 / p;
        for (x, y) in v.iter_mut().zip(&w) {
            *x = y * inv;
        }
        ll += p.ln();
    }
    Ok(ll)
}

/// Unnormalized probability tr(K_{y_T}⋯K_{y_1} ρ K_{y_1}†⋯K_{y_T}†); zero
/// when the sequence is impossible.
pub(crate) fn sequence_prob_from(model: &QhmmModel, start: &ComplexMatrix, obs: &[usize]) -> f64 {
    let mut sigma = start.clone();
    for &s in obs {
        sigma = model.apply(&sigma, s);
    }
    sigma.trace().re.max(0.0)
}

/// Sampled symbols and, if requested, the latent state after each draw.
#[derive(Debug, Clone, PartialEq)]
pub struct QhmmSimulation {
    pub symbols: Vec<usize>,
    pub states: Option<Vec<DensityMatrix>>,
}

/// Samples `len` symbols sequentially; fully determined by `seed`.
pub fn qhmm_simulate(model: &QhmmModel, len: usize, seed: u64) -> Vec<usize> {
    sample_with(model, len, &mut rng_from_seed(seed), false).symbols
}

pub fn qhmm_simulate_with_states(model: &QhmmModel, len: usize, seed: u64) -> QhmmSimulation {
    sample_with(model, len, &mut rng_from_seed(seed), true)
}

fn sample_with(model: &QhmmModel, len: usize, rng: &mut Rng, keep_states: bool) -> QhmmSimulation {
    let mut rho = model.rho0.matrix().clone();
    let mut symbols = Vec::with_capacity(len);
    let mut states = keep_states.then(|| Vec::with_capacity(len));
    for _ in 0..len {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        let mut last = None;
        for i in 0..model.n_obs() {
            let sigma = model.apply(&rho, i);
            let p = sigma.trace().re;
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = Some((i, sigma, p));
            if u < acc {
                chosen = last.take();
                break;
            }
        }
        // round-off can leave acc a hair below 1
        let (i, sigma, p) = chosen.or(last).expect("complete channel has a positive-probability symbol");
        rho = sigma / Complex64::new(p, 0.0);
        symbols.push(i);
        if let Some(st) = states.as_mut() {
            st.push(DensityMatrix(rho.clone()));
        }
    }
    QhmmSimulation { symbols, states }
}

impl SequenceModel for QhmmModel {
    fn n_symbols(&self) -> usize {
        self.n_obs()
    }

    fn log_prob(&self, obs: &[usize]) -> Result<f64> {
        qhmm_sequence_logprob(self, obs)
    }

    fn prob(&self, obs: &[usize]) -> f64 {
        if obs.iter().any(|&s| s >= self.n_obs()) {
            return 0.0;
        }
        sequence_prob_from(self, self.rho0.matrix(), obs)
    }

    fn sample_symbols(&self, len: usize, rng: &mut Rng) -> Vec<usize> {
        sample_with(self, len, rng, false).symbols
    }
}

/// Outcome of the causal-break (latent reset) test.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CausalBreakReport {
    /// Continuation law after prefix A, lexicographic over n_O^horizon words.
    pub distribution_a: Vec<f64>,
    /// Continuation law after prefix B followed by a reset to ρ_A.
    pub distribution_b: Vec<f64>,
    /// Continuation law after prefix B without the reset.
    pub distribution_b_unreset: Vec<f64>,
    pub max_abs_diff: f64,
    pub markovian: bool,
}

/// Probabilities of all n_O^h continuations from `rho`, lexicographic.
pub fn continuation_distribution(model: &QhmmModel, rho: &DensityMatrix, horizon: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.n_obs().pow(horizon as u32));
    fn rec(model: &QhmmModel, sigma: &ComplexMatrix, depth: usize, out: &mut Vec<f64>) {
        if depth == 0 {
            out.push(sigma.trace().re.max(0.0));
            return;
        }
        for i in 0..model.n_obs() {
            rec(model, &model.apply(sigma, i), depth - 1, out);
        }
    }
    rec(model, rho.matrix(), horizon, &mut out);
    out
}

pub fn causal_break_test(
    model: &QhmmModel,
    prefix_a: &[usize],
    prefix_b: &[usize],
    horizon: usize,
) -> Result<CausalBreakReport> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let words = (model.n_obs() as f64).powi(horizon as i32);
    if words > 1e6 {
        return Err(Error::Resource(format!("{words} continuations is too many")));
    }
    let (rho_a, _) = filter_from(model, &model.rho0, prefix_a)?;
    let (rho_b, _) = filter_from(model, &model.rho0, prefix_b)?;
    let distribution_a = continuation_distribution(model, &rho_a, horizon);
    // the reset replaces whatever prefix B left behind
    let distribution_b = continuation_distribution(model, &rho_a, horizon);
    let distribution_b_unreset = continuation_distribution(model, &rho_b, horizon);
    let max_abs_diff = distribution_a
        .iter()
        .zip(&distribution_b)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(CausalBreakReport {
        distribution_a,
        distribution_b,
        distribution_b_unreset,
        max_abs_diff,
        markovian: max_abs_diff < STATE_TOL,
    })
}
