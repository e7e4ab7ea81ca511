//! Rotation/entanglement ansatz on the joint latent ⊗ observed register.
//!
//! Index convention: a basis state of the joint register has index
//! `a * n_O + i`, with `a` the latent index and `i` the observed index.
//! Within each register qubit 0 is the least significant bit. Circuit qubits
//! are numbered latent first (0..n_lat) then observed (n_lat..n_lat+n_obs).

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ComplexMatrix, DensityMatrix};
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entanglement {
    /// CNOT a → b for every a < b, pairs in ascending order.
    Full,
    /// CNOT a → a + 1.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub latent_qubits: usize,
    pub observed_qubits: usize,
    pub reps: usize,
    pub entanglement: Entanglement,
}

impl AnsatzSpec {
    pub fn new(latent_qubits: usize, observed_qubits: usize, reps: usize, entanglement: Entanglement) -> Result<Self> {
        let s = Self {
            latent_qubits,
            observed_qubits,
            reps,
            entanglement,
        };
        s.validate()?;
        Ok(s)
    }

    /// Rejects empty registers and alphabets larger than n_L².
    pub fn validate(&self) -> Result<()> {
        if self.latent_qubits == 0 || self.observed_qubits == 0 {
            return Err(Error::Invalid("both registers need at least one qubit".into()));
        }
        if self.observed_qubits > 2 * self.latent_qubits {
            return Err(Error::Invalid(format!(
                "n_O = {} exceeds n_L^2 = {}",
                1usize << self.observed_qubits,
                1usize << (2 * self.latent_qubits)
            )));
        }
        if self.total_qubits() > 12 {
            return Err(Error::Resource(format!("{} qubits is beyond dense simulation here", self.total_qubits())));
        }
        Ok(())
    }

    /// Matching spec for state and alphabet sizes that are powers of two.
    pub fn for_sizes(n_latent: usize, n_obs: usize, reps: usize, entanglement: Entanglement) -> Result<Self> {
        let log2 = |n: usize, what: &str| -> Result<usize> {
            if n < 2 || !n.is_power_of_two() {
                return Err(Error::Invalid(format!("{what} must be a power of two >= 2, got {n}")));
            }
            Ok(n.trailing_zeros() as usize)
        };
        Self::new(log2(n_latent, "latent dimension")?, log2(n_obs, "observation count")?, reps, entanglement)
    }

    pub fn total_qubits(&self) -> usize {
        self.latent_qubits + self.observed_qubits
    }

    pub fn n_latent(&self) -> usize {
        1 << self.latent_qubits
    }

    pub fn n_obs(&self) -> usize {
        1 << self.observed_qubits
    }

    /// 2 · n · (reps + 1) rotation angles.
    pub fn n_params(&self) -> usize {
        2 * self.total_qubits() * (self.reps + 1)
    }

    /// Rotation angles plus one initial-state angle per latent qubit.
    pub fn n_params_total(&self) -> usize {
        self.n_params() + self.latent_qubits
    }

    /// Bit position of circuit qubit `q` in the joint index.
    fn bit(&self, q: usize) -> usize {
        if q < self.latent_qubits {
            self.observed_qubits + q
        } else {
            q - self.latent_qubits
        }
    }

    fn cnot_pairs(&self, n: usize) -> Vec<(usize, usize)> {
        match self.entanglement {
            Entanglement::Full => (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect(),
            Entanglement::Linear => (0..n.saturating_sub(1)).map(|a| (a, a + 1)).collect(),
        }
    }
}

fn ry(theta: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (0.5 * theta).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

fn rz(theta: f64) -> [[Complex64; 2]; 2] {
    let h = 0.5 * theta;
    let z = Complex64::new(0.0, 0.0);
    [[Complex64::from_polar(1.0, -h), z], [z, Complex64::from_polar(1.0, h)]]
}

/// Left-multiplies `m` by a single-qubit gate acting on bit `bit`.
pub(crate) fn apply_1q(m: &mut ComplexMatrix, bit: usize, g: &[[Complex64; 2]; 2]) {
    let mask = 1usize << bit;
    let dim = m.nrows();
    for col in 0..m.ncols() {
        for r0 in 0..dim {
            if r0 & mask != 0 {
                continue;
            }
            let r1 = r0 | mask;
            let (x0, x1) = (m[(r0, col)], m[(r1, col)]);
            m[(r0, col)] = g[0][0] * x0 + g[0][1] * x1;
            m[(r1, col)] = g[1][0] * x0 + g[1][1] * x1;
        }
    }
}

/// Left-multiplies `m` by CNOT(control bit → target bit).
pub(crate) fn apply_cnot(m: &mut ComplexMatrix, control: usize, target: usize) {
    let (cm, tm) = (1usize << control, 1usize << target);
    for r in 0..m.nrows() {
        if r & cm != 0 && r & tm == 0 {
            m.swap_rows(r, r | tm);
        }
    }
}

/// U = R_reps · E · R_{reps−1} ⋯ E · R_0, where each R_l applies Ry then Rz
/// on every qubit and E is the entanglement layer.
///
/// Angles for layer l: `theta[2nl .. 2nl + n]` are the Ry angles of qubits
/// 0..n, `theta[2nl + n .. 2n(l+1)]` the Rz angles.
pub fn build_ansatz_unitary(spec: &AnsatzSpec, theta: &[f64]) -> Result<ComplexMatrix> {
    spec.validate()?;
    if theta.len() != spec.n_params() {
        return Err(Error::Invalid(format!(
            "ansatz needs {} angles, got {}",
            spec.n_params(),
            theta.len()
        )));
    }
    let n = spec.total_qubits();
    let dim = 1usize << n;
    let mut u: ComplexMatrix = DMatrix::identity(dim, dim);
    let pairs = spec.cnot_pairs(n);
    for layer in 0..=spec.reps {
        let base = 2 * n * layer;
        for q in 0..n {
            apply_1q(&mut u, spec.bit(q), &ry(theta[base + q]));
            apply_1q(&mut u, spec.bit(q), &rz(theta[base + n + q]));
        }
        if layer < spec.reps {
            for &(a, b) in &pairs {
                apply_cnot(&mut u, spec.bit(a), spec.bit(b));
            }
        }
    }
    Ok(u)
}

/// ρ₀ = |ψ⟩⟨ψ| with |ψ⟩ = (linear CNOT chain)·(⊗ Ry(θ_q))|0…0⟩ on the latent
/// register.
/// θ_init followed by θ, every angle uniform on [0, 2π).
pub fn random_params(spec: &AnsatzSpec, rng: &mut Rng) -> Vec<f64> {
    use rand::Rng as _;
    (0..spec.n_params_total()).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect()
}

pub fn initial_latent_state(spec: &AnsatzSpec, theta_init: &[f64]) -> Result<DensityMatrix> {
    spec.validate()?;
    if theta_init.len() != spec.latent_qubits {
        return Err(Error::Invalid(format!(
            "initial state needs {} angles, got {}",
            spec.latent_qubits,
            theta_init.len()
        )));
    }
    let dim = spec.n_latent();
    let mut psi: ComplexMatrix = DMatrix::zeros(dim, 1);
    psi[(0, 0)] = Complex64::new(1.0, 0.0);
    for (q, &t) in theta_init.iter().enumerate() {
        apply_1q(&mut psi, q, &ry(t));
    }
    for q in 0..spec.latent_qubits.saturating_sub(1) {
        apply_cnot(&mut psi, q, q + 1);
    }
    let rho = &psi * psi.adjoint();
    DensityMatrix::new(rho)
}
