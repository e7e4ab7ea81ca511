//! Observation bins, spot-variance grids and transition matrices.
//!
//! The hidden chain lives on a finite grid of spot-variance levels. Its
//! transition matrix comes either from the CIR kernel (three parameters) or
//! directly from free row entries (the non-parametric model).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{self, GammaLaw, NoncentralChi2Law};

/// Row-sum tolerance for every transition matrix in the crate.
pub const ROW_SUM_TOL: f64 = 1e-10;

const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITER: usize = 100_000;

/// Parameters of dV = α(β − V)dτ + σ√V dW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl CirParams {
    pub fn new(alpha: f64, beta: f64, sigma: f64) -> Result<Self> {
        let p = Self { alpha, beta, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("sigma", self.sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain("CirParams", format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Degrees of freedom of the transition law, 4αβ/σ².
    pub fn chi2_dof(&self) -> f64 {
        4.0 * self.alpha * self.beta / (self.sigma * self.sigma)
    }

    /// Kernel scale c = 2α / ((1 − e^{−α dt}) σ²).
    pub fn kernel_scale(&self, dt: f64) -> f64 {
        2.0 * self.alpha / ((1.0 - (-self.alpha * dt).exp()) * self.sigma * self.sigma)
    }
}

/// Ordered return bins. `edges` are the n_O − 1 interior cut points; the two
/// outermost bins are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationScheme {
    edges: Vec<f64>,
}

impl ObservationScheme {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::Invalid("an observation scheme needs at least one edge".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Invalid("observation edges must be finite".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("observation edges must be strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_symbols(&self) -> usize {
        self.edges.len() + 1
    }

    /// Lower and upper bound of bin `i`; edge bins extend to ±∞.
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { f64::NEG_INFINITY } else { self.edges[i - 1] };
        let hi = if i == self.edges.len() { f64::INFINITY } else { self.edges[i] };
        (lo, hi)
    }

    /// Widest finite bin, or `None` for the two-bin sign scheme.
    pub fn max_bin_width(&self) -> Option<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).reduce(f64::max)
    }
}

/// `n_o − 2` equal-width interior bins on `[−half_width, half_width]` plus two
/// unbounded tails. With two bins the single cut is at zero.
pub fn build_observation_scheme(n_o: usize, half_width: f64) -> Result<ObservationScheme> {
    if n_o < 2 {
        return Err(Error::Invalid(format!("need at least 2 observation bins, got {n_o}")));
    }
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(Error::domain(
            "build_observation_scheme",
            format!("half_width must be positive, got {half_width}"),
        ));
    }
    if n_o == 2 {
        return ObservationScheme::from_edges(vec![0.0]);
    }
    let interior = (n_o - 2) as f64;
    let width = 2.0 * half_width / interior;
    let edges = (0..n_o - 1)
        .map(|i| {
            let e = -half_width + width * i as f64;
            // keep the symmetric midpoint exactly at zero
            if e.abs() < 1e-15 * half_width { 0.0 } else { e }
        })
        .collect();
    ObservationScheme::from_edges(edges)
}

/// Index of the bin containing `dy`; a value on an edge belongs to the bin on
/// its right.
pub fn discretize_return(dy: f64, scheme: &ObservationScheme) -> usize {
    scheme.edges.partition_point(|&e| e <= dy)
}

/// Ascending, strictly positive spot-variance levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotGrid {
    values: Vec<f64>,
}

impl SpotGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Invalid(format!(
                "a spot grid needs at least 2 states, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid("spot values must be positive and finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("spot values must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Row-stochastic matrix, row = from-state, covering a time step `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    probs: DMatrix<f64>,
    dt: f64,
}

impl TransitionMatrix {
    pub fn new(probs: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !probs.is_square() || probs.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "transition matrix must be square and nonempty, got {}x{}",
                probs.nrows(),
                probs.ncols()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain("TransitionMatrix::new", format!("dt must be positive, got {dt}")));
        }
        for (r, row) in probs.row_iter().enumerate() {
            if row.iter().any(|&p| !(-1e-15..=1.0 + 1e-15).contains(&p)) {
                return Err(Error::Constraint {
                    row: r,
                    msg: "entries must lie in [0, 1]".into(),
                });
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Constraint {
                    row: r,
                    msg: format!("row sums to {s}"),
                });
            }
        }
        let probs = probs.map(|p| p.clamp(0.0, 1.0));
        Ok(Self { probs, dt })
    }

    pub fn from_rows(rows: &[Vec<f64>], dt: f64) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("transition rows must all have length n".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]), dt)
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.probs[(from, to)]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.probs.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Ergodic law of the CIR process: Gamma(2αβ/σ², rate 2α/σ²).
pub fn cir_ergodic_law(p: &CirParams) -> Result<GammaLaw> {
    let s2 = p.sigma * p.sigma;
    GammaLaw::new(2.0 * p.alpha * p.beta / s2, 2.0 * p.alpha / s2)
}

/// Spot levels at the ergodic quantiles (i + 1)/(n_L + 1).
pub fn cir_spot_grid(p: &CirParams, n_l: usize) -> Result<SpotGrid> {
    if n_l < 2 {
        return Err(Error::Invalid(format!("need at least 2 hidden states, got {n_l}")));
    }
    let law = cir_ergodic_law(p)?;
    let denom = (n_l + 1) as f64;
    let values = (0..n_l)
        .map(|i| specfun::gamma_quantile((i + 1) as f64 / denom, &law))
        .collect::<Result<Vec<_>>>()?;
    SpotGrid::new(values)
}

/// Discretized CIR kernel over `dt`.
///
/// Entry (i, j) is the kernel mass between the midpoints adjacent to V_j,
/// with the outermost midpoints at ±∞. With c the kernel scale and Y the
/// non-central chi-squared variable, V_next = Y / (2c).
pub fn cir_transition_matrix(p: &CirParams, grid: &SpotGrid, dt: f64) -> Result<TransitionMatrix> {
    p.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain("cir_transition_matrix", format!("dt must be positive, got {dt}")));
    }
    let v = grid.values();
    let n = v.len();
    let c = p.kernel_scale(dt);
    let dof = p.chi2_dof();
    let decay = (-p.alpha * dt).exp();
    let mids: Vec<f64> = v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

    let mut probs = DMatrix::zeros(n, n);
    for i in 0..n {
        let law = NoncentralChi2Law::new(dof, 2.0 * c * v[i] * decay)?;
        let mut prev = 0.0;
        for (j, &m) in mids.iter().enumerate() {
            let f = specfun::noncentral_chi2_cdf(2.0 * c * m, &law)?;
            probs[(i, j)] = (f - prev).max(0.0);
            prev = f.max(prev);
        }
        probs[(i, n - 1)] = (1.0 - prev).max(0.0);
    }
    TransitionMatrix::new(probs, dt)
}

/// Transition density of the CIR process over `dt`, in variance units.
pub fn cir_transition_density(p: &CirParams, v_from: f64, v_to: f64, dt: f64) -> Result<f64> {
    let c = p.kernel_scale(dt);
    let law = NoncentralChi2Law::new(p.chi2_dof(), 2.0 * c * v_from * (-p.alpha * dt).exp())?;
    Ok(2.0 * c * specfun::noncentral_chi2_pdf(2.0 * c * v_to, &law)?)
}

/// Fills row r with θ[r(n−1)..(r+1)(n−1)] and completes it with 1 − Σ.
pub fn nonparam_transition_matrix(theta: &[f64], n_l: usize, dt: f64) -> Result<TransitionMatrix> {
    if n_l < 2 {
        return Err(Error::Invalid(format!("need at least 2 hidden states, got {n_l}")));
    }
    let per_row = n_l - 1;
    if theta.len() != n_l * per_row {
        return Err(Error::Dimension(format!(
            "{} states need {} parameters, got {}",
            n_l,
            n_l * per_row,
            theta.len()
        )));
    }
    let mut probs = DMatrix::zeros(n_l, n_l);
    for (r, group) in theta.chunks(per_row).enumerate() {
        if let Some(bad) = group.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Constraint {
                row: r,
                msg: format!("parameter {bad} outside (0, 1)"),
            });
        }
        let s: f64 = group.iter().sum();
        if s >= 1.0 {
            return Err(Error::Constraint {
                row: r,
                msg: format!("row parameters sum to {s}, must be < 1"),
            });
        }
        for (j, &t) in group.iter().enumerate() {
            probs[(r, j)] = t;
        }
        probs[(r, per_row)] = 1.0 - s;
    }
    TransitionMatrix::new(probs, dt)
}

/// Number of closed communicating classes of the chain's transition graph.
fn closed_classes(a: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if a[(i, j)] > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    // A state is recurrent iff everything it reaches reaches it back; closed
    // classes are the distinct recurrent classes.
    let mut seen = vec![false; n];
    let mut classes = 0;
    for i in 0..n {
        if seen[i] {
            continue;
        }
        let recurrent = (0..n).all(|j| !reach[i][j] || reach[j][i]);
        if recurrent {
            classes += 1;
            for j in 0..n {
                if reach[i][j] {
                    seen[j] = true;
                }
            }
        }
    }
    classes
}

/// Left eigenvector π = πA on the simplex.
///
/// Power iteration from the uniform vector on the lazy chain (I + A)/2, which
/// shares A's stationary law but is aperiodic. Chains with more than one
/// closed class have no unique ergodic law and are rejected.
pub fn stationary_distribution(a: &TransitionMatrix) -> Result<Vec<f64>> {
    let p = a.probs();
    let n = p.nrows();
    let classes = closed_classes(p);
    if classes != 1 {
        return Err(Error::NonConvergence {
            func: "stationary_distribution",
            iterations: 0,
            detail: format!("chain is reducible with {classes} closed classes"),
        });
    }
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..STATIONARY_MAX_ITER {
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += pi[i] * p[(i, j)];
            }
            next[j] = 0.5 * (pi[j] + s);
        }
        let total: f64 = next.iter().sum();
        let mut diff: f64 = 0.0;
        for j in 0..n {
            next[j] /= total;
            diff = diff.max((next[j] - pi[j]).abs());
        }
        std::mem::swap(&mut pi, &mut next);
        if diff < STATIONARY_TOL {
            return Ok(pi);
        }
    }
    Err(Error::NonConvergence {
        func: "stationary_distribution",
        iterations: STATIONARY_MAX_ITER,
        detail: "power iteration did not settle".into(),
    })
}

/// A^k by repeated squaring; `dt` scales with `k`.
pub fn matrix_power(a: &TransitionMatrix, k: usize) -> Result<TransitionMatrix> {
    if k == 0 {
        return Err(Error::Invalid("matrix power needs k >= 1".into()));
    }
    let mut result: Option<DMatrix<f64>> = None;
    let mut base = a.probs.clone();
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => &r * &base,
            });
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    TransitionMatrix::new(result.expect("k >= 1"), a.dt * k as f64)
}
