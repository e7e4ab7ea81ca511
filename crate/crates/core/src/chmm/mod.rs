//! Quantum-inspired classical HMM for stochastic volatility.
//!
//! The hidden chain runs on spot-variance levels at k substeps per
//! observation interval. Each interval's return is Gaussian with variance
//! equal to the integrated variance of the substep path, and is binned into
//! an observation symbol. The emission matrix mixes the Gaussian bin
//! probabilities over the integrated-variance table.

mod filter;
mod simulate;
mod table;

use nalgebra::DMatrix;

pub use filter::{
    filter_path, forward_step, forward_step_with, log_likelihood_binned, log_likelihood_binned_with,
    log_likelihood_continuous, sequence_probability, FilterOrder, FilterTrace, Observations,
};
pub use simulate::{simulate, Simulation};
pub use table::{
    build_integrated_table, build_integrated_table_capped, IntegratedVolTable, TableMode,
    DEFAULT_PATH_CAP,
};

use crate::error::{Error, Result};
use crate::model::SequenceModel;
use crate::seed::{sample_categorical, Rng};
use crate::specfun::gaussian_cdf;
use crate::volgrid::{
    self, matrix_power, stationary_distribution, CirParams, ObservationScheme, SpotGrid,
    TransitionMatrix, ROW_SUM_TOL,
};

/// Per-state distribution over observation symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    probs: DMatrix<f64>,
}

impl EmissionMatrix {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for (r, row) in probs.row_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.sum() - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Constraint {
                    row: r,
                    msg: "emission row must be a probability vector".into(),
                });
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn n_symbols(&self) -> usize {
        self.probs.ncols()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.probs.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Bin probabilities of a N(0, vbar) return.
pub fn emission_given_vbar(vbar: f64, scheme: &ObservationScheme) -> Result<Vec<f64>> {
    if !(vbar > 0.0 && vbar.is_finite()) {
        return Err(Error::domain(
            "emission_given_vbar",
            format!("integrated variance must be positive, got {vbar}"),
        ));
    }
    let sd = vbar.sqrt();
    let cdfs: Vec<f64> = scheme.edges().iter().map(|e| gaussian_cdf(e / sd)).collect();
    let n = scheme.n_symbols();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = if i == 0 { 0.0 } else { cdfs[i - 1] };
        let hi = if i == n - 1 { 1.0 } else { cdfs[i] };
        out.push((hi - lo).max(0.0));
    }
    Ok(out)
}

/// Row i = Σ_j g[i, j] · emission_given_vbar(V̄_j).
pub fn build_emission_matrix(
    table: &IntegratedVolTable,
    scheme: &ObservationScheme,
) -> Result<EmissionMatrix> {
    let per_level = table
        .vbar_values()
        .iter()
        .map(|&v| emission_given_vbar(v, scheme))
        .collect::<Result<Vec<_>>>()?;
    let n_o = scheme.n_symbols();
    let g = table.g();
    let mut probs = DMatrix::zeros(g.nrows(), n_o);
    for i in 0..g.nrows() {
        for (j, e) in per_level.iter().enumerate() {
            let w = g[(i, j)];
            if w == 0.0 {
                continue;
            }
            for o in 0..n_o {
                probs[(i, o)] += w * e[o];
            }
        }
    }
    EmissionMatrix::new(probs)
}

/// A fully assembled classical model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalHmm {
    grid: SpotGrid,
    a_hf: TransitionMatrix,
    a: TransitionMatrix,
    table: IntegratedVolTable,
    emission: EmissionMatrix,
    x0: Vec<f64>,
    scheme: ObservationScheme,
}

impl ClassicalHmm {
    /// Assembles a model from the substep transition matrix. When `x0` is
    /// `None` the chain starts from the stationary law of A = A_hf^k.
    pub fn new(
        grid: SpotGrid,
        a_hf: TransitionMatrix,
        k: usize,
        mode: TableMode,
        scheme: ObservationScheme,
        x0: Option<Vec<f64>>,
    ) -> Result<Self> {
        let table = build_integrated_table(&a_hf, &grid, k, mode)?;
        let emission = build_emission_matrix(&table, &scheme)?;
        Self::from_parts(grid, a_hf, table, emission, scheme, x0)
    }

    /// Like [`ClassicalHmm::new`] with an emission matrix supplied by the
    /// caller (used when reloading a stored model).
    pub fn from_parts(
        grid: SpotGrid,
        a_hf: TransitionMatrix,
        table: IntegratedVolTable,
        emission: EmissionMatrix,
        scheme: ObservationScheme,
        x0: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = grid.len();
        if a_hf.n_states() != n || table.g().nrows() != n || emission.probs().nrows() != n {
            return Err(Error::Dimension("grid, transition, table and emission disagree on n_L".into()));
        }
        if emission.n_symbols() != scheme.n_symbols() {
            return Err(Error::Dimension(format!(
                "emission has {} symbols, scheme has {}",
                emission.n_symbols(),
                scheme.n_symbols()
            )));
        }
        let a = matrix_power(&a_hf, table.k())?;
        let x0 = match x0 {
            Some(x) => {
                if x.len() != n
                    || x.iter().any(|p| !(*p >= 0.0))
                    || (x.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOL
                {
                    return Err(Error::Invalid("x0 must be a probability vector over the grid".into()));
                }
                x
            }
            None => stationary_distribution(&a)?,
        };
        Ok(Self {
            grid,
            a_hf,
            a,
            table,
            emission,
            x0,
            scheme,
        })
    }

    /// CIR-parameterized model: ergodic-quantile grid, kernel over 1/k.
    pub fn cir(
        params: &CirParams,
        n_l: usize,
        k: usize,
        scheme: ObservationScheme,
        mode: TableMode,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("need at least one substep (k >= 1)".into()));
        }
        let grid = volgrid::cir_spot_grid(params, n_l)?;
        let a_hf = volgrid::cir_transition_matrix(params, &grid, 1.0 / k as f64)?;
        Self::new(grid, a_hf, k, mode, scheme, None)
    }

    /// Non-parametric model on a fixed grid; θ fills the substep matrix.
    pub fn nonparam(
        theta: &[f64],
        grid: SpotGrid,
        k: usize,
        scheme: ObservationScheme,
        mode: TableMode,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("need at least one substep (k >= 1)".into()));
        }
        let a_hf = volgrid::nonparam_transition_matrix(theta, grid.len(), 1.0 / k as f64)?;
        Self::new(grid, a_hf, k, mode, scheme, None)
    }

    pub fn grid(&self) -> &SpotGrid {
        &self.grid
    }

    pub fn a_hf(&self) -> &TransitionMatrix {
        &self.a_hf
    }

    /// Per-interval transition matrix A = A_hf^k.
    pub fn a(&self) -> &TransitionMatrix {
        &self.a
    }

    pub fn table(&self) -> &IntegratedVolTable {
        &self.table
    }

    pub fn emission(&self) -> &EmissionMatrix {
        &self.emission
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn scheme(&self) -> &ObservationScheme {
        &self.scheme
    }

    pub fn n_states(&self) -> usize {
        self.grid.len()
    }

    pub fn k(&self) -> usize {
        self.table.k()
    }
}

impl SequenceModel for ClassicalHmm {
    fn n_symbols(&self) -> usize {
        self.scheme.n_symbols()
    }

    fn log_prob(&self, obs: &[usize]) -> Result<f64> {
        log_likelihood_binned(self, obs)
    }

    fn prob(&self, obs: &[usize]) -> f64 {
        sequence_probability(self, obs).unwrap_or(0.0)
    }

    /// Samples the factored chain: symbol from the emission row of the
    /// current state, then a move with A.
    fn sample_symbols(&self, len: usize, rng: &mut Rng) -> Vec<usize> {
        let e = self.emission.probs();
        let a = self.a.probs();
        let n = self.n_states();
        let mut state = sample_categorical(&self.x0, rng);
        let mut row = vec![0.0; n.max(e.ncols())];
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            row.truncate(0);
            row.extend(e.row(state).iter());
            out.push(sample_categorical(&row, rng));
            row.truncate(0);
            row.extend(a.row(state).iter());
            state = sample_categorical(&row, rng);
        }
        out
    }
}
