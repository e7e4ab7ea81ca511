use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{SpotGrid, TransitionMatrix};

/// Default cap on the number of enumerated substep paths (n_L^k).
pub const DEFAULT_PATH_CAP: u64 = 10_000_000;

/// How k-step spot paths are grouped into integrated-variance levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableMode {
    /// One column per multiset of visited states; V̄ is its exact average.
    /// There are C(n_L + k − 1, k) columns.
    #[default]
    Multiset,
    /// One column per index sum j = Σ s_m (0-based states), k(n_L − 1) + 1
    /// columns; V̄_j is the unweighted mean of the path averages in group j.
    IndexSum,
}

/// Distribution of the integrated variance over one observation interval,
/// conditional on the spot state at its start.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedVolTable {
    vbar_values: Vec<f64>,
    g: DMatrix<f64>,
    k: usize,
    mode: TableMode,
}

impl IntegratedVolTable {
    /// Table from explicit values; rows of `g` must be probability vectors.
    pub fn from_raw(vbar_values: Vec<f64>, g: DMatrix<f64>, k: usize, mode: TableMode) -> Result<Self> {
        if g.ncols() != vbar_values.len() {
            return Err(Error::Dimension("g must have one column per V̄ level".into()));
        }
        if vbar_values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid("integrated variances must be positive".into()));
        }
        for (r, row) in g.row_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::Constraint { row: r, msg: "g row must be a probability vector".into() });
            }
        }
        Ok(Self { vbar_values, g, k, mode })
    }

    pub fn vbar_values(&self) -> &[f64] {
        &self.vbar_values
    }

    /// n_L × n_V̄ matrix, row i = law of the V̄ column given start state i.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> TableMode {
        self.mode
    }

    pub fn n_vbar(&self) -> usize {
        self.vbar_values.len()
    }

    /// E[V̄ | start state i] for each i.
    pub fn expected_vbar(&self) -> Vec<f64> {
        self.g
            .row_iter()
            .map(|r| r.iter().zip(&self.vbar_values).map(|(p, v)| p * v).sum())
            .collect()
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// Rank of a multiset in the combinatorial number system. `counts[s]` is the
/// multiplicity of state s.
fn multiset_rank(counts: &[u8], ranks: &[Vec<u64>]) -> usize {
    let mut rank = 0u64;
    let mut m = 0usize;
    for (s, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            // sorted c_1 <= c_2 <= ... maps to strictly increasing d_m = c_m + m
            rank += ranks[s + m][m + 1];
            m += 1;
        }
    }
    rank as usize
}

/// Enumerates all n_L^k substep paths and groups them into integrated-variance
/// levels.
///
/// A path conditional on start state i takes its first factor from
/// A_hf[i, s_1]; the start state itself is not averaged.
pub fn build_integrated_table(
    a_hf: &TransitionMatrix,
    grid: &SpotGrid,
    k: usize,
    mode: TableMode,
) -> Result<IntegratedVolTable> {
    build_integrated_table_capped(a_hf, grid, k, mode, DEFAULT_PATH_CAP)
}

pub fn build_integrated_table_capped(
    a_hf: &TransitionMatrix,
    grid: &SpotGrid,
    k: usize,
    mode: TableMode,
    path_cap: u64,
) -> Result<IntegratedVolTable> {
    let n = grid.len();
    if k == 0 {
        return Err(Error::Invalid("need at least one substep (k >= 1)".into()));
    }
    if a_hf.n_states() != n {
        return Err(Error::Dimension(format!(
            "transition matrix has {} states, grid has {n}",
            a_hf.n_states()
        )));
    }
    let paths = (n as u64).checked_pow(k as u32).unwrap_or(u64::MAX);
    if paths > path_cap {
        return Err(Error::Resource(format!(
            "{n}^{k} = {paths} substep paths exceeds the cap of {path_cap}"
        )));
    }
    if k > u8::MAX as usize {
        return Err(Error::Resource(format!("k = {k} substeps is too many")));
    }

    let v = grid.values();
    let p = a_hf.probs();
    let n_cols = match mode {
        TableMode::Multiset => binomial(n + k - 1, k) as usize,
        TableMode::IndexSum => k * (n - 1) + 1,
    };
    // ranks[d][m] = C(d, m)
    let ranks: Vec<Vec<u64>> = (0..n + k)
        .map(|d| (0..=k).map(|m| binomial(d, m)).collect())
        .collect();

    // h[s1, col]: probability of the remaining k−1 steps given the path starts
    // at s1, accumulated by column. Then g = A_hf · h.
    let mut h = DMatrix::<f64>::zeros(n, n_cols);
    let mut vbar_sum = vec![0.0; n_cols];
    let mut vbar_count = vec![0u64; n_cols];

    let mut path = vec![0usize; k];
    let mut counts = vec![0u8; n];
    let mut probs = vec![1.0; k];
    // odometer over paths; probs[m] = Π_{l=1..m} A[s_{l-1}, s_l]
    'paths: loop {
        counts.iter_mut().for_each(|c| *c = 0);
        for &s in &path {
            counts[s] += 1;
        }
        for m in 1..k {
            probs[m] = probs[m - 1] * p[(path[m - 1], path[m])];
        }
        let col = match mode {
            TableMode::Multiset => multiset_rank(&counts, &ranks),
            TableMode::IndexSum => path.iter().sum(),
        };
        h[(path[0], col)] += probs[k - 1];
        if vbar_count[col] == 0 || mode == TableMode::IndexSum {
            let avg = path.iter().map(|&s| v[s]).sum::<f64>() / k as f64;
            vbar_sum[col] += avg;
            vbar_count[col] += 1;
        }

        // odometer, last position fastest
        let mut pos = k;
        loop {
            if pos == 0 {
                break 'paths;
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < n {
                break;
            }
            path[pos] = 0;
        }
    }

    let raw_vbar: Vec<f64> = vbar_sum
        .iter()
        .zip(&vbar_count)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let mut g = p * h;

    // order columns by ascending V̄ (stable on ties)
    let mut order: Vec<usize> = (0..n_cols).collect();
    order.sort_by(|&a, &b| raw_vbar[a].total_cmp(&raw_vbar[b]));
    let vbar_values: Vec<f64> = order.iter().map(|&c| raw_vbar[c]).collect();
    g = DMatrix::from_fn(n, n_cols, |i, j| g[(i, order[j])]);
    for mut row in g.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }

    Ok(IntegratedVolTable {
        vbar_values,
        g,
        k,
        mode,
    })
}
