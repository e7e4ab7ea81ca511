use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SequenceModel;

/// Largest number of index strings per axis.
pub const HANKEL_STRING_CAP: usize = 10_000;
/// Default relative singular-value threshold for [`numerical_rank`].
pub const RANK_REL_TOL: f64 = 1e-9;

/// Generalized Hankel matrix H[u, v] = P(uv) over strings of length ≤ depth.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    depth: usize,
    n_obs: usize,
    strings: Vec<Vec<usize>>,
    entries: DMatrix<f64>,
}

impl HankelMatrix {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Row and column labels: by length, then lexicographic; ∅ first.
    pub fn strings(&self) -> &[Vec<usize>] {
        &self.strings
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn rank(&self) -> usize {
        numerical_rank(&self.entries, RANK_REL_TOL)
    }

    /// Singular values, largest first.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut sv: Vec<f64> = self.entries.clone().singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }
}

/// All strings over `n_o` symbols of length ≤ `depth`, by length then
/// lexicographic.
pub fn hankel_strings(n_o: usize, depth: usize) -> Result<Vec<Vec<usize>>> {
    if n_o == 0 {
        return Err(Error::Invalid("alphabet must be nonempty".into()));
    }
    let mut total = 0usize;
    let mut layer = 1usize;
    for _ in 0..=depth {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(n_o);
    }
    if total > HANKEL_STRING_CAP {
        return Err(Error::Resource(format!(
            "{total} strings per axis exceeds the cap of {HANKEL_STRING_CAP}"
        )));
    }
    let mut out = vec![Vec::new()];
    let mut prev = vec![Vec::new()];
    for _ in 0..depth {
        let next: Vec<Vec<usize>> = prev
            .iter()
            .flat_map(|s: &Vec<usize>| {
                (0..n_o).map(move |i| {
                    let mut t = s.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
        out.extend(next.iter().cloned());
        prev = next;
    }
    Ok(out)
}

/// Builds the Hankel matrix from a sequence-probability oracle.
pub fn build_hankel<F>(prob: F, n_o: usize, depth: usize) -> Result<HankelMatrix>
where
    F: Fn(&[usize]) -> f64,
{
    if depth == 0 {
        return Err(Error::Invalid("depth must be at least 1".into()));
    }
    let strings = hankel_strings(n_o, depth)?;
    let n = strings.len();
    let mut word = Vec::with_capacity(2 * depth);
    let entries = DMatrix::from_fn(n, n, |r, c| {
        word.clear();
        word.extend_from_slice(&strings[r]);
        word.extend_from_slice(&strings[c]);
        prob(&word)
    });
    Ok(HankelMatrix { depth, n_obs: n_o, strings, entries })
}

/// Hankel matrix of a sequence model.
pub fn model_hankel(model: &dyn SequenceModel, depth: usize) -> Result<HankelMatrix> {
    build_hankel(|w| model.prob(w), model.n_symbols(), depth)
}

/// Number of singular values above `rel_tol · σ_max` (0 for a zero matrix).
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chmm::{ClassicalHmm, TableMode};
    use crate::model::IidCategorical;
    use crate::qhmm::{AnsatzSpec, Entanglement};
    use crate::seed::rng_from_seed;
    use crate::volgrid::{build_observation_scheme, SpotGrid, TransitionMatrix};
    use rand::Rng as _;

    #[test]
    fn string_order() {
        let s = hankel_strings(2, 2).unwrap();
        let expect: Vec<Vec<usize>> = vec![vec![], vec![0], vec![1], vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
        assert_eq!(s, expect);
        assert!(hankel_strings(10, 4).is_err());
        assert_eq!(hankel_strings(10, 3).unwrap().len(), 1111);
    }

    #[test]
    fn ranks_of_simple_matrices() {
        assert_eq!(numerical_rank(&DMatrix::identity(4, 4), RANK_REL_TOL), 4);
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let v = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 0.5, 2.0]);
        assert_eq!(numerical_rank(&(u * v), RANK_REL_TOL), 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), RANK_REL_TOL), 0);
    }

    #[test]
    fn iid_hankel_is_rank_one() {
        let m = IidCategorical::uniform(3).unwrap();
        let h = model_hankel(&m, 2).unwrap();
        assert_eq!(h.entries()[(0, 0)], 1.0);
        assert_eq!(h.rank(), 1);
        let sv = h.singular_values();
        assert_eq!(sv.len(), 13);
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    }

    fn random_classical(n: usize, rng: &mut crate::seed::Rng) -> ClassicalHmm {
        let values: Vec<f64> = (1..=n).map(|i| 0.02 * i as f64 + rng.random_range(0.0..0.01)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            })
            .collect();
        let a = TransitionMatrix::from_rows(&rows, 0.5).unwrap();
        let scheme = build_observation_scheme(2, 0.3).unwrap();
        ClassicalHmm::new(SpotGrid::new(values).unwrap(), a, 2, TableMode::Multiset, scheme, None).unwrap()
    }

    #[test]
    fn classical_rank_bound_and_prefix_consistency() {
        let mut rng = rng_from_seed(4);
        for n in 2..=4 {
            let m = random_classical(n, &mut rng);
            let h = model_hankel(&m, 3).unwrap();
            assert!(h.rank() <= n, "rank {} > {n}", h.rank());
            let strings = h.strings();
            for (r, u) in strings.iter().enumerate() {
                if u.len() >= 3 {
                    continue;
                }
                let ext: f64 = (0..2)
                    .map(|i| {
                        let mut w = u.clone();
                        w.push(i);
                        let c = strings.iter().position(|s| *s == w).unwrap();
                        h.entries()[(c, 0)]
                    })
                    .sum();
                assert!((ext - h.entries()[(r, 0)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantum_rank_bound() {
        let mut rng = rng_from_seed(8);
        let spec = AnsatzSpec::new(1, 1, 2, Entanglement::Full).unwrap();
        for _ in 0..10 {
            let q = crate::qhmm::tests::random_model(spec, &mut rng);
            assert!(model_hankel(&q, 3).unwrap().rank() <= 4);
        }
    }
}
