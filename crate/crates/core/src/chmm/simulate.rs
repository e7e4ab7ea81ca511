use rand::Rng as _;
use rand_distr::StandardNormal;

use super::ClassicalHmm;
use crate::seed::{rng_from_seed, sample_categorical};
use crate::volgrid::discretize_return;

/// One simulated sample path.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Spot-grid index at the end of each interval.
    pub spot_states: Vec<usize>,
    /// Realized integrated variance of each interval (average of the k
    /// substep levels).
    pub vbar: Vec<f64>,
    pub returns: Vec<f64>,
    pub symbols: Vec<usize>,
}

impl Simulation {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Simulates the spot chain at k substeps per interval, Gaussian returns with
/// the realized integrated variance, and their bins. Fully determined by
/// `seed`.
pub fn simulate(hmm: &ClassicalHmm, len: usize, seed: u64) -> Simulation {
    let mut rng = rng_from_seed(seed);
    let a_hf = hmm.a_hf().probs();
    let v = hmm.grid().values();
    let k = hmm.k();
    let n = hmm.n_states();

    let mut sim = Simulation {
        spot_states: Vec::with_capacity(len),
        vbar: Vec::with_capacity(len),
        returns: Vec::with_capacity(len),
        symbols: Vec::with_capacity(len),
    };
    let mut row = vec![0.0; n];
    let mut state = sample_categorical(hmm.x0(), &mut rng);
    for _ in 0..len {
        let mut acc = 0.0;
        for _ in 0..k {
            for (j, r) in row.iter_mut().enumerate() {
                *r = a_hf[(state, j)];
            }
            state = sample_categorical(&row, &mut rng);
            acc += v[state];
        }
        let vbar = acc / k as f64;
        let z: f64 = rng.sample(StandardNormal);
        let dy = vbar.sqrt() * z;
        sim.spot_states.push(state);
        sim.vbar.push(vbar);
        sim.returns.push(dy);
        sim.symbols.push(discretize_return(dy, hmm.scheme()));
    }
    sim
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chmm::{filter_path, Observations, TableMode};
    use crate::volgrid::{build_observation_scheme, CirParams, SpotGrid, TransitionMatrix};

    fn dgp() -> ClassicalHmm {
        let p = CirParams::new(2.2, 0.077, 1.1).unwrap();
        let scheme = build_observation_scheme(4, 4.0 * p.beta.sqrt()).unwrap();
        ClassicalHmm::cir(&p, 16, 4, scheme, TableMode::Multiset).unwrap()
    }

    #[test]
    fn same_seed_same_path() {
        let hmm = dgp();
        assert_eq!(simulate(&hmm, 300, 42), simulate(&hmm, 300, 42));
        assert_ne!(simulate(&hmm, 300, 42).returns, simulate(&hmm, 300, 43).returns);
    }

    #[test]
    fn symbol_frequencies_match_stationary_mixture() {
        let hmm = dgp();
        let t = 100_000;
        let sim = simulate(&hmm, t, 7);
        let e = hmm.emission().probs();
        let pi = hmm.x0();
        for o in 0..4 {
            let p: f64 = (0..16).map(|i| pi[i] * e[(i, o)]).sum();
            let freq = sim.symbols.iter().filter(|&&s| s == o).count() as f64 / t as f64;
            // serial correlation inflates the variance a little; 3σ of the
            // binomial plus a small allowance
            let sd = (p * (1.0 - p) / t as f64).sqrt();
            assert!((freq - p).abs() < 3.0 * sd + 1e-4, "symbol {o}: {freq} vs {p}");
        }
    }

    #[test]
    fn identical_levels_give_iid_gaussian_returns() {
        // two nearly equal levels: V̄ is (almost) constant
        let grid = SpotGrid::new(vec![0.04, 0.04 * (1.0 + 1e-12)]).unwrap();
        let a = TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]], 1.0).unwrap();
        let scheme = build_observation_scheme(2, 1.0).unwrap();
        let hmm = ClassicalHmm::new(grid, a, 1, TableMode::Multiset, scheme, None).unwrap();
        let sim = simulate(&hmm, 50_000, 3);
        let n = sim.returns.len() as f64;
        let mean = sim.returns.iter().sum::<f64>() / n;
        let var = sim.returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (0.04f64 / n).sqrt());
        // Var of the sample variance ≈ 2σ⁴/n
        assert!((var - 0.04).abs() < 3.0 * (2.0 * 0.04f64.powi(2) / n).sqrt());
        let lag1 = sim.returns.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1.0) / var;
        assert!(lag1.abs() < 3.0 / n.sqrt());
    }

    /// Filtering with the true model: E[V̄*_t / E[V̄_t | past]] = 1 up to the
    /// factored-emission approximation.
    #[test]
    fn filtered_vbar_ratio_is_unbiased() {
        let hmm = dgp();
        let mut means = Vec::new();
        for seed in 0..40 {
            let sim = simulate(&hmm, 500, 1000 + seed);
            let tr = filter_path(&hmm, Observations::Symbols(&sim.symbols)).unwrap();
            let m = sim
                .vbar
                .iter()
                .zip(&tr.filtered_vbar)
                .map(|(v, f)| v / f - 1.0)
                .sum::<f64>()
                / 500.0;
            means.push(m);
        }
        let n = means.len() as f64;
        let avg = means.iter().sum::<f64>() / n;
        let sd = (means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(avg.abs() < 3.0 * sd / n.sqrt(), "mean ratio − 1 = {avg} (se {})", sd / n.sqrt());
    }
}
