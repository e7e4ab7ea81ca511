use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chmm::{simulate, ClassicalHmm};
use crate::error::{Error, Result};
use crate::estimate::{fit, FitConfig, FitSpec};
use crate::seed::derive_seed;

/// Number of histogram bins in LLR reports.
pub const LLR_BINS: usize = 40;

/// One trial of a likelihood-ratio experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrSample {
    pub trial: usize,
    /// Seed of the simulated data.
    pub data_seed: u64,
    pub loglik_model_i: f64,
    pub loglik_model_j: f64,
    /// log10(L_i / L_j) = (loglik_i − loglik_j) / ln 10.
    pub llr_log10: f64,
    /// Set when a fit failed; the log-likelihoods are then NaN.
    pub error: Option<String>,
}

impl LlrSample {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Simulates `trials` sequences of length `t` from `dgp` and fits both
/// candidate specs to each, in parallel. Trial r simulates with
/// `derive_seed(seed, r, "llr-data")` and fits with optimizer seed
/// `derive_seed(seed, r, "llr-fit")`, so results do not depend on thread
/// count or scheduling.
pub fn llr_experiment(
    dgp: &ClassicalHmm,
    spec_i: &FitSpec,
    spec_j: &FitSpec,
    trials: usize,
    t: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<Vec<LlrSample>> {
    if trials == 0 || t == 0 {
        return Err(Error::Invalid("need at least one trial of positive length".into()));
    }
    cfg.validate()?;
    let n_o = dgp.scheme().n_symbols();
    for s in [spec_i, spec_j] {
        if s.n_symbols() != n_o {
            return Err(Error::Invalid(format!(
                "candidate has {} symbols, data has {n_o}",
                s.n_symbols()
            )));
        }
    }
    let samples = (0..trials)
        .into_par_iter()
        .map(|r| {
            let data_seed = derive_seed(seed, r as u64, "llr-data");
            let data = simulate(dgp, t, data_seed).symbols;
            let trial_cfg = FitConfig {
                seed: derive_seed(seed, r as u64, "llr-fit"),
                ..cfg.clone()
            };
            let fi = fit(&data, spec_i, &trial_cfg);
            let fj = fit(&data, spec_j, &trial_cfg);
            match (fi, fj) {
                (Ok((ri, _)), Ok((rj, _))) => {
                    let (li, lj) = (-ri.nll, -rj.nll);
                    LlrSample {
                        trial: r,
                        data_seed,
                        loglik_model_i: li,
                        loglik_model_j: lj,
                        llr_log10: (li - lj) / std::f64::consts::LN_10,
                        error: None,
                    }
                }
                (a, b) => {
                    let msg = [a.err().map(|e| format!("model i: {e}")), b.err().map(|e| format!("model j: {e}"))]
                        .into_iter()
                        .flatten()
                        .collect::<Vec<_>>()
                        .join("; ");
                    LlrSample {
                        trial: r,
                        data_seed,
                        loglik_model_i: f64::NAN,
                        loglik_model_j: f64::NAN,
                        llr_log10: f64::NAN,
                        error: Some(msg),
                    }
                }
            }
        })
        .collect();
    Ok(samples)
}

/// Aggregate statistics over the successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrSummary {
    pub trials: usize,
    pub failed: usize,
    pub negative: usize,
    pub fraction_negative: f64,
    pub mean: f64,
    pub std_error: f64,
}

pub fn summarize_llr(samples: &[LlrSample]) -> LlrSummary {
    let ok: Vec<f64> = samples.iter().filter(|s| s.is_ok()).map(|s| s.llr_log10).collect();
    let negative = ok.iter().filter(|&&v| v < 0.0).count();
    let (mean, std_error) = if ok.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let e = super::kl::mean_and_se(&ok);
        (e.estimate, e.std_error)
    };
    LlrSummary {
        trials: samples.len(),
        failed: samples.len() - ok.len(),
        negative,
        fraction_negative: if ok.is_empty() { f64::NAN } else { negative as f64 / ok.len() as f64 },
        mean,
        std_error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over the observed range of the successful trials;
/// the last bin is closed on the right. A degenerate range is widened to
/// ±0.5 around the common value.
pub fn llr_histogram(samples: &[LlrSample], bins: usize) -> Histogram {
    let vals: Vec<f64> = samples.iter().filter(|s| s.is_ok()).map(|s| s.llr_log10).collect();
    let bins = bins.max(1);
    if vals.is_empty() {
        return Histogram { edges: Vec::new(), counts: Vec::new() };
    }
    let mut lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
    let mut counts = vec![0; bins];
    for v in vals {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chmm::TableMode;
    use crate::estimate::{ClassicalKind, ClassicalSpec};
    use crate::qhmm::{AnsatzSpec, Entanglement};
    use crate::volgrid::{build_observation_scheme, cir_spot_grid, CirParams};

    fn setup() -> (ClassicalHmm, FitSpec, FitSpec) {
        let p = CirParams::new(2.2, 0.077, 1.1).unwrap();
        let scheme = build_observation_scheme(2, 1.0).unwrap();
        let dgp = ClassicalHmm::cir(&p, 4, 2, scheme.clone(), TableMode::Multiset).unwrap();
        let c = FitSpec::Classical(ClassicalSpec {
            kind: ClassicalKind::Nonparam { grid: cir_spot_grid(&p, 2).unwrap() },
            k: 2,
            mode: TableMode::Multiset,
            scheme,
            start: None,
        });
        let q = FitSpec::Qhmm(AnsatzSpec::new(1, 1, 1, Entanglement::Full).unwrap());
        (dgp, c, q)
    }

    #[test]
    fn identical_specs_give_zero() {
        let (dgp, c, _) = setup();
        let cfg = FitConfig { max_iter: 300, ..FitConfig::default() };
        let s = llr_experiment(&dgp, &c, &c, 4, 30, &cfg, 3).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|x| x.is_ok() && x.llr_log10 == 0.0));
    }

    #[test]
    fn reproducible_and_summarized() {
        let (dgp, c, q) = setup();
        let cfg = FitConfig { max_iter: 300, restarts: 2, ..FitConfig::default() };
        let a = llr_experiment(&dgp, &q, &c, 6, 40, &cfg, 11).unwrap();
        let b = llr_experiment(&dgp, &q, &c, 6, 40, &cfg, 11).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!(((s.loglik_model_i - s.loglik_model_j) / std::f64::consts::LN_10 - s.llr_log10).abs() < 1e-12);
        }
        let sum = summarize_llr(&a);
        assert_eq!(sum.trials, 6);
        let h = llr_histogram(&a, LLR_BINS);
        assert_eq!(h.counts.iter().sum::<usize>(), 6 - sum.failed);
        assert_eq!(h.edges.len(), LLR_BINS + 1);
    }

    #[test]
    fn mismatched_alphabet_rejected() {
        let (dgp, c, _) = setup();
        let q4 = FitSpec::Qhmm(AnsatzSpec::new(1, 2, 1, Entanglement::Full).unwrap());
        assert!(llr_experiment(&dgp, &q4, &c, 1, 10, &FitConfig::default(), 0).is_err());
    }

    #[test]
    fn histogram_edges() {
        let mk = |v: f64| LlrSample {
            trial: 0,
            data_seed: 0,
            loglik_model_i: 0.0,
            loglik_model_j: 0.0,
            llr_log10: v,
            error: None,
        };
        let h = llr_histogram(&[mk(1.0), mk(1.0)], 4);
        assert_eq!(h.counts, vec![0, 0, 2, 0]);
        let h = llr_histogram(&[mk(-1.0), mk(0.0), mk(3.0)], 4);
        assert_eq!(h.counts, vec![1, 1, 0, 1]);
        assert_eq!(h.edges, vec![-1.0, 0.0, 1.0, 2.0, 3.0]);
    }
}
