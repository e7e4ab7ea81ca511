use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SequenceModel;
use crate::seed::derive_rng;

/// Largest number of sequences [`kl_exact_small`] will enumerate.
pub const EXACT_KL_CAP: f64 = 1e6;

/// Mean and standard error of a Monte-Carlo average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: usize,
}

fn check_alphabets(a: &dyn SequenceModel, b: &dyn SequenceModel) -> Result<()> {
    if a.n_symbols() != b.n_symbols() {
        return Err(Error::Dimension(format!(
            "alphabets differ: {} vs {} symbols",
            a.n_symbols(),
            b.n_symbols()
        )));
    }
    Ok(())
}

/// ln P(obs), with impossible sequences mapped to −∞.
fn log_prob_or_neg_inf(m: &dyn SequenceModel, obs: &[usize]) -> Result<f64> {
    match m.log_prob(obs) {
        Ok(v) => Ok(v),
        Err(Error::ZeroProbability { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// KL(dgp ‖ candidate) over length-`t` sequences by exhaustive enumeration.
/// Infinite when the candidate rules out a sequence the dgp can emit.
pub fn kl_exact_small(dgp: &dyn SequenceModel, candidate: &dyn SequenceModel, t: usize) -> Result<f64> {
    check_alphabets(dgp, candidate)?;
    let n = dgp.n_symbols();
    let count = (n as f64).powi(t as i32);
    if count > EXACT_KL_CAP {
        return Err(Error::Resource(format!("{n}^{t} sequences exceeds the cap of {EXACT_KL_CAP}")));
    }
    let mut word = vec![0usize; t];
    let mut total = 0.0;
    loop {
        let lp = log_prob_or_neg_inf(dgp, &word)?;
        if lp > f64::NEG_INFINITY {
            let lq = log_prob_or_neg_inf(candidate, &word)?;
            if lq == f64::NEG_INFINITY {
                return Ok(f64::INFINITY);
            }
            total += lp.exp() * (lp - lq);
        }
        // lexicographic successor
        let mut pos = t;
        loop {
            if pos == 0 {
                return Ok(total);
            }
            pos -= 1;
            word[pos] += 1;
            if word[pos] < n {
                break;
            }
            word[pos] = 0;
        }
    }
}

/// Monte-Carlo KL(dgp ‖ candidate): average of ln L_dgp − ln L_candidate over
/// `trials` sequences drawn from the dgp. Trial i uses a stream derived from
/// `(seed, i)`.
pub fn kl_monte_carlo(
    dgp: &dyn SequenceModel,
    candidate: &dyn SequenceModel,
    trials: usize,
    t: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_alphabets(dgp, candidate)?;
    if trials < 2 {
        return Err(Error::Invalid("need at least 2 trials".into()));
    }
    let diffs: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, i as u64, "kl-mc");
            let obs = dgp.sample_symbols(t, &mut rng);
            let lp = dgp.log_prob(&obs)?;
            let lq = log_prob_or_neg_inf(candidate, &obs)?;
            Ok(lp - lq)
        })
        .collect();
    let diffs = diffs.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&diffs))
}

pub(crate) fn mean_and_se(xs: &[f64]) -> McEstimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        trials: xs.len(),
    }
}
