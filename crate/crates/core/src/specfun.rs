//! Special functions behind the CIR transition kernel and its ergodic law.
//!
//! Everything here is a pure function of its arguments. Tolerances are fixed
//! constants so that the transition and emission matrices built on top of
//! them are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration cap for the incomplete-gamma series and continued fraction.
const MAX_ITER: usize = 500;
/// Relative stopping threshold inside the series / continued fraction.
const EPS: f64 = 1e-16;
/// Poisson tail mass at which the non-central mixture series is truncated.
const POISSON_TAIL: f64 = 1e-14;
/// Poisson weights below this are skipped; the skipped mass is added to the
/// reported truncation bound.
const NEGLIGIBLE_WEIGHT: f64 = 1e-22;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma distribution with shape `a` and rate `b` (inverse scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaLaw {
    shape: f64,
    rate: f64,
}

impl GammaLaw {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(
                "GammaLaw::new",
                format!("shape and rate must be positive, got shape={shape}, rate={rate}"),
            ));
        }
        Ok(Self { shape, rate })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Non-central chi-squared law with (possibly fractional) degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoncentralChi2Law {
    dof: f64,
    noncentrality: f64,
}

impl NoncentralChi2Law {
    pub fn new(dof: f64, noncentrality: f64) -> Result<Self> {
        if !(dof > 0.0 && dof.is_finite()) || !(noncentrality >= 0.0 && noncentrality.is_finite()) {
            return Err(Error::domain(
                "NoncentralChi2Law::new",
                format!("need dof > 0 and noncentrality >= 0, got dof={dof}, lambda={noncentrality}"),
            ));
        }
        Ok(Self { dof, noncentrality })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn noncentrality(&self) -> f64 {
        self.noncentrality
    }
}

/// Natural log of the gamma function (Lanczos, g = 7, with reflection below 1/2).
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("ln_gamma", format!("x must be positive, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let s = (std::f64::consts::PI * x).sin();
        return std::f64::consts::PI.ln() - s.ln() - ln_gamma_unchecked(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x).
///
/// Series expansion for `x < a + 1`, Lentz continued fraction for the upper
/// function otherwise.
pub fn reg_inc_gamma_lower(a: f64, x: f64) -> Result<f64> {
    inc_gamma_pq(a, x, "reg_inc_gamma_lower").map(|(p, _)| p)
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed directly
/// so that far tails keep their relative accuracy.
pub fn reg_inc_gamma_upper(a: f64, x: f64) -> Result<f64> {
    inc_gamma_pq(a, x, "reg_inc_gamma_upper").map(|(_, q)| q)
}

fn inc_gamma_pq(a: f64, x: f64, func: &'static str) -> Result<(f64, f64)> {
    if !(a > 0.0) || !a.is_finite() || !(x >= 0.0) {
        return Err(Error::domain(func, format!("need a > 0 and x >= 0, got a={a}, x={x}")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x == f64::INFINITY {
        return Ok((1.0, 0.0));
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma_unchecked(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..MAX_ITER {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                let p = (sum.ln() + log_prefactor).exp().min(1.0);
                return Ok((p, 1.0 - p));
            }
        }
        Err(Error::NonConvergence {
            func,
            iterations: MAX_ITER,
            detail: format!("series, a={a}, x={x}"),
        })
    } else {
        // Q < prefactor / (x + 1 − a) here; below the f64 range it is 0.
        if log_prefactor - (x + 1.0 - a).ln() < -760.0 {
            return Ok((1.0, 0.0));
        }
        // Modified Lentz for the continued fraction of Q.
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                let q = (h.ln() + log_prefactor).exp().min(1.0);
                return Ok((1.0 - q, q));
            }
        }
        Err(Error::NonConvergence {
            func,
            iterations: MAX_ITER,
            detail: format!("continued fraction, a={a}, x={x}"),
        })
    }
}

pub fn gamma_cdf(x: f64, law: &GammaLaw) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::domain("gamma_cdf", format!("x must be nonnegative, got {x}")));
    }
    reg_inc_gamma_lower(law.shape, law.rate * x)
}

pub fn gamma_pdf(x: f64, law: &GammaLaw) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let (a, b) = (law.shape, law.rate);
    (a * b.ln() + (a - 1.0) * x.ln() - b * x - ln_gamma_unchecked(a)).exp()
}

/// Inverse of [`gamma_cdf`] by safeguarded Newton iteration inside a
/// shrinking bracket.
pub fn gamma_quantile(p: f64, law: &GammaLaw) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("gamma_quantile", format!("p must lie in (0,1), got {p}")));
    }
    let cdf = |x: f64| reg_inc_gamma_lower(law.shape, law.rate * x);

    let mut lo = 0.0_f64;
    let mut hi = law.mean().max(f64::MIN_POSITIVE);
    let mut grow = 0;
    while cdf(hi)? < p {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 2000 {
            return Err(Error::NonConvergence {
                func: "gamma_quantile",
                iterations: grow,
                detail: format!("could not bracket p={p}"),
            });
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..MAX_ITER {
        let f = cdf(x)? - p;
        if f.abs() <= 1e-14 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(x);
        }
        let slope = gamma_pdf(x, law);
        let newton = x - f / slope;
        x = if slope > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NonConvergence {
        func: "gamma_quantile",
        iterations: MAX_ITER,
        detail: format!("last bracket [{lo:e}, {hi:e}]"),
    })
}

/// Central chi-squared CDF with fractional degrees of freedom allowed.
pub fn chi2_cdf(x: f64, dof: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::domain("chi2_cdf", format!("x must be nonnegative, got {x}")));
    }
    reg_inc_gamma_lower(0.5 * dof, 0.5 * x)
}

/// CDF value together with an upper bound on the probability mass the
/// truncated Poisson-mixture series left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedSum {
    pub value: f64,
    pub bound: f64,
    pub terms: usize,
}

pub fn noncentral_chi2_cdf(x: f64, law: &NoncentralChi2Law) -> Result<f64> {
    noncentral_chi2_cdf_bounded(x, law).map(|t| t.value)
}

/// Poisson mixture Σ_j Pois(j; λ/2) · χ²_CDF(x; dof + 2j).
///
/// Stops once j has passed the Poisson mode and the remaining Poisson tail
/// P(J > j) drops below 1e-14. Since each central CDF is at most one, that
/// tail bounds the discarded part of the sum.
pub fn noncentral_chi2_cdf_bounded(x: f64, law: &NoncentralChi2Law) -> Result<TruncatedSum> {
    if !(x >= 0.0) {
        return Err(Error::domain(
            "noncentral_chi2_cdf",
            format!("x must be nonnegative, got {x}"),
        ));
    }
    if x == 0.0 {
        return Ok(TruncatedSum { value: 0.0, bound: 0.0, terms: 0 });
    }
    let half_dof = 0.5 * law.dof;
    let half_x = 0.5 * x;
    if law.noncentrality == 0.0 {
        let value = reg_inc_gamma_lower(half_dof, half_x)?;
        return Ok(TruncatedSum { value, bound: 0.0, terms: 1 });
    }
    let mu = 0.5 * law.noncentrality;
    let ln_mu = mu.ln();
    let cap = (mu + 60.0 * mu.sqrt() + 1000.0) as usize;

    let mut sum = 0.0;
    let mut skipped = 0.0;
    for j in 0..=cap {
        let jf = j as f64;
        let w = (-mu + jf * ln_mu - ln_gamma_unchecked(jf + 1.0)).exp();
        if w > NEGLIGIBLE_WEIGHT {
            sum += w * reg_inc_gamma_lower(half_dof + jf, half_x)?;
        } else {
            skipped += w;
        }
        if jf >= mu {
            let tail = reg_inc_gamma_lower(jf + 1.0, mu)?;
            if tail < POISSON_TAIL {
                return Ok(TruncatedSum {
                    value: sum.clamp(0.0, 1.0),
                    bound: tail + skipped,
                    terms: j + 1,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        func: "noncentral_chi2_cdf",
        iterations: cap,
        detail: format!("Poisson tail still above {POISSON_TAIL} (lambda={})", law.noncentrality),
    })
}

/// Natural log of the modified Bessel function I_ν(z), ν > -1, z > 0, by a
/// log-scaled power series.
pub(crate) fn ln_bessel_i(nu: f64, z: f64) -> f64 {
    let ln_half_z = (0.5 * z).ln();
    let term = |m: f64| (2.0 * m + nu) * ln_half_z - ln_gamma_unchecked(m + 1.0) - ln_gamma_unchecked(m + nu + 1.0);
    // The summand peaks near m ≈ z/2.
    let peak = (0.5 * z).floor();
    let max = term(peak).max(term(0.0));
    let mut acc = 0.0;
    let mut m = 0.0;
    loop {
        let t = term(m);
        acc += (t - max).exp();
        if m > peak && t - max < -40.0 {
            break;
        }
        m += 1.0;
    }
    max + acc.ln()
}

/// Density of the non-central chi-squared law.
///
/// In CIR notation this is the kernel c·e^{-u-v}(v/u)^{q/2}·I_q(2√(uv))
/// evaluated in the chi-squared variable y = 2cv, divided by 2c.
pub fn noncentral_chi2_pdf(x: f64, law: &NoncentralChi2Law) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain("noncentral_chi2_pdf", format!("x must be positive, got {x}")));
    }
    let k = law.dof;
    let lam = law.noncentrality;
    let nu = 0.5 * k - 1.0;
    if lam == 0.0 {
        let ln_f = nu * x.ln() - 0.5 * x - 0.5 * k * std::f64::consts::LN_2 - ln_gamma_unchecked(0.5 * k);
        return Ok(ln_f.exp());
    }
    let ln_f = -std::f64::consts::LN_2 - 0.5 * (x + lam) + 0.5 * nu * (x / lam).ln()
        + ln_bessel_i(nu, (lam * x).sqrt());
    Ok(ln_f.exp())
}

/// Standard normal CDF. Built from Q(1/2, z²/2) so that Φ(z) + Φ(-z) = 1
/// up to a single rounding.
pub fn gaussian_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    let q = reg_inc_gamma_upper(0.5, 0.5 * z * z).expect("a = 1/2 and x >= 0 are in range");
    if z < 0.0 {
        0.5 * q
    } else {
        1.0 - 0.5 * q
    }
}

/// ln φ(x; 0, variance).
pub fn ln_gaussian_pdf(x: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - x * x / (2.0 * variance)
}
