//! Vanishing-level certificates for non-increasing `g` obeying
//! `g(l) <= C (l - k)^{-beta} g(k)^{1 + alpha}` for `l > k`.
//!
//! The certificate follows the iteration `h_0 = kappa`, `h_i = h_{i-1} + i^{-2}`,
//! so `g` vanishes beyond `L = kappa + pi^2/6`.

use std::f64::consts::PI;

use crate::diagnostics::LevelSetProfile;
use crate::error::{Error, Result};

pub const BASEL: f64 = PI * PI / 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayParams {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl DecayParams {
    pub fn new(c: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = DecayParams { c, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("C", self.c), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaChecks {
    /// `C (C')^{alpha/2} 2^{(2 alpha beta + 4 beta)/alpha} kappa^{-alpha beta/2}`
    pub contraction: f64,
    /// `C' kappa^{-min(1, beta)}`, which bounds both `C'/kappa` and `g(kappa)`.
    pub start: f64,
}

impl KappaChecks {
    /// Equality cases are accepted up to rounding in the log evaluation.
    pub fn hold(&self) -> bool {
        let one = 1.0 + 1e-12;
        self.contraction <= one && self.start <= one
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeGiorgiCertificate {
    pub c_prime: f64,
    pub kappa: f64,
    pub kappa_exponent: i32,
    pub l: f64,
    pub checks: KappaChecks,
}

/// `C' = sup_{l > 1} l^beta min(g1, C (l-1)^{-beta} g1^{1+alpha})`, the
/// smallest constant with `g(l) <= C' l^{-beta}` for every `l > 1`.
pub fn c_prime(g1: f64, p: &DecayParams) -> f64 {
    if g1 <= 0.0 {
        return 0.0;
    }
    let l_star = 1.0 + (p.c * g1.powf(p.alpha)).powf(1.0 / p.beta);
    l_star.powf(p.beta) * g1
}

fn checks(c_prime: f64, kappa: f64, p: &DecayParams) -> KappaChecks {
    let (a, b) = (p.alpha, p.beta);
    let ln_contr = p.c.ln() + 0.5 * a * c_prime.ln() + (2.0 * b + 4.0 * b / a) * 2f64.ln() - 0.5 * a * b * kappa.ln();
    KappaChecks {
        contraction: if c_prime > 0.0 { ln_contr.exp() } else { 0.0 },
        start: c_prime * kappa.powf(-b.min(1.0)),
    }
}

pub fn compute_bound(g1: f64, p: &DecayParams) -> Result<DeGiorgiCertificate> {
    p.validate()?;
    if !(g1 >= 0.0) || !g1.is_finite() {
        return Err(Error::InvalidInput(format!("g(1) must be finite and nonnegative, got {g1}")));
    }
    let cp = c_prime(g1, p);
    // kappa > 1 is required, so the search starts at 2^1
    for j in 1..1023 {
        let kappa = 2f64.powi(j);
        let ck = checks(cp, kappa, p);
        if ck.hold() {
            return Ok(DeGiorgiCertificate {
                c_prime: cp,
                kappa,
                kappa_exponent: j,
                l: kappa + BASEL,
                checks: ck,
            });
        }
    }
    Err(Error::InvalidInput("no representable kappa satisfies the largeness conditions".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub pairs_checked: usize,
    /// `(k index, l index)` of each violating pair.
    pub violations: Vec<(usize, usize)>,
}

/// Relative slack absorbing rounding in the log-space comparison.
const SLACK: f64 = 1e-12;

fn check_samples(samples: &[(f64, f64)]) -> Result<()> {
    for (i, &(k, g)) in samples.iter().enumerate() {
        if !k.is_finite() || !g.is_finite() || g < 0.0 {
            return Err(Error::InvalidInput(format!("sample {i} = ({k}, {g}) is not a finite nonnegative value")));
        }
        if i > 0 {
            let (kp, gp) = samples[i - 1];
            if !(k > kp) {
                return Err(Error::InvalidInput(format!("thresholds must increase strictly (sample {i})")));
            }
            if g > gp {
                return Err(Error::InvalidInput(format!("g is not non-increasing at sample {i}: {gp} -> {g}")));
            }
        }
    }
    Ok(())
}

/// Checks the decay hypothesis on every sample pair `l > k`.
pub fn verify_hypothesis(samples: &[(f64, f64)], p: &DecayParams) -> Result<HypothesisReport> {
    p.validate()?;
    check_samples(samples)?;
    let mut violations = Vec::new();
    let mut pairs = 0;
    for i in 0..samples.len() {
        let (k, gk) = samples[i];
        for (j, &(l, gl)) in samples.iter().enumerate().skip(i + 1) {
            pairs += 1;
            if gl == 0.0 {
                continue;
            }
            // gl > 0 forces gk > 0 by monotonicity
            let lhs = gl.ln();
            let rhs = p.c.ln() - p.beta * (l - k).ln() + (1.0 + p.alpha) * gk.ln();
            if lhs > rhs + SLACK.ln_1p() {
                violations.push((i, j));
            }
        }
    }
    Ok(HypothesisReport {
        pairs_checked: pairs,
        violations,
    })
}

/// Log-log least squares for `(C, alpha, beta)` over positive pairs, then the
/// smallest `C` satisfying every pair for those exponents, inflated by 10%.
pub fn fit_params(samples: &[(f64, f64)]) -> Result<DecayParams> {
    check_samples(samples)?;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (k, gk) = samples[i];
            let (l, gl) = samples[j];
            if gl > 0.0 {
                // ln gl - ln gk = ln C - beta ln(l-k) + alpha ln gk
                rows.push([1.0, -(l - k).ln(), gk.ln()]);
                rhs.push(gl.ln() - gk.ln());
            }
        }
    }
    let (alpha, beta) = if rows.len() >= 3 {
        let a = nalgebra::DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
        let b = nalgebra::DVector::from_vec(rhs);
        match a.svd(true, true).solve(&b, 1e-12) {
            Ok(x) => (x[2], x[1]),
            Err(_) => (f64::NAN, f64::NAN),
        }
    } else {
        (f64::NAN, f64::NAN)
    };
    // degenerate or non-physical fits fall back to small positive exponents
    let alpha = if alpha.is_finite() && alpha > 1e-3 { alpha } else { 1e-3 };
    let beta = if beta.is_finite() && beta > 1e-3 { beta } else { 1e-3 };
    let mut c_min: f64 = 0.0;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (k, gk) = samples[i];
            let (l, gl) = samples[j];
            if gl > 0.0 {
                let ln_c = gl.ln() + beta * (l - k).ln() - (1.0 + alpha) * gk.ln();
                c_min = c_min.max(ln_c.exp());
            }
        }
    }
    let c = if c_min > 0.0 { 1.1 * c_min } else { 1.0 };
    DecayParams::new(c, alpha, beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishingReport {
    pub params: DecayParams,
    pub fitted: bool,
    pub g1: f64,
    pub hypothesis: HypothesisReport,
    pub certificate: Option<DeGiorgiCertificate>,
    /// Largest threshold with positive measure, if any.
    pub last_positive: Option<f64>,
    /// First threshold past `last_positive` with zero measure.
    pub l_observed: Option<f64>,
}

impl VanishingReport {
    /// Whether the certified level clears every observed positive measure.
    pub fn sound(&self) -> Option<bool> {
        let cert = self.certificate.as_ref()?;
        Some(match self.last_positive {
            Some(k) => cert.l > k,
            None => true,
        })
    }
}

/// Certificate from a measured profile. `params = None` fits them.
pub fn empirical_vanishing_level(profile: &LevelSetProfile, params: Option<DecayParams>) -> Result<VanishingReport> {
    let samples: Vec<(f64, f64)> = profile.thresholds.iter().copied().zip(profile.measures.iter().copied()).collect();
    check_samples(&samples)?;
    // g(1) is bounded by the sample at the largest threshold not above 1
    let g1 = samples
        .iter()
        .rev()
        .find(|(k, _)| *k <= 1.0)
        .map(|s| s.1)
        .ok_or_else(|| Error::InvalidInput("profile needs a threshold at or below 1 to bound g(1)".into()))?;
    let (params, fitted) = match params {
        Some(p) => (p, false),
        None => (fit_params(&samples)?, true),
    };
    let hypothesis = verify_hypothesis(&samples, &params)?;
    let certificate = if hypothesis.violations.is_empty() {
        Some(compute_bound(g1, &params)?)
    } else {
        None
    };
    let last = samples.iter().rposition(|s| s.1 > 0.0);
    let last_positive = last.map(|i| samples[i].0);
    let l_observed = match last {
        Some(i) => samples.get(i + 1).map(|s| s.0),
        None => samples.first().map(|s| s.0),
    };
    Ok(VanishingReport {
        params,
        fitted,
        g1,
        hypothesis,
        certificate,
        last_positive,
        l_observed,
    })
}

/// Natural log of the extremal sequence `y_i = C i^{2 beta} y_{i-1}^{1+alpha}`
/// started from `y_0 = C' kappa^{-beta}`, the largest value the hypothesis
/// allows at `h_0 = kappa`.
pub fn saturated_log_sequence(cert: &DeGiorgiCertificate, p: &DecayParams, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut y = if cert.c_prime > 0.0 {
        cert.c_prime.ln() - p.beta * cert.kappa.ln()
    } else {
        f64::NEG_INFINITY
    };
    out.push(y);
    for i in 1..=n {
        y = p.c.ln() + 2.0 * p.beta * (i as f64).ln() + (1.0 + p.alpha) * y;
        out.push(y);
    }
    out
}

/// Synthetic family `A (K - k)_+^{beta/alpha}`, valid for the hypothesis
/// whenever `A^alpha >= c/C` with `c = (q/(q+beta))^q (beta/(q+beta))^beta`, `q = beta/alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFamily {
    pub amp: f64,
    pub root: f64,
    pub params: DecayParams,
}

impl PowerFamily {
    /// The smallest valid amplitude for the given parameters and root.
    pub fn minimal(params: DecayParams, root: f64) -> Self {
        let q = params.beta / params.alpha;
        let s = q + params.beta;
        let c = (q / s).powf(q) * (params.beta / s).powf(params.beta);
        PowerFamily {
            amp: (c / params.c).powf(1.0 / params.alpha),
            root,
            params,
        }
    }

    pub fn eval(&self, k: f64) -> f64 {
        let q = self.params.beta / self.params.alpha;
        self.amp * (self.root - k).max(0.0).powf(q)
    }
}
