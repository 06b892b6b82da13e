//! Random-matrix-theory toolkit: the standard Marchenko-Pastur law, the
//! spike forward/inverse maps and cosine map of the spiked covariance model,
//! and SNR-improvement diagnostics for homogenization.
//!
//! Everything here is stateless and thread-safe.

use ndarray::ArrayView1;

use crate::{Error, Result};

/// Standard Marchenko-Pastur distribution with aspect ratio γ = p/n.
///
/// The continuous density is √((b−x)(x−a)) / (2πγx) on the support
/// (a, b) = ((1−√γ)², (1+√γ)²). For γ > 1 there is additionally a point
/// mass of 1 − 1/γ at zero.
#[derive(Debug, Clone, Copy)]
pub struct MpDistribution {
    pub gamma: f64,
    pub support_lo: f64,
    pub support_hi: f64,
    pub atom_at_zero: f64,
}

impl MpDistribution {
    pub fn new(gamma: f64) -> Self {
        assert!(
            gamma.is_finite() && gamma > 0.0,
            "aspect ratio must be positive, got {gamma}"
        );
        let sqrt_g = gamma.sqrt();
        MpDistribution {
            gamma,
            support_lo: (1.0 - sqrt_g) * (1.0 - sqrt_g),
            support_hi: (1.0 + sqrt_g) * (1.0 + sqrt_g),
            atom_at_zero: if gamma > 1.0 { 1.0 - 1.0 / gamma } else { 0.0 },
        }
    }

    /// Continuous part of the density (the atom at zero is not included).
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= self.support_lo || x >= self.support_hi {
            return 0.0;
        }
        ((self.support_hi - x) * (x - self.support_lo)).sqrt()
            / (2.0 * std::f64::consts::PI * self.gamma * x)
    }

    /// Cumulative distribution function, atom included.
    ///
    /// The density has square-root vanishing at both support edges, so the
    /// integral is evaluated after the substitution x = m + h·sin u with
    /// m, h the support midpoint and half-width; the transformed integrand
    /// h²cos²u / (2πγ·x(u)) is smooth and adaptive Simpson reaches the
    /// 1e-8 target without edge trouble.
    pub fn cdf(&self, x: f64) -> f64 {
        let atom = if x >= 0.0 { self.atom_at_zero } else { 0.0 };
        if x <= self.support_lo {
            return atom;
        }
        if x >= self.support_hi {
            return 1.0;
        }
        let mid = 0.5 * (self.support_lo + self.support_hi);
        let half = 0.5 * (self.support_hi - self.support_lo);
        let gamma = self.gamma;
        let integrand = move |u: f64| {
            let cos_u = u.cos();
            let xu = mid + half * u.sin();
            half * half * cos_u * cos_u / (2.0 * std::f64::consts::PI * gamma * xu)
        };
        let upper = ((x - mid) / half).clamp(-1.0, 1.0).asin();
        let mass = adaptive_simpson(&integrand, -std::f64::consts::FRAC_PI_2, upper, 1e-10, 40);
        (atom + mass).min(1.0)
    }
}

/// Adaptive Simpson quadrature with an absolute-error target.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let (l, r) = (0.5 * (a + c), 0.5 * (c + b));
    let (fl, fr) = (f(l), f(r));
    let left = (c - a) / 6.0 * (fa + 4.0 * fl + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fr + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, c, fa, fc, fl, left, 0.5 * tol, depth - 1)
            + simpson_step(f, c, b, fc, fb, fr, right, 0.5 * tol, depth - 1)
    }
}

/// Asymptotic location of the top sample eigenvalue for a population spike ℓ:
/// (1+ℓ)(1+γ/ℓ) above the phase transition ℓ > √γ, the bulk edge (1+√γ)²
/// at or below it.
pub fn spike_forward(ell: f64, gamma: f64) -> f64 {
    debug_assert!(ell >= 0.0 && gamma > 0.0);
    let sqrt_g = gamma.sqrt();
    if ell > sqrt_g {
        (1.0 + ell) * (1.0 + gamma / ell)
    } else {
        (1.0 + sqrt_g) * (1.0 + sqrt_g)
    }
}

/// Invert the spike forward map: recover ℓ from an observed eigenvalue that
/// separates from the bulk.
///
/// Solving λ = (1+ℓ)(1+γ/ℓ) for ℓ gives the quadratic
/// ℓ² − (λ−1−γ)ℓ + γ = 0, whose larger root exceeds √γ.
pub fn spike_inverse(lambda: f64, gamma: f64) -> Result<f64> {
    let sqrt_g = gamma.sqrt();
    let edge = (1.0 + sqrt_g) * (1.0 + sqrt_g);
    if !(lambda > edge) {
        return Err(Error::BelowBulkEdge { lambda, edge });
    }
    let b = lambda - 1.0 - gamma;
    let disc = (b * b - 4.0 * gamma).max(0.0);
    Ok(0.5 * (b + disc.sqrt()))
}

/// Asymptotic squared cosine between the population and sample top
/// eigenvectors: (1 − γ/ℓ²)/(1 + γ/ℓ) above the phase transition, 0 below.
pub fn cosine_sq(ell: f64, gamma: f64) -> f64 {
    debug_assert!(ell >= 0.0 && gamma > 0.0);
    if ell > gamma.sqrt() {
        ((1.0 - gamma / (ell * ell)) / (1.0 + gamma / ell)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// SNR improvement from homogenization for a signal direction `v` under a
/// diagonal noise-variance vector `d`: (tr D / p) · (vᵀD⁻¹v)/(vᵀv).
pub fn snr_improvement(v: &ArrayView1<'_, f64>, d: &ArrayView1<'_, f64>) -> f64 {
    assert_eq!(v.len(), d.len(), "vector and noise diagonal lengths differ");
    let p = d.len() as f64;
    let trace: f64 = d.sum();
    let mut weighted = 0.0;
    let mut norm_sq = 0.0;
    for (&vi, &di) in v.iter().zip(d.iter()) {
        debug_assert!(di > 0.0, "noise variances must be positive");
        weighted += vi * vi / di;
        norm_sq += vi * vi;
    }
    assert!(norm_sq > 0.0, "signal direction must be nonzero");
    (trace / p) * (weighted / norm_sq)
}

/// Heteroskedasticity measure β = (ΣDᵢ · ΣDᵢ⁻¹)/p² ≥ 1, with equality iff
/// the noise variances are constant.
pub fn beta_heteroskedasticity(d: &ArrayView1<'_, f64>) -> f64 {
    let p = d.len() as f64;
    assert!(p > 0.0, "empty noise diagonal");
    let sum: f64 = d.sum();
    let sum_inv: f64 = d.iter().map(|&x| {
        debug_assert!(x > 0.0);
        1.0 / x
    }).sum();
    sum * sum_inv / (p * p)
}

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `eigenvalues` and the Marchenko-Pastur law `d`.
pub fn ks_statistic(eigenvalues: &[f64], d: &MpDistribution) -> Result<f64> {
    if eigenvalues.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let mut sorted: Vec<f64> = eigenvalues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    let m = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let theory = d.cdf(x);
        let above = (i as f64 + 1.0) / m - theory;
        let below = theory - i as f64 / m;
        sup = sup.max(above.abs()).max(below.abs());
    }
    Ok(sup)
}
