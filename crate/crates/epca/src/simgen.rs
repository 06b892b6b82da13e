//! Seeded data generators for the simulation protocols, estimation metrics,
//! and a Monte-Carlo trial runner.
//!
//! Reproducibility contract: every generator is driven by ChaCha8 (a
//! counter-based stream cipher RNG from the `rand_chacha` crate, version
//! pinned in Cargo.toml) seeded with `seed_from_u64`. Trial t of an
//! experiment with base seed s uses the stream seeded by `s + t`
//! (wrapping). Identical configs and seeds produce identical batches on
//! every run and thread count; trials are independent streams and may run
//! in parallel with results identical to sequential execution.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::covariance::DataBatch;
use crate::expfam::ExponentialFamily;
use crate::linalg;
use crate::{Error, Result};

/// The RNG stream for trial `trial` of an experiment seeded with
/// `base_seed`.
pub fn trial_rng(base_seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(trial as u64))
}

// ---------------------------------------------------------------------------
// Poisson sampling
// ---------------------------------------------------------------------------

/// ln(k!) via a cumulative table for small k and a Stirling series above.
fn ln_factorial(k: u64) -> f64 {
    const TABLE_LEN: usize = 32;
    static TABLE: std::sync::OnceLock<[f64; TABLE_LEN]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0.0f64; TABLE_LEN];
        for i in 2..TABLE_LEN {
            t[i] = t[i - 1] + (i as f64).ln();
        }
        t
    });
    if (k as usize) < TABLE_LEN {
        return table[k as usize];
    }
    // Stirling with the first three corrections: error < 1e-13 for k >= 32
    let x = k as f64 + 1.0;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x.powi(3))
        + 1.0 / (1260.0 * x.powi(5))
}

/// Draw from Poisson(mean).
///
/// Sequential inversion for mean < 10 (exact and fast in the photon-limited
/// regime where means are tiny), Hörmann's PTRS transformed rejection above.
pub fn sample_poisson(rng: &mut impl Rng, mean: f64) -> u64 {
    assert!(mean >= 0.0 && mean.is_finite(), "poisson mean must be finite and nonnegative");
    if mean == 0.0 {
        return 0;
    }
    if mean < 10.0 {
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cum = p;
        let u: f64 = rng.gen();
        while u > cum {
            k += 1;
            p *= mean / k as f64;
            cum += p;
            if k > 10_000 {
                break; // cum has saturated numerically
            }
        }
        k
    } else {
        // PTRS (Hörmann 1993), valid for mean >= 10
        let b = 0.931 + 2.53 * mean.sqrt();
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        let ln_mean = mean.ln();
        loop {
            let u: f64 = rng.gen::<f64>() - 0.5;
            let v: f64 = rng.gen();
            let us = 0.5 - u.abs();
            let kf = (2.0 * a / us + b) * u + mean + 0.43;
            if us >= 0.07 && v <= v_r {
                return kf.floor() as u64;
            }
            if kf < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let k = kf.floor();
            let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
            let rhs = k * ln_mean - mean - ln_factorial(k as u64);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

/// Unit-variance uniform on [−√3, √3].
fn sample_unit_uniform(rng: &mut impl Rng) -> f64 {
    let root3 = 3.0f64.sqrt();
    rng.gen::<f64>() * (2.0 * root3) - root3
}

fn linspace(lo: f64, hi: f64, len: usize) -> Array1<f64> {
    if len == 1 {
        return Array1::from_elem(1, 0.5 * (lo + hi));
    }
    let step = (hi - lo) / (len - 1) as f64;
    Array1::from_iter((0..len).map(|i| lo + step * i as f64))
}

// ---------------------------------------------------------------------------
// Rank-one spiked Poisson generator
// ---------------------------------------------------------------------------

/// Configuration of the rank-one spiked Poisson protocol: clean signals
/// X_i = u + z_i √ℓ v with u an increasing grid on `u_range`, v an
/// increasing grid on `v_range` normalized to ‖v‖ = 1, and z_i uniform on
/// [−√3, √3] (unit variance). Observations are Y_ij ~ Poisson(X_ij).
#[derive(Debug, Clone)]
pub struct SpikedPoissonConfig {
    pub n: usize,
    pub p: usize,
    /// Target spike t of Cov[X] = ℓ·vvᵀ (equal to ℓ since ‖v‖² = 1).
    pub ell: f64,
    pub u_range: (f64, f64),
    pub v_range: (f64, f64),
    pub seed: u64,
}

impl SpikedPoissonConfig {
    pub fn new(n: usize, p: usize, ell: f64, seed: u64) -> Self {
        SpikedPoissonConfig {
            n,
            p,
            ell,
            u_range: (1.0, 3.0),
            v_range: (-1.0, 1.0),
            seed,
        }
    }

    pub fn base_mean(&self) -> Array1<f64> {
        linspace(self.u_range.0, self.u_range.1, self.p)
    }

    pub fn direction(&self) -> Array1<f64> {
        let mut v = linspace(self.v_range.0, self.v_range.1, self.p);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 0.0, "direction grid must be nonzero");
        v.mapv_inplace(|x| x / norm);
        v
    }

    /// Spike strength at which the homogenized top eigenvalue separates
    /// from the bulk: √γ / (vᵀ diag[u]⁻¹ v).
    pub fn phase_transition(&self) -> f64 {
        let u = self.base_mean();
        let v = self.direction();
        let gamma = self.p as f64 / self.n as f64;
        let quad: f64 = v.iter().zip(u.iter()).map(|(&vj, &uj)| vj * vj / uj).sum();
        gamma.sqrt() / quad
    }
}

/// Ground truth accompanying a generated spiked batch.
#[derive(Debug, Clone)]
pub struct SpikedTruth {
    /// Clean signal matrix X (n×p).
    pub x: Array2<f64>,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    /// Population spike t = ‖√ℓ v‖² of Cov[X].
    pub t: f64,
}

/// Generate a spiked Poisson batch. Fails when the configuration could
/// produce a negative Poisson mean, i.e. unless u(j) ≥ √3·√ℓ·|v(j)|.
pub fn gen_spiked_poisson(cfg: &SpikedPoissonConfig) -> Result<(DataBatch, SpikedTruth)> {
    if cfg.n < 2 || cfg.p < 1 {
        return Err(Error::InvalidConfig(format!(
            "need n >= 2 and p >= 1, got n={} p={}",
            cfg.n, cfg.p
        )));
    }
    if !(cfg.ell >= 0.0) {
        return Err(Error::InvalidConfig(format!("spike must be nonnegative, got {}", cfg.ell)));
    }
    let u = cfg.base_mean();
    let v = cfg.direction();
    let root3 = 3.0f64.sqrt();
    let amp = cfg.ell.sqrt();
    for j in 0..cfg.p {
        if u[j] < root3 * amp * v[j].abs() {
            return Err(Error::InvalidConfig(format!(
                "mean would go negative at column {j}: u={} < sqrt(3)*sqrt(ell)*|v|={}",
                u[j],
                root3 * amp * v[j].abs()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = Array2::<f64>::zeros((cfg.n, cfg.p));
    let mut y = Array2::<f64>::zeros((cfg.n, cfg.p));
    for i in 0..cfg.n {
        let z = sample_unit_uniform(&mut rng);
        for j in 0..cfg.p {
            let mean = u[j] + z * amp * v[j];
            x[[i, j]] = mean;
            y[[i, j]] = sample_poisson(&mut rng, mean) as f64;
        }
    }
    let batch = DataBatch::new(y, ExponentialFamily::Poisson)?;
    Ok((
        batch,
        SpikedTruth {
            x,
            u,
            v,
            t: cfg.ell,
        },
    ))
}

// ---------------------------------------------------------------------------
// Low-rank Poisson generator
// ---------------------------------------------------------------------------

/// Configuration of the low-rank Poisson protocol: r basis vectors with
/// iid U[0,1] coordinates normalized to unit L1 norm, per-sample
/// coefficients iid U[0,1] rescaled to sum to the signal strength A, and
/// Poisson observations around X_i = Σ_k a_ik v_k. Every X_i sums to A, so
/// A/p is the mean intensity per feature.
#[derive(Debug, Clone)]
pub struct LowRankConfig {
    pub n: usize,
    pub p: usize,
    pub rank: usize,
    /// Total signal strength A; `None` uses 25(1+√γ)², which pushes the top
    /// eigenvalue out of the bulk.
    pub signal_strength: Option<f64>,
    pub seed: u64,
}

impl LowRankConfig {
    pub fn new(n: usize, p: usize, rank: usize, seed: u64) -> Self {
        LowRankConfig {
            n,
            p,
            rank,
            signal_strength: None,
            seed,
        }
    }

    pub fn strength(&self) -> f64 {
        self.signal_strength.unwrap_or_else(|| {
            let gamma = self.p as f64 / self.n as f64;
            25.0 * (1.0 + gamma.sqrt()).powi(2)
        })
    }
}

/// Ground truth for a low-rank batch, with the population moments of X in
/// closed form up to one calibrated scalar.
#[derive(Debug, Clone)]
pub struct LowRankTruth {
    /// Clean signal matrix X (n×p).
    pub x: Array2<f64>,
    /// Basis vectors as columns (p×r), each with unit L1 norm.
    pub basis: Array2<f64>,
    /// E[a_k] = A/r for every k.
    pub coeff_mean: f64,
    /// Var[a_k], common to all k.
    pub coeff_var: f64,
    /// Cov[a_k, a_l] for k ≠ l; the sum constraint forces
    /// cov = −var/(r−1).
    pub coeff_cov: f64,
}

impl LowRankTruth {
    /// Population mean of X: (A/r)·Σ_k v_k.
    pub fn mean(&self) -> Array1<f64> {
        self.basis.sum_axis(Axis(1)) * self.coeff_mean
    }

    /// Population covariance of X: V C_a Vᵀ with the exchangeable
    /// coefficient covariance C_a.
    pub fn covariance(&self) -> Array2<f64> {
        let r = self.basis.ncols();
        let p = self.basis.nrows();
        if r == 0 {
            return Array2::zeros((p, p));
        }
        // C_a = (var − cov)·I + cov·J, so V C_a Vᵀ expands into a
        // weighted self-product plus a rank-one term in s = Σ_k v_k.
        let diff = self.coeff_var - self.coeff_cov;
        let vvt = linalg::matmul(&self.basis.view(), &self.basis.t());
        let s = self.basis.sum_axis(Axis(1));
        let mut out = vvt * diff;
        for i in 0..p {
            for j in 0..p {
                out[[i, j]] += self.coeff_cov * s[i] * s[j];
            }
        }
        out
    }
}

/// Second moment E[(w₁/Σw)²] for w iid U[0,1]^r, calibrated by a dedicated
/// high-precision Monte Carlo run (the ratio moment has no elementary
/// closed form). Fixed internal seed; deterministic per rank.
fn normalized_coeff_second_moment(r: usize) -> f64 {
    if r == 1 {
        return 1.0;
    }
    const DRAWS: usize = 4_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x00e2_ca1b);
    let mut acc = 0.0f64;
    for _ in 0..DRAWS {
        let first: f64 = rng.gen();
        let mut sum = first;
        for _ in 1..r {
            sum += rng.gen::<f64>();
        }
        let ratio = first / sum;
        acc += ratio * ratio;
    }
    acc / DRAWS as f64
}

/// Generate a low-rank Poisson batch with its ground truth.
pub fn gen_low_rank_poisson(cfg: &LowRankConfig) -> Result<(DataBatch, LowRankTruth)> {
    if cfg.rank < 1 || cfg.rank > cfg.p {
        return Err(Error::InvalidConfig(format!(
            "rank must lie in 1..=p, got {} with p={}",
            cfg.rank, cfg.p
        )));
    }
    if cfg.n < 2 {
        return Err(Error::InvalidConfig("need n >= 2".into()));
    }
    let a_total = cfg.strength();
    if !(a_total > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "signal strength must be positive, got {a_total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // basis vectors, L1-normalized (coordinates are nonnegative)
    let mut basis = Array2::<f64>::zeros((cfg.p, cfg.rank));
    for k in 0..cfg.rank {
        let mut col = basis.column_mut(k);
        let mut sum = 0.0;
        for x in col.iter_mut() {
            let draw: f64 = rng.gen();
            *x = draw;
            sum += draw;
        }
        col.mapv_inplace(|x| x / sum);
    }

    let mut coeffs = Array2::<f64>::zeros((cfg.n, cfg.rank));
    for i in 0..cfg.n {
        let mut row = coeffs.row_mut(i);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            let draw: f64 = rng.gen();
            *x = draw;
            sum += draw;
        }
        row.mapv_inplace(|x| x * a_total / sum);
    }

    let x = linalg::matmul(&coeffs.view(), &basis.t());
    let mut y = Array2::<f64>::zeros((cfg.n, cfg.p));
    for i in 0..cfg.n {
        for j in 0..cfg.p {
            y[[i, j]] = sample_poisson(&mut rng, x[[i, j]]) as f64;
        }
    }

    let e2 = normalized_coeff_second_moment(cfg.rank);
    let r_f = cfg.rank as f64;
    let coeff_var = a_total * a_total * (e2 - 1.0 / (r_f * r_f));
    let coeff_cov = if cfg.rank > 1 {
        -coeff_var / (r_f - 1.0)
    } else {
        0.0
    };

    let batch = DataBatch::new(y, ExponentialFamily::Poisson)?;
    Ok((
        batch,
        LowRankTruth {
            x,
            basis,
            coeff_mean: a_total / r_f,
            coeff_var,
            coeff_cov,
        },
    ))
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Squared Frobenius distance ‖ÛÛᵀ − UUᵀ‖²_F between the projectors onto
/// two column-orthonormal bases; invariant to rotations within each basis.
pub fn subspace_error(u_hat: &ArrayView2<'_, f64>, u: &ArrayView2<'_, f64>) -> f64 {
    assert_eq!(u_hat.nrows(), u.nrows(), "subspace dimensions differ");
    debug_assert!(is_orthonormal(u_hat, 1e-8), "u_hat is not orthonormal");
    debug_assert!(is_orthonormal(u, 1e-8), "u is not orthonormal");
    let cross = linalg::matmul(&u_hat.t(), u);
    let cross_sq: f64 = cross.iter().map(|x| x * x).sum();
    (u_hat.ncols() + u.ncols()) as f64 - 2.0 * cross_sq
}

fn is_orthonormal(u: &ArrayView2<'_, f64>, tol: f64) -> bool {
    let gram = linalg::matmul(&u.t(), u);
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (gram[[i, j]] - expect).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Squared correlation (v̂ᵀv)² / (‖v̂‖²‖v‖²) in [0, 1].
pub fn sq_correlation(v_hat: &ArrayView1<'_, f64>, v: &ArrayView1<'_, f64>) -> f64 {
    assert_eq!(v_hat.len(), v.len(), "vector lengths differ");
    let dot: f64 = v_hat.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    let n1: f64 = v_hat.iter().map(|x| x * x).sum();
    let n2: f64 = v.iter().map(|x| x * x).sum();
    assert!(n1 > 0.0 && n2 > 0.0, "vectors must be nonzero");
    (dot * dot) / (n1 * n2)
}

/// Frobenius and operator norms of the difference of two symmetric
/// matrices.
#[derive(Debug, Clone, Copy)]
pub struct MatrixErrors {
    pub frobenius: f64,
    pub operator: f64,
}

pub fn matrix_errors(estimate: &ArrayView2<'_, f64>, truth: &ArrayView2<'_, f64>) -> Result<MatrixErrors> {
    if estimate.dim() != truth.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", truth.dim()),
            actual: format!("{:?}", estimate.dim()),
        });
    }
    let diff = estimate - truth;
    let frobenius = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    let evals = linalg::sym_eigenvalues(&diff.view());
    let operator = evals
        .iter()
        .fold(0.0f64, |acc, &x| acc.max(x.abs()));
    Ok(MatrixErrors {
        frobenius,
        operator,
    })
}

// ---------------------------------------------------------------------------
// Trial runner
// ---------------------------------------------------------------------------

/// Per-metric aggregate over a Monte-Carlo run.
#[derive(Debug, Clone)]
pub struct MetricSummary {
    pub name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n−1 divisor); 0 when a single trial ran.
    pub std: f64,
}

/// Result of a seeded Monte-Carlo experiment.
#[derive(Debug, Clone)]
pub struct TrialReport {
    pub n_trials: usize,
    pub base_seed: u64,
    pub metrics: Vec<MetricSummary>,
}

impl TrialReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Run `n_trials` independent trials; trial t receives the seed
/// `base_seed + t` and its index. Trials run in parallel; aggregation
/// is in trial order, so the report matches a sequential run exactly.
/// Any trial error aborts the experiment, tagged with the trial index.
pub fn run_trials<F>(n_trials: usize, base_seed: u64, trial_fn: F) -> Result<TrialReport>
where
    F: Fn(u64, usize) -> Result<Vec<(String, f64)>> + Sync,
{
    assert!(n_trials >= 1, "need at least one trial");
    let raw: Vec<Result<Vec<(String, f64)>>> = (0..n_trials)
        .into_par_iter()
        .map(|t| trial_fn(base_seed.wrapping_add(t as u64), t))
        .collect();

    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (t, r) in raw.into_iter().enumerate() {
        let metrics = r.map_err(|e| Error::Trial {
            index: t,
            source: Box::new(e),
        })?;
        if t == 0 {
            for (name, _) in &metrics {
                names.push(name.clone());
                columns.push(Vec::with_capacity(n_trials));
            }
        }
        if metrics.len() != names.len() {
            return Err(Error::Trial {
                index: t,
                source: Box::new(Error::InvalidConfig(
                    "trial produced a different metric set".into(),
                )),
            });
        }
        for (slot, (name, value)) in metrics.into_iter().enumerate() {
            debug_assert_eq!(name, names[slot], "metric order must be stable");
            columns[slot].push(value);
        }
    }

    let metrics = names
        .into_iter()
        .zip(columns)
        .map(|(name, values)| {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let std = if values.len() > 1 {
                let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
                (ss / (values.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            MetricSummary {
                name,
                values,
                mean,
                std,
            }
        })
        .collect();

    Ok(TrialReport {
        n_trials,
        base_seed,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn poisson_zero_mean_is_zero() {
        let mut rng = trial_rng(1, 0);
        for _ in 0..100 {
            assert_eq!(sample_poisson(&mut rng, 0.0), 0);
        }
    }

    #[test]
    fn poisson_moments_by_regime() {
        // covers the inversion branch (0.04, 1) and the PTRS branch (10, 50)
        for &mean in &[0.04, 1.0, 10.0, 50.0] {
            let mut rng = trial_rng(7, 0);
            let draws = 1_000_000usize;
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for _ in 0..draws {
                let k = sample_poisson(&mut rng, mean) as f64;
                sum += k;
                sum_sq += k * k;
            }
            let m = sum / draws as f64;
            let var = sum_sq / draws as f64 - m * m;
            // standard errors: SE(mean) = √(λ/n); Var of sample variance of
            // Poisson ≈ (λ + 2λ²)/n
            let se_mean = (mean / draws as f64).sqrt();
            let se_var = ((mean + 2.0 * mean * mean) / draws as f64).sqrt();
            assert!(
                (m - mean).abs() < 4.0 * se_mean,
                "λ={mean}: sample mean {m}"
            );
            assert!(
                (var - mean).abs() < 4.0 * se_var,
                "λ={mean}: sample variance {var}"
            );
        }
    }

    #[test]
    fn ln_factorial_agrees_with_direct_products() {
        let mut direct = 0.0f64;
        for k in 1..=100u64 {
            direct += (k as f64).ln();
            assert!(
                (ln_factorial(k) - direct).abs() < 1e-10 * (1.0 + direct),
                "k={k}"
            );
        }
    }

    #[test]
    fn unit_uniform_has_unit_variance() {
        let mut rng = trial_rng(11, 0);
        let draws = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let z = sample_unit_uniform(&mut rng);
            assert!(z.abs() <= 3.0f64.sqrt());
            sum += z;
            sum_sq += z * z;
        }
        let var = sum_sq / draws as f64 - (sum / draws as f64).powi(2);
        assert!((var - 1.0).abs() < 0.005, "variance {var}");
    }

    #[test]
    fn spiked_generator_null_case() {
        let cfg = SpikedPoissonConfig::new(50, 8, 0.0, 3);
        let (_, truth) = gen_spiked_poisson(&cfg).unwrap();
        for i in 0..50 {
            for j in 0..8 {
                assert_eq!(truth.x[[i, j]], truth.u[j]);
            }
        }
        assert_eq!(truth.t, 0.0);
    }

    #[test]
    fn spiked_generator_is_deterministic() {
        // at p = 10 the normalized direction has large entries, so the
        // nonnegativity bound u(j) >= sqrt(3 ell) |v(j)| caps the spike
        let cfg = SpikedPoissonConfig::new(30, 10, 0.5, 42);
        let (a, ta) = gen_spiked_poisson(&cfg).unwrap();
        let (b, tb) = gen_spiked_poisson(&cfg).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(ta.x, tb.x);
    }

    #[test]
    fn spiked_generator_rejects_negative_means() {
        let mut cfg = SpikedPoissonConfig::new(30, 10, 400.0, 42);
        cfg.u_range = (0.01, 0.02);
        assert!(matches!(
            gen_spiked_poisson(&cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn phase_transition_matches_reference_config() {
        let cfg = SpikedPoissonConfig::new(1000, 500, 1.0, 0);
        let pt = cfg.phase_transition();
        assert!((pt - 1.2).abs() < 0.05, "phase transition at {pt}");
    }

    #[test]
    fn low_rank_rows_sum_to_signal_strength() {
        let cfg = LowRankConfig::new(20, 12, 3, 9);
        let (_, truth) = gen_low_rank_poisson(&cfg).unwrap();
        let a = cfg.strength();
        for i in 0..20 {
            let s: f64 = truth.x.row(i).sum();
            assert!((s - a).abs() < 1e-9 * a, "row {i} sums to {s}");
        }
    }

    #[test]
    fn low_rank_rejects_rank_zero() {
        let cfg = LowRankConfig::new(20, 12, 0, 9);
        assert!(gen_low_rank_poisson(&cfg).is_err());
    }

    #[test]
    fn low_rank_rank_one_signal_is_constant() {
        // with a single coefficient the sum constraint pins a = A, so the
        // clean signal is the same vector for every sample
        let cfg = LowRankConfig::new(10, 6, 1, 5);
        let (_, truth) = gen_low_rank_poisson(&cfg).unwrap();
        assert_eq!(truth.coeff_var, 0.0);
        for i in 1..10 {
            for j in 0..6 {
                assert!((truth.x[[i, j]] - truth.x[[0, j]]).abs() < 1e-12);
            }
        }
        assert_eq!(truth.covariance(), Array2::<f64>::zeros((6, 6)));
    }

    #[test]
    fn subspace_error_examples() {
        let u = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        assert!(subspace_error(&u.view(), &u.view()).abs() < 1e-12);

        // rotation invariance
        let c = 0.5f64.sqrt();
        let rotated = array![[c, c], [-c, c], [0.0, 0.0]];
        assert!(subspace_error(&rotated.view(), &u.view()).abs() < 1e-12);

        // orthogonal complements in 2-D, r = 1
        let e1 = array![[1.0], [0.0]];
        let e2 = array![[0.0], [1.0]];
        assert!((subspace_error(&e1.view(), &e2.view()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sq_correlation_examples() {
        let v = array![1.0, 2.0, -1.0];
        let w = &v * -3.0;
        assert!((sq_correlation(&v.view(), &w.view()) - 1.0).abs() < 1e-15);
        let orth = array![2.0, -1.0, 0.0];
        assert!(sq_correlation(&v.view(), &orth.view()).abs() < 1e-15);
        let a = array![1.0, 0.0];
        let diag = array![1.0, 1.0];
        assert!((sq_correlation(&a.view(), &diag.view()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matrix_errors_examples() {
        let zero = Array2::<f64>::zeros((2, 2));
        let d = array![[3.0, 0.0], [0.0, -4.0]];
        let e = matrix_errors(&d.view(), &zero.view()).unwrap();
        assert!((e.frobenius - 5.0).abs() < 1e-12);
        assert!((e.operator - 4.0).abs() < 1e-12);
        let same = matrix_errors(&d.view(), &d.view()).unwrap();
        assert_eq!(same.frobenius, 0.0);
        assert!(same.operator.abs() < 1e-14);
        assert!(e.operator <= e.frobenius);
    }

    #[test]
    fn run_trials_single_trial_has_zero_std() {
        let report = run_trials(1, 5, |seed, idx| {
            assert_eq!(seed, 5);
            assert_eq!(idx, 0);
            Ok(vec![("x".to_string(), 2.5)])
        })
        .unwrap();
        let m = report.metric("x").unwrap();
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.std, 0.0);
    }

    #[test]
    fn run_trials_is_reproducible() {
        let f = |seed: u64, _idx: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(vec![("draw".to_string(), rng.gen::<f64>())])
        };
        let a = run_trials(8, 123, f).unwrap();
        let b = run_trials(8, 123, f).unwrap();
        assert_eq!(a.metric("draw").unwrap().values, b.metric("draw").unwrap().values);
    }

    #[test]
    fn run_trials_reports_failing_index() {
        let err = run_trials(4, 0, |_seed, idx| {
            if idx == 2 {
                Err(Error::InvalidConfig("boom".into()))
            } else {
                Ok(vec![("x".to_string(), 0.0)])
            }
        })
        .unwrap_err();
        match err {
            Error::Trial { index, .. } => assert_eq!(index, 2),
            other => panic!("expected trial error, got {other}"),
        }
    }
}
