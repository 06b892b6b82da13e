//! The covariance pipeline: sample moments → diagonal debiasing →
//! homogenization → eigenvalue shrinkage → heterogenization → scaling,
//! ending in the scaled covariance estimator S_s whose eigendecomposition
//! is the ePCA of the data.
//!
//! Stage by stage, for a data matrix Y (rows = samples) with sample mean Ȳ,
//! sample covariance S (divisor n), and noise diagonal D_n = diag[V(Ȳ)]:
//!
//! | stage            | value                                   |
//! |------------------|-----------------------------------------|
//! | debias           | S_d  = S − D_n                          |
//! | homogenize       | S_h  = D_n^{-1/2} S D_n^{-1/2} − I      |
//! | shrink           | S_hη = Σ ℓ̂ᵢ ŵᵢŵᵢᵀ over kept spikes      |
//! | heterogenize     | S_he = D_n^{1/2} S_hη D_n^{1/2}         |
//! | scale            | S_s  = Σ α̂ᵢ λ̂ᵢ ûᵢûᵢᵀ                    |
//!
//! All operations are pure functions over immutable inputs. Results are
//! deterministic for a fixed BLAS configuration (see the `linalg` module
//! notes on threading).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::expfam::{ColumnFamilies, ExponentialFamily};
use crate::linalg;
use crate::rmt;
use crate::{Error, Result};

/// An n×p observation matrix together with the per-column noise families.
#[derive(Debug, Clone)]
pub struct DataBatch {
    values: Array2<f64>,
    families: ColumnFamilies,
}

impl DataBatch {
    /// Validates shape (n ≥ 2, p ≥ 1) and that every entry lies in the
    /// mean domain of its column's family (counts nonnegative, binomial
    /// entries within [0, k], everything finite).
    pub fn new(values: Array2<f64>, families: impl Into<ColumnFamilies>) -> Result<Self> {
        let families = families.into();
        let (n, p) = values.dim();
        if n < 2 || p < 1 {
            return Err(Error::InvalidConfig(format!(
                "data batch needs n >= 2 samples and p >= 1 features, got {n}x{p}"
            )));
        }
        families.check_len(p)?;
        match &families {
            ColumnFamilies::Shared(f) => {
                for &v in values.iter() {
                    if !f.validate_mean(v) {
                        return Err(Error::MeanOutOfDomain {
                            family: f.to_string(),
                            value: v,
                        });
                    }
                }
            }
            ColumnFamilies::PerColumn(fs) => {
                for row in values.rows() {
                    for (&v, f) in row.iter().zip(fs.iter()) {
                        if !f.validate_mean(v) {
                            return Err(Error::MeanOutOfDomain {
                                family: f.to_string(),
                                value: v,
                            });
                        }
                    }
                }
            }
        }
        Ok(DataBatch { values, families })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn families(&self) -> &ColumnFamilies {
        &self.families
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Keep only the listed columns (in the given order).
    pub fn select_columns(&self, keep: &[usize]) -> DataBatch {
        DataBatch {
            values: self.values.select(Axis(1), keep),
            families: self.families.select(keep),
        }
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// First and second sample moments plus the estimated noise diagonal.
#[derive(Debug, Clone)]
pub struct MomentSummary {
    /// Sample mean Ȳ.
    pub mean: Array1<f64>,
    /// Sample covariance S with divisor n.
    pub sample_cov: Array2<f64>,
    /// Diagonal of D_n = diag[V(Ȳ)], one entry per feature.
    pub noise_diag: Array1<f64>,
    /// Aspect ratio γ = p/n for the features currently present.
    pub gamma: f64,
    /// Number of samples the moments were computed from.
    pub n_samples: usize,
}

/// Knobs for the fitting pipeline.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Drop features whose estimated noise variance falls at or below
    /// `degenerate_threshold` instead of failing.
    pub drop_degenerate: bool,
    /// Clamp sample means into the family's mean domain before applying the
    /// variance map (tolerates small violations from imputation noise).
    pub clamp_means: bool,
    /// Noise-variance cutoff below which a feature counts as degenerate.
    pub degenerate_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            drop_degenerate: true,
            clamp_means: false,
            degenerate_threshold: 1e-12,
        }
    }
}

/// Sample mean, covariance (divisor n), noise diagonal V(Ȳ), and γ = p/n.
pub fn sample_moments(batch: &DataBatch, opts: &FitOptions) -> Result<MomentSummary> {
    let y = batch.values();
    let (n, p) = y.dim();
    let n_f = n as f64;

    // fixed sequential accumulation order, row-major
    let mut mean = Array1::<f64>::zeros(p);
    for row in y.rows() {
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    mean.mapv_inplace(|s| s / n_f);

    let centered = y - &mean.view().insert_axis(Axis(0));
    let sample_cov = linalg::crossprod_scaled(&centered.view(), 1.0 / n_f);

    let mut noise_diag = Array1::<f64>::zeros(p);
    for j in 0..p {
        let family = batch.families().family(j);
        let m = if opts.clamp_means {
            family.clamp_mean(mean[j])
        } else {
            mean[j]
        };
        noise_diag[j] = family.variance_map(m)?;
    }

    Ok(MomentSummary {
        mean,
        sample_cov,
        noise_diag,
        gamma: p as f64 / n_f,
        n_samples: n,
    })
}

/// Diagonally debiased covariance S_d = S − diag[V(Ȳ)].
///
/// The result may be indefinite; that is expected and left alone.
pub fn debias(ms: &MomentSummary) -> Array2<f64> {
    let mut s_d = ms.sample_cov.clone();
    for (j, &v) in ms.noise_diag.iter().enumerate() {
        s_d[[j, j]] -= v;
    }
    s_d
}

/// Indices of features whose noise variance is at or below `threshold`.
pub fn degenerate_columns(ms: &MomentSummary, threshold: f64) -> Vec<usize> {
    ms.noise_diag
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= threshold)
        .map(|(j, _)| j)
        .collect()
}

/// Restrict a moment summary to the listed columns, recomputing γ for the
/// reduced feature count.
pub fn restrict(ms: &MomentSummary, keep: &[usize]) -> MomentSummary {
    MomentSummary {
        mean: keep.iter().map(|&j| ms.mean[j]).collect(),
        sample_cov: ms
            .sample_cov
            .select(Axis(0), keep)
            .select(Axis(1), keep),
        noise_diag: keep.iter().map(|&j| ms.noise_diag[j]).collect(),
        gamma: keep.len() as f64 / ms.n_samples as f64,
        n_samples: ms.n_samples,
    }
}

/// Homogenized covariance S_h = D_n^{-1/2} S D_n^{-1/2} − I.
///
/// Degenerate features must be dropped first; their presence is an error
/// listing the offending column indices.
pub fn homogenize(ms: &MomentSummary) -> Result<Array2<f64>> {
    let bad = degenerate_columns(ms, FitOptions::default().degenerate_threshold);
    if !bad.is_empty() {
        return Err(Error::DegenerateColumns { columns: bad });
    }
    let w: Array1<f64> = ms.noise_diag.mapv(|d| 1.0 / d.sqrt());
    let p = w.len();
    let mut s_h = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            s_h[[i, j]] = ms.sample_cov[[i, j]] * w[i] * w[j];
        }
        s_h[[i, i]] -= 1.0;
    }
    Ok(s_h)
}

/// Correlation matrix diag(S)^{-1/2} S diag(S)^{-1/2}: the standardization
/// baseline that divides by total (signal + noise) standard deviations.
pub fn standardize(ms: &MomentSummary) -> Result<Array2<f64>> {
    let threshold = FitOptions::default().degenerate_threshold;
    let bad: Vec<usize> = (0..ms.mean.len())
        .filter(|&j| ms.sample_cov[[j, j]] <= threshold)
        .collect();
    if !bad.is_empty() {
        return Err(Error::DegenerateColumns { columns: bad });
    }
    let p = ms.mean.len();
    let w: Vec<f64> = (0..p).map(|j| 1.0 / ms.sample_cov[[j, j]].sqrt()).collect();
    let mut out = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            out[[i, j]] = ms.sample_cov[[i, j]] * w[i] * w[j];
        }
    }
    Ok(out)
}

/// Hardy-Weinberg normalization weights 1/√(2p̂ⱼ(1−p̂ⱼ)) for genotype means
/// over {0,1,2}, with p̂ⱼ = Ȳ(j)/2.
///
/// Bit-for-bit identical to the binomial(2) homogenization weights
/// 1/√V(Ȳ(j)). Monomorphic columns (p̂ ∈ {0,1}) would get infinite weight
/// and must be filtered beforehand; they are reported as degenerate.
pub fn hwe_weights(genotype_means: &ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let mut bad = Vec::new();
    let mut out = Array1::<f64>::zeros(genotype_means.len());
    for (j, &m) in genotype_means.iter().enumerate() {
        if !(0.0..=2.0).contains(&m) {
            return Err(Error::MeanOutOfDomain {
                family: ExponentialFamily::Binomial(2).to_string(),
                value: m,
            });
        }
        let p_hat = m / 2.0;
        let denom = 2.0 * p_hat * (1.0 - p_hat);
        if denom <= 0.0 {
            bad.push(j);
        } else {
            out[j] = 1.0 / denom.sqrt();
        }
    }
    if !bad.is_empty() {
        return Err(Error::DegenerateColumns { columns: bad });
    }
    Ok(out)
}

/// Shrink the top `rank` eigenvalues of S_h against the Marchenko-Pastur
/// bulk: each eigenvalue λ with λ+1 above the bulk edge (1+√γ)² maps to
/// the inverted spike ℓ̂, everything at or inside the bulk maps to 0.
///
/// Returns the number of retained (nonzero) spikes and the full
/// length-`rank` shrunken vector.
pub fn shrink_spikes(eigenvalues: &[f64], gamma: f64, rank: usize) -> (usize, Vec<f64>) {
    assert!(
        rank <= eigenvalues.len(),
        "rank {rank} exceeds the {} available eigenvalues",
        eigenvalues.len()
    );
    debug_assert!(
        eigenvalues.windows(2).all(|w| w[0] >= w[1]),
        "eigenvalues must be sorted descending"
    );
    let mut ells = Vec::with_capacity(rank);
    let mut kept = 0;
    for &lambda in &eigenvalues[..rank] {
        match rmt::spike_inverse(lambda + 1.0, gamma) {
            Ok(ell) => {
                ells.push(ell);
                kept += 1;
            }
            Err(_) => ells.push(0.0),
        }
    }
    (kept, ells)
}

/// Heterogenized covariance S_he = D_n^{1/2} (Σ ℓᵢ wᵢwᵢᵀ) D_n^{1/2} as a
/// dense symmetric PSD matrix. `vectors` holds the orthonormal wᵢ as
/// columns; rank is preserved.
pub fn heterogenize(
    ms: &MomentSummary,
    ells: &[f64],
    vectors: &ArrayView2<'_, f64>,
) -> Array2<f64> {
    let p = ms.noise_diag.len();
    assert_eq!(vectors.nrows(), p, "eigenvector length must match features");
    assert_eq!(vectors.ncols(), ells.len(), "one spike per eigenvector");
    let m = het_factor(&ms.noise_diag, ells, vectors);
    linalg::matmul(&m.view(), &m.t())
}

/// M = D^{1/2} W diag(√ℓ), so that S_he = M Mᵀ.
fn het_factor(noise_diag: &Array1<f64>, ells: &[f64], vectors: &ArrayView2<'_, f64>) -> Array2<f64> {
    let (p, k) = vectors.dim();
    let mut m = Array2::<f64>::zeros((p, k));
    let sqrt_d: Vec<f64> = noise_diag.iter().map(|&d| d.sqrt()).collect();
    let sqrt_l: Vec<f64> = ells.iter().map(|&l| l.max(0.0).sqrt()).collect();
    for i in 0..p {
        for j in 0..k {
            m[[i, j]] = sqrt_d[i] * vectors[[i, j]] * sqrt_l[j];
        }
    }
    m
}

/// If every noise variance is the same f64 value, return it.
fn uniform_noise(noise_diag: &Array1<f64>) -> Option<f64> {
    let first = *noise_diag.first()?;
    noise_diag
        .iter()
        .all(|&d| d.to_bits() == first.to_bits())
        .then_some(first)
}

/// tr(D_n)/p, evaluated as the shared value when the diagonal is constant
/// so that the homoskedastic case stays exact.
fn mean_noise(noise_diag: &Array1<f64>) -> f64 {
    match uniform_noise(noise_diag) {
        Some(d) => d,
        None => noise_diag.sum() / noise_diag.len() as f64,
    }
}

/// Eigendecomposition of S_he from its rank-k factors without forming the
/// p×p matrix.
///
/// With M = D^{1/2} W diag(√ℓ), the spectrum of S_he = M Mᵀ comes from the
/// k×k Gram matrix G = Mᵀ M: eigenpairs (σᵢ, qᵢ) of G give eigenvalues σᵢ
/// and eigenvectors M qᵢ/√σᵢ, and the reconstruction Σ σᵢ ûᵢûᵢᵀ = M Mᵀ is
/// exact. When the noise diagonal is a constant d (e.g. Gaussian with known
/// variance), S_he = d · Σ ℓᵢwᵢwᵢᵀ already is an eigendecomposition, and
/// that path is taken verbatim so λ̂ᵢ = d·ℓᵢ holds bit-exactly.
fn het_eigen(
    noise_diag: &Array1<f64>,
    ells: &[f64],
    vectors: &ArrayView2<'_, f64>,
) -> (Vec<f64>, Array2<f64>) {
    let k = ells.len();
    let p = noise_diag.len();
    if k == 0 {
        return (Vec::new(), Array2::zeros((p, 0)));
    }
    if let Some(d) = uniform_noise(noise_diag) {
        let vals: Vec<f64> = ells.iter().map(|&l| d * l).collect();
        return (vals, vectors.to_owned());
    }
    let m = het_factor(noise_diag, ells, vectors);
    let gram = linalg::matmul(&m.t(), &m.view());
    let eig = linalg::sym_eigen(&gram.view());
    let mut u = linalg::matmul(&m.view(), &eig.vectors.view());
    let mut vals = Vec::with_capacity(k);
    for (j, &sigma) in eig.values.iter().enumerate() {
        let sigma = sigma.max(0.0);
        vals.push(sigma);
        let scale = if sigma > 0.0 { 1.0 / sigma.sqrt() } else { 0.0 };
        let mut col = u.column_mut(j);
        col.mapv_inplace(|x| x * scale);
        linalg::fix_sign_view(col);
    }
    (vals, u)
}

/// The fitted pipeline output: the retained spikes of the scaled covariance
/// S_s = Σ α̂ᵢ λ̂ᵢ ûᵢûᵢᵀ, plus everything needed to denoise and serialize.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    /// Requested rank r.
    pub rank: usize,
    /// Homogenized-domain spike estimates ℓ̂ᵢ (kept spikes only, descending).
    pub spikes: Vec<f64>,
    /// Eigenvalues λ̂ᵢ of the heterogenized matrix S_he.
    pub het_eigvals: Vec<f64>,
    /// Eigenvectors ûᵢ of S_he as columns, orthonormal, sign-normalized.
    /// These are also the eigenvectors of S_s (scaling rescales eigenvalues
    /// only), so the set of ePCA eigenvectors is exactly this matrix.
    pub het_eigvecs: Array2<f64>,
    /// Scaling coefficients α̂ᵢ in (0, 1].
    pub alphas: Vec<f64>,
    /// Sample mean over the retained features.
    pub mean: Array1<f64>,
    /// Noise diagonal over the retained features.
    pub noise_diag: Array1<f64>,
    /// Aspect ratio p/n after dropping.
    pub gamma: f64,
    /// Sample count the fit used.
    pub n_samples: usize,
    /// Original indices of features dropped as degenerate.
    pub dropped_columns: Vec<usize>,
}

impl CovarianceModel {
    /// Number of spikes retained above the phase transition.
    pub fn kept(&self) -> usize {
        self.spikes.len()
    }

    /// Number of features the model operates on (after dropping).
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Eigenvalues α̂ᵢλ̂ᵢ of the scaled covariance S_s.
    pub fn scaled_eigvals(&self) -> Vec<f64> {
        self.alphas
            .iter()
            .zip(self.het_eigvals.iter())
            .map(|(&a, &l)| a * l)
            .collect()
    }

    /// Dense S_s = Σ α̂ᵢ λ̂ᵢ ûᵢûᵢᵀ.
    pub fn scaled_covariance(&self) -> Array2<f64> {
        self.weighted_outer(&self.scaled_eigvals())
    }

    /// Dense S_he = Σ λ̂ᵢ ûᵢûᵢᵀ.
    pub fn het_covariance(&self) -> Array2<f64> {
        self.weighted_outer(&self.het_eigvals)
    }

    fn weighted_outer(&self, weights: &[f64]) -> Array2<f64> {
        let p = self.n_features();
        if weights.is_empty() {
            return Array2::zeros((p, p));
        }
        let mut scaled = self.het_eigvecs.clone();
        for (j, &w) in weights.iter().enumerate() {
            let root = w.max(0.0).sqrt();
            scaled.column_mut(j).mapv_inplace(|x| x * root);
        }
        linalg::matmul(&scaled.view(), &scaled.t())
    }

    /// Estimated SNR improvement Î = τᵢ/α̂ᵢ for spike `i`. Spikes that were
    /// requested but fell below the phase transition report 1 (homogenization
    /// neither helps nor hurts an undetectable spike).
    pub fn estimated_improvement(&self, i: usize) -> f64 {
        assert!(i < self.rank, "spike index {i} out of range {}", self.rank);
        if i >= self.kept() {
            return 1.0;
        }
        let tau = mean_noise(&self.noise_diag) * self.spikes[i] / self.het_eigvals[i];
        tau / self.alphas[i]
    }
}

/// The final scaling step: per-spike coefficients α̂ᵢ correcting the
/// eigenvalue bias of heterogenization.
///
/// For each kept spike, τᵢ = (tr D_n/p)·ℓ̂ᵢ/λ̂ᵢ and
/// α̂ᵢ = (1 − ŝ²ᵢτᵢ)/ĉ²ᵢ with ĉ²ᵢ = cosine_sq(ℓ̂ᵢ; γ), ŝ²ᵢ = 1 − ĉ²ᵢ.
/// α̂ᵢ = 1 when ĉ²ᵢ = 0, and values are clipped into [1e-6, 1], the range
/// the population quantity α = 1/(1 + s²(I−1)) lives in.
pub fn scale(
    ms: &MomentSummary,
    het_eigvals: &[f64],
    het_eigvecs: &Array2<f64>,
    spikes: &[f64],
    rank: usize,
    dropped_columns: Vec<usize>,
) -> Result<CovarianceModel> {
    assert_eq!(het_eigvals.len(), spikes.len());
    assert_eq!(het_eigvecs.ncols(), spikes.len());
    let trace_over_p = mean_noise(&ms.noise_diag);
    let mut alphas = Vec::with_capacity(spikes.len());
    for (i, (&ell, &lam)) in spikes.iter().zip(het_eigvals.iter()).enumerate() {
        if lam <= 0.0 {
            return Err(Error::NonPositiveSpike { index: i, value: lam });
        }
        let c2 = rmt::cosine_sq(ell, ms.gamma);
        let alpha = if c2 > 0.0 {
            let s2 = 1.0 - c2;
            let tau = trace_over_p * ell / lam;
            // written as 1 + s²(1−τ)/c², identical algebra to (1−s²τ)/c²
            // but exactly 1 whenever τ = 1 (the homoskedastic case)
            1.0 + s2 * (1.0 - tau) / c2
        } else {
            1.0
        };
        alphas.push(alpha.clamp(1e-6, 1.0));
    }
    Ok(CovarianceModel {
        rank,
        spikes: spikes.to_vec(),
        het_eigvals: het_eigvals.to_vec(),
        het_eigvecs: het_eigvecs.clone(),
        alphas,
        mean: ms.mean.clone(),
        noise_diag: ms.noise_diag.clone(),
        gamma: ms.gamma,
        n_samples: ms.n_samples,
        dropped_columns,
    })
}

/// Run the whole pipeline with default options.
pub fn fit_epca(batch: &DataBatch, rank: usize) -> Result<CovarianceModel> {
    fit_epca_with(batch, rank, &FitOptions::default())
}

/// Run the whole pipeline with the given options.
pub fn fit_epca_with(
    batch: &DataBatch,
    rank: usize,
    opts: &FitOptions,
) -> Result<CovarianceModel> {
    let ms = sample_moments(batch, opts)?;
    fit_from_moments(&ms, rank, opts)
}

/// The pipeline from precomputed moments: degenerate-column handling,
/// homogenization, top-`rank` eigendecomposition, shrinkage,
/// heterogenization, and scaling.
pub fn fit_from_moments(
    ms: &MomentSummary,
    rank: usize,
    opts: &FitOptions,
) -> Result<CovarianceModel> {
    let bad = degenerate_columns(ms, opts.degenerate_threshold);
    let restricted;
    let (ms, dropped) = if bad.is_empty() {
        (ms, Vec::new())
    } else if opts.drop_degenerate {
        let p_full = ms.mean.len();
        let keep: Vec<usize> = (0..p_full).filter(|j| !bad.contains(j)).collect();
        if keep.is_empty() {
            return Err(Error::DegenerateColumns { columns: bad });
        }
        restricted = restrict(ms, &keep);
        (&restricted, bad)
    } else {
        return Err(Error::DegenerateColumns { columns: bad });
    };

    let p = ms.mean.len();
    let max_rank = p.min(ms.n_samples);
    if rank > max_rank {
        return Err(Error::InvalidConfig(format!(
            "rank {rank} exceeds min(n, p) = {max_rank}"
        )));
    }
    if rank == 0 {
        return scale(ms, &[], &Array2::zeros((p, 0)), &[], 0, dropped);
    }

    let s_h = homogenize(ms)?;
    let eig = linalg::sym_eigen_top(&s_h.view(), rank);
    drop(s_h);
    let (kept, ells) = shrink_spikes(
        eig.values.as_slice().expect("contiguous eigenvalues"),
        ms.gamma,
        rank,
    );
    let ells_kept = &ells[..kept];
    let w_kept = eig.vectors.slice(ndarray::s![.., ..kept]);
    let (het_vals, het_vecs) = het_eigen(&ms.noise_diag, ells_kept, &w_kept);
    scale(ms, &het_vals, &het_vecs, ells_kept, rank, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::ExponentialFamily::*;
    use ndarray::array;

    fn poisson_batch(values: Array2<f64>) -> DataBatch {
        DataBatch::new(values, Poisson).unwrap()
    }

    #[test]
    fn batch_validation() {
        assert!(DataBatch::new(array![[1.0, 2.0]], Poisson).is_err()); // n < 2
        assert!(DataBatch::new(array![[1.0], [-0.5]], Poisson).is_err());
        assert!(DataBatch::new(array![[1.0], [3.0]], Binomial(2)).is_err());
        assert!(DataBatch::new(array![[1.0], [-3.0]], GaussianKnownVar(1.0)).is_ok());
    }

    #[test]
    fn moments_constant_batch_gives_zero_cov() {
        let batch = poisson_batch(array![[2.0, 5.0], [2.0, 5.0], [2.0, 5.0]]);
        let ms = sample_moments(&batch, &FitOptions::default()).unwrap();
        assert_eq!(ms.sample_cov, Array2::<f64>::zeros((2, 2)));
        assert_eq!(ms.mean, array![2.0, 5.0]);
    }

    #[test]
    fn moments_two_sample_poisson() {
        // values {0, 2}: mean 1, covariance divisor n: ((0−1)²+(2−1)²)/2 = 1
        let batch = poisson_batch(array![[0.0], [2.0]]);
        let ms = sample_moments(&batch, &FitOptions::default()).unwrap();
        assert_eq!(ms.mean[0], 1.0);
        assert_eq!(ms.sample_cov[[0, 0]], 1.0);
        assert_eq!(ms.noise_diag[0], 1.0);
        assert_eq!(ms.gamma, 0.5);
    }

    #[test]
    fn moments_clamp_flag_is_inert_on_valid_data() {
        let batch = DataBatch::new(array![[0.0, 2.0], [2.0, 1.0]], Binomial(2)).unwrap();
        let plain = sample_moments(&batch, &FitOptions::default()).unwrap();
        let clamped = sample_moments(
            &batch,
            &FitOptions {
                clamp_means: true,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert_eq!(plain.noise_diag, clamped.noise_diag);
    }

    #[test]
    fn debias_gaussian_subtracts_sigma() {
        let batch = DataBatch::new(
            array![[1.0, 0.0], [3.0, 1.0], [2.0, -1.0], [0.0, 0.0]],
            GaussianKnownVar(2.0),
        )
        .unwrap();
        let ms = sample_moments(&batch, &FitOptions::default()).unwrap();
        let s_d = debias(&ms);
        for j in 0..2 {
            assert!((s_d[[j, j]] - (ms.sample_cov[[j, j]] - 2.0)).abs() < 1e-15);
        }
        assert_eq!(s_d[[0, 1]], ms.sample_cov[[0, 1]]);
    }

    #[test]
    fn homogenize_identity_noise_is_s_minus_i() {
        let batch = DataBatch::new(
            array![[1.0, 0.0], [3.0, 1.0], [2.0, -1.0], [0.0, 0.0]],
            GaussianKnownVar(1.0),
        )
        .unwrap();
        let ms = sample_moments(&batch, &FitOptions::default()).unwrap();
        let s_h = homogenize(&ms).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = ms.sample_cov[[i, j]] - if i == j { 1.0 } else { 0.0 };
                assert_eq!(s_h[[i, j]], expect);
            }
        }
    }

    #[test]
    fn homogenize_round_trips_to_debias() {
        // D^{1/2} S_h D^{1/2} = S_d up to roundoff
        let batch = poisson_batch(array![
            [3.0, 1.0, 4.0],
            [1.0, 5.0, 9.0],
            [2.0, 6.0, 5.0],
            [3.0, 5.0, 8.0],
            [9.0, 7.0, 9.0]
        ]);
        let ms = sample_moments(&batch, &FitOptions::default()).unwrap();
        let s_h = homogenize(&ms).unwrap();
        let s_d = debias(&ms);
        for i in 0..3 {
            for j in 0..3 {
                let w = (ms.noise_diag[i] * ms.noise_diag[j]).sqrt();
                let back = s_h[[i, j]] * w;
                assert!(
                    (back - s_d[[i, j]]).abs() <= 1e-12 * (1.0 + s_d[[i, j]].abs()),
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn homogenize_rejects_degenerate_columns() {
        let batch = poisson_batch(array![[0.0, 1.0], [0.0, 3.0]]);
        let ms = sample_moments(&batch, &FitOptions::default()).unwrap();
        match homogenize(&ms) {
            Err(Error::DegenerateColumns { columns }) => assert_eq!(columns, vec![0]),
            other => panic!("expected degenerate-column error, got {other:?}"),
        }
    }

    #[test]
    fn shrink_spike_examples() {
        // λ = 2, γ = 0.5: λ+1 = 3 inverts to ℓ̂ = 1
        let (kept, ells) = shrink_spikes(&[2.0, 0.1], 0.5, 2);
        assert_eq!(kept, 1);
        assert!((ells[0] - 1.0).abs() < 1e-14);
        assert_eq!(ells[1], 0.0);

        // boundary exactly at the bulk edge is not above it
        let edge_minus_one = (1.0 + 0.5f64.sqrt()).powi(2) - 1.0;
        let (kept, ells) = shrink_spikes(&[edge_minus_one], 0.5, 1);
        assert_eq!(kept, 0);
        assert_eq!(ells, vec![0.0]);
    }

    #[test]
    fn heterogenize_hand_example() {
        // D = diag(1,4), w = e1, ℓ = 2 → S_he = [[2,0],[0,0]]
        let ms = MomentSummary {
            mean: array![0.0, 0.0],
            sample_cov: Array2::zeros((2, 2)),
            noise_diag: array![1.0, 4.0],
            gamma: 0.5,
            n_samples: 4,
        };
        let w = array![[1.0], [0.0]];
        let s_he = heterogenize(&ms, &[2.0], &w.view());
        assert!((s_he[[0, 0]] - 2.0).abs() < 1e-15);
        assert_eq!(s_he[[0, 1]], 0.0);
        assert_eq!(s_he[[1, 1]], 0.0);
    }

    #[test]
    fn heterogenize_rank_zero_is_zero_matrix() {
        let ms = MomentSummary {
            mean: array![0.0, 0.0],
            sample_cov: Array2::zeros((2, 2)),
            noise_diag: array![1.0, 4.0],
            gamma: 0.5,
            n_samples: 4,
        };
        let s_he = heterogenize(&ms, &[], &Array2::zeros((2, 0)).view());
        assert_eq!(s_he, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn het_eigen_matches_dense_path() {
        let ms = MomentSummary {
            mean: array![0.0, 0.0, 0.0],
            sample_cov: Array2::zeros((3, 3)),
            noise_diag: array![1.0, 4.0, 0.25],
            gamma: 0.5,
            n_samples: 6,
        };
        // two orthonormal vectors
        let r = 0.5f64.sqrt();
        let w = array![[r, r], [r, -r], [0.0, 0.0]];
        let ells = [2.0, 1.0];
        let dense = heterogenize(&ms, &ells, &w.view());
        let eig_dense = linalg::sym_eigen_top(&dense.view(), 2);
        let (vals, vecs) = het_eigen(&ms.noise_diag, &ells, &w.view());
        for i in 0..2 {
            assert!((vals[i] - eig_dense.values[i]).abs() < 1e-12);
            for j in 0..3 {
                assert!((vecs[[j, i]] - eig_dense.vectors[[j, i]]).abs() < 1e-10);
            }
        }
        // reconstruction is exact by construction
        let rec = {
            let mut scaled = vecs.clone();
            for (j, &v) in vals.iter().enumerate() {
                scaled.column_mut(j).mapv_inplace(|x| x * v.sqrt());
            }
            linalg::matmul(&scaled.view(), &scaled.t())
        };
        for (a, b) in rec.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_homoskedastic_alpha_is_exactly_one() {
        let ms = MomentSummary {
            mean: array![0.0, 0.0],
            sample_cov: Array2::zeros((2, 2)),
            noise_diag: array![3.0, 3.0],
            gamma: 0.5,
            n_samples: 4,
        };
        let ell = 1.7;
        let lam = 3.0 * ell; // exactly what the scalar het_eigen path yields
        let vecs = array![[1.0, 0.0], [0.0, 1.0]];
        let model = scale(&ms, &[lam], &vecs.slice(ndarray::s![.., ..1]).to_owned(), &[ell], 1, vec![]).unwrap();
        assert_eq!(model.alphas[0], 1.0);
        assert_eq!(model.estimated_improvement(0), 1.0);
    }

    #[test]
    fn scale_below_transition_defines_alpha_one() {
        let ms = MomentSummary {
            mean: array![0.0, 0.0],
            sample_cov: Array2::zeros((2, 2)),
            noise_diag: array![1.0, 2.0],
            gamma: 0.5,
            n_samples: 4,
        };
        // ℓ below √γ has ĉ² = 0
        let vecs = array![[1.0], [0.0]];
        let model = scale(&ms, &[0.4], &vecs, &[0.3], 1, vec![]).unwrap();
        assert_eq!(model.alphas[0], 1.0);
    }

    #[test]
    fn scale_rejects_nonpositive_eigenvalue() {
        let ms = MomentSummary {
            mean: array![0.0],
            sample_cov: Array2::zeros((1, 1)),
            noise_diag: array![1.0],
            gamma: 0.5,
            n_samples: 2,
        };
        let vecs = array![[1.0]];
        assert!(matches!(
            scale(&ms, &[0.0], &vecs, &[1.0], 1, vec![]),
            Err(Error::NonPositiveSpike { .. })
        ));
    }

    #[test]
    fn standardize_examples() {
        let ms = MomentSummary {
            mean: array![0.0, 0.0],
            sample_cov: array![[4.0, 2.0], [2.0, 1.0]],
            noise_diag: array![1.0, 1.0],
            gamma: 0.5,
            n_samples: 4,
        };
        let c = standardize(&ms).unwrap();
        for v in c.iter() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let ms_diag = MomentSummary {
            sample_cov: array![[4.0, 0.0], [0.0, 9.0]],
            ..ms
        };
        let c = standardize(&ms_diag).unwrap();
        assert_eq!(c, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn hwe_weights_examples() {
        let w = hwe_weights(&array![1.0].view()).unwrap();
        assert!((w[0] - 1.0 / 0.5f64.sqrt()).abs() < 1e-12);

        // bit-for-bit identity against the binomial(2) homogenization weight
        for i in 1..100 {
            let mean = 2.0 * f64::from(i) / 100.0 - 0.01;
            let hwe = hwe_weights(&array![mean].view()).unwrap()[0];
            let v = Binomial(2).variance_map(mean).unwrap();
            let hom = 1.0 / v.sqrt();
            assert_eq!(hwe.to_bits(), hom.to_bits(), "mean = {mean}");
        }

        assert!(matches!(
            hwe_weights(&array![0.0].view()),
            Err(Error::DegenerateColumns { .. })
        ));
        assert!(hwe_weights(&array![2.5].view()).is_err());
    }

    #[test]
    fn fit_rank_zero_gives_empty_model() {
        let batch = poisson_batch(array![[1.0, 2.0], [3.0, 1.0], [2.0, 2.0]]);
        let model = fit_epca(&batch, 0).unwrap();
        assert_eq!(model.kept(), 0);
        assert_eq!(model.rank, 0);
        assert_eq!(model.scaled_covariance(), Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn fit_rejects_excessive_rank() {
        let batch = poisson_batch(array![[1.0, 2.0], [3.0, 1.0], [2.0, 2.0]]);
        assert!(matches!(
            fit_epca(&batch, 3),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn fit_drops_degenerate_columns_and_records_them() {
        // middle column is all zeros: V(0) = 0 for poisson
        let batch = poisson_batch(array![
            [3.0, 0.0, 1.0],
            [1.0, 0.0, 2.0],
            [4.0, 0.0, 1.0],
            [2.0, 0.0, 3.0]
        ]);
        let model = fit_epca(&batch, 1).unwrap();
        assert_eq!(model.dropped_columns, vec![1]);
        assert_eq!(model.n_features(), 2);
        assert_eq!(model.gamma, 2.0 / 4.0);

        let strict = FitOptions {
            drop_degenerate: false,
            ..FitOptions::default()
        };
        assert!(matches!(
            fit_epca_with(&batch, 1, &strict),
            Err(Error::DegenerateColumns { .. })
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        let batch = poisson_batch(array![
            [3.0, 1.0, 4.0],
            [1.0, 5.0, 9.0],
            [2.0, 6.0, 5.0],
            [3.0, 5.0, 8.0],
            [9.0, 7.0, 9.0],
            [3.0, 2.0, 3.0]
        ]);
        let a = fit_epca(&batch, 2).unwrap();
        let b = fit_epca(&batch, 2).unwrap();
        assert_eq!(a.spikes, b.spikes);
        assert_eq!(a.het_eigvals, b.het_eigvals);
        assert_eq!(a.alphas, b.alphas);
        assert_eq!(a.het_eigvecs, b.het_eigvecs);
    }
}
