//! EBLP denoising (the best linear predictor / Wiener filter built from a
//! fitted covariance model) and the PCA-projection baseline.
//!
//! The predictor of the clean signal X from an observation Y is
//! X̂ = Σ_x (D + Σ_x)⁻¹ Y + D (D + Σ_x)⁻¹ μ, with Σ_x estimated by the
//! scaled covariance S_s, D by diag[V(Ȳ)], and μ by Ȳ. Because S_s is low
//! rank and D may have zero entries (features that never saw a count),
//! D + S_s can be singular; a trace-preserving ridge
//! Σ̂_ε = (1−ε)Σ̂ + ε·(tr Σ̂/p)·I keeps it invertible while leaving the
//! trace unchanged.
//!
//! The factorization of Σ̂_ε is computed once per denoiser; applying it to a
//! batch is a pair of small matrix products per row block, independent of
//! row order.

use ndarray::{Array1, Array2, Axis};

use crate::covariance::CovarianceModel;
use crate::linalg;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiseMethod {
    /// Best linear predictor with ridge-regularized covariance.
    Eblp,
    /// Orthogonal projection onto the model eigenvectors around the mean.
    Projection,
}

impl std::str::FromStr for DenoiseMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eblp" => Ok(DenoiseMethod::Eblp),
            "projection" => Ok(DenoiseMethod::Projection),
            _ => Err(Error::InvalidConfig(format!(
                "unknown denoising method {s:?}; expected eblp or projection"
            ))),
        }
    }
}

/// Default ridge weight; a working range of roughly 0.05-0.2 behaves
/// similarly.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// A denoiser built from model parameters, with the EBLP solve factored
/// once and reused for every row.
#[derive(Debug)]
pub struct Denoiser {
    method: DenoiseMethod,
    mean: Array1<f64>,
    eigvecs: Array2<f64>,       // U, p×k
    scaled_eigvals: Vec<f64>,   // eigenvalues of the signal covariance
    trace_sigma: f64,           // tr(D + Σ_x), for the ridge invariant
    trace_ridge: f64,           // tr Σ̂_ε as constructed
    // EBLP pieces: X̂ = Y·G·Λ·Uᵀ + 1·cᵀ with G = Σ̂_ε⁻¹U, c = D Σ̂_ε⁻¹ Ȳ
    solved_eigvecs: Option<Array2<f64>>,
    shrink_to_mean: Option<Array1<f64>>,
}

impl Denoiser {
    /// Build from a fitted model: signal covariance S_s, noise diag D_n,
    /// mean Ȳ.
    pub fn from_model(
        model: &CovarianceModel,
        epsilon: f64,
        method: DenoiseMethod,
    ) -> Result<Self> {
        Denoiser::from_parts(
            model.mean.clone(),
            model.noise_diag.clone(),
            model.het_eigvecs.clone(),
            model.scaled_eigvals(),
            epsilon,
            method,
        )
    }

    /// Build from explicit parameters: the signal covariance is
    /// `eigvecs · diag(eigvals) · eigvecsᵀ`, the noise covariance is
    /// `diag(noise_diag)`, and `mean` is the signal mean.
    pub fn from_parts(
        mean: Array1<f64>,
        noise_diag: Array1<f64>,
        eigvecs: Array2<f64>,
        eigvals: Vec<f64>,
        epsilon: f64,
        method: DenoiseMethod,
    ) -> Result<Self> {
        let p = mean.len();
        if noise_diag.len() != p || eigvecs.nrows() != p || eigvecs.ncols() != eigvals.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("mean/noise of length {p}, eigvecs {p}xk"),
                actual: format!(
                    "noise {}, eigvecs {}x{}, eigvals {}",
                    noise_diag.len(),
                    eigvecs.nrows(),
                    eigvecs.ncols(),
                    eigvals.len()
                ),
            });
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::InvalidConfig(format!(
                "ridge weight must lie in [0, 1), got {epsilon}"
            )));
        }

        let trace_sigma = noise_diag.sum() + eigvals.iter().sum::<f64>();
        let (solved_eigvecs, shrink_to_mean, trace_ridge) = match method {
            DenoiseMethod::Projection => (None, None, trace_sigma),
            DenoiseMethod::Eblp => {
                // Σ̂ = D + U Λ Uᵀ, then the trace-preserving ridge.
                let k = eigvals.len();
                let mut sigma = Array2::<f64>::zeros((p, p));
                if k > 0 {
                    let mut scaled = eigvecs.clone();
                    for (j, &l) in eigvals.iter().enumerate() {
                        let root = l.max(0.0).sqrt();
                        scaled.column_mut(j).mapv_inplace(|x| x * root);
                    }
                    sigma = linalg::matmul(&scaled.view(), &scaled.t());
                }
                for j in 0..p {
                    sigma[[j, j]] += noise_diag[j];
                }
                let m_tilde = trace_sigma / p as f64;
                if epsilon > 0.0 {
                    sigma.mapv_inplace(|x| (1.0 - epsilon) * x);
                    for j in 0..p {
                        sigma[[j, j]] += epsilon * m_tilde;
                    }
                }
                let trace_ridge = (0..p).map(|j| sigma[[j, j]]).sum();
                let factor = linalg::cholesky(&sigma.view())?;
                drop(sigma);
                let g = factor.solve(&eigvecs.view());
                let solved_mean = factor.solve_vec(&mean.view());
                let shrink = &noise_diag * &solved_mean;
                (Some(g), Some(shrink), trace_ridge)
            }
        };

        Ok(Denoiser {
            method,
            mean,
            eigvecs,
            scaled_eigvals: eigvals,
            trace_sigma,
            trace_ridge,
            solved_eigvecs,
            shrink_to_mean,
        })
    }

    pub fn method(&self) -> DenoiseMethod {
        self.method
    }

    /// tr Σ̂ and tr Σ̂_ε; the ridge preserves the trace exactly up to
    /// floating-point reassociation.
    pub fn traces(&self) -> (f64, f64) {
        (self.trace_sigma, self.trace_ridge)
    }

    /// Denoise a batch of rows. Columns must match the model's feature count
    /// (after any degenerate columns were dropped at fit time).
    pub fn denoise(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        let p = self.mean.len();
        if y.ncols() != p {
            return Err(Error::ShapeMismatch {
                expected: format!("{p} columns"),
                actual: format!("{}", y.ncols()),
            });
        }
        match self.method {
            DenoiseMethod::Eblp => Ok(self.apply_eblp(y)),
            DenoiseMethod::Projection => Ok(self.apply_projection(y)),
        }
    }

    fn apply_eblp(&self, y: &Array2<f64>) -> Array2<f64> {
        let g = self.solved_eigvecs.as_ref().expect("eblp pieces");
        let c = self.shrink_to_mean.as_ref().expect("eblp pieces");
        let n = y.nrows();
        let k = self.scaled_eigvals.len();
        let mut out = if k > 0 {
            // X̂ = Y G Λ Uᵀ + 1 cᵀ
            let mut t = linalg::matmul(&y.view(), &g.view()); // n×k
            for (j, &l) in self.scaled_eigvals.iter().enumerate() {
                t.column_mut(j).mapv_inplace(|x| x * l);
            }
            linalg::matmul(&t.view(), &self.eigvecs.t())
        } else {
            Array2::zeros((n, self.mean.len()))
        };
        out += &c.view().insert_axis(Axis(0));
        out
    }

    fn apply_projection(&self, y: &Array2<f64>) -> Array2<f64> {
        let centered = y - &self.mean.view().insert_axis(Axis(0));
        let k = self.eigvecs.ncols();
        let mut out = if k > 0 {
            let t = linalg::matmul(&centered.view(), &self.eigvecs.view()); // n×k
            linalg::matmul(&t.view(), &self.eigvecs.t())
        } else {
            Array2::zeros(centered.raw_dim())
        };
        out += &self.mean.view().insert_axis(Axis(0));
        out
    }
}

/// Mean squared entrywise error (pn)⁻¹ Σᵢ ‖X̂ᵢ − Xᵢ‖².
pub fn denoise_mse(xhat: &Array2<f64>, x: &Array2<f64>) -> Result<f64> {
    if xhat.dim() != x.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", x.dim()),
            actual: format!("{:?}", xhat.dim()),
        });
    }
    let mut sum = 0.0;
    for (a, b) in xhat.iter().zip(x.iter()) {
        let d = a - b;
        sum += d * d;
    }
    Ok(sum / (xhat.nrows() as f64 * xhat.ncols() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn simple_parts() -> (Array1<f64>, Array1<f64>, Array2<f64>, Vec<f64>) {
        let mean = array![1.0, 2.0, 0.5];
        let noise = array![0.5, 1.0, 2.0];
        let r = 0.5f64.sqrt();
        let eigvecs = array![[r, 0.0], [r, 0.0], [0.0, 1.0]];
        let eigvals = vec![2.0, 1.0];
        (mean, noise, eigvecs, eigvals)
    }

    #[test]
    fn zero_signal_shrinks_to_mean() {
        // S_s = 0, ε = 0, D invertible: X̂ = Ȳ for every row
        let mean = array![1.0, 2.0];
        let noise = array![0.5, 3.0];
        let d = Denoiser::from_parts(
            mean.clone(),
            noise,
            Array2::zeros((2, 0)),
            vec![],
            0.0,
            DenoiseMethod::Eblp,
        )
        .unwrap();
        let y = array![[4.0, -1.0], [0.0, 9.0]];
        let xhat = d.denoise(&y).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((xhat[[i, j]] - mean[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_limit_is_identity() {
        // D = 0, S_s full rank, ε = 0: X̂ = Y
        let mean = array![1.0, -2.0];
        let noise = array![0.0, 0.0];
        let eigvecs = array![[1.0, 0.0], [0.0, 1.0]];
        let d = Denoiser::from_parts(
            mean,
            noise,
            eigvecs,
            vec![3.0, 0.5],
            0.0,
            DenoiseMethod::Eblp,
        )
        .unwrap();
        let y = array![[4.0, -1.0], [0.0, 9.0]];
        let xhat = d.denoise(&y).unwrap();
        for (a, b) in xhat.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_covariance_needs_ridge() {
        // D = 0 on one coordinate and S_s missing it: singular at ε = 0
        let mean = array![1.0, 1.0];
        let noise = array![1.0, 0.0];
        let eigvecs = array![[1.0], [0.0]];
        let err = Denoiser::from_parts(
            mean.clone(),
            noise.clone(),
            eigvecs.clone(),
            vec![1.0],
            0.0,
            DenoiseMethod::Eblp,
        )
        .unwrap_err();
        assert!(err.to_string().contains("epsilon"), "{err}");
        // and the ridge fixes it
        assert!(Denoiser::from_parts(mean, noise, eigvecs, vec![1.0], 0.1, DenoiseMethod::Eblp)
            .is_ok());
    }

    #[test]
    fn ridge_preserves_trace() {
        let (mean, noise, eigvecs, eigvals) = simple_parts();
        for &eps in &[0.0, 0.05, 0.1, 0.2] {
            let d =
                Denoiser::from_parts(mean.clone(), noise.clone(), eigvecs.clone(), eigvals.clone(), eps, DenoiseMethod::Eblp)
                    .unwrap();
            let (t, t_eps) = d.traces();
            assert!(
                (t - t_eps).abs() <= 1e-10 * t.abs(),
                "eps={eps}: tr changed from {t} to {t_eps}"
            );
        }
    }

    #[test]
    fn eblp_is_affine() {
        let (mean, noise, eigvecs, eigvals) = simple_parts();
        let d = Denoiser::from_parts(mean, noise, eigvecs, eigvals, 0.1, DenoiseMethod::Eblp)
            .unwrap();
        let y1 = array![[4.0, -1.0, 2.0]];
        let y2 = array![[0.0, 9.0, -3.0]];
        let a = 0.3;
        let mix = &y1 * a + &y2 * (1.0 - a);
        let d1 = d.denoise(&y1).unwrap();
        let d2 = d.denoise(&y2).unwrap();
        let dm = d.denoise(&mix).unwrap();
        for j in 0..3 {
            let expect = a * d1[[0, j]] + (1.0 - a) * d2[[0, j]];
            assert!((dm[[0, j]] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_is_idempotent_and_fixes_span() {
        let (mean, noise, eigvecs, eigvals) = simple_parts();
        let d = Denoiser::from_parts(
            mean.clone(),
            noise,
            eigvecs.clone(),
            eigvals,
            0.1,
            DenoiseMethod::Projection,
        )
        .unwrap();
        let y = array![[4.0, -1.0, 2.0], [0.0, 9.0, -3.0]];
        let once = d.denoise(&y).unwrap();
        let twice = d.denoise(&once).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        // a point already in the affine span stays put
        let r = 0.5f64.sqrt();
        let in_span = &mean + &array![3.0 * r, 3.0 * r, -2.0];
        let y_span = in_span.insert_axis(ndarray::Axis(0));
        let back = d.denoise(&y_span.to_owned()).unwrap();
        for j in 0..3 {
            assert!((back[[0, j]] - y_span[[0, j]]).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_rank_zero_returns_mean() {
        let mean = array![1.0, 2.0];
        let d = Denoiser::from_parts(
            mean.clone(),
            array![1.0, 1.0],
            Array2::zeros((2, 0)),
            vec![],
            0.1,
            DenoiseMethod::Projection,
        )
        .unwrap();
        let y = array![[5.0, 5.0], [0.0, 0.0]];
        let out = d.denoise(&y).unwrap();
        for i in 0..2 {
            assert_eq!(out.row(i).to_owned(), mean);
        }
    }

    #[test]
    fn projection_full_rank_is_identity() {
        let mean = array![1.0, 2.0];
        let d = Denoiser::from_parts(
            mean,
            array![1.0, 1.0],
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![1.0, 1.0],
            0.1,
            DenoiseMethod::Projection,
        )
        .unwrap();
        let y = array![[5.0, -5.0], [0.3, 0.0]];
        let out = d.denoise(&y).unwrap();
        for (a, b) in out.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(denoise_mse(&x, &x).unwrap(), 0.0);
        let shifted = &x + 1.0;
        assert_eq!(denoise_mse(&shifted, &x).unwrap(), 1.0);
        let wrong = Array2::zeros((2, 3));
        assert!(denoise_mse(&wrong, &x).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (mean, noise, eigvecs, eigvals) = simple_parts();
        let d = Denoiser::from_parts(mean, noise, eigvecs, eigvals, 0.1, DenoiseMethod::Eblp)
            .unwrap();
        let y = array![[1.0, 2.0]];
        assert!(matches!(d.denoise(&y), Err(Error::ShapeMismatch { .. })));
    }
}
