//! Dense linear algebra kernels backed by the system OpenBLAS/LAPACK.
//!
//! The library binds `dgemm`, `dsyrk`, `dsyevr`, `dpotrf` and `dpotrs` from
//! `libopenblas` at runtime. The symmetric eigensolver is LAPACK's `dsyevr`
//! (Householder tridiagonalization followed by MRRR), used both for full
//! spectra and for top-k eigenpairs.
//!
//! Conventions enforced here for every eigendecomposition:
//! - eigenvalues are returned in descending order;
//! - eigenvectors are the *columns* of the returned matrix, in the same order;
//! - each eigenvector is flipped so that its largest-magnitude entry is
//!   positive, ties broken by the lowest index, which makes results
//!   deterministic for golden tests.
//!
//! BLAS threading: unless the caller has set `OPENBLAS_NUM_THREADS`, it is
//! pinned to 1 before the library loads, so reductions run in a fixed
//! sequential order and results are bit-reproducible. Setting the variable
//! enables threaded kernels; those may differ from the sequential result by
//! a relative error of order 1e-10 or below.

use std::ffi::c_char;
use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView2};

use crate::{Error, Result};

type DgemmFn = unsafe extern "C" fn(
    transa: *const c_char,
    transb: *const c_char,
    m: *const i32,
    n: *const i32,
    k: *const i32,
    alpha: *const f64,
    a: *const f64,
    lda: *const i32,
    b: *const f64,
    ldb: *const i32,
    beta: *const f64,
    c: *mut f64,
    ldc: *const i32,
);

type DsyrkFn = unsafe extern "C" fn(
    uplo: *const c_char,
    trans: *const c_char,
    n: *const i32,
    k: *const i32,
    alpha: *const f64,
    a: *const f64,
    lda: *const i32,
    beta: *const f64,
    c: *mut f64,
    ldc: *const i32,
);

type DsyevrFn = unsafe extern "C" fn(
    jobz: *const c_char,
    range: *const c_char,
    uplo: *const c_char,
    n: *const i32,
    a: *mut f64,
    lda: *const i32,
    vl: *const f64,
    vu: *const f64,
    il: *const i32,
    iu: *const i32,
    abstol: *const f64,
    m: *mut i32,
    w: *mut f64,
    z: *mut f64,
    ldz: *const i32,
    isuppz: *mut i32,
    work: *mut f64,
    lwork: *const i32,
    iwork: *mut i32,
    liwork: *const i32,
    info: *mut i32,
);

type DpotrfFn = unsafe extern "C" fn(
    uplo: *const c_char,
    n: *const i32,
    a: *mut f64,
    lda: *const i32,
    info: *mut i32,
);

type DpotrsFn = unsafe extern "C" fn(
    uplo: *const c_char,
    n: *const i32,
    nrhs: *const i32,
    a: *const f64,
    lda: *const i32,
    b: *mut f64,
    ldb: *const i32,
    info: *mut i32,
);

struct Kernels {
    // Held so the dynamic library stays mapped for the process lifetime.
    _lib: libloading::Library,
    dgemm: DgemmFn,
    dsyrk: DsyrkFn,
    dsyevr: DsyevrFn,
    dpotrf: DpotrfFn,
    dpotrs: DpotrsFn,
}

unsafe impl Sync for Kernels {}
unsafe impl Send for Kernels {}

static KERNELS: OnceLock<Kernels> = OnceLock::new();

/// OpenBLAS selects its kernels from CPUID model numbers, which virtual
/// machines often mask; on such hosts it silently falls back to kernels an
/// order of magnitude slower than what the CPU supports. Pick the kernel
/// family from actual feature flags instead, respecting any explicit
/// user setting.
fn configure_openblas_env() {
    #[cfg(target_arch = "x86_64")]
    if std::env::var_os("OPENBLAS_CORETYPE").is_none() {
        if is_x86_feature_detected!("avx512f") {
            std::env::set_var("OPENBLAS_CORETYPE", "SKYLAKEX");
        } else if is_x86_feature_detected!("avx2") {
            std::env::set_var("OPENBLAS_CORETYPE", "HASWELL");
        }
    }
    // Sequential by default: fixed reduction order, bit-reproducible output.
    if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
        std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    }
}

fn load_kernels() -> Kernels {
    configure_openblas_env();
    let candidates: Vec<String> = match std::env::var("EPCA_BLAS_LIB") {
        Ok(path) => vec![path],
        Err(_) => ["libopenblas.so.0", "libopenblas.so", "libopenblas.dylib"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    let mut last_err = None;
    for name in &candidates {
        match unsafe { libloading::Library::new(name) } {
            Ok(lib) => unsafe {
                let dgemm = *lib.get::<DgemmFn>(b"dgemm_\0").expect("dgemm_ missing");
                let dsyrk = *lib.get::<DsyrkFn>(b"dsyrk_\0").expect("dsyrk_ missing");
                let dsyevr = *lib.get::<DsyevrFn>(b"dsyevr_\0").expect("dsyevr_ missing");
                let dpotrf = *lib.get::<DpotrfFn>(b"dpotrf_\0").expect("dpotrf_ missing");
                let dpotrs = *lib.get::<DpotrsFn>(b"dpotrs_\0").expect("dpotrs_ missing");
                return Kernels {
                    _lib: lib,
                    dgemm,
                    dsyrk,
                    dsyevr,
                    dpotrf,
                    dpotrs,
                };
            },
            Err(e) => last_err = Some(e),
        }
    }
    panic!(
        "could not load an OpenBLAS shared library (tried {:?}); install \
         libopenblas or point EPCA_BLAS_LIB at one: {:?}",
        candidates, last_err
    )
}

fn kernels() -> &'static Kernels {
    KERNELS.get_or_init(load_kernels)
}

/// Run `f` on a row-major contiguous slice of `a`, copying only when the
/// view is not already in standard layout.
fn with_c_slice<R>(a: &ArrayView2<'_, f64>, f: impl FnOnce(&[f64]) -> R) -> R {
    match a.as_slice() {
        Some(s) => f(s),
        None => {
            let owned: Array2<f64> = a.as_standard_layout().into_owned();
            f(owned.as_slice().expect("standard layout"))
        }
    }
}

/// `C = A · B` for row-major operands via BLAS dgemm.
///
/// A row-major matrix read column-major is its transpose, so the call is
/// issued as `Cᵀ = Bᵀ · Aᵀ` in column-major terms.
pub fn matmul(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    let (m, ka) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(ka, kb, "matmul: inner dimensions {ka} and {kb} differ");
    if m == 0 || n == 0 {
        return Array2::zeros((m, n));
    }
    if ka == 0 {
        return Array2::zeros((m, n));
    }
    let mut c = Array2::<f64>::zeros((m, n));
    let (mm, nn, kk) = (n as i32, m as i32, ka as i32);
    let (alpha, beta) = (1.0f64, 0.0f64);
    let k = kernels();
    with_c_slice(a, |a_s| {
        with_c_slice(b, |b_s| unsafe {
            (k.dgemm)(
                &(b'N' as c_char),
                &(b'N' as c_char),
                &mm,
                &nn,
                &kk,
                &alpha,
                b_s.as_ptr(),
                &(n as i32),
                a_s.as_ptr(),
                &(ka as i32),
                &beta,
                c.as_mut_ptr(),
                &(n as i32),
            );
        })
    });
    c
}

/// `alpha · Yᵀ Y` for a row-major `n × p` matrix, as a full symmetric
/// `p × p` matrix. Uses dsyrk (half the flops of a general product) and
/// mirrors the computed triangle.
pub fn crossprod_scaled(y: &ArrayView2<'_, f64>, alpha: f64) -> Array2<f64> {
    let (n, p) = y.dim();
    if p == 0 {
        return Array2::zeros((0, 0));
    }
    let mut s = Array2::<f64>::zeros((p, p));
    let (pn, kn) = (p as i32, n as i32);
    let beta = 0.0f64;
    let k = kernels();
    // Row-major Y read column-major is Yᵀ (p × n); syrk 'N' forms Yᵀ·Y.
    with_c_slice(y, |y_s| unsafe {
        (k.dsyrk)(
            &(b'U' as c_char),
            &(b'N' as c_char),
            &pn,
            &kn,
            &alpha,
            y_s.as_ptr(),
            &pn,
            &beta,
            s.as_mut_ptr(),
            &pn,
        );
    });
    let buf = s.as_slice_mut().expect("contiguous");
    for i in 0..p {
        for j in 0..i {
            buf[j * p + i] = buf[i * p + j];
        }
    }
    s
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Array1<f64>,
    /// Matching eigenvectors as columns, sign-normalized.
    pub vectors: Array2<f64>,
}

/// Flip the vector so its largest-magnitude entry is positive; the first
/// index attaining the maximum decides on ties.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        let a = x.abs();
        if a > best_abs {
            best_abs = a;
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// [`fix_sign`] for a possibly strided view (e.g. a matrix column).
pub fn fix_sign_view(mut v: ndarray::ArrayViewMut1<'_, f64>) {
    let mut best = 0usize;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        let a = x.abs();
        if a > best_abs {
            best_abs = a;
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

enum EigRange {
    All,
    Top(usize),
}

fn dsyevr(a: &ArrayView2<'_, f64>, range: EigRange, want_vectors: bool) -> SymEigen {
    let (p, p2) = a.dim();
    assert_eq!(p, p2, "symmetric eigendecomposition needs a square matrix");
    let kcount = match range {
        EigRange::All => p,
        EigRange::Top(k) => {
            assert!(k <= p, "requested {k} eigenpairs of a {p}x{p} matrix");
            k
        }
    };
    if p == 0 || kcount == 0 {
        return SymEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((p, 0)),
        };
    }
    // dsyevr destroys its input; it also reads whichever triangle uplo
    // names, and a symmetric matrix is layout-agnostic.
    let mut a_c: Array2<f64> = a.as_standard_layout().into_owned();
    let n = p as i32;
    let (range_c, il, iu) = match range {
        EigRange::All => (b'A', 1i32, p as i32),
        EigRange::Top(k) => (b'I', (p - k + 1) as i32, p as i32),
    };
    let jobz = if want_vectors { b'V' } else { b'N' };
    let (vl, vu) = (0.0f64, 0.0f64);
    let abstol = f64::MIN_POSITIVE; // requests the most accurate eigenvalues
    let mut m = 0i32;
    let mut w = vec![0.0f64; p];
    let ldz = p as i32;
    let mut z = vec![0.0f64; if want_vectors { p * kcount } else { 1 }];
    let mut isuppz = vec![0i32; 2 * kcount.max(1)];
    let mut info = 0i32;
    let k = kernels();
    unsafe {
        // workspace query
        let (mut wq, mut iwq) = ([0.0f64], [0i32]);
        let neg1 = -1i32;
        (k.dsyevr)(
            &(jobz as c_char),
            &(range_c as c_char),
            &(b'L' as c_char),
            &n,
            a_c.as_mut_ptr(),
            &n,
            &vl,
            &vu,
            &il,
            &iu,
            &abstol,
            &mut m,
            w.as_mut_ptr(),
            z.as_mut_ptr(),
            &ldz,
            isuppz.as_mut_ptr(),
            wq.as_mut_ptr(),
            &neg1,
            iwq.as_mut_ptr(),
            &neg1,
            &mut info,
        );
        assert_eq!(info, 0, "dsyevr workspace query failed: info={info}");
        let lwork = wq[0] as i32;
        let liwork = iwq[0];
        let mut work = vec![0.0f64; lwork as usize];
        let mut iwork = vec![0i32; liwork as usize];
        (k.dsyevr)(
            &(jobz as c_char),
            &(range_c as c_char),
            &(b'L' as c_char),
            &n,
            a_c.as_mut_ptr(),
            &n,
            &vl,
            &vu,
            &il,
            &iu,
            &abstol,
            &mut m,
            w.as_mut_ptr(),
            z.as_mut_ptr(),
            &ldz,
            isuppz.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
        assert_eq!(info, 0, "dsyevr failed: info={info}");
    }
    let found = m as usize;
    assert_eq!(found, kcount, "dsyevr returned {found} of {kcount} eigenpairs");

    // LAPACK returns ascending eigenvalues; flip to descending.
    let values = Array1::from_iter(w[..found].iter().rev().copied());
    let vectors = if want_vectors {
        // z is column-major p×found: eigenvector j occupies z[j*p .. (j+1)*p].
        let mut out = Array2::<f64>::zeros((p, found));
        for j in 0..found {
            let src = &mut z[j * p..(j + 1) * p];
            fix_sign(src);
            let dst_col = found - 1 - j;
            out.column_mut(dst_col)
                .iter_mut()
                .zip(src.iter())
                .for_each(|(d, s)| *d = *s);
        }
        out
    } else {
        Array2::zeros((p, 0))
    };
    SymEigen { values, vectors }
}

/// Full spectrum and eigenvectors, descending.
pub fn sym_eigen(a: &ArrayView2<'_, f64>) -> SymEigen {
    dsyevr(a, EigRange::All, true)
}

/// Top-k eigenpairs, descending.
pub fn sym_eigen_top(a: &ArrayView2<'_, f64>, k: usize) -> SymEigen {
    dsyevr(a, EigRange::Top(k), true)
}

/// All eigenvalues, descending, without eigenvectors.
pub fn sym_eigenvalues(a: &ArrayView2<'_, f64>) -> Array1<f64> {
    dsyevr(a, EigRange::All, false).values
}

/// Cholesky factorization of a symmetric positive-definite matrix,
/// retained for repeated right-hand-side solves.
pub struct CholeskyFactor {
    factored: Array2<f64>, // dpotrf output, column-major semantics, uplo 'L'
    dim: usize,
}

pub fn cholesky(a: &ArrayView2<'_, f64>) -> Result<CholeskyFactor> {
    let (p, p2) = a.dim();
    assert_eq!(p, p2, "cholesky needs a square matrix");
    let mut a_c: Array2<f64> = a.as_standard_layout().into_owned();
    let n = p as i32;
    let mut info = 0i32;
    let k = kernels();
    unsafe {
        (k.dpotrf)(&(b'L' as c_char), &n, a_c.as_mut_ptr(), &n, &mut info);
    }
    if info > 0 {
        return Err(Error::SingularCovariance {
            minor: info as usize,
        });
    }
    assert!(info == 0, "dpotrf failed: info={info}");
    Ok(CholeskyFactor {
        factored: a_c,
        dim: p,
    })
}

impl CholeskyFactor {
    /// Solve `A · X = B` for a `p × m` right-hand side.
    pub fn solve(&self, b: &ArrayView2<'_, f64>) -> Array2<f64> {
        let (p, m) = b.dim();
        assert_eq!(p, self.dim, "cholesky solve: rhs has {p} rows, need {}", self.dim);
        if m == 0 {
            return Array2::zeros((p, 0));
        }
        // dpotrs wants B column-major p×m, i.e. the row-major transpose.
        let mut bt: Array2<f64> = b.t().as_standard_layout().into_owned();
        let n = p as i32;
        let nrhs = m as i32;
        let mut info = 0i32;
        let k = kernels();
        unsafe {
            (k.dpotrs)(
                &(b'L' as c_char),
                &n,
                &nrhs,
                self.factored.as_ptr(),
                &n,
                bt.as_mut_ptr(),
                &n,
                &mut info,
            );
        }
        assert_eq!(info, 0, "dpotrs failed: info={info}");
        bt.t().as_standard_layout().into_owned()
    }

    /// Solve for a single right-hand-side vector.
    pub fn solve_vec(&self, b: &ndarray::ArrayView1<'_, f64>) -> Array1<f64> {
        let col = b
            .to_owned()
            .into_shape((self.dim, 1))
            .expect("vector length");
        let x = self.solve(&col.view());
        x.column(0).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_matches_naive() {
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let b = array![[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]];
        let c = matmul(&a.view(), &b.view());
        assert_eq!(c, array![[58.0, 64.0], [139.0, 154.0]]);
    }

    #[test]
    fn crossprod_matches_dot() {
        let y = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let s = crossprod_scaled(&y.view(), 0.5);
        let expect = y.t().dot(&y) * 0.5;
        for (a, b) in s.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s[[0, 1]], s[[1, 0]]);
    }

    #[test]
    fn eigen_of_diagonal() {
        let a = array![[3.0, 0.0], [0.0, -4.0]];
        let e = sym_eigen(&a.view());
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] + 4.0).abs() < 1e-14);
        // descending order, sign convention: largest |entry| positive
        assert!((e.vectors[[0, 0]] - 1.0).abs() < 1e-14);
        assert!((e.vectors[[1, 1]] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_reconstructs() {
        let a = array![
            [4.0, 1.0, 0.5],
            [1.0, 3.0, -0.2],
            [0.5, -0.2, 1.0]
        ];
        let e = sym_eigen(&a.view());
        let lam = Array2::from_diag(&e.values);
        let rec = matmul(
            &matmul(&e.vectors.view(), &lam.view()).view(),
            &e.vectors.t(),
        );
        for (x, y) in rec.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12, "reconstruction mismatch");
        }
    }

    #[test]
    fn top_k_matches_full() {
        let a = array![
            [4.0, 1.0, 0.5, 0.0],
            [1.0, 3.0, -0.2, 0.3],
            [0.5, -0.2, 1.0, 0.1],
            [0.0, 0.3, 0.1, 2.0]
        ];
        let full = sym_eigen(&a.view());
        let top = sym_eigen_top(&a.view(), 2);
        for i in 0..2 {
            assert!((full.values[i] - top.values[i]).abs() < 1e-13);
            for j in 0..4 {
                assert!((full.vectors[[j, i]] - top.vectors[[j, i]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_solves() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let f = cholesky(&a.view()).unwrap();
        let b = array![[2.0], [1.0]];
        let x = f.solve(&b.view());
        // A x = b  =>  x = A^{-1} b; inverse of [[4,2],[2,3]] is [[3,-2],[-2,4]]/8
        assert!((x[[0, 0]] - 0.5).abs() < 1e-14);
        assert!((x[[1, 0]] - 0.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a.view()).is_err());
    }

    #[test]
    fn sign_convention_tie_breaks_low_index() {
        let mut v = [-0.5, 0.5, -0.5];
        fix_sign(&mut v);
        // first max-|entry| index is 0, entry negative, so flip
        assert_eq!(v, [0.5, -0.5, 0.5]);
    }
}
