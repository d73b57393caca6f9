//! Dominant eigenstructure of Jacobian vertices and of the discrete
//! operators used to grow cones.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Default dominance gap, relative to the spectral radius.
pub const DEFAULT_GAP_TOL: f64 = 1e-7;

/// Strictly dominant eigenvalue of a matrix with its right and left eigenvectors.
///
/// `right` has unit norm with its first non-negligible entry positive; `left`
/// is scaled so that `⟨left, right⟩ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralData {
    pub lambda: f64,
    pub right: DVector<f64>,
    pub left: DVector<f64>,
    /// `lambda − max Re μ` over the remaining eigenvalues (`∞` for 1×1).
    pub gap: f64,
    /// The remaining eigenvalues, as `(re, im)` pairs.
    pub others: Vec<(f64, f64)>,
}

impl SpectralData {
    /// Same spectral data with both eigenvectors negated.
    pub fn flipped(&self) -> Self {
        Self {
            right: -&self.right,
            left: -&self.left,
            ..self.clone()
        }
    }
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// All eigenvalues of a real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    check_square(a)?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalFailure("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

fn spectral_radius(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Unit vector spanning the (numerical) null space of `m`.
fn null_vector(m: DMatrix<f64>) -> Result<DVector<f64>> {
    let n = m.ncols();
    let svd = m.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD did not return V".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc },
        );
    let v: DVector<f64> = v_t.row(k).transpose().into_owned();
    debug_assert_eq!(v.len(), n);
    Ok(v.normalize())
}

fn complex_null_vector(m: DMatrix<Complex<f64>>) -> Result<DVector<Complex<f64>>> {
    let svd = m.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD did not return V".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc },
        );
    // Rows of V^H are conjugated right singular vectors.
    let v: DVector<Complex<f64>> = v_t.row(k).adjoint().into_owned();
    let norm = v.norm();
    Ok(v / Complex::new(norm, 0.0))
}

/// Flips `v` so that its first entry above `1e-12` in magnitude is positive.
pub fn orient(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Rightmost eigenvalue, if it is real, simple and separated in real part
/// from every other eigenvalue by more than `gap_tol · ρ(A)`.
pub fn strictly_dominant(a: &DMatrix<f64>, gap_tol: f64) -> Result<Option<SpectralData>> {
    check_square(a)?;
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    if n == 1 {
        return Ok(Some(SpectralData {
            lambda: a[(0, 0)],
            right: DVector::from_element(1, 1.0),
            left: DVector::from_element(1, 1.0),
            gap: f64::INFINITY,
            others: Vec::new(),
        }));
    }
    let mut eigs = eigenvalues(a)?;
    let rho = spectral_radius(&eigs);
    if rho == 0.0 {
        return Ok(None);
    }
    let thr = gap_tol * rho;
    eigs.sort_by(|x, y| y.re.total_cmp(&x.re));
    let top = eigs[0];
    if top.im.abs() > thr {
        return Ok(None);
    }
    let gap = top.re
        - eigs[1..]
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
    if !(gap > thr) {
        return Ok(None);
    }
    let lambda = top.re;
    let shifted = a - DMatrix::identity(n, n) * lambda;
    let mut right = null_vector(shifted.clone())?;
    orient(&mut right);
    let left_raw = null_vector(shifted.transpose())?;
    let pairing = left_raw.dot(&right);
    if pairing.abs() < 1e-12 {
        // Left and right eigenvectors orthogonal: the eigenvalue is not simple.
        return Ok(None);
    }
    let left = left_raw / pairing;
    let others = eigs[1..].iter().map(|z| (z.re, z.im)).collect();
    Ok(Some(SpectralData {
        lambda,
        right,
        left,
        gap,
        others,
    }))
}

/// True iff `w` has a real, simple, positive eigenvalue whose modulus beats
/// every other eigenvalue's modulus by more than `gap_tol · ρ(W)`.
pub fn absolutely_dominant(w: &DMatrix<f64>, gap_tol: f64) -> Result<bool> {
    check_square(w)?;
    match w.nrows() {
        0 => Ok(false),
        1 => Ok(w[(0, 0)] > 0.0),
        _ => {
            let mut eigs = eigenvalues(w)?;
            let rho = spectral_radius(&eigs);
            if rho == 0.0 {
                return Ok(false);
            }
            let thr = gap_tol * rho;
            eigs.sort_by(|x, y| y.norm().total_cmp(&x.norm()));
            let top = eigs[0];
            Ok(top.im.abs() <= thr && top.re > thr && top.norm() - eigs[1].norm() > thr)
        }
    }
}

/// Supremum `T` of the time steps `τ` for which `I + τ(A − λI)` keeps an
/// absolutely dominant eigenvalue: `min_j −2 Re(μ_j − λ) / |μ_j − λ|²`.
pub fn max_timestep(spec: &SpectralData) -> f64 {
    spec.others
        .iter()
        .map(|&(re, im)| {
            let dr = re - spec.lambda;
            let norm2 = dr * dr + im * im;
            if norm2 == 0.0 {
                0.0
            } else {
                -2.0 * dr / norm2
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// `I + τ(A − λI) − w · r hᵀ`.
pub fn widening_operator(
    a: &DMatrix<f64>,
    lambda: f64,
    tau: f64,
    w: f64,
    r: &DVector<f64>,
    h: &DVector<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    &id + (a - &id * lambda) * tau - r * h.transpose() * w
}

/// Largest widening coefficient (to `1e-4` relative) for which the widened
/// operator stays absolutely dominant with `r` still carrying the dominant
/// eigenvalue `1 − w⟨h, r⟩`. Returns 0 if the unwidened operator already fails.
pub fn max_widening(
    a: &DMatrix<f64>,
    lambda: f64,
    tau: f64,
    r: &DVector<f64>,
    h: &DVector<f64>,
    gap_tol: f64,
) -> Result<f64> {
    let hr = h.dot(r);
    let ok = |w: f64| -> Result<bool> {
        let m = widening_operator(a, lambda, tau, w, r, h);
        if !absolutely_dominant(&m, gap_tol)? {
            return Ok(false);
        }
        // The dominant eigenvalue must be the one attached to r.
        let target = 1.0 - w * hr;
        let eigs = eigenvalues(&m)?;
        let top = eigs
            .iter()
            .copied()
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))
            .unwrap_or_default();
        let nearest = eigs
            .iter()
            .copied()
            .min_by(|x, y| (x - target).norm().total_cmp(&(y - target).norm()))
            .unwrap_or_default();
        Ok((top - nearest).norm() <= 1e-9 * top.norm().max(1.0))
    };
    if !ok(0.0)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while ok(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(lo);
        }
    }
    while hi - lo > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Eigenvalues with matching eigenvector columns.
pub type Eigensystem = (Vec<Complex<f64>>, DMatrix<Complex<f64>>);

/// Full eigendecomposition `A V = V diag(μ)` in complex arithmetic.
/// Intended for diagonalizable matrices with distinct eigenvalues.
pub fn eigensystem(a: &DMatrix<f64>) -> Result<Eigensystem> {
    let eigs = eigenvalues(a)?;
    let n = a.nrows();
    let ac: DMatrix<Complex<f64>> = a.map(|x| Complex::new(x, 0.0));
    let mut vectors = DMatrix::<Complex<f64>>::zeros(n, n);
    for (k, mu) in eigs.iter().enumerate() {
        let shifted = &ac - DMatrix::<Complex<f64>>::identity(n, n) * *mu;
        let v = complex_null_vector(shifted)?;
        vectors.set_column(k, &v);
    }
    Ok((eigs, vectors))
}
