//! Small dense helpers: Kronecker products with identities, complex SVD and
//! Hermitian eigendecomposition (through faer) and realification of complex
//! quadratic forms.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

pub fn kron(a: &RMat, b: &RMat) -> RMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = RMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
            }
        }
    }
    out
}

pub fn ckron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
        }
    }
    out
}

/// `a ⊗ I_p` for a complex `a`.
pub fn kron_identity(a: &CMat, p: usize) -> CMat {
    let (r, c) = a.shape();
    let mut out = CMat::zeros(r * p, c * p);
    for i in 0..r {
        for j in 0..c {
            for k in 0..p {
                out[(i * p + k, j * p + k)] = a[(i, j)];
            }
        }
    }
    out
}

/// `m · (h ⊗ I_p)` without forming the Kronecker factor.
///
/// `m` has `p·h.nrows()` columns indexed `p·i + k`; the result has `p·h.ncols()`
/// columns indexed `p·n + k`.
pub fn right_mul_kron_identity(m: &CMat, h: &CMat, p: usize) -> CMat {
    let rows = m.nrows();
    let (hr, hc) = h.shape();
    assert_eq!(m.ncols(), hr * p, "right_mul_kron_identity: shape");
    let mut out = CMat::zeros(rows, hc * p);
    let mut slice = CMat::zeros(rows, hr);
    for k in 0..p {
        for i in 0..hr {
            slice.set_column(i, &m.column(p * i + k));
        }
        let prod = &slice * h;
        for n in 0..hc {
            out.set_column(p * n + k, &prod.column(n));
        }
    }
    out
}

pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn is_hermitian(m: &CMat, rtol: f64) -> bool {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    (m - m.adjoint()).norm() <= rtol * scale
}

fn to_faer(m: &CMat) -> faer::Mat<C64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, C64>) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Full SVD `h = U·diag(s)·Vᴴ`; `s` has `min(m, n)` entries, descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

pub fn svd(h: &CMat) -> Result<Svd> {
    let (m, n) = h.shape();
    if m == 0 || n == 0 {
        return Ok(Svd { u: CMat::identity(m, m), s: Vec::new(), v: CMat::identity(n, n) });
    }
    let d = to_faer(h).svd().map_err(|e| Error::Numerical(format!("SVD of a {m}×{n} matrix failed: {e:?}")))?;
    let s = d.S().column_vector().iter().map(|z| z.re).collect();
    Ok(Svd { u: from_faer(d.U()), s, v: from_faer(d.V()) })
}

pub fn singular_values(h: &CMat) -> Result<Vec<f64>> {
    Ok(svd(h)?.s)
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix;
/// only the lower triangle is read.
pub fn hermitian_eigen(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {n}×{}",
            m.ncols()
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), CMat::zeros(0, 0)));
    }
    let e = to_faer(m)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals = e.S().column_vector().iter().map(|z| z.re).collect();
    Ok((vals, from_faer(e.U())))
}

/// All m left-singular vectors of `h` (m×n) ordered by ascending singular value;
/// vectors outside the thin SVD carry singular value 0.
pub fn left_basis_ascending(h: &CMat) -> Result<(CMat, Vec<f64>)> {
    let m = h.nrows();
    let d = svd(h)?;
    let mut vals = vec![0.0; m];
    let mut out = CMat::zeros(m, m);
    for (j, val) in vals.iter_mut().enumerate() {
        // Column m−1−j of U, i.e. reversed descending order.
        let k = m - 1 - j;
        out.set_column(j, &d.u.column(k));
        *val = d.s.get(k).copied().unwrap_or(0.0);
    }
    Ok((out, vals))
}

pub fn rank_tolerance(sv_max: f64, rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sv_max * 16.0
}

/// Moore–Penrose pseudo-inverse with the usual relative cutoff.
pub fn pinv(h: &CMat) -> Result<CMat> {
    let (r, c) = h.shape();
    let d = svd(h)?;
    let smax = d.s.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(smax, r, c);
    let mut out = CMat::zeros(c, r);
    for (k, &s) in d.s.iter().enumerate() {
        if s > tol {
            out += (d.v.column(k) * d.u.column(k).adjoint()) * C64::new(1.0 / s, 0.0);
        }
    }
    Ok(out)
}

/// Solves `X·N = B` for Hermitian PSD `N`; Cholesky when definite, otherwise the
/// eigen-decomposition pseudo-inverse.
pub fn right_solve_hermitian(b: &CMat, n: &CMat) -> Result<CMat> {
    if let Some(ch) = Cholesky::new(n.clone()) {
        // X N = B  <=>  N X^H = B^H
        return Ok(ch.solve(&b.adjoint()).adjoint());
    }
    Ok(b * hermitian_pinv(n)?)
}

pub fn hermitian_pinv(n: &CMat) -> Result<CMat> {
    let (vals, vecs) = hermitian_eigen(n)?;
    let lmax = vals.iter().fold(0.0, |a: f64, x| a.max(x.abs()));
    let tol = rank_tolerance(lmax, n.nrows(), n.ncols());
    let mut out = CMat::zeros(n.nrows(), n.ncols());
    for (k, &l) in vals.iter().enumerate() {
        if l > tol {
            let v = vecs.column(k);
            out += (v * v.adjoint()) * C64::new(1.0 / l, 0.0);
        }
    }
    Ok(out)
}

/// Real symmetric matrix `[[Re M, −Im M],[Im M, Re M]]` so that
/// `w^H M w = x^T R x` for `x = [Re w; Im w]` and Hermitian `M`.
pub fn realify_hermitian(m: &CMat) -> RMat {
    let n = m.nrows();
    let mut out = RMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

pub fn spd_inverse(m: &RMat) -> Result<RMat> {
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

pub fn symmetrize(m: &mut RMat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal, SeedTree};

    fn random_c(r: usize, c: usize, seed: u64) -> CMat {
        let mut rng = SeedTree::new(seed).stream("linalg", 0);
        CMat::from_fn(r, c, |_, _| complex_normal(&mut rng, 1.0))
    }

    #[test]
    fn right_mul_kron_matches_explicit() {
        let m = random_c(5, 12, 1);
        let h = random_c(4, 3, 2);
        let fast = right_mul_kron_identity(&m, &h, 3);
        let slow = &m * kron_identity(&h, 3);
        assert!((fast - slow).norm() < 1e-12);
    }

    #[test]
    fn left_basis_orders_null_space_first() {
        let h = random_c(6, 2, 4);
        let (u, sv) = left_basis_ascending(&h).unwrap();
        assert_eq!(sv[..4], [0.0; 4]);
        assert!((u.columns(0, 4).adjoint() * &h).norm() < 1e-12);
        assert!((u.adjoint() * &u - CMat::identity(6, 6)).norm() < 1e-12);
    }

    #[test]
    fn realified_form_matches_complex_quadratic() {
        let a = random_c(4, 4, 5);
        let m = a.adjoint() * &a;
        let w = random_c(4, 1, 6);
        let x = RVec::from_iterator(8, w.iter().map(|z| z.re).chain(w.iter().map(|z| z.im)));
        let lhs = (w.adjoint() * &m * &w)[(0, 0)].re;
        let rhs = x.dot(&(realify_hermitian(&m) * &x));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs());
    }

    #[test]
    fn rank_one_square_svd_is_accurate() {
        // A 16×16 rank-one steering product, where a naive complex SVD can
        // return a badly wrong factorization.
        let psi = CVec::from_fn(16, |i, _| {
            C64::from_polar(1.0, std::f64::consts::PI * i as f64 * std::f64::consts::FRAC_1_SQRT_2)
        });
        let g = (&psi * psi.transpose()) * C64::new(3.475e-4, 0.0);
        let d = svd(&g).unwrap();
        let mut rec = CMat::zeros(16, 16);
        for k in 0..16 {
            rec += (d.u.column(k) * d.v.column(k).adjoint()) * C64::new(d.s[k], 0.0);
        }
        assert!((rec - &g).norm() <= 1e-13 * g.norm());
        let (u, sv) = left_basis_ascending(&g).unwrap();
        assert!(sv[14] <= 1e-15 * sv[15]);
        assert!((u.columns(0, 15).adjoint() * &psi).norm() <= 1e-13 * psi.norm());
    }

    #[test]
    fn hermitian_eigen_reconstructs() {
        let a = random_c(6, 6, 8);
        let m = &a * a.adjoint();
        let (vals, v) = hermitian_eigen(&m).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = CMat::from_diagonal(&CVec::from_iterator(6, vals.iter().map(|x| C64::new(*x, 0.0))));
        assert!((&v * d * v.adjoint() - &m).norm() <= 1e-12 * m.norm());
    }

    #[test]
    fn pinv_of_wide_matrix_is_right_inverse() {
        let h = random_c(3, 5, 7);
        let p = pinv(&h).unwrap();
        assert!((&h * p - CMat::identity(3, 3)).norm() < 1e-10);
    }
}
