//! Small dense linear-algebra helpers shared by the numeric modules.

use nalgebra::{Complex, DMatrix, DVector};

pub type Complex64 = Complex<f64>;

/// Eigenvalues of a general real square matrix, sorted by (re, im).
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    ev
}

/// Eigenvalues of the complex matrix `re + i*im`, via the real 2n x 2n
/// embedding (whose spectrum is that of the matrix and of its conjugate).
pub fn complex_matrix_real_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Vec<f64> {
    let n = re.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(re);
    big.view_mut((n, n), (n, n)).copy_from(re);
    big.view_mut((0, n), (n, n)).copy_from(&(-im));
    big.view_mut((n, 0), (n, n)).copy_from(im);
    eigenvalues(&big).iter().map(|z| z.re).collect()
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    eigenvalues(m).iter().all(|z| z.re < 0.0)
}

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Solves A^T P + P A + Q = 0 for P. Returns None when the Sylvester operator
/// is singular (A has eigenvalues symmetric about the imaginary axis).
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::identity(n, n);
    // Column-major vec: vec(A^T P) = (I kron A^T) vec P, vec(P A) = (A^T kron I) vec P.
    let op = kron(&eye, &a.transpose()) + kron(&a.transpose(), &eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|x| -x));
    let sol = op.lu().solve(&rhs)?;
    if sol.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Some((&p + p.transpose()) * 0.5)
}

/// Symmetric eigendecomposition with eigenvalues clamped below at `floor`.
pub struct FlooredSym {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
    /// Smallest eigenvalue before flooring.
    pub raw_min: f64,
}

impl FlooredSym {
    pub fn new(m: &DMatrix<f64>, floor: f64) -> Self {
        let sym = (m + m.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let raw_min = eig.eigenvalues.min();
        let values = eig.eigenvalues.map(|v| v.max(floor));
        Self { values, vectors: eig.eigenvectors, raw_min }
    }

    pub fn log_det(&self) -> f64 {
        self.values.iter().map(|v| v.ln()).sum()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.values.map(|v| 1.0 / v));
        &self.vectors * d * self.vectors.transpose()
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.values.map(f64::sqrt));
        &self.vectors * d * self.vectors.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_scalar() {
        // -2p + 4 = 0 for a = -1, q = 4.
        let p = solve_lyapunov(&DMatrix::from_element(1, 1, -1.0), &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert!((p[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_residual_vanishes() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -3.0, 1.0, 0.5, 0.0, -2.0]);
        let q = DMatrix::identity(3, 3);
        let p = solve_lyapunov(&a, &q).unwrap();
        let res = a.transpose() * &p + &p * &a + &q;
        assert!(res.norm() < 1e-12);
    }

    #[test]
    fn lyapunov_singular_for_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(solve_lyapunov(&a, &DMatrix::identity(2, 2)).is_none());
    }

    #[test]
    fn rotation_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = eigenvalues(&a);
        assert!(ev[0].re.abs() < 1e-14 && (ev[0].im + 1.0).abs() < 1e-14);
        assert!((ev[1].im - 1.0).abs() < 1e-14);
    }

    #[test]
    fn complex_embedding_matches_scalar() {
        let re = DMatrix::from_element(1, 1, -2.0);
        let im = DMatrix::from_element(1, 1, 3.0);
        let parts = complex_matrix_real_parts(&re, &im);
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|r| (r + 2.0).abs() < 1e-12));
    }

    #[test]
    fn floored_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let f = FlooredSym::new(&m, 1e-9);
        let inv = f.inverse();
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((inv[(1, 1)] - 1e9).abs() < 1e-3);
    }
}
