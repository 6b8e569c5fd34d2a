//! Dense Hermitian helpers on raw matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;

/// `max |M − M†|`.
pub fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Spectral decomposition `M = V diag(λ) V†` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<C64>,
}

/// Eigendecomposition of the Hermitian part `(M + M†)/2`.
pub fn eigh(m: &DMatrix<C64>) -> HermitianEigen {
    let n = m.nrows();
    if n == 0 {
        return HermitianEigen { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) };
    }
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    if n == 1 {
        return HermitianEigen { values: DVector::from_element(1, herm[(0, 0)].re), vectors: DMatrix::identity(1, 1) };
    }
    let eig = herm.symmetric_eigen();
    HermitianEigen { values: eig.eigenvalues, vectors: eig.eigenvectors }
}

impl HermitianEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V† A V`.
    pub fn to_eigenbasis(&self, a: &DMatrix<C64>) -> DMatrix<C64> {
        self.vectors.adjoint() * a * &self.vectors
    }

    /// `V B V†`.
    pub fn from_eigenbasis(&self, b: &DMatrix<C64>) -> DMatrix<C64> {
        &self.vectors * b * self.vectors.adjoint()
    }

    /// `f(M) = V diag(f(λ)) V†`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64) -> DMatrix<C64> {
        let mut scaled = self.vectors.clone();
        let n = self.dim();
        for (c, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            for r in 0..n {
                scaled[(r, c)] *= w;
            }
        }
        scaled * self.vectors.adjoint()
    }

    /// `e^{i s M}`.
    pub fn exp_i(&self, s: f64) -> DMatrix<C64> {
        self.apply_fn(|lam| C64::from_polar(1.0, s * lam))
    }

    /// `e^{iτM} A e^{−iτM}`.
    pub fn conjugate(&self, a: &DMatrix<C64>, tau: f64) -> DMatrix<C64> {
        let mut b = self.to_eigenbasis(a);
        self.phase_in_place(&mut b, |x| C64::from_polar(1.0, tau * x));
        self.from_eigenbasis(&b)
    }

    /// Multiplies `B_{ab}` by `f(λ_a − λ_b)`.
    pub fn phase_in_place(&self, b: &mut DMatrix<C64>, f: impl Fn(f64) -> C64) {
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                b[(i, j)] *= f(self.values[i] - self.values[j]);
            }
        }
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    assert!(n > 0, "quadrature needs at least one node");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
