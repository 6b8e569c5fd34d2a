//! Flat-torus geometry.
//!
//! A torus `R^d / Γ` is reduced to the standard torus carrying the constant
//! metric `g_{AB} = e_A · e_B`. Covectors live on `Z^d` or on the midpoint
//! lattice `(Z/2)^d`; both are stored exactly as doubled integers and only
//! converted to floating point when a metric quantity is requested.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Basis `e_1..e_d` of the periodicity lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeBasis {
    vectors: Vec<Vec<f64>>,
}

impl LatticeBasis {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let d = vectors.len();
        if d == 0 {
            return Err(Error::DegenerateLattice("empty basis".into()));
        }
        for v in &vectors {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::DegenerateLattice("non-finite basis component".into()));
            }
        }
        Ok(Self { vectors })
    }

    pub fn standard(d: usize) -> Self {
        let vectors = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { vectors }
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// Constant metric `g_{AB}` together with its inverse `g^{AB}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTensor {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
}

/// Builds the metric `g_{AB} = e_A · e_B` of a lattice basis.
pub fn metric_from_basis(basis: &LatticeBasis) -> Result<MetricTensor> {
    let d = basis.dim();
    let e = DMatrix::from_fn(d, d, |a, i| basis.vectors[a][i]);
    let scale: f64 = basis
        .vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .product();
    let det = e.determinant();
    if scale == 0.0 || det.abs() <= 1e-12 * scale {
        return Err(Error::DegenerateLattice(format!(
            "basis vectors are linearly dependent (det = {det:.3e})"
        )));
    }
    let g = &e * e.transpose();
    MetricTensor::from_matrix(g)
}

impl MetricTensor {
    pub fn identity(d: usize) -> Self {
        Self { g: DMatrix::identity(d, d), g_inv: DMatrix::identity(d, d) }
    }

    /// Wraps a symmetric positive-definite `g_{AB}`.
    pub fn from_matrix(g: DMatrix<f64>) -> Result<Self> {
        let d = g.nrows();
        if g.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: g.ncols() });
        }
        let asym = (&g - g.transpose()).amax();
        if asym > 1e-12 * g.amax().max(1.0) {
            return Err(Error::DegenerateLattice("metric is not symmetric".into()));
        }
        if g.clone().cholesky().is_none() {
            return Err(Error::DegenerateLattice("metric is not positive definite".into()));
        }
        let inv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateLattice("metric is singular".into()))?;
        let g_inv = (&inv + inv.transpose()) * 0.5;
        Ok(Self { g, g_inv })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// `g_{AB}`.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// `g^{AB}`.
    pub fn g_inv(&self) -> &DMatrix<f64> {
        &self.g_inv
    }

    /// `Σ g^{AB} a_A b_B` for doubled-integer inputs (true value is `a/2`, `b/2`).
    #[inline]
    pub fn inner_halves(&self, a: &[i64], b: &[i64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            if a[i] == 0 {
                continue;
            }
            for j in 0..d {
                if b[j] != 0 {
                    acc += self.g_inv[(i, j)] * (a[i] * b[j]) as f64;
                }
            }
        }
        0.25 * acc
    }

    /// `Σ g^{AB} a_A b_B` for integer inputs.
    #[inline]
    pub fn inner_int(&self, a: &[i64], b: &[i64]) -> f64 {
        4.0 * self.inner_halves(a, b)
    }

    /// `Σ g^{AB} a_A b_B` for real inputs.
    pub fn inner_real(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += self.g_inv[(i, j)] * a[i] * b[j];
            }
        }
        acc
    }

    pub fn inner(&self, xi: &Covector, eta: &Covector) -> Result<f64> {
        self.check_dim(xi)?;
        self.check_dim(eta)?;
        Ok(self.inner_halves(&xi.halves, &eta.halves))
    }

    pub fn norm(&self, xi: &Covector) -> Result<f64> {
        Ok(self.inner(xi, xi)?.max(0.0).sqrt())
    }

    /// Metric norm of an integer vector.
    pub fn norm_int(&self, k: &[i64]) -> f64 {
        self.inner_int(k, k).max(0.0).sqrt()
    }

    /// `⟨ξ⟩ = (1 + ‖ξ‖²)^{1/2}`.
    pub fn jap_bracket(&self, xi: &Covector) -> Result<f64> {
        self.check_dim(xi)?;
        Ok(self.bracket_halves(&xi.halves))
    }

    #[inline]
    pub fn bracket_halves(&self, xi: &[i64]) -> f64 {
        (1.0 + self.inner_halves(xi, xi).max(0.0)).sqrt()
    }

    pub fn bracket_real(&self, xi: &[f64]) -> f64 {
        (1.0 + self.inner_real(xi, xi).max(0.0)).sqrt()
    }

    /// Smallest eigenvalue of `g^{AB}`, used to size enumeration boxes.
    pub fn min_inverse_eigenvalue(&self) -> f64 {
        self.g_inv.clone().symmetric_eigen().eigenvalues.min()
    }

    fn check_dim(&self, c: &Covector) -> Result<()> {
        if c.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: c.dim() });
        }
        Ok(())
    }
}

/// `⟨ξ|η⟩ = Σ g^{AB} ξ_A η_B`.
pub fn inner(xi: &Covector, eta: &Covector, m: &MetricTensor) -> Result<f64> {
    m.inner(xi, eta)
}

/// `⟨ξ⟩ = (1 + ‖ξ‖²)^{1/2}` with the metric norm.
pub fn jap_bracket(xi: &Covector, m: &MetricTensor) -> Result<f64> {
    m.jap_bracket(xi)
}

/// Element of `Z^d` or of the midpoint lattice `(Z/2)^d`, stored doubled.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Covector {
    halves: Vec<i64>,
}

impl Covector {
    pub fn int(components: &[i64]) -> Self {
        Self { halves: components.iter().map(|c| 2 * c).collect() }
    }

    /// Builds from doubled components, i.e. `halves = 2ξ`.
    pub fn from_halves(halves: Vec<i64>) -> Self {
        Self { halves }
    }

    pub fn zero(d: usize) -> Self {
        Self { halves: vec![0; d] }
    }

    /// Weyl midpoint `ξ + k/2`.
    pub fn midpoint(xi: &[i64], k: &[i64]) -> Self {
        Self { halves: xi.iter().zip(k).map(|(x, k)| 2 * x + k).collect() }
    }

    pub fn dim(&self) -> usize {
        self.halves.len()
    }

    pub fn halves(&self) -> &[i64] {
        &self.halves
    }

    pub fn is_integral(&self) -> bool {
        self.halves.iter().all(|h| h % 2 == 0)
    }

    pub fn is_zero(&self) -> bool {
        self.halves.iter().all(|&h| h == 0)
    }

    /// Integer components, if every component is integral.
    pub fn to_int(&self) -> Option<Vec<i64>> {
        self.is_integral().then(|| self.halves.iter().map(|h| h / 2).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.halves.iter().map(|&h| 0.5 * h as f64).collect()
    }

    pub fn neg(&self) -> Self {
        Self { halves: self.halves.iter().map(|h| -h).collect() }
    }

    pub fn scaled(&self, factor: i64) -> Self {
        Self { halves: self.halves.iter().map(|h| h * factor).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn skew_metric() -> MetricTensor {
        let basis = LatticeBasis::new(vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        metric_from_basis(&basis).unwrap()
    }

    #[test]
    fn orthonormal_basis_gives_identity() {
        let m = metric_from_basis(&LatticeBasis::standard(2)).unwrap();
        assert_eq!(m.g(), &DMatrix::identity(2, 2));
        assert_eq!(m.g_inv(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn skew_basis_metric_and_inverse() {
        let m = skew_metric();
        // hand inversion of [[1,1],[1,2]]
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        let g_inv = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]);
        assert!((m.g() - g).amax() < 1e-15);
        assert!((m.g_inv() - g_inv).amax() < 1e-12);
        let prod = m.g() * m.g_inv();
        assert!((prod - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn dependent_basis_is_rejected() {
        let basis = LatticeBasis::new(vec![vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let err = metric_from_basis(&basis).unwrap_err();
        assert!(err.to_string().contains("degenerate lattice"));
    }

    #[test]
    fn inner_examples() {
        let id = MetricTensor::identity(2);
        let e1 = Covector::int(&[1, 0]);
        let e2 = Covector::int(&[0, 1]);
        assert_eq!(inner(&e1, &e2, &id).unwrap(), 0.0);
        assert_abs_diff_eq!(inner(&e1, &e2, &skew_metric()).unwrap(), -1.0, epsilon = 1e-14);
        let z = Covector::zero(2);
        assert_eq!(inner(&z, &z, &skew_metric()).unwrap(), 0.0);
        let e3 = Covector::int(&[1, 0, 0]);
        assert!(matches!(inner(&e1, &e3, &id), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bracket_examples() {
        let id = MetricTensor::identity(2);
        assert_eq!(jap_bracket(&Covector::zero(2), &id).unwrap(), 1.0);
        assert_abs_diff_eq!(jap_bracket(&Covector::int(&[3, 4]), &id).unwrap(), 26f64.sqrt());
        assert_abs_diff_eq!(
            jap_bracket(&Covector::int(&[1, 0]), &skew_metric()).unwrap(),
            3f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn midpoint_is_exact() {
        let eta = Covector::midpoint(&[10, 0], &[0, 1]);
        assert_eq!(eta.to_f64(), vec![10.0, 0.5]);
        assert!(!eta.is_integral());
    }

    fn int_vec() -> impl Strategy<Value = Vec<i64>> {
        prop::collection::vec(-30i64..=30, 2)
    }

    proptest! {
        #[test]
        fn inner_is_symmetric_and_bilinear(a in int_vec(), b in int_vec(), c in int_vec(), s in -5i64..=5) {
            let m = skew_metric();
            let (ca, cb, cc) = (Covector::int(&a), Covector::int(&b), Covector::int(&c));
            let ab = m.inner(&ca, &cb).unwrap();
            let ba = m.inner(&cb, &ca).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
            let sum: Vec<i64> = a.iter().zip(&b).map(|(x, y)| s * x + y).collect();
            let lhs = m.inner(&Covector::int(&sum), &cc).unwrap();
            let rhs = s as f64 * m.inner(&ca, &cc).unwrap() + m.inner(&cb, &cc).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }

        #[test]
        fn norm_positive_and_bracket_monotone(a in int_vec()) {
            let m = skew_metric();
            let xi = Covector::int(&a);
            let n2 = m.inner(&xi, &xi).unwrap();
            if !xi.is_zero() {
                prop_assert!(n2 > 0.0);
            }
            let br = m.jap_bracket(&xi).unwrap();
            prop_assert!(br >= 1.0 && br >= n2.sqrt());
            prop_assert!(m.jap_bracket(&xi.scaled(2)).unwrap() >= br);
        }
    }
}
