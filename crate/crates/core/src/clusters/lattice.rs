//! Saturated sublattices of `Z^d` in exact integer arithmetic.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::geometry::MetricTensor;

/// `span_R(M) ∩ Z^d` with its basis in Hermite normal form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntegerModule {
    dim: usize,
    basis: Vec<Vec<i64>>,
}

impl IntegerModule {
    pub fn trivial(dim: usize) -> Self {
        Self { dim, basis: Vec::new() }
    }

    pub fn full(dim: usize) -> Self {
        let basis = (0..dim).map(|a| (0..dim).map(|b| i64::from(a == b)).collect()).collect();
        Self { dim, basis }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<i64>] {
        &self.basis
    }

    pub fn is_trivial(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.basis.len() == self.dim
    }

    /// Whether `v` lies in the module (exact).
    pub fn contains(&self, v: &[i64]) -> bool {
        let mut rows = to_big(&self.basis);
        let before = rows.len();
        rows.push(v.iter().map(|&x| BigInt::from(x)).collect());
        let h = hermite_rows(rows, self.dim);
        // membership: the lattice does not grow
        h.len() == before && h == to_big(&self.basis)
    }

    /// Metric-orthogonal split `ξ = ξ_M + ξ_{M⊥}` with respect to `g^{AB}`.
    pub fn project(&self, xi: &[f64], m: &MetricTensor) -> (Vec<f64>, Vec<f64>) {
        if self.basis.is_empty() {
            return (vec![0.0; xi.len()], xi.to_vec());
        }
        let r = self.basis.len();
        let b: Vec<Vec<f64>> = self.basis.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
        let gram = DMatrix::from_fn(r, r, |i, j| m.inner_real(&b[i], &b[j]));
        let rhs = DVector::from_fn(r, |i, _| m.inner_real(&b[i], xi));
        let coef = gram.cholesky().expect("basis vectors are independent").solve(&rhs);
        let mut along = vec![0.0; xi.len()];
        for (i, row) in b.iter().enumerate() {
            for (a, x) in along.iter_mut().zip(row) {
                *a += coef[i] * x;
            }
        }
        let perp = xi.iter().zip(&along).map(|(x, a)| x - a).collect();
        (along, perp)
    }
}

/// The saturated module generated by `edges`, independent of their order.
pub fn module_of(edges: &[Vec<i64>], dim: usize) -> IntegerModule {
    let rows: Vec<Vec<BigInt>> = edges.iter().filter(|e| e.iter().any(|&x| x != 0)).map(|e| big_row(e)).collect();
    if rows.is_empty() {
        return IntegerModule::trivial(dim);
    }
    let lattice = hermite_rows(rows, dim);
    if lattice.len() == dim {
        return IntegerModule::full(dim);
    }
    // span_R(L) ∩ Z^d = ker(ker L): integer kernels are saturated
    let kernel = integer_kernel(&lattice, dim);
    let saturated = integer_kernel(&kernel, dim);
    let basis = hermite_rows(saturated, dim)
        .into_iter()
        .map(|row| row.iter().map(|x| x.to_i64().expect("module entries fit in i64")).collect())
        .collect();
    IntegerModule { dim, basis }
}

fn big_row(v: &[i64]) -> Vec<BigInt> {
    v.iter().map(|&x| BigInt::from(x)).collect()
}

fn to_big(rows: &[Vec<i64>]) -> Vec<Vec<BigInt>> {
    rows.iter().map(|r| big_row(r)).collect()
}

/// Row Hermite normal form: nonzero rows, positive pivots, entries above
/// each pivot reduced into `[0, pivot)`.
pub fn hermite_rows(mut rows: Vec<Vec<BigInt>>, dim: usize) -> Vec<Vec<BigInt>> {
    let mut pivot_row = 0;
    let mut pivots = Vec::new();
    for col in 0..dim {
        if pivot_row >= rows.len() {
            break;
        }
        clear_below(&mut rows, pivot_row, col);
        if rows[pivot_row][col].is_zero() {
            continue;
        }
        if rows[pivot_row][col].is_negative() {
            for x in rows[pivot_row].iter_mut() {
                *x = -x.clone();
            }
        }
        pivots.push((pivot_row, col));
        pivot_row += 1;
    }
    rows.truncate(pivot_row);
    for &(pr, col) in &pivots {
        let pivot = rows[pr].clone();
        for r in 0..pr {
            let q = rows[r][col].div_floor(&pivot[col]);
            if q.is_zero() {
                continue;
            }
            for (x, p) in rows[r].iter_mut().zip(&pivot) {
                *x -= &q * p;
            }
        }
    }
    rows
}

/// Basis of `{x ∈ Z^d : A x = 0}` for the rows `A`.
fn integer_kernel(a: &[Vec<BigInt>], dim: usize) -> Vec<Vec<BigInt>> {
    let r = a.len();
    // rows of [Aᵀ | I]; unimodular row operations keep the right half a basis
    let mut aug: Vec<Vec<BigInt>> = (0..dim)
        .map(|i| {
            let mut row: Vec<BigInt> = (0..r).map(|j| a[j][i].clone()).collect();
            row.extend((0..dim).map(|j| BigInt::from(i64::from(i == j))));
            row
        })
        .collect();
    let reduced = echelon_prefix(&mut aug, r);
    aug.drain(..reduced);
    aug.into_iter().map(|row| row[r..].to_vec()).collect()
}

/// Integer row echelon on the first `cols` columns; returns the number of
/// nonzero rows in that prefix (they come first).
fn echelon_prefix(rows: &mut [Vec<BigInt>], cols: usize) -> usize {
    let mut pivot_row = 0;
    for col in 0..cols {
        if pivot_row >= rows.len() {
            break;
        }
        clear_below(rows, pivot_row, col);
        if !rows[pivot_row][col].is_zero() {
            pivot_row += 1;
        }
    }
    pivot_row
}

/// Euclid on column `col` below `pivot_row`: leaves the gcd in the pivot
/// position and zeros underneath, by unimodular row operations.
fn clear_below(rows: &mut [Vec<BigInt>], pivot_row: usize, col: usize) {
    loop {
        let best = (pivot_row..rows.len())
            .filter(|&r| !rows[r][col].is_zero())
            .min_by(|&a, &b| rows[a][col].abs().cmp(&rows[b][col].abs()));
        let Some(best) = best else { return };
        rows.swap(pivot_row, best);
        let pivot = rows[pivot_row].clone();
        let mut done = true;
        for row in rows[pivot_row + 1..].iter_mut() {
            if row[col].is_zero() {
                continue;
            }
            let q = row[col].div_floor(&pivot[col]);
            for (x, p) in row.iter_mut().zip(&pivot) {
                *x -= &q * p;
            }
            done &= row[col].is_zero();
        }
        if done {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{metric_from_basis, LatticeBasis};
    use proptest::prelude::*;

    #[test]
    fn spec_examples() {
        assert!(module_of(&[], 2).is_trivial());
        assert_eq!(module_of(&[vec![0, 2]], 2).basis(), &[vec![0, 1]]);
        let full = module_of(&[vec![2, 0], vec![0, 3], vec![1, 1]], 2);
        assert!(full.is_full());
        // (2,0) and (0,2) generate an index-4 sublattice whose saturation is Z²
        assert!(module_of(&[vec![2, 0], vec![0, 2]], 2).is_full());
    }

    #[test]
    fn saturation_in_three_dimensions() {
        // (2,2,0) and (0,3,3): span contains (1,1,0) and (0,1,1)
        let m = module_of(&[vec![2, 2, 0], vec![0, 3, 3]], 3);
        assert_eq!(m.rank(), 2);
        assert!(m.contains(&[1, 1, 0]) && m.contains(&[0, 1, 1]) && m.contains(&[1, 0, -1]));
        assert!(!m.contains(&[1, 0, 0]));
        assert_eq!(m.basis(), &[vec![1, 0, -1], vec![0, 1, 1]]);
    }

    #[test]
    fn projection_examples() {
        let id = MetricTensor::identity(2);
        let m = module_of(&[vec![0, 1]], 2);
        let (a, p) = m.project(&[3.0, 4.0], &id);
        assert_eq!(a, vec![0.0, 4.0]);
        assert_eq!(p, vec![3.0, 0.0]);
        let (a, p) = IntegerModule::trivial(2).project(&[3.0, 4.0], &id);
        assert_eq!((a, p), (vec![0.0, 0.0], vec![3.0, 4.0]));

        let skew = metric_from_basis(&LatticeBasis::new(vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap()).unwrap();
        let (a, p) = m.project(&[3.0, 4.0], &skew);
        // normal equation: g^{22} c = g^{21}·3 + g^{22}·4 ⇒ c = 1
        assert!((a[0]).abs() < 1e-12 && (a[1] - 1.0).abs() < 1e-12);
        assert!((p[0] - 3.0).abs() < 1e-12 && (p[1] - 3.0).abs() < 1e-12);
        assert!(skew.inner_real(&p, &[0.0, 1.0]).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn order_does_not_matter(vs in proptest::collection::vec(proptest::collection::vec(-6i64..6, 3), 0..5)) {
            let a = module_of(&vs, 3);
            let mut rev = vs.clone();
            rev.reverse();
            prop_assert_eq!(&a, &module_of(&rev, 3));
            for v in &vs {
                prop_assert!(a.contains(v));
            }
            // saturation: halving any even member keeps it inside
            for b in a.basis() {
                let doubled: Vec<i64> = b.iter().map(|x| 2 * x).collect();
                prop_assert!(module_of(&[doubled], 3).contains(b));
            }
        }

        #[test]
        fn projection_is_orthogonal(x in -20.0f64..20.0, y in -20.0f64..20.0, z in -20.0f64..20.0, k in proptest::collection::vec(-3i64..3, 3)) {
            prop_assume!(k.iter().any(|&c| c != 0));
            let metric = metric_from_basis(&LatticeBasis::new(vec![vec![1.0, 0.2, 0.0], vec![0.3, 1.0, 0.1], vec![0.0, 0.4, 1.5]]).unwrap()).unwrap();
            let m = module_of(&[k], 3);
            let xi = [x, y, z];
            let (a, p) = m.project(&xi, &metric);
            for i in 0..3 {
                prop_assert!((a[i] + p[i] - xi[i]).abs() <= 1e-14 * xi[i].abs().max(1.0));
            }
            for b in m.basis() {
                let bf: Vec<f64> = b.iter().map(|&v| v as f64).collect();
                prop_assert!(metric.inner_real(&p, &bf).abs() <= 1e-10 * (1.0 + metric.inner_real(&xi, &xi).sqrt()));
            }
        }
    }
}
