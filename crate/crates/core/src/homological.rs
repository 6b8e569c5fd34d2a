//! Homological equation `−i[−Δ_g, G] + nr = 0` on nonresonant fibers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::resonance::FiberGeometry;
use crate::weyl::{OperatorMatrix, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Entries with `|⟨η|k⟩|` below this are treated as resonant.
pub const DIVISOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct HomologicalSolution {
    pub g: OperatorMatrix,
    pub residual_norm: f64,
}

/// `G(ξ+k, ξ) = nr(ξ+k, ξ) / (2i⟨η|k⟩)` with `η = ξ + k/2`.
pub fn solve_homological(nr: &OperatorMatrix) -> Result<HomologicalSolution> {
    let modes = nr.modes().clone();
    let layout = nr.layout().clone();
    let diag: Vec<f64> = (0..modes.len()).map(|i| modes.norm_sq(i)).collect();
    // G vanishes wherever nr does, so those entries add nothing to the residual.
    let mut residual_sq = 0.0;
    let mut blocks = Vec::with_capacity(layout.num_blocks());
    for (members, m) in layout.blocks().iter().zip(nr.blocks()) {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (c, &j) in members.iter().enumerate() {
            for (r, &v) in m.column(c).iter().enumerate().filter(|(_, v)| **v != ZERO) {
                let i = members[r];
                let inner = FiberGeometry::of_entry(&modes, i, j).inner;
                if inner.abs() < DIVISOR_FLOOR {
                    return Err(Error::ResonantLeak { k: modes.shift(i, j), eta_doubled: modes.midpoint_halves(i, j) });
                }
                let g = v / C64::new(0.0, 2.0 * inner);
                out[(r, c)] = g;
                residual_sq += (g * C64::new(0.0, diag[j] - diag[i]) + v).norm_sqr();
            }
        }
        blocks.push(out);
    }
    let g = OperatorMatrix::from_parts(modes, layout, blocks);
    Ok(HomologicalSolution { g, residual_norm: residual_sq.sqrt() })
}

/// `‖−i(−Δ_g G − G(−Δ_g)) + nr‖_F`.
pub fn residual(g: &OperatorMatrix, nr: &OperatorMatrix) -> f64 {
    let modes = g.modes();
    let diag: Vec<f64> = (0..modes.len()).map(|i| modes.norm_sq(i)).collect();
    if g.layout() != nr.layout() {
        return g.diagonal_commutator(&diag).scale(C64::new(0.0, -1.0)).add(nr).frobenius_norm();
    }
    let mut sum = 0.0;
    for ((members, gb), nb) in g.layout().blocks().iter().zip(g.blocks()).zip(nr.blocks()) {
        for (c, &j) in members.iter().enumerate() {
            for (r, &i) in members.iter().enumerate() {
                let v = gb[(r, c)] * C64::new(0.0, diag[j] - diag[i]) + nb[(r, c)];
                sum += v.norm_sqr();
            }
        }
    }
    sum.sqrt()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::MetricTensor;
    use crate::resonance::{decompose, NFParams};
    use crate::symbols::{cosine_pair, SymbolSpec, SymbolTerm, TimeProfile};
    use crate::weyl::{laplacian_matrix, quantize, BlockLayout, ModeSet};
    use proptest::prelude::*;

    fn modes(cutoff: f64) -> Arc<ModeSet> {
        Arc::new(ModeSet::new(cutoff, MetricTensor::identity(2)).unwrap())
    }

    #[test]
    fn zero_input() {
        let ms = modes(5.0);
        let nr = OperatorMatrix::zeros(ms.clone(), Arc::new(BlockLayout::dense(ms.len())));
        let sol = solve_homological(&nr).unwrap();
        assert!(sol.g.is_zero());
        assert_eq!(sol.residual_norm, 0.0);
    }

    #[test]
    fn single_entry_formula() {
        let ms = modes(4.0);
        let layout = Arc::new(BlockLayout::dense(ms.len()));
        let (r, c) = (ms.index_of(&[1, 0]).unwrap(), ms.index_of(&[0, 0]).unwrap());
        let val = C64::new(0.3, -0.7);
        let nr = OperatorMatrix::from_fn(ms.clone(), layout, |i, j| if (i, j) == (r, c) { val } else { C64::new(0.0, 0.0) });
        let sol = solve_homological(&nr).unwrap();
        // ⟨η|k⟩ = 1/2 at η = (1/2, 0), k = (1, 0)
        assert!((sol.g.entry(r, c) - val * C64::new(0.0, -1.0)).norm() < 1e-15);
        assert!(sol.residual_norm < 1e-15);
    }

    #[test]
    fn conjugate_pairs_stay_hermitian() {
        let ms = modes(4.0);
        let layout = Arc::new(BlockLayout::dense(ms.len()));
        let (a, b) = (ms.index_of(&[1, 1]).unwrap(), ms.index_of(&[0, 1]).unwrap());
        let c = C64::new(0.4, 1.1);
        let nr = OperatorMatrix::from_fn(ms.clone(), layout, |i, j| match (i, j) {
            (i, j) if (i, j) == (a, b) => c,
            (i, j) if (i, j) == (b, a) => c.conj(),
            _ => C64::new(0.0, 0.0),
        });
        let g = solve_homological(&nr).unwrap().g;
        assert!(g.hermitian_defect() < 1e-16);
        assert!((g.entry(a, b) - c / C64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn resonant_leak_is_reported() {
        let ms = modes(4.0);
        let layout = Arc::new(BlockLayout::dense(ms.len()));
        // k = 0 has a vanishing divisor
        let o = ms.index_of(&[0, 0]).unwrap();
        let nr = OperatorMatrix::from_fn(ms.clone(), layout, |i, j| if i == o && j == o { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        assert!(matches!(solve_homological(&nr), Err(Error::ResonantLeak { .. })));
    }

    #[test]
    fn residual_of_zero_generator_is_input_norm() {
        let ms = modes(6.0);
        let a = quantize(&cos(0.0), 0.0, &ms);
        let zero = OperatorMatrix::zeros(ms.clone(), a.layout().clone());
        assert!((residual(&zero, &a) - a.frobenius_norm()).abs() < 1e-14);
        // nr := i[−Δ, G] solves the equation for any G
        let lap = laplacian_matrix(&ms);
        let nr = lap.commutator(&a).scale(C64::new(0.0, 1.0));
        assert!(residual(&a, &nr) < 1e-13);
    }

    fn cos(order: f64) -> SymbolSpec {
        SymbolSpec::new(vec![SymbolTerm::new(TimeProfile::constant(1.0), order, cosine_pair(&[1, 0])).unwrap()]).unwrap()
    }

    proptest! {
        #[test]
        fn solution_is_exact_on_decomposed_input(re in -2.0f64..2.0, im in -2.0f64..2.0, order in -0.5f64..1.2, k0 in 0i64..3, k1 in 1i64..3) {
            let ms = modes(10.0);
            let p = NFParams { delta: 0.6, epsilon: 0.04, tau: 1.0, m: 1.0, d: 2 };
            let coeffs = vec![(vec![k0, k1], C64::new(re, im)), (vec![-k0, -k1], C64::new(re, -im))];
            let spec = SymbolSpec::new(vec![
                SymbolTerm::new(TimeProfile::constant(1.0), order, coeffs).unwrap(),
                SymbolTerm::new(TimeProfile::constant(1.0), order, cosine_pair(&[1, 0])).unwrap(),
            ]).unwrap();
            let nr = decompose(&quantize(&spec, 0.0, &ms), &p).nr;
            let sol = solve_homological(&nr).unwrap();
            prop_assert!(sol.residual_norm <= 1e-12 * nr.frobenius_norm().max(1e-300));
            prop_assert!((sol.residual_norm - residual(&sol.g, &nr)).abs() <= 1e-15 * nr.frobenius_norm().max(1.0));
            prop_assert!(sol.g.hermitian_defect() <= 1e-14 * sol.g.max_abs().max(1.0));
        }
    }
}
