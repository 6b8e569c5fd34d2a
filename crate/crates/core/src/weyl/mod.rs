//! Truncated Weyl quantization and the matrix-level operator algebra.

mod layout;
pub mod linalg;
mod modes;
mod operator;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use layout::BlockLayout;
pub use linalg::C64;
pub use modes::ModeSet;
pub use operator::{BlockEigen, OperatorMatrix};

use crate::error::{Error, Result};
use crate::geometry::Covector;
use crate::symbols::SymbolSpec;

/// Hermiticity tolerance for generators passed to [`conjugate_exact`].
pub const GENERATOR_HERMITIAN_TOL: f64 = 1e-10;

/// Default relative tolerance of [`sobolev_opnorm`].
pub const OPNORM_TOL: f64 = 1e-6;

/// Layout on which every operator with Fourier support in `spec` is exact.
pub fn layout_for(spec: &SymbolSpec, modes: &ModeSet) -> BlockLayout {
    let support = spec.support();
    BlockLayout::coupling(modes, support.iter().map(Vec::as_slice))
}

/// `Op^W(v(t))` on the truncated modes: entry `(ξ+k, ξ) = v̂_k(t, ξ + k/2)`.
pub fn quantize(spec: &SymbolSpec, t: f64, modes: &Arc<ModeSet>) -> OperatorMatrix {
    let layout = Arc::new(layout_for(spec, modes));
    quantize_in(spec, t, modes, &layout).expect("coupling layout holds the symbol support")
}

/// As [`quantize`], on a caller-provided layout that must contain the support.
pub fn quantize_in(
    spec: &SymbolSpec,
    t: f64,
    modes: &Arc<ModeSet>,
    layout: &Arc<BlockLayout>,
) -> Result<OperatorMatrix> {
    let table = spec.fiber_table(t);
    let metric = modes.metric();
    let mut out = OperatorMatrix::zeros(modes.clone(), layout.clone());
    let mut target = vec![0i64; modes.dim()];
    for (k, parts) in &table {
        if k.len() != modes.dim() {
            return Err(Error::DimensionMismatch { expected: modes.dim(), got: k.len() });
        }
        for j in 0..modes.len() {
            let xi = modes.mode(j);
            for a in 0..target.len() {
                target[a] = xi[a] + k[a];
            }
            let Some(i) = modes.index_of(&target) else { continue };
            let bracket = metric.bracket_halves(&modes.midpoint_halves(i, j));
            let value: C64 = parts.iter().map(|(c, order)| c * bracket.powf(*order)).sum();
            if value == C64::new(0.0, 0.0) {
                continue;
            }
            let b = layout.block_of(i);
            if b != layout.block_of(j) {
                return Err(Error::LayoutMismatch(format!("fiber {k:?} crosses blocks of the target layout")));
            }
            out.blocks_mut()[b][(layout.pos(i), layout.pos(j))] += value;
        }
    }
    Ok(out)
}

/// `−Δ_g`: the diagonal of `‖ξ‖²`, on singleton blocks.
pub fn laplacian_matrix(modes: &Arc<ModeSet>) -> OperatorMatrix {
    laplacian_in(modes, &Arc::new(BlockLayout::singletons(modes.len())))
}

pub fn laplacian_in(modes: &Arc<ModeSet>, layout: &Arc<BlockLayout>) -> OperatorMatrix {
    OperatorMatrix::from_diagonal(modes.clone(), layout.clone(), |i| C64::new(modes.norm_sq(i), 0.0))
}

/// The `k`-fiber `{η = ξ + k/2 ↦ A(ξ+k, ξ)}` over represented pairs.
pub fn dequantize(a: &OperatorMatrix, k: &[i64]) -> BTreeMap<Covector, C64> {
    let modes = a.modes();
    let mut out = BTreeMap::new();
    let mut target = vec![0i64; modes.dim()];
    for j in 0..modes.len() {
        let xi = modes.mode(j);
        for c in 0..target.len() {
            target[c] = xi[c] + k[c];
        }
        if let Some(i) = modes.index_of(&target) {
            out.insert(Covector::midpoint(xi, k), a.entry(i, j));
        }
    }
    out
}

/// Rebuilds a matrix from fibers `k ↦ {η ↦ value}`; unrepresented pairs are dropped.
pub fn from_fibers(
    modes: &Arc<ModeSet>,
    layout: &Arc<BlockLayout>,
    fibers: &BTreeMap<Vec<i64>, BTreeMap<Covector, C64>>,
) -> Result<OperatorMatrix> {
    let mut out = OperatorMatrix::zeros(modes.clone(), layout.clone());
    for (k, fiber) in fibers {
        for (eta, &value) in fiber {
            // ξ = η − k/2 in doubled coordinates
            let doubled: Vec<i64> = eta.halves().iter().zip(k).map(|(e, kk)| e - kk).collect();
            if doubled.iter().any(|x| x % 2 != 0) {
                return Err(Error::Config(format!("midpoint {:?} is not on the fiber {k:?}", eta.halves())));
            }
            let xi: Vec<i64> = doubled.iter().map(|x| x / 2).collect();
            let target: Vec<i64> = xi.iter().zip(k).map(|(a, b)| a + b).collect();
            let (Some(i), Some(j)) = (modes.index_of(&target), modes.index_of(&xi)) else { continue };
            let b = layout.block_of(i);
            if b != layout.block_of(j) {
                if value != C64::new(0.0, 0.0) {
                    return Err(Error::LayoutMismatch(format!("fiber {k:?} crosses blocks")));
                }
                continue;
            }
            out.blocks_mut()[b][(layout.pos(i), layout.pos(j))] = value;
        }
    }
    Ok(out)
}

/// `e^{iτG} A e^{−iτG}` through the spectral decomposition of `G`.
pub fn conjugate_exact(a: &OperatorMatrix, g: &OperatorMatrix, tau: f64) -> Result<OperatorMatrix> {
    let defect = g.hermitian_defect();
    if defect > GENERATOR_HERMITIAN_TOL * g.max_abs().max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    let (a, g) = a.aligned(g);
    let blocks = a
        .blocks()
        .iter()
        .zip(g.blocks())
        .map(|(ab, gb)| if gb.iter().all(|v| v.norm() == 0.0) { ab.clone() } else { linalg::eigh(gb).conjugate(ab, tau) })
        .collect();
    Ok(OperatorMatrix::from_parts(a.modes().clone(), a.layout().clone(), blocks))
}

/// `Σ_{j=0}^{N} (iτ)^j Ad_G^j(A) / j!` with `Ad_G^{j+1} A = [G, Ad_G^j A]`.
pub fn lie_series(a: &OperatorMatrix, g: &OperatorMatrix, tau: f64, n: usize) -> OperatorMatrix {
    let (a, g) = a.aligned(g);
    let mut term = a.clone().into_owned();
    let mut sum = term.clone();
    for j in 1..=n {
        term = g.commutator(&term).scale(C64::new(0.0, tau / j as f64));
        sum.add_assign(&term);
    }
    sum
}

/// Largest singular value of `D^{σ2} A D^{−σ1}`, `D = diag(⟨ξ⟩)`, by power
/// iteration on each block.
pub fn sobolev_opnorm(a: &OperatorMatrix, sigma1: f64, sigma2: f64) -> f64 {
    sobolev_opnorm_tol(a, sigma1, sigma2, OPNORM_TOL)
}

pub fn sobolev_opnorm_tol(a: &OperatorMatrix, sigma1: f64, sigma2: f64, tol: f64) -> f64 {
    let modes = a.modes();
    a.layout()
        .blocks()
        .iter()
        .zip(a.blocks())
        .map(|(members, m)| {
            let n = members.len();
            let weighted = DMatrix::from_fn(n, n, |r, c| {
                m[(r, c)] * (modes.bracket(members[r]).powf(sigma2) * modes.bracket(members[c]).powf(-sigma1))
            });
            top_singular_value(&weighted, tol)
        })
        .fold(0.0, f64::max)
}

/// Power iteration on `B†B` with a Rayleigh-quotient estimate.
pub(crate) fn top_singular_value(b: &DMatrix<C64>, tol: f64) -> f64 {
    let n = b.ncols();
    if n == 0 || b.iter().all(|v| v.norm() == 0.0) {
        return 0.0;
    }
    if n == 1 && b.nrows() == 1 {
        return b[(0, 0)].norm();
    }
    let bh = b.adjoint();
    // deterministic start with no special alignment to any eigenvector
    let mut v = DVector::from_fn(n, |i, _| C64::new(1.0 + 0.37 * ((i * 7919 % 101) as f64 / 101.0), 0.11 * (i % 5) as f64));
    v /= C64::new(v.norm(), 0.0);
    let mut estimate = 0.0;
    for _ in 0..20_000 {
        let w = &bh * (b * &v);
        let lambda = v.dotc(&w).re.max(0.0);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / C64::new(norm, 0.0);
        let sigma = lambda.sqrt();
        if (sigma - estimate).abs() <= 1e-3 * tol * sigma {
            return sigma.max((b * &v).norm());
        }
        estimate = sigma;
    }
    estimate.max((b * &v).norm())
}
