//! Normal-form parameters, the cutoff `χ` and the four-way fiber decomposition.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Covector, MetricTensor};
use crate::weyl::{BlockLayout, ModeSet, OperatorMatrix, C64};

/// `(δ, ε, τ, m, d)` of the normal-form construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NFParams {
    pub delta: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub m: f64,
    pub d: usize,
}

impl NFParams {
    /// `δ* = δ + d(d + τ + 1)ε`.
    pub fn delta_star(&self) -> f64 {
        let d = self.d as f64;
        self.delta + d * (d + self.tau + 1.0) * self.epsilon
    }
}

/// Every violated constraint, in a fixed order. Empty means valid.
pub fn param_violations(p: &NFParams) -> Vec<String> {
    let mut out = Vec::new();
    let finite = [p.delta, p.epsilon, p.tau, p.m].iter().all(|x| x.is_finite());
    if !finite {
        out.push("parameters must be finite".to_string());
        return out;
    }
    if p.d == 0 {
        out.push("d must be positive".into());
    }
    if p.epsilon * (p.tau + 1.0) <= 0.0 {
        out.push("ε(τ+1) ≤ 0".into());
    }
    if p.epsilon * (p.tau + 1.0) >= p.delta {
        out.push("ε(τ+1) ≥ δ".into());
    }
    if p.delta >= 1.0 {
        out.push("δ ≥ 1".into());
    }
    if p.tau < p.d as f64 - 1.0 {
        out.push("τ < d−1".into());
    }
    if p.delta_star() >= 1.0 {
        out.push(format!("δ + d(d+τ+1)ε = {} ≥ 1", p.delta_star()));
    }
    if p.m >= 2.0 * p.delta {
        out.push("m ≥ 2δ".into());
    }
    if p.m >= 2.0 {
        out.push("m ≥ 2".into());
    }
    out
}

pub fn validate_params(p: &NFParams) -> Result<()> {
    let v = param_violations(p);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidParams(v))
    }
}

fn bump_edge(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

/// Even cutoff, `1` on `|y| ≤ 1/2`, `0` on `|y| ≥ 1`.
pub fn chi(y: f64) -> f64 {
    let a = y.abs();
    if a <= 0.5 {
        return 1.0;
    }
    if a >= 1.0 {
        return 0.0;
    }
    let up = bump_edge(2.0 * (1.0 - a));
    let down = bump_edge(2.0 * (a - 0.5));
    up / (up + down)
}

/// `χ_k(η) = χ(2‖k‖^τ ⟨η|k⟩ / ⟨η⟩^δ)`.
pub fn chi_k(eta: &Covector, k: &Covector, p: &NFParams, m: &MetricTensor) -> Result<f64> {
    let (eta_h, k_h) = checked(eta, k, m)?;
    Ok(FiberGeometry::new(&eta_h, &k_h, m).chi(p))
}

/// `χ̃_k(η) = χ(‖k‖ / ⟨η⟩^ε)`.
pub fn tilde_chi_k(eta: &Covector, k: &Covector, p: &NFParams, m: &MetricTensor) -> Result<f64> {
    let (eta_h, k_h) = checked(eta, k, m)?;
    Ok(FiberGeometry::new(&eta_h, &k_h, m).tilde_chi(p))
}

fn checked(eta: &Covector, k: &Covector, m: &MetricTensor) -> Result<(Vec<i64>, Vec<i64>)> {
    for c in [eta, k] {
        if c.dim() != m.dim() {
            return Err(Error::DimensionMismatch { expected: m.dim(), got: c.dim() });
        }
    }
    if k.is_zero() {
        return Err(Error::ZeroWaveVector);
    }
    Ok((eta.halves().to_vec(), k.halves().to_vec()))
}

/// Metric data of one fiber entry, from doubled coordinates.
#[derive(Debug, Clone, Copy)]
pub struct FiberGeometry {
    /// `⟨η|k⟩`.
    pub inner: f64,
    /// `‖k‖`.
    pub k_norm: f64,
    /// `⟨η⟩`.
    pub bracket: f64,
}

impl FiberGeometry {
    pub fn new(eta_halves: &[i64], k_halves: &[i64], m: &MetricTensor) -> Self {
        Self {
            inner: m.inner_halves(eta_halves, k_halves),
            k_norm: m.inner_halves(k_halves, k_halves).max(0.0).sqrt(),
            bracket: m.bracket_halves(eta_halves),
        }
    }

    /// Geometry of the entry `(i, j)` of an operator on `modes`.
    pub fn of_entry(modes: &ModeSet, i: usize, j: usize) -> Self {
        let eta = modes.midpoint_halves(i, j);
        let k: Vec<i64> = modes.shift(i, j).iter().map(|x| 2 * x).collect();
        Self::new(&eta, &k, modes.metric())
    }

    pub fn chi(&self, p: &NFParams) -> f64 {
        chi(2.0 * self.k_norm.powf(p.tau) * self.inner / self.bracket.powf(p.delta))
    }

    pub fn tilde_chi(&self, p: &NFParams) -> f64 {
        chi(self.k_norm / self.bracket.powf(p.epsilon))
    }

    /// Defining region of normal-form operators:
    /// `|⟨η|k⟩| ≤ ⟨η⟩^δ ‖k‖^{−τ}` and `‖k‖ ≤ ⟨η⟩^ε`.
    pub fn is_resonant(&self, p: &NFParams) -> bool {
        self.inner.abs() <= self.bracket.powf(p.delta) * self.k_norm.powf(-p.tau)
            && self.k_norm <= self.bracket.powf(p.epsilon)
    }

    /// `|⟨η|k⟩|·‖k‖^τ / ⟨η⟩^δ`, bounded below by `1/4` on nonresonant support.
    pub fn divisor_ratio(&self, p: &NFParams) -> f64 {
        self.inner.abs() * self.k_norm.powf(p.tau) / self.bracket.powf(p.delta)
    }
}

/// `w = ⟨w⟩ + w^(res) + w^(nr) + w^(S)` at matrix level.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub avg: OperatorMatrix,
    pub res: OperatorMatrix,
    pub nr: OperatorMatrix,
    pub smooth: OperatorMatrix,
}

impl Decomposition {
    pub fn sum(&self) -> OperatorMatrix {
        let mut out = self.avg.clone();
        out.add_assign(&self.res);
        out.add_assign(&self.nr);
        out.add_assign(&self.smooth);
        out
    }
}

/// Per-entry weights `(χχ̃, (1−χ)χ̃)` for one layout, reusable across
/// operators sharing it. Diagonal entries carry `NaN` markers and go to `avg`.
#[derive(Debug, Clone)]
pub struct MaskTable {
    layout: Arc<BlockLayout>,
    res: Vec<DMatrix<f64>>,
    nr: Vec<DMatrix<f64>>,
}

impl MaskTable {
    pub fn new(modes: &ModeSet, layout: Arc<BlockLayout>, p: &NFParams) -> Self {
        let mut res = Vec::with_capacity(layout.num_blocks());
        let mut nr = Vec::with_capacity(layout.num_blocks());
        for members in layout.blocks() {
            let n = members.len();
            let mut r = DMatrix::zeros(n, n);
            let mut q = DMatrix::zeros(n, n);
            for c in 0..n {
                for a in 0..n {
                    if a == c {
                        continue;
                    }
                    let geo = FiberGeometry::of_entry(modes, members[a], members[c]);
                    let (x, y) = (geo.chi(p), geo.tilde_chi(p));
                    r[(a, c)] = x * y;
                    q[(a, c)] = (1.0 - x) * y;
                }
            }
            res.push(r);
            nr.push(q);
        }
        Self { layout, res, nr }
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn decompose(&self, a: &OperatorMatrix) -> Decomposition {
        assert!(
            Arc::ptr_eq(&self.layout, a.layout()) || **a.layout() == *self.layout,
            "mask table built for another layout"
        );
        split(a, |b, r, c, _, _| (self.res[b][(r, c)], self.nr[b][(r, c)]))
    }
}

/// Splits `a` with weights `(res, nr)` given per nonzero off-diagonal entry
/// as a function of (block, row, column, mode row, mode column).
fn split(a: &OperatorMatrix, mut weights: impl FnMut(usize, usize, usize, usize, usize) -> (f64, f64)) -> Decomposition {
    let modes = a.modes().clone();
    let layout = a.layout().clone();
    let mut parts: [Vec<DMatrix<C64>>; 4] = Default::default();
    for (b, (m, members)) in a.blocks().iter().zip(layout.blocks()).enumerate() {
        let n = m.nrows();
        let mut avg = DMatrix::zeros(n, n);
        let mut res = DMatrix::zeros(n, n);
        let mut nr = DMatrix::zeros(n, n);
        let mut smooth = DMatrix::zeros(n, n);
        for c in 0..n {
            for r in 0..n {
                let v = m[(r, c)];
                if r == c {
                    avg[(r, c)] = v;
                    continue;
                }
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                let (wr, wn) = weights(b, r, c, members[r], members[c]);
                res[(r, c)] = v * wr;
                nr[(r, c)] = v * wn;
                smooth[(r, c)] = v * (1.0 - wr - wn);
            }
        }
        parts[0].push(avg);
        parts[1].push(res);
        parts[2].push(nr);
        parts[3].push(smooth);
    }
    let [avg, res, nr, smooth] = parts;
    let build = |blocks| OperatorMatrix::from_parts(modes.clone(), layout.clone(), blocks);
    Decomposition { avg: build(avg), res: build(res), nr: build(nr), smooth: build(smooth) }
}

/// Splits `A` fiber by fiber with masks evaluated at the Weyl midpoint.
pub fn decompose(a: &OperatorMatrix, p: &NFParams) -> Decomposition {
    let modes = a.modes().clone();
    split(a, |_, _, _, i, j| {
        let geo = FiberGeometry::of_entry(&modes, i, j);
        let (x, y) = (geo.chi(p), geo.tilde_chi(p));
        (x * y, (1.0 - x) * y)
    })
}

/// Whether every nonzero off-diagonal entry lies in the resonant region.
pub fn is_normal_form(a: &OperatorMatrix, p: &NFParams) -> bool {
    first_violation(a, p).is_none()
}

/// First nonzero entry outside the resonant region, as `(row, col)`.
pub fn first_violation(a: &OperatorMatrix, p: &NFParams) -> Option<(usize, usize)> {
    let modes = a.modes();
    let mut found = None;
    a.for_each_entry(|i, j, v| {
        if found.is_none() && i != j && v != C64::new(0.0, 0.0) && !FiberGeometry::of_entry(modes, i, j).is_resonant(p) {
            found = Some((i, j));
        }
    });
    found
}
