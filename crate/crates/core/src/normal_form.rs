//! Iterated normal-form conjugation on a time grid.
//!
//! Each step removes the nonresonant part of the remainder with the generator
//! `G_N` and conjugates `H = −Δ_g + Z + R` by `e^{iG_N}`, subtracting the
//! Duhamel term `∫₀¹ e^{iτG} ∂tG e^{−iτG} dτ`. The accumulated conjugator
//! `U_N = e^{iG_{N−1}}···e^{iG_0}` maps the original state to the new one:
//! `φ = U_N ψ`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homological::solve_homological;
use crate::resonance::{first_violation, validate_params, MaskTable, NFParams};
use crate::symbols::{is_real_valued, time_derivative, SymbolSpec};
use crate::weyl::linalg::{self, gauss_legendre_unit};
use crate::weyl::{laplacian_in, layout_for, quantize_in, BlockLayout, ModeSet, OperatorMatrix, C64};

/// Hermiticity drift that aborts a step.
pub const HERMITICITY_ABORT: f64 = 1e-8;

/// Remainder size on the inner annulus below which iteration stops.
pub const REMAINDER_FLOOR: f64 = 1e-13;

pub const DEFAULT_QUADRATURE_NODES: usize = 8;
pub const DEFAULT_BUFFER: f64 = 0.25;

/// Uniform samples of `[t0, t1]`. A periodic grid treats `t1` as `t0` and
/// omits it; finite differences then wrap around.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub samples: usize,
    #[serde(default)]
    pub periodic: bool,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, samples: usize, periodic: bool) -> Result<Self> {
        let grid = Self { t0, t1, samples, periodic };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 5 {
            return Err(Error::InvalidGrid(format!("need at least 5 samples, got {}", self.samples)));
        }
        if !(self.t0.is_finite() && self.t1.is_finite()) || self.t1 <= self.t0 {
            return Err(Error::InvalidGrid(format!("need t1 > t0, got [{}, {}]", self.t0, self.t1)));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        let intervals = if self.periodic { self.samples } else { self.samples - 1 };
        (self.t1 - self.t0) / intervals as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.spacing()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples).map(|j| self.time(j)).collect()
    }

    pub fn period(&self) -> Option<f64> {
        self.periodic.then_some(self.t1 - self.t0)
    }

    /// Sample index of `t`, reducing modulo the period on periodic grids.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let h = self.spacing();
        let mut x = (t - self.t0) / h;
        if self.periodic {
            x = x.rem_euclid(self.samples as f64);
        }
        let j = x.round();
        if (x - j).abs() > 1e-6 || j < 0.0 {
            return None;
        }
        let j = j as usize;
        match (j < self.samples, self.periodic) {
            (true, _) => Some(j),
            (false, true) if j == self.samples => Some(0),
            _ => None,
        }
    }

    /// Fourth-order first-derivative stencil at sample `j`.
    pub fn stencil(&self, j: usize) -> Vec<(usize, f64)> {
        let m = self.samples;
        let s = 1.0 / (12.0 * self.spacing());
        let central = [(-2i64, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)];
        if self.periodic {
            return central.iter().map(|&(o, w)| ((j as i64 + o).rem_euclid(m as i64) as usize, w * s)).collect();
        }
        let one_sided = |base: usize, w: [f64; 5], sign: f64, rev: bool| -> Vec<(usize, f64)> {
            (0..5).map(|q| (if rev { base - q } else { base + q }, sign * w[q] * s)).collect()
        };
        const EDGE: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
        const NEXT: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];
        match j {
            0 => one_sided(0, EDGE, 1.0, false),
            1 => one_sided(0, NEXT, 1.0, false),
            _ if j == m - 1 => one_sided(m - 1, EDGE, -1.0, true),
            _ if j == m - 2 => one_sided(m - 1, NEXT, -1.0, true),
            _ => central.iter().map(|&(o, w)| ((j as i64 + o) as usize, w * s)).collect(),
        }
    }

    /// `∂t` of a sampled family by fourth-order finite differences.
    pub fn derivative(&self, family: &[OperatorMatrix]) -> Vec<OperatorMatrix> {
        assert_eq!(family.len(), self.samples, "family does not match the grid");
        (0..self.samples)
            .into_par_iter()
            .map(|j| {
                let mut acc: Option<OperatorMatrix> = None;
                for (q, w) in self.stencil(j) {
                    let term = family[q].scale_real(w);
                    match acc.as_mut() {
                        None => acc = Some(term),
                        Some(a) => a.add_assign(&term),
                    }
                }
                acc.expect("stencil is nonempty")
            })
            .collect()
    }
}

/// Result of [`order_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    /// Fitted order; `−∞` when the input vanishes on the annulus.
    #[serde(with = "finite_or_null")]
    pub order: f64,
    pub residual: f64,
    pub bins: usize,
}

impl OrderFit {
    pub fn is_zero_sentinel(&self) -> bool {
        self.order == f64::NEG_INFINITY
    }
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

pub const ORDER_BINS: usize = 10;

/// Slope of `log max|entry|` against `log⟨η⟩` over `⟨η⟩`-deciles of the
/// inner annulus. Each bin contributes its largest entry (over all samples)
/// at that entry's own `⟨η⟩`.
pub fn order_report(samples: &[OperatorMatrix], buffer: f64) -> OrderFit {
    let Some(first) = samples.first() else {
        return OrderFit { order: f64::NEG_INFINITY, residual: 0.0, bins: 0 };
    };
    let modes = first.modes().clone();
    let inner = modes.inner_cutoff(buffer);
    let mut peak: std::collections::HashMap<(usize, usize), f64> = std::collections::HashMap::new();
    for a in samples {
        a.for_each_entry(|i, j, v| {
            let x = v.norm();
            if x > 0.0 && modes.bracket(i) <= inner && modes.bracket(j) <= inner {
                let e = peak.entry((i, j)).or_insert(0.0);
                *e = e.max(x);
            }
        });
    }
    if peak.is_empty() {
        return OrderFit { order: f64::NEG_INFINITY, residual: 0.0, bins: 0 };
    }
    let metric = modes.metric();
    let mut pts: Vec<(f64, f64)> =
        peak.into_iter().map(|((i, j), v)| (metric.bracket_halves(&modes.midpoint_halves(i, j)), v)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let bins = ORDER_BINS.min(pts.len());
    let mut xs = Vec::with_capacity(bins);
    let mut ys = Vec::with_capacity(bins);
    for b in 0..bins {
        let lo = b * pts.len() / bins;
        let hi = (b + 1) * pts.len() / bins;
        let best = pts[lo..hi].iter().copied().fold((0.0, 0.0), |acc, p| if p.1 >= acc.1 { p } else { acc });
        xs.push(best.0.ln());
        ys.push(best.1.ln());
    }
    let (slope, _, residual) = least_squares(&xs, &ys);
    OrderFit { order: slope, residual, bins }
}

/// Ordinary least squares `y ≈ slope·x + intercept`; returns the RMS residual.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Largest `|entry|` with both modes in the inner annulus.
pub fn annulus_max(a: &OperatorMatrix, buffer: f64) -> f64 {
    let modes = a.modes();
    let inner = modes.inner_cutoff(buffer);
    let mut worst: f64 = 0.0;
    a.for_each_entry(|i, j, v| {
        if modes.bracket(i) <= inner && modes.bracket(j) <= inner {
            worst = worst.max(v.norm());
        }
    });
    worst
}

/// Scalar diagnostics of one step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NFStepRecord {
    pub step: usize,
    /// Order of the remainder `R_N` entering the step.
    pub fitted_order: OrderFit,
    /// Order of the remainder `R_{N+1}` produced by the step.
    pub output_order: OrderFit,
    pub remainder_max: f64,
    pub homological_residual: f64,
    pub generator_norm: f64,
    pub hermiticity_defect: f64,
    pub unitarity_defect: f64,
    pub normal_form: bool,
}

/// Per-sample families produced by one step, passed to observers.
pub struct StepView<'a> {
    pub step: usize,
    pub g: &'a [OperatorMatrix],
    pub z: &'a [OperatorMatrix],
    pub r: &'a [OperatorMatrix],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NFOptions {
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default = "default_buffer")]
    pub buffer: f64,
    #[serde(default = "yes")]
    pub track_conjugator: bool,
}

fn default_nodes() -> usize {
    DEFAULT_QUADRATURE_NODES
}

fn default_buffer() -> f64 {
    DEFAULT_BUFFER
}

fn yes() -> bool {
    true
}

impl Default for NFOptions {
    fn default() -> Self {
        Self { quadrature_nodes: DEFAULT_QUADRATURE_NODES, buffer: DEFAULT_BUFFER, track_conjugator: true }
    }
}

/// Output of one [`nf_step`].
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub g: Vec<OperatorMatrix>,
    pub z: Vec<OperatorMatrix>,
    pub r: Vec<OperatorMatrix>,
    pub homological_residual: f64,
    pub hermiticity_defect: f64,
    pub normal_form: bool,
}

/// One conjugation step on all samples.
///
/// `r_dot`, when given, is the exact `∂t R` per sample; the generator's time
/// derivative then follows linearly. Otherwise `∂tG` comes from the grid.
pub fn nf_step(
    lap: &OperatorMatrix,
    z: &[OperatorMatrix],
    r: &[OperatorMatrix],
    r_dot: Option<&[OperatorMatrix]>,
    p: &NFParams,
    grid: &TimeGrid,
    nodes: usize,
) -> Result<StepOutput> {
    let m = grid.samples;
    if z.len() != m || r.len() != m || r_dot.is_some_and(|d| d.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, got: r.len() });
    }
    let modes = lap.modes().clone();
    let masks = MaskTable::new(&modes, r[0].layout().clone(), p);
    let mask_for = |a: &OperatorMatrix| -> std::borrow::Cow<'_, MaskTable> {
        if **a.layout() == **masks.layout() {
            std::borrow::Cow::Borrowed(&masks)
        } else {
            std::borrow::Cow::Owned(MaskTable::new(&modes, a.layout().clone(), p))
        }
    };

    // (a)–(c): generators and the new normal form, per sample
    let solved: Vec<(OperatorMatrix, OperatorMatrix, f64)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let dec = mask_for(&r[j]).decompose(&r[j]);
            let sol = solve_homological(&dec.nr)?;
            let mut zn = z[j].add(&dec.avg);
            zn.add_assign(&dec.res);
            Ok((sol.g, zn, sol.residual_norm))
        })
        .collect::<Result<_>>()?;
    let mut g = Vec::with_capacity(m);
    let mut z_next = Vec::with_capacity(m);
    let mut hom_res: f64 = 0.0;
    for (gj, zj, res) in solved {
        g.push(gj);
        z_next.push(zj);
        hom_res = hom_res.max(res);
    }
    let normal_form = z_next.iter().all(|zj| first_violation(zj, p).is_none());

    // barrier: ∂tG needs every sample of G
    let g_dot: Vec<OperatorMatrix> = match r_dot {
        Some(rd) => rd
            .par_iter()
            .map(|x| Ok(solve_homological(&mask_for(x).decompose(x).nr)?.g))
            .collect::<Result<_>>()?,
        None => grid.derivative(&g),
    };

    // (d)–(e): Lie transform and the new remainder
    let w = quadrature_weights(nodes);
    let out: Vec<(OperatorMatrix, f64)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut h = lap.add(&z[j]);
            h.add_assign(&r[j]);
            let h_plus = lie_transform(&h, &g[j], &g_dot[j], &w);
            let defect = h_plus.hermitian_defect();
            let scale = h_plus.max_abs().max(1.0);
            if defect > HERMITICITY_ABORT * scale {
                return Err(Error::HermiticityLost(defect / scale));
            }
            let h_plus = hermitize(&h_plus);
            let mut rn = h_plus.sub(lap);
            rn = rn.sub(&z_next[j]);
            Ok((rn, defect / scale))
        })
        .collect::<Result<_>>()?;
    let mut r_next = Vec::with_capacity(m);
    let mut herm: f64 = 0.0;
    for (rn, d) in out {
        r_next.push(rn);
        herm = herm.max(d);
    }
    Ok(StepOutput { g, z: z_next, r: r_next, homological_residual: hom_res, hermiticity_defect: herm, normal_form })
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
fn quadrature_weights(nodes: usize) -> Vec<(f64, f64)> {
    gauss_legendre_unit(nodes.max(1))
}

/// `e^{iG} H e^{−iG} − Σ_q w_q e^{iτ_q G} Ġ e^{−iτ_q G}`, evaluated blockwise
/// in the eigenbasis of `G`.
pub fn lie_transform(h: &OperatorMatrix, g: &OperatorMatrix, g_dot: &OperatorMatrix, rule: &[(f64, f64)]) -> OperatorMatrix {
    let layout = Arc::new(h.layout().join(g.layout()).join(g_dot.layout()));
    let h = h.relayout(layout.clone()).expect("join is coarser");
    let g = g.relayout(layout.clone()).expect("join is coarser");
    let gd = g_dot.relayout(layout.clone()).expect("join is coarser");
    let zero = C64::new(0.0, 0.0);
    let blocks: Vec<DMatrix<C64>> = (0..layout.num_blocks())
        .map(|b| {
            let (hb, gb, db) = (&h.blocks()[b], &g.blocks()[b], &gd.blocks()[b]);
            let g_zero = gb.iter().all(|v| *v == zero);
            let d_zero = db.iter().all(|v| *v == zero);
            if g_zero && d_zero {
                return hb.clone();
            }
            if g_zero {
                return hb - db;
            }
            let eig = linalg::eigh(gb);
            let mut ht = eig.to_eigenbasis(hb);
            eig.phase_in_place(&mut ht, |x| C64::from_polar(1.0, x));
            if !d_zero {
                let mut dt = eig.to_eigenbasis(db);
                eig.phase_in_place(&mut dt, |x| rule.iter().map(|&(tau, w)| C64::from_polar(w, tau * x)).sum());
                ht -= dt;
            }
            eig.from_eigenbasis(&ht)
        })
        .collect();
    OperatorMatrix::from_parts(h.modes().clone(), layout, blocks)
}

/// `(A + A†)/2`.
pub fn hermitize(a: &OperatorMatrix) -> OperatorMatrix {
    a.add(&a.adjoint()).scale_real(0.5)
}

/// `e^{iG}` as an operator on the layout of `G`.
pub fn exp_i(g: &OperatorMatrix, s: f64) -> OperatorMatrix {
    g.eigh().exp_i(s, g)
}

/// `‖U U† − I‖_F`.
pub fn unitarity_defect(u: &OperatorMatrix) -> f64 {
    let prod = u.matmul(&u.adjoint());
    let id = OperatorMatrix::identity(u.modes().clone(), prod.layout().clone());
    prod.sub(&id).frobenius_norm()
}

/// Output of [`run_normal_form`].
#[derive(Debug, Clone)]
pub struct NFResult {
    pub grid: TimeGrid,
    pub params: NFParams,
    pub laplacian: OperatorMatrix,
    pub records: Vec<NFStepRecord>,
    /// `Z^(N)` per sample.
    pub z: Vec<OperatorMatrix>,
    /// `R^(N)` per sample.
    pub r: Vec<OperatorMatrix>,
    /// `U_N` per sample, when tracked.
    pub u: Option<Vec<OperatorMatrix>>,
}

impl NFResult {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        self.laplacian.modes()
    }

    /// `H̃ = −Δ_g + Z^(N)` at sample `j`.
    pub fn h_tilde(&self, j: usize) -> OperatorMatrix {
        self.laplacian.add(&self.z[j])
    }

    /// `H̃ + R^(N)` at sample `j`.
    pub fn h_full(&self, j: usize) -> OperatorMatrix {
        let mut h = self.h_tilde(j);
        h.add_assign(&self.r[j]);
        h
    }

    pub fn sample_at(&self, t: f64) -> Result<usize> {
        self.grid.index_of(t).ok_or(Error::OffGrid(t))
    }
}

/// Runs `steps` normal-form steps from `Z₀ = 0`, `R₀ = Op^W(V)`.
pub fn run_normal_form(
    v: &SymbolSpec,
    p: &NFParams,
    modes: &Arc<ModeSet>,
    grid: &TimeGrid,
    steps: usize,
    opts: &NFOptions,
) -> Result<NFResult> {
    run_normal_form_observed(v, p, modes, grid, steps, opts, &mut |_| {})
}

/// As [`run_normal_form`], handing each step's families to `observer`.
pub fn run_normal_form_observed(
    v: &SymbolSpec,
    p: &NFParams,
    modes: &Arc<ModeSet>,
    grid: &TimeGrid,
    steps: usize,
    opts: &NFOptions,
    observer: &mut dyn FnMut(&StepView<'_>),
) -> Result<NFResult> {
    validate_params(p)?;
    grid.validate()?;
    if !is_real_valued(v) {
        return Err(Error::Config("the potential symbol is not real valued".into()));
    }
    if let Some(d) = v.dim() {
        if d != modes.dim() {
            return Err(Error::DimensionMismatch { expected: modes.dim(), got: d });
        }
    }
    let layout = Arc::new(layout_for(v, modes));
    let lap = laplacian_in(modes, &Arc::new(BlockLayout::singletons(modes.len())));
    let times = grid.times();
    let mut r: Vec<OperatorMatrix> =
        times.par_iter().map(|&t| quantize_in(v, t, modes, &layout)).collect::<Result<_>>()?;
    let dv = time_derivative(v);
    let r_dot: Vec<OperatorMatrix> =
        times.par_iter().map(|&t| quantize_in(&dv, t, modes, &layout)).collect::<Result<_>>()?;
    let mut z: Vec<OperatorMatrix> = (0..grid.samples).map(|_| OperatorMatrix::zeros(modes.clone(), layout.clone())).collect();
    let mut u: Option<Vec<OperatorMatrix>> = opts.track_conjugator.then(|| {
        (0..grid.samples)
            .map(|_| OperatorMatrix::identity(modes.clone(), Arc::new(BlockLayout::singletons(modes.len()))))
            .collect()
    });
    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        let remainder_max = r.iter().map(|x| annulus_max(x, opts.buffer)).fold(0.0, f64::max);
        if remainder_max < REMAINDER_FLOOR {
            break;
        }
        let fitted_order = order_report(&r, opts.buffer);
        let exact = (step == 0).then_some(r_dot.as_slice());
        let out = nf_step(&lap, &z, &r, exact, p, grid, opts.quadrature_nodes)?;
        let generator_norm = out.g.iter().map(|x| x.frobenius_norm()).fold(0.0, f64::max);
        let mut unitarity = 0.0f64;
        if let Some(us) = u.as_mut() {
            let updated: Vec<(OperatorMatrix, f64)> = us
                .par_iter()
                .zip(out.g.par_iter())
                .map(|(uj, gj)| {
                    let next = exp_i(gj, 1.0).matmul(uj);
                    let d = unitarity_defect(&next);
                    (next, d)
                })
                .collect();
            *us = Vec::with_capacity(updated.len());
            for (x, d) in updated {
                us.push(x);
                unitarity = unitarity.max(d);
            }
        }
        observer(&StepView { step, g: &out.g, z: &out.z, r: &out.r });
        let output_order = order_report(&out.r, opts.buffer);
        records.push(NFStepRecord {
            step,
            fitted_order,
            output_order,
            remainder_max,
            homological_residual: out.homological_residual,
            generator_norm,
            hermiticity_defect: out.hermiticity_defect,
            unitarity_defect: unitarity,
            normal_form: out.normal_form,
        });
        z = out.z;
        r = out.r;
    }
    Ok(NFResult { grid: *grid, params: *p, laplacian: lap, records, z, r, u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MetricTensor;
    use crate::symbols::{cosine_pair, SymbolTerm, TimeProfile};
    use crate::weyl::{conjugate_exact, quantize};

    fn reference() -> NFParams {
        NFParams { delta: 0.6, epsilon: 0.04, tau: 1.0, m: 1.0, d: 2 }
    }

    fn modes(cutoff: f64) -> Arc<ModeSet> {
        Arc::new(ModeSet::new(cutoff, MetricTensor::identity(2)).unwrap())
    }

    fn grid(samples: usize) -> TimeGrid {
        TimeGrid::new(0.0, 2.0 * std::f64::consts::PI, samples, false).unwrap()
    }

    fn cos_potential(profile: TimeProfile, order: f64) -> SymbolSpec {
        SymbolSpec::new(vec![SymbolTerm::new(profile, order, cosine_pair(&[1, 0])).unwrap()]).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 1.0, 4, false).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 8, false).is_err());
        let g = TimeGrid::new(0.0, 1.0, 5, false).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let p = TimeGrid::new(0.0, 1.0, 4 + 1, true).unwrap();
        assert!((p.spacing() - 0.2).abs() < 1e-15);
        assert_eq!(p.index_of(1.0), Some(0));
        assert_eq!(p.index_of(2.4), Some(2));
        assert_eq!(g.index_of(0.3), None);
    }

    #[test]
    fn stencils_differentiate_quartics_exactly() {
        for periodic in [false, true] {
            let g = TimeGrid::new(0.0, 1.0, if periodic { 33 } else { 9 }, periodic).unwrap();
            for j in 0..g.samples {
                let f = |t: f64| if periodic { (2.0 * std::f64::consts::PI * t).sin() } else { t.powi(4) - 2.0 * t.powi(3) + t };
                let df = |t: f64| {
                    if periodic {
                        2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * t).cos()
                    } else {
                        4.0 * t.powi(3) - 6.0 * t.powi(2) + 1.0
                    }
                };
                let est: f64 = g.stencil(j).iter().map(|&(q, w)| w * f(g.time(q))).sum();
                let tol = if periodic { 1e-3 } else { 1e-11 };
                assert!((est - df(g.time(j))).abs() < tol, "periodic={periodic} j={j}: {est}");
            }
        }
    }

    #[test]
    fn order_report_examples() {
        let ms = modes(16.0);
        let single = Arc::new(BlockLayout::singletons(ms.len()));
        let diag = OperatorMatrix::from_diagonal(ms.clone(), single.clone(), |i| C64::new(ms.bracket(i).powf(0.4), 0.0));
        let fit = order_report(&[diag], DEFAULT_BUFFER);
        assert!((fit.order - 0.4).abs() < 0.05, "{fit:?}");
        let id = OperatorMatrix::identity(ms.clone(), single.clone());
        assert!(order_report(&[id], DEFAULT_BUFFER).order.abs() < 0.05);
        let zero = OperatorMatrix::zeros(ms.clone(), single);
        assert!(order_report(&[zero], DEFAULT_BUFFER).is_zero_sentinel());
    }

    #[test]
    fn zero_potential_is_a_fixed_point() {
        let ms = modes(6.0);
        let res = run_normal_form(&SymbolSpec::zero(), &reference(), &ms, &grid(8), 3, &NFOptions::default()).unwrap();
        assert!(res.records.is_empty());
        for j in 0..8 {
            assert!(res.z[j].is_zero() && res.r[j].is_zero());
            assert_eq!(unitarity_defect(&res.u.as_ref().unwrap()[j]), 0.0);
        }
    }

    #[test]
    fn multipliers_are_absorbed_in_one_step() {
        let ms = modes(8.0);
        let v = SymbolSpec::new(vec![SymbolTerm::new(
            TimeProfile::cosine(1.0, 1.0),
            1.0,
            [(vec![0, 0], C64::new(1.0, 0.0))],
        )
        .unwrap()])
        .unwrap();
        let g = grid(9);
        let res = run_normal_form(&v, &reference(), &ms, &g, 2, &NFOptions::default()).unwrap();
        assert_eq!(res.steps(), 1);
        for (j, t) in g.times().into_iter().enumerate() {
            assert!(res.r[j].max_abs() < 1e-13);
            let expected = quantize(&v, t, &ms);
            assert!((res.z[j].to_dense() - expected.to_dense()).camax() < 1e-14);
        }
    }

    #[test]
    fn time_independent_step_matches_plain_conjugation() {
        let ms = modes(8.0);
        let p = NFParams { delta: 0.3, epsilon: 0.08, tau: 1.0, m: 0.5, d: 2 };
        let v = cos_potential(TimeProfile::constant(0.7), 0.5);
        let g = grid(6);
        let res = run_normal_form(&v, &p, &ms, &g, 1, &NFOptions::default()).unwrap();
        let r0 = quantize(&v, 0.0, &ms);
        let dec = crate::resonance::decompose(&r0, &p);
        let gen = solve_homological(&dec.nr).unwrap().g;
        assert!(!gen.is_zero());
        let lap = crate::weyl::laplacian_matrix(&ms);
        let h = lap.add(&r0);
        let oracle = conjugate_exact(&h, &gen, 1.0).unwrap();
        for j in 0..g.samples {
            let got = res.h_full(j);
            assert!((got.to_dense() - oracle.to_dense()).camax() < 1e-11);
        }
        assert!(res.records[0].normal_form);
    }

    #[test]
    fn conjugation_part_preserves_spectrum_and_u_is_unitary() {
        let ms = modes(8.0);
        let p = NFParams { delta: 0.3, epsilon: 0.08, tau: 1.0, m: 0.5, d: 2 };
        let v = cos_potential(TimeProfile::cosine(1.0, 1.0), 0.5);
        let g = grid(16);
        let res = run_normal_form(&v, &p, &ms, &g, 2, &NFOptions::default()).unwrap();
        for rec in &res.records {
            assert!(rec.unitarity_defect < 1e-9, "{rec:?}");
            assert!(rec.homological_residual < 1e-12);
            assert!(rec.normal_form);
        }
        let r0 = quantize(&v, g.time(3), &ms);
        let dec = crate::resonance::decompose(&r0, &p);
        let gen = solve_homological(&dec.nr).unwrap().g;
        let h = crate::weyl::laplacian_matrix(&ms).add(&r0);
        let zero = OperatorMatrix::zeros(ms.clone(), gen.layout().clone());
        let conj = lie_transform(&h, &gen, &zero, &gauss_legendre_unit(8));
        let (a, b) = (h.eigenvalues(), conj.eigenvalues());
        let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn duhamel_term_matches_dense_quadrature() {
        let ms = modes(5.0);
        let v = cos_potential(TimeProfile::constant(0.3), 0.0);
        let gen = quantize(&v, 0.0, &ms);
        let gd = quantize(&cos_potential(TimeProfile::constant(0.5), 0.0), 0.0, &ms);
        let zero = OperatorMatrix::zeros(ms.clone(), gen.layout().clone());
        let rule = gauss_legendre_unit(8);
        let q = zero.sub(&lie_transform(&zero, &gen, &gd, &rule));
        // trapezoid with many points as the oracle
        let n = 4000;
        let mut acc = OperatorMatrix::zeros(ms.clone(), gen.layout().clone());
        for s in 0..=n {
            let tau = s as f64 / n as f64;
            let w = if s == 0 || s == n { 0.5 } else { 1.0 } / n as f64;
            acc.add_assign(&conjugate_exact(&gd, &gen, tau).unwrap().scale_real(w));
        }
        assert!((q.to_dense() - acc.to_dense()).camax() < 1e-7);
    }
}
