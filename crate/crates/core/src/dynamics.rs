//! Unitary time integration, Sobolev norm traces and growth fits.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clusters::Partition;
use crate::error::{Error, Result};
use crate::normal_form::{least_squares, NFResult, TimeGrid};
use crate::weyl::{sobolev_opnorm_tol, ModeSet, OperatorMatrix, C64};

/// Relative tolerance for the Hermiticity of a sampled Hamiltonian.
pub const HAMILTONIAN_HERMITIAN_TOL: f64 = 1e-10;
/// Relative slack of the interpolation inequality.
pub const INTERPOLATION_SLACK: f64 = 1e-6;
/// Relative change of `K̂′` tolerated when the horizon doubles.
pub const DUHAMEL_STABILITY: f64 = 0.2;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Fourier coefficients `ψ̂_ξ` over a mode set.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    modes: Arc<ModeSet>,
    coeffs: Vec<C64>,
}

impl StateVector {
    pub fn new(modes: Arc<ModeSet>, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != modes.len() {
            return Err(Error::DimensionMismatch { expected: modes.len(), got: coeffs.len() });
        }
        Ok(Self { modes, coeffs })
    }

    pub fn plane_wave(modes: Arc<ModeSet>, xi: &[i64]) -> Result<Self> {
        let i = modes.index_of(xi).ok_or_else(|| Error::Config(format!("mode {xi:?} is outside the truncation")))?;
        let mut coeffs = vec![ZERO; modes.len()];
        coeffs[i] = C64::new(1.0, 0.0);
        Ok(Self { modes, coeffs })
    }

    /// Gaussian coefficients damped by `⟨ξ⟩^{−decay}`, normalized in `L²`.
    pub fn random(modes: Arc<ModeSet>, seed: u64, decay: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs: Vec<C64> = modes
            .brackets()
            .iter()
            .map(|b| {
                let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                C64::new(re, im) * b.powf(-decay)
            })
            .collect();
        let n = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        coeffs.iter_mut().for_each(|c| *c /= n);
        Self { modes, coeffs }
    }

    /// State supported on `indices` with random coefficients, normalized in `L²`.
    pub fn random_on(modes: Arc<ModeSet>, indices: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs = vec![ZERO; modes.len()];
        for &i in indices {
            coeffs[i] = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        let n = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        coeffs.iter_mut().for_each(|c| *c /= n);
        Self { modes, coeffs }
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn sobolev_norm(&self, sigma: f64) -> f64 {
        sobolev_norm(self, sigma)
    }

    pub fn apply(&self, op: &OperatorMatrix) -> Result<Self> {
        if !Arc::ptr_eq(op.modes(), &self.modes) && **op.modes() != *self.modes {
            return Err(Error::Config("operator and state use different mode sets".into()));
        }
        Ok(Self { modes: self.modes.clone(), coeffs: op.apply(&self.coeffs) })
    }

    /// `‖ψ − φ‖_0`.
    pub fn distance(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `(Σ ⟨ξ⟩^{2σ} |ψ̂_ξ|²)^{1/2}` with the metric bracket of the mode set.
pub fn sobolev_norm(psi: &StateVector, sigma: f64) -> f64 {
    psi.modes
        .brackets()
        .iter()
        .zip(&psi.coeffs)
        .map(|(b, c)| b.powf(2.0 * sigma) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// A time-dependent Hermitian generator `t ↦ H(t)`.
pub trait Hamiltonian: Sync {
    fn at(&self, t: f64) -> Result<OperatorMatrix>;

    /// Equal keys promise equal operators, so step propagators can be reused.
    fn sample_key(&self, _t: f64) -> Option<usize> {
        None
    }
}

/// Hamiltonian given by a closure.
pub struct FnHamiltonian<F>(pub F);

impl<F: Fn(f64) -> Result<OperatorMatrix> + Sync> Hamiltonian for FnHamiltonian<F> {
    fn at(&self, t: f64) -> Result<OperatorMatrix> {
        (self.0)(t)
    }
}

/// Time-independent Hamiltonian.
pub struct Autonomous(pub OperatorMatrix);

impl Hamiltonian for Autonomous {
    fn at(&self, _t: f64) -> Result<OperatorMatrix> {
        Ok(self.0.clone())
    }

    fn sample_key(&self, _t: f64) -> Option<usize> {
        Some(0)
    }
}

/// Hamiltonian known only on the samples of a grid.
pub struct SampledHamiltonian {
    grid: TimeGrid,
    family: Vec<OperatorMatrix>,
}

impl SampledHamiltonian {
    pub fn new(grid: TimeGrid, family: Vec<OperatorMatrix>) -> Result<Self> {
        if family.len() != grid.samples {
            return Err(Error::DimensionMismatch { expected: grid.samples, got: family.len() });
        }
        Ok(Self { grid, family })
    }

    /// `H̃^(N) = −Δ_g + Z^(N)`.
    pub fn normal_form(nf: &NFResult) -> Self {
        Self { grid: nf.grid, family: (0..nf.grid.samples).map(|j| nf.h_tilde(j)).collect() }
    }

    /// `H̃^(N) + R^(N)`.
    pub fn conjugated(nf: &NFResult) -> Self {
        Self { grid: nf.grid, family: (0..nf.grid.samples).map(|j| nf.h_full(j)).collect() }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
}

impl Hamiltonian for SampledHamiltonian {
    fn at(&self, t: f64) -> Result<OperatorMatrix> {
        let j = self.grid.index_of(t).ok_or(Error::OffGrid(t))?;
        Ok(self.family[j].clone())
    }

    fn sample_key(&self, t: f64) -> Option<usize> {
        self.grid.index_of(t)
    }
}

/// Largest step that puts every midpoint of a periodic grid on a sample: `2·spacing`.
pub fn aligned_step(grid: &TimeGrid) -> f64 {
    2.0 * grid.spacing()
}

/// Sobolev norms sampled along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTrace {
    pub times: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `norms[q][n] = ‖ψ(times[n])‖_{sigmas[q]}`.
    pub norms: Vec<Vec<f64>>,
}

impl NormTrace {
    fn new(sigmas: &[f64]) -> Self {
        Self { times: Vec::new(), sigmas: sigmas.to_vec(), norms: vec![Vec::new(); sigmas.len()] }
    }

    fn record(&mut self, t: f64, psi: &StateVector) {
        self.times.push(t);
        for (q, &s) in self.sigmas.iter().enumerate() {
            self.norms[q].push(psi.sobolev_norm(s));
        }
    }

    pub fn series(&self, sigma: f64) -> Option<&[f64]> {
        self.sigmas.iter().position(|&s| s == sigma).map(|q| self.norms[q].as_slice())
    }

    /// `sup_t ‖ψ(t)‖_σ / ‖ψ(s)‖_σ`.
    pub fn max_ratio(&self, sigma: f64) -> Option<f64> {
        let v = self.series(sigma)?;
        Some(v.iter().fold(0.0f64, |m, x| m.max(x / v[0])))
    }

    /// `max_t |‖ψ(t)‖_σ − ‖ψ(s)‖_σ|`.
    pub fn drift(&self, sigma: f64) -> Option<f64> {
        let v = self.series(sigma)?;
        Some(v.iter().fold(0.0f64, |m, x| m.max((x - v[0]).abs())))
    }

    /// CSV with header `t,norm_sigma_<σ>,…` and 17 significant digits.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        write!(w, "t")?;
        for s in &self.sigmas {
            write!(w, ",norm_sigma_{s}")?;
        }
        writeln!(w)?;
        for (n, t) in self.times.iter().enumerate() {
            write!(w, "{t:.16e}")?;
            for col in &self.norms {
                write!(w, ",{:.16e}", col[n])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub trace: NormTrace,
    pub state: StateVector,
    /// Time of the final state.
    pub time: f64,
}

/// Exponential midpoint integrator `ψ(t+h) = e^{−ihH(t+h/2)} ψ(t)`.
///
/// Step propagators are cached by [`Hamiltonian::sample_key`], so repeated
/// runs over a periodic sampled Hamiltonian diagonalize each sample once.
pub struct Integrator<'a> {
    ham: &'a dyn Hamiltonian,
    h: f64,
    cache: Mutex<HashMap<usize, Arc<OperatorMatrix>>>,
}

impl<'a> Integrator<'a> {
    pub fn new(ham: &'a dyn Hamiltonian, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Config(format!("step h must be positive, got {h}")));
        }
        Ok(Self { ham, h, cache: Mutex::new(HashMap::new()) })
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    fn build(&self, t_mid: f64, dt: f64) -> Result<OperatorMatrix> {
        let h = self.ham.at(t_mid)?;
        let defect = h.hermitian_defect();
        if defect > HAMILTONIAN_HERMITIAN_TOL * h.max_abs().max(1.0) {
            return Err(Error::NotHermitian(defect));
        }
        Ok(h.eigh().exp_i(-dt, &h))
    }

    /// `e^{−i dt H(t_mid)}`.
    pub fn step_operator(&self, t_mid: f64, dt: f64) -> Result<Arc<OperatorMatrix>> {
        let key = if dt == self.h { self.ham.sample_key(t_mid) } else { None };
        let Some(key) = key else { return Ok(Arc::new(self.build(t_mid, dt)?)) };
        if let Some(u) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(u.clone());
        }
        let u = Arc::new(self.build(t_mid, dt)?);
        self.cache.lock().expect("cache lock").insert(key, u.clone());
        Ok(u)
    }

    /// Step sizes from `s` to `t_end`: whole steps of `h`, then one shorter step if needed.
    fn schedule(&self, s: f64, t_end: f64) -> Result<Vec<(f64, f64)>> {
        if !(t_end >= s) {
            return Err(Error::Config(format!("need t_end ≥ s, got [{s}, {t_end}]")));
        }
        let span = t_end - s;
        let whole = (span / self.h + 1e-9).floor() as usize;
        let mut out: Vec<(f64, f64)> = (0..whole).map(|n| (s + n as f64 * self.h, self.h)).collect();
        let rest = span - whole as f64 * self.h;
        if rest > 1e-12 * span.max(1.0) {
            out.push((s + whole as f64 * self.h, rest));
        }
        Ok(out)
    }

    /// Evolves `psi0` from `s` to `t_end`, recording norms at every step.
    pub fn run(&self, psi0: &StateVector, s: f64, t_end: f64, sigmas: &[f64]) -> Result<Evolution> {
        let mut psi = psi0.clone();
        let mut trace = NormTrace::new(sigmas);
        trace.record(s, &psi);
        let mut time = s;
        for (t, dt) in self.schedule(s, t_end)? {
            let u = self.step_operator(t + dt / 2.0, dt)?;
            psi = psi.apply(&u)?;
            time = t + dt;
            trace.record(time, &psi);
        }
        Ok(Evolution { trace, state: psi, time })
    }

    /// The discrete propagator `U(t_end, s)` as an operator.
    pub fn propagator(&self, s: f64, t_end: f64) -> Result<OperatorMatrix> {
        let mut acc: Option<OperatorMatrix> = None;
        for (t, dt) in self.schedule(s, t_end)? {
            let u = self.step_operator(t + dt / 2.0, dt)?;
            acc = Some(match acc {
                None => (*u).clone(),
                Some(a) => u.matmul(&a),
            });
        }
        match acc {
            Some(a) => Ok(a),
            None => {
                let h = self.ham.at(s)?;
                Ok(OperatorMatrix::identity(h.modes().clone(), h.layout().clone()))
            }
        }
    }
}

pub fn evolve(
    ham: &dyn Hamiltonian,
    psi0: &StateVector,
    s: f64,
    t_end: f64,
    h: f64,
    sigmas: &[f64],
) -> Result<Evolution> {
    Integrator::new(ham, h)?.run(psi0, s, t_end, sigmas)
}

#[derive(Debug, Clone)]
pub struct BlockEvolution {
    pub evolution: Evolution,
    /// Largest change of `L²` mass inside a single block.
    pub block_mass_drift: f64,
    /// `L²` mass outside the blocks initially charged.
    pub leaked_mass: f64,
}

/// Evolves under `H̃^(N)` with every sample re-expressed on the partition
/// layout, so each exponential is a product of small per-block ones.
pub fn evolve_blocks(
    nf: &NFResult,
    part: &Partition,
    psi0: &StateVector,
    s: f64,
    t_end: f64,
    h: f64,
    sigmas: &[f64],
) -> Result<BlockEvolution> {
    let layout = Arc::new(part.layout());
    let family = (0..nf.grid.samples)
        .map(|j| {
            nf.h_tilde(j).relayout(layout.clone()).map_err(|e| match e {
                Error::InvarianceViolation(msg) => {
                    Error::InvarianceViolation(format!("sample {j}: {msg}"))
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ham = SampledHamiltonian::new(nf.grid, family)?;
    let evolution = evolve(&ham, psi0, s, t_end, h, sigmas)?;
    let mass = |psi: &StateVector| -> Vec<f64> {
        part.blocks.iter().map(|b| b.indices.iter().map(|&i| psi.coeffs[i].norm_sqr()).sum()).collect()
    };
    let (before, after) = (mass(psi0), mass(&evolution.state));
    let block_mass_drift = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let leaked_mass = before.iter().zip(&after).filter(|(a, _)| **a == 0.0).map(|(_, b)| b).sum();
    Ok(BlockEvolution { evolution, block_mass_drift, leaked_mass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuhamelReport {
    pub sigma: f64,
    /// `sup ‖ψ(t)‖_σ / (⟨t−s⟩‖ψ(s)‖_σ)` over the first half of the horizon.
    pub k_half: f64,
    /// The same over the whole horizon.
    pub k_full: f64,
    pub pass: bool,
}

/// Envelope `‖ψ(t)‖_σ ≤ K̂′⟨t−s⟩‖ψ(s)‖_σ` under `H̃^(N) + R^(N)`, with `K̂′`
/// compared between the horizon `[s, t_end]` and its first half.
pub fn duhamel_bound_check(
    nf: &NFResult,
    psi0: &StateVector,
    s: f64,
    t_end: f64,
    h: f64,
    sigma: f64,
) -> Result<DuhamelReport> {
    let ham = SampledHamiltonian::conjugated(nf);
    let run = evolve(&ham, psi0, s, t_end, h, &[sigma])?;
    Ok(duhamel_envelope(&run.trace, sigma, s + (t_end - s) / 2.0))
}

/// [`DuhamelReport`] of a recorded trace, splitting the horizon at `t_half`.
pub fn duhamel_envelope(trace: &NormTrace, sigma: f64, t_half: f64) -> DuhamelReport {
    let v = trace.series(sigma).expect("trace records sigma");
    let s = trace.times[0];
    let mut k_half = 0.0f64;
    let mut k_full = 0.0f64;
    for (t, x) in trace.times.iter().zip(v) {
        let r = x / (v[0] * (1.0 + (t - s).powi(2)).sqrt());
        k_full = k_full.max(r);
        if *t <= t_half + 1e-12 {
            k_half = k_half.max(r);
        }
    }
    let pass = k_full.is_finite() && (k_full - k_half).abs() <= DUHAMEL_STABILITY * k_half;
    DuhamelReport { sigma, k_half, k_full, pass }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub sigma: f64,
    pub exponent: f64,
    /// `e^{intercept}/‖ψ(s)‖_σ`, the constant of `‖ψ(t)‖_σ ≈ K̂⟨t−s⟩^ε̂‖ψ(s)‖_σ`.
    pub constant: f64,
    pub window: (f64, f64),
    pub residual: f64,
}

/// Least-squares slope of `log‖ψ(t)‖_σ` against `log⟨t−s⟩` on `window`
/// (default `[1, last time]`).
pub fn fit_growth(trace: &NormTrace, sigma: f64, window: Option<(f64, f64)>) -> Result<GrowthFit> {
    let v = trace
        .series(sigma)
        .ok_or_else(|| Error::DegenerateWindow(format!("σ = {sigma} was not recorded")))?;
    let s = *trace.times.first().ok_or_else(|| Error::DegenerateWindow("empty trace".into()))?;
    let last = *trace.times.last().expect("nonempty");
    let (a, b) = window.unwrap_or((1.0, last));
    if !(a < b) || a < s || b > last + 1e-9 {
        return Err(Error::DegenerateWindow(format!("[{a}, {b}] is not inside [{s}, {last}]")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (t, x) in trace.times.iter().zip(v) {
        if *t >= a && *t <= b {
            if *x <= 0.0 {
                return Err(Error::DegenerateWindow(format!("nonpositive norm at t = {t}")));
            }
            xs.push(0.5 * (1.0 + (t - s).powi(2)).ln());
            ys.push(x.ln());
        }
    }
    if xs.len() < 2 || xs.iter().all(|x| *x == xs[0]) {
        return Err(Error::DegenerateWindow(format!("fewer than two distinct samples in [{a}, {b}]")));
    }
    let (exponent, intercept, residual) = least_squares(&xs, &ys);
    Ok(GrowthFit { sigma, exponent, constant: intercept.exp() / v[0], window: (a, b), residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `‖U‖_{σ,σ} ≤ ‖U‖_{N,N}^θ ‖U‖_{0,0}^{1−θ}` with `θ = σ/N`.
pub fn interpolation_check(u: &OperatorMatrix, sigma: f64, n: f64) -> Result<InterpolationReport> {
    if !(sigma > 0.0 && sigma < n) {
        return Err(Error::Config(format!("need 0 < σ < N, got σ = {sigma}, N = {n}")));
    }
    let theta = sigma / n;
    let tol = 1e-10;
    let lhs = sobolev_opnorm_tol(u, sigma, sigma, tol);
    let rhs = sobolev_opnorm_tol(u, n, n, tol).powf(theta) * sobolev_opnorm_tol(u, 0.0, 0.0, tol).powf(1.0 - theta);
    Ok(InterpolationReport { lhs, rhs, pass: lhs <= rhs * (1.0 + INTERPOLATION_SLACK) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Lattice time `s + n·h` nearest to the requested time.
    pub time: f64,
    /// `‖U_N(t)ψ(t) − φ(t)‖_0`.
    pub gap: f64,
}

/// Compares the evolution of `full` from `psi0` with the evolution of
/// `H̃^(N) + R^(N)` from `φ(s) = U_N(s)ψ0`, both transported to normal-form
/// coordinates `φ = U_N ψ`, at the step-lattice time nearest to `t`.
pub fn conjugation_gap(
    full: &dyn Hamiltonian,
    nf: &NFResult,
    psi0: &StateVector,
    s: f64,
    t: f64,
    h: f64,
) -> Result<ConsistencyReport> {
    let u = nf.u.as_ref().ok_or_else(|| Error::Config("the normal form did not track U_N".into()))?;
    let n = ((t - s) / h).round();
    let time = s + n * h;
    let (j0, j1) = (nf.sample_at(s)?, nf.sample_at(time)?);
    let phi0 = psi0.apply(&u[j0])?;
    let psi = evolve(full, psi0, s, time, h, &[])?.state;
    let phi = evolve(&SampledHamiltonian::conjugated(nf), &phi0, s, time, h, &[])?.state;
    Ok(ConsistencyReport { time, gap: psi.apply(&u[j1])?.distance(&phi) })
}
