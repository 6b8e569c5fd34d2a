//! Time-dependent symbols `v(t, x, ξ)`.
//!
//! The family is closed under exact time differentiation: each term is a
//! trigonometric time profile times a finite Fourier series in `x` times the
//! radial weight `⟨ξ⟩^m`.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MetricTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Constant,
    Cosine,
    Sine,
}

/// Scalar time profile `a`, `a cos(ωt)` or `a sin(ωt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeProfile {
    pub kind: ProfileKind,
    #[serde(default)]
    pub omega: f64,
    pub amp: f64,
}

impl TimeProfile {
    pub fn constant(amp: f64) -> Self {
        Self { kind: ProfileKind::Constant, omega: 0.0, amp }
    }

    pub fn cosine(amp: f64, omega: f64) -> Self {
        Self { kind: ProfileKind::Cosine, omega, amp }
    }

    pub fn sine(amp: f64, omega: f64) -> Self {
        Self { kind: ProfileKind::Sine, omega, amp }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            ProfileKind::Constant => self.amp,
            ProfileKind::Cosine => self.amp * (self.omega * t).cos(),
            ProfileKind::Sine => self.amp * (self.omega * t).sin(),
        }
    }

    /// Exact derivative; `None` when it vanishes identically.
    pub fn derivative(&self) -> Option<Self> {
        match self.kind {
            ProfileKind::Constant => None,
            ProfileKind::Cosine => Some(Self::sine(-self.amp * self.omega, self.omega)),
            ProfileKind::Sine => Some(Self::cosine(self.amp * self.omega, self.omega)),
        }
    }
}

/// `profile(t) · Σ_k c_k e^{ik·x} · ⟨ξ⟩^order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTerm", into = "RawTerm")]
pub struct SymbolTerm {
    pub profile: TimeProfile,
    pub order: f64,
    coeffs: BTreeMap<Vec<i64>, Complex64>,
}

impl SymbolTerm {
    pub fn new(
        profile: TimeProfile,
        order: f64,
        coeffs: impl IntoIterator<Item = (Vec<i64>, Complex64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut dim = None;
        for (k, c) in coeffs {
            if *dim.get_or_insert(k.len()) != k.len() {
                return Err(Error::DimensionMismatch { expected: dim.unwrap(), got: k.len() });
            }
            if !c.re.is_finite() || !c.im.is_finite() {
                return Err(Error::Config(format!("non-finite coefficient at k={k:?}")));
            }
            *map.entry(k).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        if !order.is_finite() || !profile.amp.is_finite() || !profile.omega.is_finite() {
            return Err(Error::Config("non-finite order or profile value".into()));
        }
        Ok(Self { profile, order, coeffs: map })
    }

    pub fn coeffs(&self) -> &BTreeMap<Vec<i64>, Complex64> {
        &self.coeffs
    }

    pub fn dim(&self) -> Option<usize> {
        self.coeffs.keys().next().map(Vec::len)
    }
}

/// Finite sum of [`SymbolTerm`]s.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSpec {
    pub terms: Vec<SymbolTerm>,
}

impl SymbolSpec {
    pub fn new(terms: Vec<SymbolTerm>) -> Result<Self> {
        let spec = Self { terms };
        spec.validate()?;
        Ok(spec)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = None;
        for term in &self.terms {
            if let Some(d) = term.dim() {
                if *dim.get_or_insert(d) != d {
                    return Err(Error::DimensionMismatch { expected: dim.unwrap(), got: d });
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.terms.iter().find_map(SymbolTerm::dim)
    }

    /// Largest term order; `-∞` for the zero symbol.
    pub fn declared_order(&self) -> f64 {
        self.terms.iter().map(|t| t.order).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Union of the Fourier supports of all terms.
    pub fn support(&self) -> BTreeSet<Vec<i64>> {
        self.terms.iter().flat_map(|t| t.coeffs.keys().cloned()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.profile.amp == 0.0 || t.coeffs.values().all(|c| c.norm() == 0.0))
    }

    /// Common period of the time profiles, when every oscillating term shares
    /// the same `|ω|`. Constant symbols report `None`.
    pub fn period(&self) -> Option<f64> {
        let mut omega: Option<f64> = None;
        for term in &self.terms {
            if term.profile.kind == ProfileKind::Constant || term.profile.omega == 0.0 {
                continue;
            }
            let w = term.profile.omega.abs();
            match omega {
                None => omega = Some(w),
                Some(o) if (o - w).abs() <= 1e-14 * o => {}
                Some(_) => return None,
            }
        }
        omega.map(|w| 2.0 * std::f64::consts::PI / w)
    }

    pub fn scaled(&self, a: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| SymbolTerm { profile: TimeProfile { amp: a * t.profile.amp, ..t.profile }, ..t.clone() })
            .collect();
        Self { terms }
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self { terms: self.terms.iter().chain(&other.terms).cloned().collect() }
    }

    /// Per-fiber coefficient table at time `t`: `k → [(profile(t)·c_k, order)]`.
    pub fn fiber_table(&self, t: f64) -> BTreeMap<Vec<i64>, Vec<(Complex64, f64)>> {
        let mut table: BTreeMap<Vec<i64>, Vec<(Complex64, f64)>> = BTreeMap::new();
        for term in &self.terms {
            let p = term.profile.value(t);
            if p == 0.0 {
                continue;
            }
            for (k, c) in &term.coeffs {
                table.entry(k.clone()).or_default().push((c * p, term.order));
            }
        }
        table
    }
}

/// `v̂_k(t, ξ) = Σ_terms profile(t) · c_k · ⟨ξ⟩^{order}`.
pub fn evaluate_coefficient(
    spec: &SymbolSpec,
    t: f64,
    k: &[i64],
    xi: &[f64],
    metric: &MetricTensor,
) -> Complex64 {
    let bracket = metric.bracket_real(xi);
    spec.terms
        .iter()
        .filter_map(|term| term.coeffs.get(k).map(|c| c * term.profile.value(t) * bracket.powf(term.order)))
        .sum()
}

/// Pointwise reality of the symbol: `conj(c_{-k}) = c_k` for every term.
pub fn is_real_valued(spec: &SymbolSpec) -> bool {
    spec.terms.iter().all(|term| {
        term.coeffs.iter().all(|(k, c)| {
            let minus: Vec<i64> = k.iter().map(|x| -x).collect();
            let partner = term.coeffs.get(&minus).copied().unwrap_or_default();
            partner.conj() == *c
        })
    })
}

/// Exact `∂t` inside the trigonometric family.
pub fn time_derivative(spec: &SymbolSpec) -> SymbolSpec {
    let terms = spec
        .terms
        .iter()
        .filter_map(|t| {
            t.profile.derivative().map(|profile| SymbolTerm { profile, order: t.order, coeffs: t.coeffs.clone() })
        })
        .collect();
    SymbolSpec { terms }
}

/// Finite-difference step for `ξ`-derivatives; keeps evaluations on the
/// midpoint lattice.
pub const XI_STEP: f64 = 0.5;

/// Sampled estimate of `sup |∂_x^{N1} ∂_ξ^{N2} v| / ⟨ξ⟩^{m − δ N2}`.
///
/// `x`-derivatives are applied exactly on the Fourier side; for `d > 1` the
/// maximum over all multi-indices of length `N1` (resp. `N2`) is taken.
/// `ξ`-derivatives use nested central differences with step [`XI_STEP`].
/// The result is a lower bound on the true seminorm.
pub fn estimate_seminorm(
    spec: &SymbolSpec,
    n1: usize,
    n2: usize,
    delta: f64,
    metric: &MetricTensor,
    times: &[f64],
    xi_grid: &[Vec<f64>],
) -> Result<f64> {
    if xi_grid.is_empty() || times.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let support: Vec<Vec<i64>> = spec.support().into_iter().collect();
    if support.is_empty() || spec.is_zero() {
        return Ok(0.0);
    }
    let d = metric.dim();
    let m = spec.declared_order();
    let kmax = support.iter().flat_map(|k| k.iter().map(|c| c.unsigned_abs())).max().unwrap_or(0);
    let per_axis = (8 * (kmax as usize + 1)).clamp(8, 64);
    let x_points = x_grid(d, per_axis);
    let alphas = multi_indices(d, n1);
    let betas = multi_indices(d, n2);

    let mut sup: f64 = 0.0;
    for &t in times {
        for xi in xi_grid {
            let weight = metric.bracket_real(xi).powf(m - delta * n2 as f64);
            for beta in &betas {
                // ∂_ξ^β v̂_k(ξ) for every k in the support
                let dcoef: Vec<Complex64> =
                    support.iter().map(|k| xi_derivative(spec, t, k, xi, beta, metric)).collect();
                for alpha in &alphas {
                    let factors: Vec<Complex64> = support
                        .iter()
                        .zip(&dcoef)
                        .map(|(k, c)| {
                            let mut f = *c;
                            for (a, &p) in alpha.iter().enumerate() {
                                f *= Complex64::new(0.0, k[a] as f64).powu(p as u32);
                            }
                            f
                        })
                        .collect();
                    for x in &x_points {
                        let val: Complex64 = support
                            .iter()
                            .zip(&factors)
                            .map(|(k, f)| {
                                let phase: f64 = k.iter().zip(x).map(|(&ki, xi)| ki as f64 * xi).sum();
                                f * Complex64::from_polar(1.0, phase)
                            })
                            .sum();
                        sup = sup.max(val.norm() / weight);
                    }
                }
            }
        }
    }
    Ok(sup)
}

fn xi_derivative(
    spec: &SymbolSpec,
    t: f64,
    k: &[i64],
    xi: &[f64],
    beta: &[usize],
    metric: &MetricTensor,
) -> Complex64 {
    match beta.iter().position(|&b| b > 0) {
        None => evaluate_coefficient(spec, t, k, xi, metric),
        Some(axis) => {
            let mut lower = beta.to_vec();
            lower[axis] -= 1;
            let mut plus = xi.to_vec();
            let mut minus = xi.to_vec();
            plus[axis] += XI_STEP;
            minus[axis] -= XI_STEP;
            (xi_derivative(spec, t, k, &plus, &lower, metric) - xi_derivative(spec, t, k, &minus, &lower, metric))
                / (2.0 * XI_STEP)
        }
    }
}

fn multi_indices(d: usize, order: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    if d == 1 {
        return vec![vec![order]];
    }
    let mut out = Vec::new();
    for first in 0..=order {
        for mut rest in multi_indices(d - 1, order - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn x_grid(d: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let step = 2.0 * std::f64::consts::PI / per_axis as f64;
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    i as f64 * step
                })
                .collect()
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoeff {
    k: Vec<i64>,
    re: f64,
    #[serde(default)]
    im: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    profile: TimeProfile,
    order: f64,
    coeffs: Vec<RawCoeff>,
}

impl TryFrom<RawTerm> for SymbolTerm {
    type Error = Error;

    fn try_from(raw: RawTerm) -> Result<Self> {
        SymbolTerm::new(
            raw.profile,
            raw.order,
            raw.coeffs.into_iter().map(|c| (c.k, Complex64::new(c.re, c.im))),
        )
    }
}

impl From<SymbolTerm> for RawTerm {
    fn from(t: SymbolTerm) -> Self {
        RawTerm {
            profile: t.profile,
            order: t.order,
            coeffs: t.coeffs.into_iter().map(|(k, c)| RawCoeff { k, re: c.re, im: c.im }).collect(),
        }
    }
}

/// `2cos(k·x)` as the coefficient pair `c_{±k} = 1`.
pub fn cosine_pair(k: &[i64]) -> Vec<(Vec<i64>, Complex64)> {
    let minus: Vec<i64> = k.iter().map(|x| -x).collect();
    vec![(k.to_vec(), Complex64::new(1.0, 0.0)), (minus, Complex64::new(1.0, 0.0))]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single(k: &[i64], order: f64) -> SymbolSpec {
        SymbolSpec::new(vec![SymbolTerm::new(TimeProfile::constant(1.0), order, [(k.to_vec(), c(1.0, 0.0))]).unwrap()])
            .unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let id = MetricTensor::identity(2);
        let spec = single(&[1, 0], 0.0);
        assert_eq!(evaluate_coefficient(&spec, 0.3, &[1, 0], &[7.0, -2.0], &id), c(1.0, 0.0));
        assert_eq!(evaluate_coefficient(&spec, 0.3, &[2, 0], &[7.0, -2.0], &id), c(0.0, 0.0));
        let spec = single(&[1, 0], 1.0);
        let v = evaluate_coefficient(&spec, 4.0, &[1, 0], &[0.5, 0.0], &id);
        assert_abs_diff_eq!(v.re, 1.25f64.sqrt(), epsilon = 1e-15);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn reality_examples() {
        let mk = |a: Complex64, b: Complex64| {
            SymbolSpec::new(vec![SymbolTerm::new(
                TimeProfile::constant(1.0),
                0.0,
                [(vec![1, 0], a), (vec![-1, 0], b)],
            )
            .unwrap()])
            .unwrap()
        };
        assert!(is_real_valued(&mk(c(1.0, 0.0), c(1.0, 0.0))));
        assert!(!is_real_valued(&mk(c(0.0, 1.0), c(0.0, 1.0))));
        assert!(is_real_valued(&mk(c(1.0, 1.0), c(1.0, -1.0))));
        assert!(is_real_valued(&SymbolSpec::zero()));
    }

    #[test]
    fn derivative_examples() {
        let k = vec![(vec![1, 0], c(1.0, 0.0))];
        let constant = SymbolTerm::new(TimeProfile::constant(3.0), 1.0, k.clone()).unwrap();
        let cosine = SymbolTerm::new(TimeProfile::cosine(1.0, 2.0), 1.0, k).unwrap();
        assert!(time_derivative(&SymbolSpec::new(vec![constant.clone()]).unwrap()).terms.is_empty());

        let d = time_derivative(&SymbolSpec::new(vec![cosine.clone()]).unwrap());
        assert_eq!(d.terms.len(), 1);
        assert_eq!(d.terms[0].profile, TimeProfile::sine(-2.0, 2.0));

        let both = SymbolSpec::new(vec![constant, cosine.clone()]).unwrap();
        let d = time_derivative(&both);
        assert_eq!(d.terms.len(), 1);
        assert_eq!(d.terms[0].profile.kind, ProfileKind::Sine);

        // second derivative of a cosine is −ω² times the cosine
        let dd = time_derivative(&time_derivative(&SymbolSpec::new(vec![cosine]).unwrap()));
        assert_eq!(dd.terms[0].profile, TimeProfile::cosine(-4.0, 2.0));
    }

    #[test]
    fn seminorm_examples() {
        let id = MetricTensor::identity(2);
        let grid: Vec<Vec<f64>> = (0..6).flat_map(|a| (0..6).map(move |b| vec![a as f64, b as f64 - 2.0])).collect();
        let radial = single(&[0, 0], 0.7);
        let s = estimate_seminorm(&radial, 0, 0, 0.6, &id, &[0.0], &grid).unwrap();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);

        let cos = SymbolSpec::new(vec![SymbolTerm::new(TimeProfile::constant(1.0), 0.0, cosine_pair(&[1, 0])).unwrap()])
            .unwrap();
        let s = estimate_seminorm(&cos, 1, 0, 0.6, &id, &[0.0], &grid).unwrap();
        // oracle: dense sampling of |d/dx 2cos x|
        let dense = (0..10_000)
            .map(|i| (2.0 * (i as f64 * 2.0 * std::f64::consts::PI / 10_000.0).sin()).abs())
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(s, dense, epsilon = 1e-9);
        assert_abs_diff_eq!(s, 2.0, epsilon = 1e-12);

        assert_eq!(estimate_seminorm(&SymbolSpec::zero(), 2, 1, 0.6, &id, &[0.0], &grid).unwrap(), 0.0);
        assert!(matches!(estimate_seminorm(&cos, 0, 0, 0.6, &id, &[0.0], &[]), Err(Error::EmptyGrid)));
    }

    #[test]
    fn seminorm_without_xi_derivatives_is_linear_in_amplitude() {
        let id = MetricTensor::identity(2);
        let grid = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let base = SymbolSpec::new(vec![SymbolTerm::new(TimeProfile::cosine(1.0, 1.0), 1.0, cosine_pair(&[1, 1])).unwrap()])
            .unwrap();
        let a = estimate_seminorm(&base, 1, 0, 0.6, &id, &[0.0, 0.4], &grid).unwrap();
        let b = estimate_seminorm(&base.scaled(3.5), 1, 0, 0.6, &id, &[0.0, 0.4], &grid).unwrap();
        assert_abs_diff_eq!(b, 3.5 * a, epsilon = 1e-12 * b);
    }

    #[test]
    fn xi_derivative_of_bracket_power_has_lower_order() {
        // ∂_ξ ⟨ξ⟩ = ξ/⟨ξ⟩ is bounded by 1 = ⟨ξ⟩^{m−δ} with m = δ = 1
        let id = MetricTensor::identity(1);
        let spec = single(&[0], 1.0);
        let grid: Vec<Vec<f64>> = (1..40).map(|i| vec![i as f64]).collect();
        let s = estimate_seminorm(&spec, 0, 1, 1.0, &id, &[0.0], &grid).unwrap();
        assert!(s <= 1.0 + 1e-9 && s > 0.9, "{s}");
    }

    #[test]
    fn json_fragment_round_trip() {
        let text = r#"{"terms":[{"profile":{"kind":"cosine","omega":1.0,"amp":1.0},"order":1.0,
            "coeffs":[{"k":[1,0],"re":1.0,"im":0.0},{"k":[-1,0],"re":1.0}]}]}"#;
        let spec: SymbolSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.terms[0].coeffs().len(), 2);
        assert_eq!(spec.period(), Some(2.0 * std::f64::consts::PI));
        let back: SymbolSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"terms":[{"profile":{"kind":"cosine","amp":1.0,"phase":0},"order":1.0,"coeffs":[]}]}"#;
        assert!(serde_json::from_str::<SymbolSpec>(bad).is_err());
    }
}
