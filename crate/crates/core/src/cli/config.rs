//! Experiment configuration: strict JSON with defaults.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{metric_from_basis, LatticeBasis, MetricTensor};
use crate::normal_form::{TimeGrid, DEFAULT_BUFFER, DEFAULT_QUADRATURE_NODES};
use crate::resonance::{param_violations, NFParams};
use crate::symbols::{is_real_valued, SymbolSpec};
use crate::weyl::ModeSet;

/// Smallest admissible inner cutoff `Λ(1 − buffer)`.
pub const MIN_INNER_CUTOFF: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub delta: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    PlaneWave { xi: Vec<i64> },
    /// Gaussian coefficients damped by `⟨ξ⟩^{−decay}`; `--seed` overrides `seed`.
    Random {
        #[serde(default)]
        seed: u64,
        decay: f64,
    },
}

/// Which generator `evolve` integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    /// `−Δ_g + Op^W(V(t))`, evaluated at every midpoint.
    #[default]
    Full,
    /// `−Δ_g + Z^(N)` block by block; midpoints must be grid samples.
    NormalForm,
    /// `−Δ_g + Z^(N) + R^(N)` from `U_N(s)ψ0`; midpoints must be grid samples.
    Conjugated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    #[serde(default)]
    pub s: f64,
    pub t_end: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    pub initial: InitialState,
    #[serde(default)]
    pub system: System,
    #[serde(default)]
    pub fit_window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub partition_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Rows are the lattice basis vectors `e_A`.
    pub basis: Vec<Vec<f64>>,
    pub params: ParamsConfig,
    /// Fourier cutoff `Λ`.
    pub cutoff: f64,
    #[serde(default = "default_buffer")]
    pub buffer: f64,
    pub potential: SymbolSpec,
    pub grid: TimeGrid,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_quadrature")]
    pub quadrature_nodes: usize,
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_h() -> f64 {
    0.01
}

fn default_sigmas() -> Vec<f64> {
    vec![0.0, 1.0, 2.0]
}

fn default_buffer() -> f64 {
    DEFAULT_BUFFER
}

fn default_depth() -> usize {
    3
}

fn default_quadrature() -> usize {
    DEFAULT_QUADRATURE_NODES
}

/// Rewrites serde's wording into `missing key: x` / `unknown key: x`.
fn describe(err: &serde_json::Error) -> String {
    let msg = err.to_string();
    let rewrite = |prefix: &str, label: &str| -> Option<String> {
        let rest = msg.strip_prefix(prefix)?;
        let (key, tail) = rest.split_once('`')?;
        Some(format!("{label}: {key}{tail}"))
    };
    rewrite("missing field `", "missing key")
        .or_else(|| rewrite("unknown field `", "unknown key"))
        .unwrap_or(msg)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, String> {
    serde_json::from_str(text).map_err(|e| describe(&e))
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config_str(&text)
}

/// A configuration that passed [`ExperimentConfig::validate`].
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: ExperimentConfig,
    pub metric: MetricTensor,
    pub params: NFParams,
    pub modes: Arc<ModeSet>,
}

impl ExperimentConfig {
    pub fn nf_params(&self) -> NFParams {
        let p = &self.params;
        NFParams { delta: p.delta, epsilon: p.epsilon, tau: p.tau, m: p.m, d: self.basis.len() }
    }

    fn numbers(&self) -> Vec<(&'static str, f64)> {
        let p = &self.params;
        let e = &self.evolution;
        let mut out = vec![
            ("params.delta", p.delta),
            ("params.epsilon", p.epsilon),
            ("params.tau", p.tau),
            ("params.m", p.m),
            ("cutoff", self.cutoff),
            ("buffer", self.buffer),
            ("grid.t0", self.grid.t0),
            ("grid.t1", self.grid.t1),
            ("evolution.s", e.s),
            ("evolution.t_end", e.t_end),
            ("evolution.h", e.h),
        ];
        out.extend(self.basis.iter().flatten().map(|&x| ("basis", x)));
        out.extend(e.sigmas.iter().map(|&x| ("evolution.sigmas", x)));
        if let InitialState::Random { decay, .. } = e.initial {
            out.push(("evolution.initial.decay", decay));
        }
        if let Some((a, b)) = e.fit_window {
            out.extend([("evolution.fit_window", a), ("evolution.fit_window", b)]);
        }
        out
    }

    /// Every violation found, or the derived geometry.
    pub fn validate(&self) -> Result<Validated, Vec<String>> {
        let mut errs: Vec<String> = self
            .numbers()
            .into_iter()
            .filter(|(_, x)| !x.is_finite())
            .map(|(k, _)| format!("{k} is not finite"))
            .collect();
        if !errs.is_empty() {
            return Err(errs);
        }
        let metric = match LatticeBasis::new(self.basis.clone()).and_then(|b| metric_from_basis(&b)) {
            Ok(m) => Some(m),
            Err(e) => {
                errs.push(format!("basis: {e}"));
                None
            }
        };
        let params = self.nf_params();
        errs.extend(param_violations(&params));
        if !(self.buffer > 0.0 && self.buffer < 1.0) {
            errs.push(format!("buffer must lie in (0, 1), got {}", self.buffer));
        }
        let inner = self.cutoff * (1.0 - self.buffer);
        if inner < MIN_INNER_CUTOFF {
            errs.push(format!("inner cutoff Λ(1 − buffer) = {inner} < {MIN_INNER_CUTOFF}"));
        }
        if let Err(e) = self.grid.validate() {
            errs.push(e.to_string());
        }
        if let Err(e) = self.potential.validate() {
            errs.push(format!("potential: {e}"));
        }
        if let Some(d) = self.potential.dim() {
            if d != self.basis.len() {
                errs.push(format!("potential has dimension {d}, basis has {}", self.basis.len()));
            }
        }
        if !is_real_valued(&self.potential) {
            errs.push("potential is not real valued".into());
        }
        if self.quadrature_nodes == 0 {
            errs.push("quadrature_nodes must be positive".into());
        }
        let e = &self.evolution;
        if e.h <= 0.0 {
            errs.push(format!("evolution.h must be positive, got {}", e.h));
        }
        if e.t_end < e.s {
            errs.push(format!("evolution.t_end = {} precedes evolution.s = {}", e.t_end, e.s));
        }
        if let Some((a, b)) = e.fit_window {
            if !(a < b) {
                errs.push(format!("evolution.fit_window [{a}, {b}] is empty"));
            }
        }
        let modes = match metric.as_ref().map(|m| ModeSet::new(self.cutoff, m.clone())) {
            Some(Ok(ms)) => Some(Arc::new(ms)),
            Some(Err(e)) => {
                errs.push(format!("cutoff: {e}"));
                None
            }
            None => None,
        };
        if let (Some(ms), InitialState::PlaneWave { xi }) = (&modes, &e.initial) {
            if xi.len() != self.basis.len() || ms.index_of(xi).is_none() {
                errs.push(format!("evolution.initial.xi = {xi:?} is not a mode of the truncation"));
            }
        }
        match (errs.is_empty(), metric, modes) {
            (true, Some(metric), Some(modes)) => Ok(Validated { config: self.clone(), metric, params, modes }),
            _ => Err(errs),
        }
    }
}
