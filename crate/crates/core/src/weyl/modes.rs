use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::MetricTensor;

/// Truncated Fourier basis `{ξ ∈ Z^d : ⟨ξ⟩ ≤ Λ}` in lexicographic order.
#[derive(Debug, Clone)]
pub struct ModeSet {
    dim: usize,
    cutoff: f64,
    metric: MetricTensor,
    coords: Vec<i64>,
    index: HashMap<Vec<i64>, usize>,
    brackets: Vec<f64>,
    norms_sq: Vec<f64>,
}

impl PartialEq for ModeSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.coords == other.coords && self.metric == other.metric
    }
}

impl ModeSet {
    pub fn new(cutoff: f64, metric: MetricTensor) -> Result<Self> {
        if !cutoff.is_finite() || cutoff < 1.0 {
            return Err(Error::Config(format!("mode cutoff must be ≥ 1, got {cutoff}")));
        }
        let d = metric.dim();
        let r2 = cutoff * cutoff - 1.0;
        // max ξ_A on the ellipsoid ξ·g^{-1}ξ ≤ r2 is sqrt(r2 · g_AA)
        let bounds: Vec<i64> = (0..d).map(|a| (r2 * metric.g()[(a, a)]).sqrt().floor() as i64 + 1).collect();
        let mut modes = Vec::new();
        let mut cur: Vec<i64> = bounds.iter().map(|b| -b).collect();
        'outer: loop {
            if metric.inner_int(&cur, &cur) <= r2 * (1.0 + 1e-14) {
                modes.push(cur.clone());
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    break 'outer;
                }
                axis -= 1;
                if cur[axis] < bounds[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = -bounds[axis];
            }
        }
        Self::from_sorted(cutoff, metric, modes)
    }

    /// Arbitrary finite mode set; must be closed under negation.
    pub fn from_modes(mut modes: Vec<Vec<i64>>, metric: MetricTensor) -> Result<Self> {
        let d = metric.dim();
        if let Some(bad) = modes.iter().find(|m| m.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
        }
        modes.sort();
        modes.dedup();
        let set: std::collections::HashSet<&Vec<i64>> = modes.iter().collect();
        for m in &modes {
            let neg: Vec<i64> = m.iter().map(|x| -x).collect();
            if !set.contains(&neg) {
                return Err(Error::Config(format!("mode set is not closed under negation: {m:?}")));
            }
        }
        let cutoff = modes.iter().map(|m| metric.bracket_halves(&doubled(m))).fold(1.0, f64::max);
        Self::from_sorted(cutoff, metric, modes)
    }

    fn from_sorted(cutoff: f64, metric: MetricTensor, modes: Vec<Vec<i64>>) -> Result<Self> {
        let d = metric.dim();
        let mut coords = Vec::with_capacity(modes.len() * d);
        let mut index = HashMap::with_capacity(modes.len());
        let mut brackets = Vec::with_capacity(modes.len());
        let mut norms_sq = Vec::with_capacity(modes.len());
        for (i, m) in modes.into_iter().enumerate() {
            let n2 = metric.inner_int(&m, &m);
            norms_sq.push(n2);
            brackets.push((1.0 + n2).sqrt());
            coords.extend_from_slice(&m);
            index.insert(m, i);
        }
        Ok(Self { dim: d, cutoff, metric, coords, index, brackets, norms_sq })
    }

    pub fn len(&self) -> usize {
        self.brackets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.brackets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn metric(&self) -> &MetricTensor {
        &self.metric
    }

    pub fn mode(&self, i: usize) -> &[i64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i64]> {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn index_of(&self, xi: &[i64]) -> Option<usize> {
        self.index.get(xi).copied()
    }

    /// `⟨ξ_i⟩`.
    pub fn bracket(&self, i: usize) -> f64 {
        self.brackets[i]
    }

    pub fn brackets(&self) -> &[f64] {
        &self.brackets
    }

    /// `‖ξ_i‖²`.
    pub fn norm_sq(&self, i: usize) -> f64 {
        self.norms_sq[i]
    }

    /// Doubled midpoint `ξ_i + ξ_j` of the entry `(i, j)`, i.e. `2η` with
    /// `η = ξ_j + k/2`, `k = ξ_i − ξ_j`.
    pub fn midpoint_halves(&self, i: usize, j: usize) -> Vec<i64> {
        self.mode(i).iter().zip(self.mode(j)).map(|(a, b)| a + b).collect()
    }

    /// `k = ξ_i − ξ_j`.
    pub fn shift(&self, i: usize, j: usize) -> Vec<i64> {
        self.mode(i).iter().zip(self.mode(j)).map(|(a, b)| a - b).collect()
    }

    /// `Λ·(1 − buffer)`.
    pub fn inner_cutoff(&self, buffer: f64) -> f64 {
        self.cutoff * (1.0 - buffer)
    }
}

pub(crate) fn doubled(xi: &[i64]) -> Vec<i64> {
    xi.iter().map(|x| 2 * x).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{metric_from_basis, LatticeBasis};

    #[test]
    fn enumeration_matches_brute_force() {
        let basis = LatticeBasis::new(vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let metric = metric_from_basis(&basis).unwrap();
        let modes = ModeSet::new(6.0, metric.clone()).unwrap();
        let mut brute = Vec::new();
        for a in -40i64..=40 {
            for b in -40i64..=40 {
                if (1.0 + metric.inner_int(&[a, b], &[a, b])).sqrt() <= 6.0 {
                    brute.push(vec![a, b]);
                }
            }
        }
        brute.sort();
        let got: Vec<Vec<i64>> = modes.iter().map(|m| m.to_vec()).collect();
        assert_eq!(got, brute);
        for (i, m) in got.iter().enumerate() {
            let neg: Vec<i64> = m.iter().map(|x| -x).collect();
            assert!(modes.index_of(&neg).is_some());
            assert_eq!(modes.index_of(m), Some(i));
        }
    }

    #[test]
    fn identity_metric_counts() {
        let modes = ModeSet::new(2.0, MetricTensor::identity(2)).unwrap();
        // |ξ|² ≤ 3: origin, 4 axis neighbours, 4 diagonals
        assert_eq!(modes.len(), 9);
        assert_eq!(modes.mode(0), &[-1, -1]);
    }

    #[test]
    fn custom_sets_must_be_symmetric() {
        let id = MetricTensor::identity(1);
        assert!(ModeSet::from_modes(vec![vec![0], vec![1]], id.clone()).is_err());
        let set = ModeSet::from_modes(vec![vec![1], vec![-1], vec![0]], id).unwrap();
        assert_eq!(set.mode(0), &[-1]);
    }
}
