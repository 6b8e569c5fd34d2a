//! Resonant block partition of the truncated mode set.
//!
//! Blocks are the connected components of the graph joining `ξ` and `ξ + k`
//! whenever the entry `(ξ + k, ξ)` may be nonzero in a normal-form operator.
//! Every normal-form matrix is therefore block diagonal on the partition.

mod lattice;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use lattice::{hermite_rows, module_of, IntegerModule};

use crate::error::{Error, Result};
use crate::geometry::MetricTensor;
use crate::resonance::{FiberGeometry, NFParams};
use crate::union_find::UnionFind;
use crate::weyl::{BlockLayout, ModeSet, OperatorMatrix};

/// Edge `{a, a + k}` of the resonance graph, stored with `k` lexicographically positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub k: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct ResonanceGraph {
    pub nodes: usize,
    pub edges: Vec<Edge>,
}

/// Candidate shifts with `‖k‖ ≤ Λ^ε`, positive half only.
fn candidate_shifts(modes: &ModeSet, p: &NFParams) -> Vec<Vec<i64>> {
    let reach = modes.cutoff().powf(p.epsilon);
    let Ok(ball) = ModeSet::new((1.0 + reach * reach).sqrt(), modes.metric().clone()) else {
        return Vec::new();
    };
    ball.iter()
        .filter(|k| k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0))
        .filter(|k| modes.metric().norm_int(k) <= reach * (1.0 + 1e-12))
        .map(<[i64]>::to_vec)
        .collect()
}

/// Edges `{ξ, ξ+k}` with `|⟨η|k⟩| ≤ ⟨η⟩^δ‖k‖^{−τ}` and `‖k‖ ≤ ⟨η⟩^ε` at `η = ξ + k/2`.
pub fn resonance_graph(modes: &ModeSet, p: &NFParams) -> ResonanceGraph {
    let shifts = candidate_shifts(modes, p);
    let edges: Vec<Edge> = (0..modes.len())
        .into_par_iter()
        .flat_map_iter(|a| {
            let xi = modes.mode(a);
            shifts
                .iter()
                .filter_map(|k| {
                    let target: Vec<i64> = xi.iter().zip(k).map(|(x, c)| x + c).collect();
                    let b = modes.index_of(&target)?;
                    FiberGeometry::of_entry(modes, b, a).is_resonant(p).then(|| Edge { a, b, k: k.clone() })
                })
                .collect::<Vec<_>>()
        })
        .collect();
    ResonanceGraph { nodes: modes.len(), edges }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub module: IntegerModule,
    pub members: Vec<Vec<i64>>,
    #[serde(skip)]
    pub indices: Vec<usize>,
    /// `ℓ = ⟨ξ_{M⊥}⟩` of the first member.
    pub ell: f64,
    /// Distinct shifts `k` of the edges inside the block.
    pub edges: Vec<Vec<i64>>,
}

impl Block {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub modes: usize,
    pub blocks: usize,
    pub singletons: usize,
    pub max_block_size: usize,
    /// Size of the largest full-rank block, if any.
    pub n_star: Option<usize>,
    pub full_rank_blocks: usize,
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub blocks: Vec<Block>,
    /// Mode index → block id.
    pub index: Vec<usize>,
    pub stats: PartitionStats,
}

/// Connected components of [`resonance_graph`] with their saturated modules.
pub fn partition(modes: &ModeSet, p: &NFParams) -> Partition {
    let graph = resonance_graph(modes, p);
    let mut uf = UnionFind::new(modes.len());
    for e in &graph.edges {
        uf.union(e.a, e.b);
    }
    let groups = uf.groups();
    let mut block_of = vec![0usize; modes.len()];
    for (b, g) in groups.iter().enumerate() {
        for &i in g {
            block_of[i] = b;
        }
    }
    let mut shifts: Vec<std::collections::BTreeSet<Vec<i64>>> = vec![Default::default(); groups.len()];
    for e in &graph.edges {
        shifts[block_of[e.a]].insert(e.k.clone());
    }
    let metric = modes.metric();
    let blocks: Vec<Block> = groups
        .into_par_iter()
        .zip(shifts)
        .map(|(members, edges)| {
            let edges: Vec<Vec<i64>> = edges.into_iter().collect();
            let module = module_of(&edges, modes.dim());
            let first: Vec<f64> = modes.mode(members[0]).iter().map(|&x| x as f64).collect();
            let (_, perp) = module.project(&first, metric);
            Block {
                ell: metric.bracket_real(&perp),
                members: members.iter().map(|&i| modes.mode(i).to_vec()).collect(),
                indices: members,
                module,
                edges,
            }
        })
        .collect();
    let full: Vec<usize> = blocks.iter().filter(|b| b.module.is_full()).map(Block::size).collect();
    let stats = PartitionStats {
        modes: modes.len(),
        blocks: blocks.len(),
        singletons: blocks.iter().filter(|b| b.size() == 1).count(),
        max_block_size: blocks.iter().map(Block::size).max().unwrap_or(0),
        n_star: full.iter().copied().max(),
        full_rank_blocks: full.len(),
    };
    Partition { blocks, index: block_of, stats }
}

impl Partition {
    /// Operator layout with one block per cluster.
    pub fn layout(&self) -> BlockLayout {
        BlockLayout::from_blocks(self.index.len(), self.blocks.iter().map(|b| b.indices.clone()).collect())
            .expect("blocks partition the modes")
    }

    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for b in &self.blocks {
            *h.entry(b.size()).or_insert(0) += 1;
        }
        h
    }

    /// Largest entry of `a` between distinct blocks.
    pub fn cross_block_max(&self, a: &OperatorMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        a.for_each_entry(|i, j, v| {
            if self.index[i] != self.index[j] {
                worst = worst.max(v.norm());
            }
        });
        worst
    }

    /// `a` re-expressed on the partition layout; fails on any cross-block entry.
    pub fn restrict(&self, a: &OperatorMatrix, layout: &Arc<BlockLayout>) -> Result<OperatorMatrix> {
        a.relayout(layout.clone())
    }

    pub fn to_json(&self) -> PartitionDump {
        PartitionDump {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDump {
                    module_basis: b.module.basis().to_vec(),
                    members: b.members.clone(),
                    ell: b.ell,
                    size: b.size(),
                })
                .collect(),
            stats: self.stats.clone(),
        }
    }

    /// Rebuilds a partition from its dump against `modes`.
    pub fn from_dump(dump: &PartitionDump, modes: &ModeSet) -> Result<Self> {
        let mut index = vec![usize::MAX; modes.len()];
        let mut blocks = Vec::with_capacity(dump.blocks.len());
        for (b, bd) in dump.blocks.iter().enumerate() {
            let mut indices = Vec::with_capacity(bd.members.len());
            for m in &bd.members {
                let i = modes.index_of(m).ok_or_else(|| Error::Cache(format!("mode {m:?} not in the mode set")))?;
                if index[i] != usize::MAX {
                    return Err(Error::Cache(format!("mode {m:?} listed twice")));
                }
                index[i] = b;
                indices.push(i);
            }
            let module = module_of(&bd.module_basis, modes.dim());
            blocks.push(Block { module, members: bd.members.clone(), indices, ell: bd.ell, edges: bd.module_basis.clone() });
        }
        if index.contains(&usize::MAX) {
            return Err(Error::Cache("partition does not cover the mode set".into()));
        }
        Ok(Self { blocks, index, stats: dump.stats.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDump {
    pub module_basis: Vec<Vec<i64>>,
    pub members: Vec<Vec<i64>>,
    pub ell: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDump {
    pub blocks: Vec<BlockDump>,
    pub stats: PartitionStats,
}

/// Numerical witnesses of the block structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Largest spread of `ξ_{M⊥}` inside a nontrivial block.
    pub p3_spread: f64,
    /// Whether all member differences lie in the block module (exact).
    pub differences_in_module: bool,
    pub delta_star: f64,
    /// `max ‖ξ_M‖ / ⟨ξ⟩^{δ*}`.
    pub k_hat: f64,
    /// `max ‖ξ_M‖ / ℓ`.
    pub c_hat: f64,
    /// `(σ, K_σ)` with `K_σ = max (‖ξ_M‖² + ℓ²)^{σ/2} / ℓ^σ`.
    pub k_sigma: Vec<(f64, f64)>,
    pub histogram: BTreeMap<usize, usize>,
}

impl VerificationReport {
    pub fn k_sigma_for(&self, sigma: f64) -> Option<f64> {
        self.k_sigma.iter().find(|(s, _)| *s == sigma).map(|(_, k)| *k)
    }
}

pub fn verify_partition(part: &Partition, p: &NFParams, metric: &MetricTensor, sigmas: &[f64]) -> VerificationReport {
    let delta_star = p.delta_star();
    struct Acc {
        spread: f64,
        exact: bool,
        k_hat: f64,
        c_hat: f64,
        k_sigma: Vec<f64>,
    }
    let per_block: Vec<Acc> = part
        .blocks
        .par_iter()
        .map(|b| {
            let mut acc = Acc { spread: 0.0, exact: true, k_hat: 0.0, c_hat: 0.0, k_sigma: vec![1.0; sigmas.len()] };
            let first = &b.members[0];
            let (_, perp0) = b.module.project(&to_f64(first), metric);
            for m in &b.members {
                let diff: Vec<i64> = m.iter().zip(first).map(|(x, y)| x - y).collect();
                acc.exact &= b.module.contains(&diff);
                let xf = to_f64(m);
                let (along, perp) = b.module.project(&xf, metric);
                let spread = perp.iter().zip(&perp0).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
                let along_norm = metric.inner_real(&along, &along).max(0.0).sqrt();
                if !b.module.is_trivial() {
                    acc.spread = acc.spread.max(spread);
                    acc.k_hat = acc.k_hat.max(along_norm / metric.bracket_real(&xf).powf(delta_star));
                    acc.c_hat = acc.c_hat.max(along_norm / b.ell);
                }
                for (slot, &s) in acc.k_sigma.iter_mut().zip(sigmas) {
                    let ratio = ((along_norm * along_norm + b.ell * b.ell).sqrt() / b.ell).powf(s);
                    *slot = slot.max(ratio);
                }
            }
            acc
        })
        .collect();
    let mut report = VerificationReport {
        p3_spread: 0.0,
        differences_in_module: true,
        delta_star,
        k_hat: 0.0,
        c_hat: 0.0,
        k_sigma: sigmas.iter().map(|&s| (s, 1.0)).collect(),
        histogram: part.histogram(),
    };
    for acc in per_block {
        report.p3_spread = report.p3_spread.max(acc.spread);
        report.differences_in_module &= acc.exact;
        report.k_hat = report.k_hat.max(acc.k_hat);
        report.c_hat = report.c_hat.max(acc.c_hat);
        for (slot, k) in report.k_sigma.iter_mut().zip(acc.k_sigma) {
            slot.1 = slot.1.max(k);
        }
    }
    report
}

fn to_f64(v: &[i64]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

const CACHE_MAGIC: &[u8; 8] = b"TNFPART1";

/// Cache key of a partition: SHA-256 over the metric, `Λ`, `δ`, `ε`, `τ`.
pub fn cache_key(modes: &ModeSet, p: &NFParams) -> [u8; 32] {
    let mut h = Sha256::new();
    let g = modes.metric().g();
    h.update((g.nrows() as u64).to_le_bytes());
    for v in g.iter() {
        h.update(v.to_le_bytes());
    }
    for v in [modes.cutoff(), p.delta, p.epsilon, p.tau] {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Loads the partition from `path` when its key matches, otherwise builds it
/// and rewrites the cache. Returns the partition and whether the cache was used.
pub fn load_or_build(path: &Path, modes: &ModeSet, p: &NFParams) -> Result<(Partition, bool)> {
    let key = cache_key(modes, p);
    if let Ok(mut f) = std::fs::File::open(path) {
        let mut head = [0u8; 40];
        if f.read_exact(&mut head).is_ok() && &head[..8] == CACHE_MAGIC && head[8..] == key {
            let mut body = Vec::new();
            f.read_to_end(&mut body)?;
            if let Ok(dump) = serde_json::from_slice::<PartitionDump>(&body) {
                if let Ok(part) = Partition::from_dump(&dump, modes) {
                    return Ok((part, true));
                }
            }
        }
    }
    let part = partition(modes, p);
    let mut f = std::fs::File::create(path)?;
    f.write_all(CACHE_MAGIC)?;
    f.write_all(&key)?;
    serde_json::to_writer(&mut f, &part.to_json())?;
    Ok((part, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resonance::{decompose, is_normal_form};
    use crate::symbols::{cosine_pair, SymbolSpec, SymbolTerm, TimeProfile};
    use crate::weyl::quantize;

    fn reference() -> NFParams {
        NFParams { delta: 0.6, epsilon: 0.04, tau: 1.0, m: 1.0, d: 2 }
    }

    fn modes(cutoff: f64) -> Arc<ModeSet> {
        Arc::new(ModeSet::new(cutoff, MetricTensor::identity(2)).unwrap())
    }

    #[test]
    fn edge_predicate_examples() {
        let ms = modes(16.0);
        let graph = resonance_graph(&ms, &reference());
        let a = ms.index_of(&[10, 0]).unwrap();
        let up = ms.index_of(&[10, 1]).unwrap();
        let right = ms.index_of(&[11, 0]).unwrap();
        let has = |x: usize, y: usize| graph.edges.iter().any(|e| (e.a, e.b) == (x, y) || (e.a, e.b) == (y, x));
        assert!(has(a, up));
        assert!(!has(a, right));
    }

    #[test]
    fn empty_graph_gives_singletons() {
        // ⟨η⟩^ε < 1 never holds, but with ε tiny and a coarse metric no ‖k‖ ≤ Λ^ε
        let metric = MetricTensor::from_matrix(nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.7])).unwrap();
        let ms = ModeSet::new(10.0, metric.clone()).unwrap();
        let p = NFParams { delta: 0.6, epsilon: 0.04, tau: 1.0, m: 1.0, d: 2 };
        let part = partition(&ms, &p);
        assert_eq!(part.stats.singletons, ms.len());
        assert!(part.blocks.iter().all(|b| b.module.is_trivial()));
        let report = verify_partition(&part, &p, &metric, &[1.0, 2.0]);
        assert_eq!(report.p3_spread, 0.0);
        assert_eq!(report.k_hat, 0.0);
        assert_eq!(report.c_hat, 0.0);
        assert_eq!(report.histogram, BTreeMap::from([(1, ms.len())]));
    }

    #[test]
    fn line_block_at_ten() {
        let ms = modes(16.0);
        let p = reference();
        let part = partition(&ms, &p);
        let total: usize = part.blocks.iter().map(Block::size).sum();
        assert_eq!(total, ms.len());
        let b = &part.blocks[part.index[ms.index_of(&[10, 0]).unwrap()]];
        assert_eq!(b.module.basis(), &[vec![0, 1]]);
        assert!((b.ell - 101f64.sqrt()).abs() < 1e-12);
        // brute force: the members are exactly the (10, j) reachable through resonant k = (0, 1) steps
        let mut brute = vec![vec![10, 0]];
        for dir in [1i64, -1] {
            let mut j = 0i64;
            loop {
                let next = j + dir;
                let eta = [10.0, j as f64 + dir as f64 / 2.0];
                let bracket = (1.0 + eta[0] * eta[0] + eta[1] * eta[1]).sqrt();
                if ms.index_of(&[10, next]).is_none() || eta[1].abs() > bracket.powf(0.6) || 1.0 > bracket.powf(0.04) {
                    break;
                }
                brute.push(vec![10, next]);
                j = next;
            }
        }
        brute.sort();
        assert_eq!(b.members, brute);
        let report = verify_partition(&part, &p, ms.metric(), &[2.0]);
        assert!(report.p3_spread <= 1e-9);
        assert!(report.differences_in_module);
        for m in &b.members {
            assert!((m[1] as f64).abs() <= report.c_hat * b.ell + 1e-12);
        }
    }

    #[test]
    fn normal_form_operators_are_block_diagonal() {
        let ms = modes(14.0);
        let p = reference();
        let part = partition(&ms, &p);
        let spec = SymbolSpec::new(vec![
            SymbolTerm::new(TimeProfile::constant(1.0), 1.0, cosine_pair(&[1, 0])).unwrap(),
            SymbolTerm::new(TimeProfile::constant(0.5), 0.0, cosine_pair(&[0, 1])).unwrap(),
            SymbolTerm::new(TimeProfile::constant(0.2), 0.0, cosine_pair(&[1, 1])).unwrap(),
        ])
        .unwrap();
        let dec = decompose(&quantize(&spec, 0.0, &ms), &p);
        let z = dec.avg.add(&dec.res);
        assert!(is_normal_form(&z, &p));
        assert_eq!(part.cross_block_max(&z), 0.0);
        assert!(z.relayout(Arc::new(part.layout())).is_ok());
    }

    #[test]
    fn sandwich_bounds_hold_on_blocks() {
        let ms = modes(16.0);
        let p = reference();
        let part = partition(&ms, &p);
        let report = verify_partition(&part, &p, ms.metric(), &[1.0, 2.0]);
        let k2 = report.k_sigma_for(2.0).unwrap();
        for b in part.blocks.iter().filter(|b| b.size() > 1) {
            for &i in &b.indices {
                let r = ms.bracket(i).powi(2) / b.ell.powi(2);
                assert!(r >= 1.0 - 1e-12 && r <= k2 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn cache_round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partition.bin");
        let ms = modes(10.0);
        let p = reference();
        let (a, used) = load_or_build(&path, &ms, &p).unwrap();
        assert!(!used);
        let (b, used) = load_or_build(&path, &ms, &p).unwrap();
        assert!(used);
        assert_eq!(a.index, b.index);
        assert_eq!(a.blocks.iter().map(|x| &x.members).collect::<Vec<_>>(), b.blocks.iter().map(|x| &x.members).collect::<Vec<_>>());
        let other = NFParams { delta: 0.5, ..p };
        let (_, used) = load_or_build(&path, &ms, &other).unwrap();
        assert!(!used);
    }
}
