use crate::error::{Error, Result};
use crate::union_find::UnionFind;

use super::ModeSet;

/// Partition of mode indices into blocks. An [`super::OperatorMatrix`]
/// stores one dense matrix per block and is exactly zero across blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
    pos: Vec<usize>,
}

impl BlockLayout {
    /// Blocks must partition `0..n`. They are brought to canonical order
    /// (sorted members, blocks ordered by smallest member).
    pub fn from_blocks(n: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut block_of = vec![usize::MAX; n];
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.retain(|b| !b.is_empty());
        blocks.sort_by_key(|b| b[0]);
        let mut pos = vec![0; n];
        for (bi, b) in blocks.iter().enumerate() {
            for (p, &i) in b.iter().enumerate() {
                if i >= n || block_of[i] != usize::MAX {
                    return Err(Error::LayoutMismatch(format!("index {i} is repeated or out of range")));
                }
                block_of[i] = bi;
                pos[i] = p;
            }
        }
        if block_of.contains(&usize::MAX) {
            return Err(Error::LayoutMismatch("blocks do not cover every mode".into()));
        }
        Ok(Self { blocks, block_of, pos })
    }

    pub fn dense(n: usize) -> Self {
        let blocks = if n == 0 { vec![] } else { vec![(0..n).collect()] };
        Self { blocks, block_of: vec![0; n], pos: (0..n).collect() }
    }

    pub fn singletons(n: usize) -> Self {
        Self { blocks: (0..n).map(|i| vec![i]).collect(), block_of: (0..n).collect(), pos: vec![0; n] }
    }

    fn from_union_find(mut uf: UnionFind) -> Self {
        let n = uf.len();
        Self::from_blocks(n, uf.groups()).expect("union-find groups form a partition")
    }

    /// Connected components of the graph `ξ ~ ξ + k`, `k ∈ shifts`. Every
    /// operator whose Fourier fibers lie in the group generated by `shifts`
    /// is block diagonal on this layout, and so are their products and
    /// exponentials.
    pub fn coupling<'a>(modes: &ModeSet, shifts: impl IntoIterator<Item = &'a [i64]>) -> Self {
        let mut uf = UnionFind::new(modes.len());
        let shifts: Vec<&[i64]> = shifts.into_iter().filter(|k| k.iter().any(|&c| c != 0)).collect();
        let mut target = vec![0i64; modes.dim()];
        for i in 0..modes.len() {
            let xi = modes.mode(i);
            for k in &shifts {
                for a in 0..target.len() {
                    target[a] = xi[a] + k[a];
                }
                if let Some(j) = modes.index_of(&target) {
                    uf.union(i, j);
                }
            }
        }
        Self::from_union_find(uf)
    }

    /// Finest layout coarser than both inputs.
    pub fn join(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "layouts over different mode sets");
        let mut uf = UnionFind::new(self.len());
        for layout in [self, other] {
            for b in &layout.blocks {
                for w in b.windows(2) {
                    uf.union(w[0], w[1]);
                }
            }
        }
        Self::from_union_find(uf)
    }

    /// `true` if every block of `self` lies inside one block of `coarse`.
    pub fn refines(&self, coarse: &Self) -> bool {
        self.len() == coarse.len()
            && self.blocks.iter().all(|b| b.iter().all(|&i| coarse.block_of[i] == coarse.block_of[b[0]]))
    }

    pub fn len(&self) -> usize {
        self.block_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_of.is_empty()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &[usize] {
        &self.blocks[b]
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.block_of[i]
    }

    pub fn pos(&self, i: usize) -> usize {
        self.pos[i]
    }

    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `Σ_b n_b²`, the number of stored entries.
    pub fn stored_entries(&self) -> usize {
        self.blocks.iter().map(|b| b.len() * b.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MetricTensor;

    #[test]
    fn coupling_along_one_axis_gives_lines() {
        let modes = ModeSet::new(5.0, MetricTensor::identity(2)).unwrap();
        let layout = BlockLayout::coupling(&modes, [&[1i64, 0][..], &[-1, 0][..]]);
        for b in layout.blocks() {
            let row = modes.mode(b[0])[1];
            assert!(b.iter().all(|&i| modes.mode(i)[1] == row));
        }
        // one line per value of ξ₂ with |ξ₂| ≤ 4
        assert_eq!(layout.num_blocks(), 9);
    }

    #[test]
    fn join_and_refinement() {
        let a = BlockLayout::from_blocks(4, vec![vec![0, 1], vec![2], vec![3]]).unwrap();
        let b = BlockLayout::from_blocks(4, vec![vec![0], vec![1, 2], vec![3]]).unwrap();
        let j = a.join(&b);
        assert_eq!(j.blocks(), &[vec![0, 1, 2], vec![3]]);
        assert!(a.refines(&j) && b.refines(&j) && !j.refines(&a));
        assert!(BlockLayout::singletons(4).refines(&a));
        assert!(BlockLayout::from_blocks(3, vec![vec![0, 1]]).is_err());
    }
}
