use std::borrow::Cow;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::linalg::{self, HermitianEigen, C64};
use super::{BlockLayout, ModeSet};
use crate::error::{Error, Result};

/// Truncated operator on the span of a [`ModeSet`], indexed `(row ξ′, col ξ)`.
///
/// Entries are stored as one dense matrix per block of its [`BlockLayout`]
/// and vanish identically across blocks. The `k`-fiber view reads entry
/// `(ξ + k, ξ)` as the Weyl coefficient at the midpoint `η = ξ + k/2`.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    modes: Arc<ModeSet>,
    layout: Arc<BlockLayout>,
    blocks: Vec<DMatrix<C64>>,
}

const ZERO: C64 = Complex64::new(0.0, 0.0);

impl OperatorMatrix {
    pub fn zeros(modes: Arc<ModeSet>, layout: Arc<BlockLayout>) -> Self {
        assert_eq!(modes.len(), layout.len(), "layout does not match the mode set");
        let blocks = layout.blocks().iter().map(|b| DMatrix::zeros(b.len(), b.len())).collect();
        Self { modes, layout, blocks }
    }

    pub fn identity(modes: Arc<ModeSet>, layout: Arc<BlockLayout>) -> Self {
        Self::from_diagonal(modes, layout, |_| C64::new(1.0, 0.0))
    }

    pub fn from_diagonal(modes: Arc<ModeSet>, layout: Arc<BlockLayout>, diag: impl Fn(usize) -> C64) -> Self {
        let mut out = Self::zeros(modes, layout);
        for (b, members) in out.layout.clone().blocks().iter().enumerate() {
            for (p, &i) in members.iter().enumerate() {
                out.blocks[b][(p, p)] = diag(i);
            }
        }
        out
    }

    /// Fills every stored entry from `f(row, col)`.
    pub fn from_fn(modes: Arc<ModeSet>, layout: Arc<BlockLayout>, f: impl Fn(usize, usize) -> C64) -> Self {
        let blocks = layout
            .blocks()
            .iter()
            .map(|b| DMatrix::from_fn(b.len(), b.len(), |r, c| f(b[r], b[c])))
            .collect();
        Self { modes, layout, blocks }
    }

    /// Wraps a dense matrix; entries crossing blocks of `layout` must vanish.
    pub fn from_dense(modes: Arc<ModeSet>, layout: Arc<BlockLayout>, dense: &DMatrix<C64>) -> Result<Self> {
        let n = modes.len();
        if dense.nrows() != n || dense.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: dense.nrows() });
        }
        for j in 0..n {
            for i in 0..n {
                if layout.block_of(i) != layout.block_of(j) && dense[(i, j)] != ZERO {
                    return Err(Error::LayoutMismatch(format!("nonzero entry ({i}, {j}) crosses blocks")));
                }
            }
        }
        Ok(Self::from_fn(modes, layout, |i, j| dense[(i, j)]))
    }

    pub(crate) fn from_parts(modes: Arc<ModeSet>, layout: Arc<BlockLayout>, blocks: Vec<DMatrix<C64>>) -> Self {
        debug_assert_eq!(blocks.len(), layout.num_blocks());
        Self { modes, layout, blocks }
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn blocks(&self) -> &[DMatrix<C64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DMatrix<C64>] {
        &mut self.blocks
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        let b = self.layout.block_of(row);
        if b != self.layout.block_of(col) {
            return ZERO;
        }
        self.blocks[b][(self.layout.pos(row), self.layout.pos(col))]
    }

    /// Entry `(ξ + k, ξ)` by mode coordinates, zero if either mode is absent.
    pub fn fiber_entry(&self, xi: &[i64], k: &[i64]) -> C64 {
        let target: Vec<i64> = xi.iter().zip(k).map(|(a, b)| a + b).collect();
        match (self.modes.index_of(&target), self.modes.index_of(xi)) {
            (Some(r), Some(c)) => self.entry(r, c),
            _ => ZERO,
        }
    }

    /// Visits every stored entry as `(row, col, value)`.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, C64)) {
        for (b, members) in self.layout.blocks().iter().enumerate() {
            let m = &self.blocks[b];
            for (c, &j) in members.iter().enumerate() {
                for (r, &i) in members.iter().enumerate() {
                    f(i, j, m[(r, c)]);
                }
            }
        }
    }

    /// Entrywise map over stored entries, keeping the layout.
    pub fn map_entries(&self, mut f: impl FnMut(usize, usize, C64) -> C64) -> Self {
        let blocks = self
            .layout
            .blocks()
            .iter()
            .zip(&self.blocks)
            .map(|(members, m)| DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| f(members[r], members[c], m[(r, c)])))
            .collect();
        Self { modes: self.modes.clone(), layout: self.layout.clone(), blocks }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        self.for_each_entry(|i, j, v| out[(i, j)] = v);
        out
    }

    /// Re-expresses the operator on another layout. Fails if a nonzero entry
    /// would cross blocks of the target.
    pub fn relayout(&self, target: Arc<BlockLayout>) -> Result<Self> {
        if Arc::ptr_eq(&self.layout, &target) || *self.layout == *target {
            return Ok(Self { modes: self.modes.clone(), layout: target, blocks: self.blocks.clone() });
        }
        let mut crossing = None;
        self.for_each_entry(|i, j, v| {
            if crossing.is_none() && v != ZERO && target.block_of(i) != target.block_of(j) {
                crossing = Some((i, j, v));
            }
        });
        if let Some((i, j, v)) = crossing {
            return Err(Error::InvarianceViolation(format!(
                "entry ({:?}, {:?}) = {v:.3e} couples different blocks",
                self.modes.mode(i),
                self.modes.mode(j)
            )));
        }
        Ok(Self::from_fn(self.modes.clone(), target, |i, j| self.entry(i, j)))
    }

    fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    /// Brings two operators onto a common layout (the join of both).
    pub fn aligned<'a>(&'a self, other: &'a Self) -> (Cow<'a, Self>, Cow<'a, Self>) {
        assert!(
            Arc::ptr_eq(&self.modes, &other.modes) || *self.modes == *other.modes,
            "operators act on different mode sets"
        );
        if self.same_layout(other) {
            return (Cow::Borrowed(self), Cow::Borrowed(other));
        }
        let joined = Arc::new(self.layout.join(&other.layout));
        let a = self.relayout(joined.clone()).expect("join is coarser");
        let b = other.relayout(joined).expect("join is coarser");
        (Cow::Owned(a), Cow::Owned(b))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&DMatrix<C64>, &DMatrix<C64>) -> DMatrix<C64>) -> Self {
        let (a, b) = self.aligned(other);
        let blocks = a.blocks.iter().zip(&b.blocks).map(|(x, y)| f(x, y)).collect();
        Self { modes: a.modes.clone(), layout: a.layout.clone(), blocks }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |x, y| x - y)
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Self) -> Self {
        self.zip_with(other, |x, y| x * y)
    }

    /// `[self, other] = self·other − other·self`.
    pub fn commutator(&self, other: &Self) -> Self {
        self.zip_with(other, |x, y| x * y - y * x)
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            modes: self.modes.clone(),
            layout: self.layout.clone(),
            blocks: self.blocks.iter().map(|m| m * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn add_assign(&mut self, other: &Self) {
        if self.same_layout(other) {
            for (x, y) in self.blocks.iter_mut().zip(&other.blocks) {
                *x += y;
            }
        } else {
            *self = self.add(other);
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            modes: self.modes.clone(),
            layout: self.layout.clone(),
            blocks: self.blocks.iter().map(|m| m.adjoint()).collect(),
        }
    }

    /// `[D, self]` for the diagonal operator `D = diag(d)`, in `O(entries)`.
    pub fn diagonal_commutator(&self, d: &[f64]) -> Self {
        self.map_entries(|i, j, v| v * (d[i] - d[j]))
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim()).map(|i| self.entry(i, i)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.blocks.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flat_map(|m| m.iter()).map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|m| m.iter().all(|v| *v == ZERO))
    }

    /// `max |A − A†|`.
    pub fn hermitian_defect(&self) -> f64 {
        self.blocks.iter().map(linalg::hermitian_defect).fold(0.0, f64::max)
    }

    /// Hermitian within `tol · max(1, max|entry|)`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol * self.max_abs().max(1.0)
    }

    /// Per-block spectral decomposition of the Hermitian part.
    pub fn eigh(&self) -> BlockEigen {
        BlockEigen { layout: self.layout.clone(), parts: self.blocks.iter().map(linalg::eigh).collect() }
    }

    /// Sorted spectrum of the Hermitian part.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.eigh().parts.iter().flat_map(|e| e.values.iter().copied()).collect();
        all.sort_by(f64::total_cmp);
        all
    }

    /// Applies the operator to a coefficient vector indexed like the modes.
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; psi.len()];
        for (members, m) in self.layout.blocks().iter().zip(&self.blocks) {
            for (c, &j) in members.iter().enumerate() {
                let x = psi[j];
                if x == ZERO {
                    continue;
                }
                for (r, &i) in members.iter().enumerate() {
                    out[i] += m[(r, c)] * x;
                }
            }
        }
        out
    }
}

const MAGIC: &[u8; 8] = b"TNFOPMAT";
const FORMAT_VERSION: u32 = 1;

impl OperatorMatrix {
    /// Binary container: magic, format version, layout, then little-endian
    /// `(re, im)` pairs block by block in column-major order.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.layout.num_blocks() as u64).to_le_bytes())?;
        for members in self.layout.blocks() {
            w.write_all(&(members.len() as u64).to_le_bytes())?;
            for &i in members {
                w.write_all(&(i as u64).to_le_bytes())?;
            }
        }
        for m in &self.blocks {
            for v in m.iter() {
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(modes: Arc<ModeSet>, r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Cache("not an operator container".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Cache(format!("unsupported container version {version}")));
        }
        let n = read_u64(r)? as usize;
        if n != modes.len() {
            return Err(Error::Cache(format!("container holds {n} modes, expected {}", modes.len())));
        }
        let nb = read_u64(r)? as usize;
        if nb > n {
            return Err(Error::Cache("corrupt block count".into()));
        }
        let mut blocks = Vec::with_capacity(nb);
        for _ in 0..nb {
            let len = read_u64(r)? as usize;
            if len > n {
                return Err(Error::Cache("corrupt block size".into()));
            }
            blocks.push((0..len).map(|_| read_u64(r).map(|x| x as usize)).collect::<Result<Vec<_>>>()?);
        }
        let layout = Arc::new(BlockLayout::from_blocks(n, blocks).map_err(|e| Error::Cache(e.to_string()))?);
        let mut data = Vec::with_capacity(nb);
        for members in layout.blocks() {
            let k = members.len();
            let mut m = DMatrix::zeros(k, k);
            for v in m.iter_mut() {
                *v = C64::new(read_f64(r)?, read_f64(r)?);
            }
            data.push(m);
        }
        Ok(Self { modes, layout, blocks: data })
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Block-wise spectral decomposition of an [`OperatorMatrix`].
#[derive(Debug, Clone)]
pub struct BlockEigen {
    layout: Arc<BlockLayout>,
    parts: Vec<HermitianEigen>,
}

impl BlockEigen {
    pub fn parts(&self) -> &[HermitianEigen] {
        &self.parts
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    /// `e^{i s M}` with the layout of `like`.
    pub fn exp_i(&self, s: f64, like: &OperatorMatrix) -> OperatorMatrix {
        let blocks = self.parts.iter().map(|e| e.exp_i(s)).collect();
        OperatorMatrix::from_parts(like.modes.clone(), self.layout.clone(), blocks)
    }

    pub fn spectral_norm(&self) -> f64 {
        self.parts.iter().flat_map(|e| e.values.iter()).map(|v| v.abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix::add(self, rhs)
    }
}

impl std::ops::Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix::sub(self, rhs)
    }
}

impl std::ops::Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: Self) -> OperatorMatrix {
        self.matmul(rhs)
    }
}
