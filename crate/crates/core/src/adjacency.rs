//! Sparse boolean matrices over the (OR, AND) semiring.

use std::fmt;

/// Sparse boolean matrix in compressed row form. Entry `(r, c)` means a
/// message may flow from row node `r` to column node `c`.
#[derive(Clone, PartialEq, Eq)]
pub struct BoolAdjacency {
    rows: usize,
    cols: usize,
    /// `offsets[r]..offsets[r + 1]` indexes the sorted columns of row `r`.
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl fmt::Debug for BoolAdjacency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoolAdjacency({}x{}, ", self.rows, self.cols)?;
        f.debug_set().entries(self.iter()).finish()?;
        write!(f, ")")
    }
}

impl BoolAdjacency {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            offsets: vec![0; rows + 1],
            indices: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n as u32).collect(),
        }
    }

    /// Builds from arbitrary pairs; duplicates collapse. Panics on an
    /// out-of-range index.
    pub fn from_pairs(rows: usize, cols: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut lists = vec![Vec::new(); rows];
        for (r, c) in pairs {
            assert!(r < rows && c < cols, "edge ({r}, {c}) outside {rows}x{cols}");
            lists[r].push(c as u32);
        }
        Self::from_row_lists(cols, lists)
    }

    fn from_row_lists(cols: usize, mut lists: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        Self {
            rows: lists.len(),
            cols,
            offsets,
            indices,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of stored edges.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r < self.rows && self.row(r).binary_search(&(c as u32)).is_ok()
    }

    /// Edges in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c as usize)))
    }

    pub fn transpose(&self) -> Self {
        let mut lists = vec![Vec::new(); self.cols];
        for (r, c) in self.iter() {
            lists[c].push(r as u32);
        }
        Self::from_row_lists(self.rows, lists)
    }

    /// Boolean product: `(i, j)` iff some `k` has `(i, k)` in `self` and
    /// `(k, j)` in `rhs`. Panics on incompatible dimensions.
    pub fn product(&self, rhs: &BoolAdjacency) -> Self {
        assert_eq!(
            self.cols, rhs.rows,
            "product of {}x{} and {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut mark = vec![false; rhs.cols];
        let mut offsets = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for r in 0..self.rows {
            let start = indices.len();
            for &k in self.row(r) {
                for &c in rhs.row(k as usize) {
                    if !mark[c as usize] {
                        mark[c as usize] = true;
                        indices.push(c);
                    }
                }
            }
            indices[start..].sort_unstable();
            for &c in &indices[start..] {
                mark[c as usize] = false;
            }
            offsets.push(indices.len());
        }
        Self {
            rows: self.rows,
            cols: rhs.cols,
            offsets,
            indices,
        }
    }

    /// Element-wise OR. Panics on mismatched dimensions.
    pub fn union(&self, rhs: &BoolAdjacency) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "union dimension mismatch");
        let mut offsets = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + rhs.nnz());
        offsets.push(0);
        for r in 0..self.rows {
            let (a, b) = (self.row(r), rhs.row(r));
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let next = match (a.get(i), b.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        j += 1;
                        y
                    }
                    (Some(&x), None) => {
                        i += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        j += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                indices.push(next);
            }
            offsets.push(indices.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            offsets,
            indices,
        }
    }

    pub fn without_diagonal(&self) -> Self {
        Self::from_pairs(self.rows, self.cols, self.iter().filter(|&(r, c)| r != c))
    }

    /// True when every edge of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &BoolAdjacency) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.iter().all(|(r, c)| other.contains(r, c))
    }

    /// Stacks matrices along the block diagonal.
    pub fn block_diag(blocks: &[BoolAdjacency]) -> Self {
        let rows = blocks.iter().map(|b| b.rows).sum();
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut pairs = Vec::with_capacity(blocks.iter().map(|b| b.nnz()).sum());
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            pairs.extend(b.iter().map(|(r, c)| (r + r0, c + c0)));
            r0 += b.rows;
            c0 += b.cols;
        }
        Self::from_pairs(rows, cols, pairs)
    }
}
