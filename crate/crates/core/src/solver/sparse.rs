//! Block-sparse symmetric systems solved by sparse Cholesky.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

/// Symmetric matrix assembled from dense blocks; only the lower block
/// triangle (`row >= col`) is stored.
#[derive(Debug, Clone)]
pub struct BlockSymmetric {
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl BlockSymmetric {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        BlockSymmetric {
            offsets,
            sizes,
            blocks: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.sizes.last().unwrap())
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn block_count(&self) -> usize {
        self.sizes.len()
    }

    /// Adds `m` to block `(r, c)`. Blocks above the diagonal are stored
    /// transposed.
    pub fn add<R, C, S>(&mut self, r: usize, c: usize, m: &nalgebra::Matrix<f64, R, C, S>)
    where
        R: nalgebra::Dim,
        C: nalgebra::Dim,
        S: nalgebra::storage::Storage<f64, R, C>,
    {
        let (r, c, transpose) = if r >= c { (r, c, false) } else { (c, r, true) };
        let (nr, nc) = (self.sizes[r], self.sizes[c]);
        let entry = self
            .blocks
            .entry((r, c))
            .or_insert_with(|| DMatrix::zeros(nr, nc));
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if transpose {
                    entry[(j, i)] += m[(i, j)];
                } else {
                    entry[(i, j)] += m[(i, j)];
                }
            }
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim());
        for (b, &size) in self.sizes.iter().enumerate() {
            if let Some(m) = self.blocks.get(&(b, b)) {
                for k in 0..size {
                    d[self.offsets[b] + k] = m[(k, k)];
                }
            }
        }
        d
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (&(r, c), m) in &self.blocks {
            let (or, oc) = (self.offsets[r], self.offsets[c]);
            out.view_mut((or, oc), m.shape()).copy_from(m);
            if r != c {
                out.view_mut((oc, or), (m.ncols(), m.nrows()))
                    .copy_from(&m.transpose());
            }
        }
        out
    }

    /// Solves `(A + diag(extra)) x = b`; `None` if the matrix is not
    /// positive definite.
    pub fn solve(&self, extra_diag: &DVector<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.dim();
        if n == 0 {
            return Some(DVector::zeros(0));
        }
        let mut triplets = Vec::new();
        let mut has_diag = vec![false; self.sizes.len()];
        for (&(r, c), m) in &self.blocks {
            let (or, oc) = (self.offsets[r], self.offsets[c]);
            if r == c {
                has_diag[r] = true;
            }
            for j in 0..m.ncols() {
                let i0 = if r == c { j } else { 0 };
                for i in i0..m.nrows() {
                    let mut v = m[(i, j)];
                    if r == c && i == j {
                        v += extra_diag[or + i];
                    }
                    if v != 0.0 || (r == c && i == j) {
                        triplets.push(Triplet::new(or + i, oc + j, v));
                    }
                }
            }
        }
        for (b, present) in has_diag.iter().enumerate() {
            if !present {
                for k in 0..self.sizes[b] {
                    let i = self.offsets[b] + k;
                    triplets.push(Triplet::new(i, i, extra_diag[i]));
                }
            }
        }
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets).ok()?;
        let symbolic = SymbolicLlt::try_new(a.symbolic(), Side::Lower).ok()?;
        let llt = Llt::try_new_with_symbolic(symbolic, a.as_ref(), Side::Lower).ok()?;
        let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let x = llt.solve(&rhs);
        let out = DVector::from_fn(n, |i, _| x[(i, 0)]);
        out.iter().all(|v| v.is_finite()).then_some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sizes = vec![6, 3, 6, 8, 6];
        let mut a = BlockSymmetric::new(sizes.clone());
        let n = a.dim();
        // Random sparse J, accumulate JᵀJ block by block.
        let j = DMatrix::from_fn(40, n, |_, _| {
            if rng.random_bool(0.4) {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let h = j.transpose() * &j;
        for r in 0..sizes.len() {
            for c in 0..=r {
                let blk = h
                    .view((a.offset(r), a.offset(c)), (sizes[r], sizes[c]))
                    .clone_owned();
                a.add(r, c, &blk);
            }
        }
        assert!((a.to_dense() - &h).amax() < 1e-12);
        let extra = DVector::from_element(n, 0.5);
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let x = a.solve(&extra, &b).unwrap();
        let dense = (h + DMatrix::from_diagonal(&extra)).cholesky().unwrap().solve(&b);
        assert!((x - dense).amax() < 1e-9);
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = BlockSymmetric::new(vec![2]);
        a.add(0, 0, &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(a.solve(&DVector::zeros(2), &DVector::from_element(2, 1.0)).is_none());
    }
}
