//! Symmetric block-sparse matrices and their Cholesky factorization.
//!
//! Only the lower triangle is stored. Each block column keeps a sorted list of
//! `(row block, offset)` pairs into one flat column-major buffer. Elimination
//! follows the block order, so callers choose the ordering by how they number
//! blocks.

use nalgebra::{DMatrix, DVector, Dim, Matrix, RawStorage};

/// Minimum ratio of a squared Cholesky pivot to the original diagonal entry.
const PIVOT_RATIO: f64 = 1e-13;

#[derive(Clone, Debug)]
pub struct BlockLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockLayout {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for &d in &dims {
            offsets.push(total);
            total += d;
        }
        Self {
            dims,
            offsets,
            total,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, b: usize) -> usize {
        self.dims[b]
    }

    pub fn offset(&self, b: usize) -> usize {
        self.offsets[b]
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Lower-triangular block storage shared by the matrix and its factor.
#[derive(Clone, Debug)]
struct BlockStore {
    /// Per block column, `(row block, data offset)` sorted by row; the
    /// diagonal block comes first.
    cols: Vec<Vec<(usize, usize)>>,
    data: Vec<f64>,
}

impl BlockStore {
    fn entry(&mut self, layout: &BlockLayout, i: usize, j: usize) -> usize {
        match self.cols[j].binary_search_by_key(&i, |e| e.0) {
            Ok(k) => self.cols[j][k].1,
            Err(k) => {
                let off = self.data.len();
                self.data.resize(off + layout.dim(i) * layout.dim(j), 0.0);
                self.cols[j].insert(k, (i, off));
                off
            }
        }
    }

    fn num_blocks(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }
}

/// Symmetric matrix stored as lower-triangular dense blocks.
#[derive(Clone, Debug)]
pub struct SymmetricBlockMatrix {
    layout: BlockLayout,
    store: BlockStore,
}

impl SymmetricBlockMatrix {
    pub fn new(layout: BlockLayout) -> Self {
        let mut store = BlockStore {
            cols: vec![Vec::new(); layout.num_blocks()],
            data: Vec::new(),
        };
        for j in 0..layout.num_blocks() {
            store.entry(&layout, j, j);
        }
        Self { layout, store }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Adds `m` at block `(i, j)` and, implicitly, its transpose at `(j, i)`.
    pub fn add_block<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(&mut self, i: usize, j: usize, m: &Matrix<f64, R, C, S>) {
        let (lo, hi) = if i >= j { (i, j) } else { (j, i) };
        let rows = self.layout.dim(lo);
        assert_eq!(m.shape(), (self.layout.dim(i), self.layout.dim(j)), "block shape");
        let off = self.store.entry(&self.layout, lo, hi);
        let block = &mut self.store.data[off..off + rows * self.layout.dim(hi)];
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let (br, bc) = if i >= j { (r, c) } else { (c, r) };
                block[bc * rows + br] += m[(r, c)];
            }
        }
    }

    /// Adds `ja^T jb` at block `(i, j)`, where both Jacobians share their row count.
    pub fn add_gram(&mut self, i: usize, j: usize, ja: &DMatrix<f64>, jb: &DMatrix<f64>) {
        let (i, j, ja, jb) = if i >= j { (i, j, ja, jb) } else { (j, i, jb, ja) };
        let (di, dj) = (ja.ncols(), jb.ncols());
        let off = self.store.entry(&self.layout, i, j);
        let block = &mut self.store.data[off..off + di * dj];
        let (a, b, m) = (ja.as_slice(), jb.as_slice(), ja.nrows());
        for c in 0..dj {
            let bc = &b[c * m..(c + 1) * m];
            for r in 0..di {
                let ar = &a[r * m..(r + 1) * m];
                block[c * di + r] += ar.iter().zip(bc).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.layout.total());
        for j in 0..self.layout.num_blocks() {
            let (dj, off) = (self.layout.dim(j), self.store.cols[j][0].1);
            for k in 0..dj {
                d[self.layout.offset(j) + k] = self.store.data[off + k * dj + k];
            }
        }
        d
    }

    /// Adds `v[k]` to diagonal entry `k`.
    pub fn add_diagonal(&mut self, v: &DVector<f64>) {
        for j in 0..self.layout.num_blocks() {
            let (dj, off) = (self.layout.dim(j), self.store.cols[j][0].1);
            for k in 0..dj {
                self.store.data[off + k * dj + k] += v[self.layout.offset(j) + k];
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.layout.total();
        let mut m = DMatrix::zeros(n, n);
        for (j, col) in self.store.cols.iter().enumerate() {
            let (oj, dj) = (self.layout.offset(j), self.layout.dim(j));
            for &(i, off) in col {
                let (oi, di) = (self.layout.offset(i), self.layout.dim(i));
                for c in 0..dj {
                    for r in 0..di {
                        let v = self.store.data[off + c * di + r];
                        m[(oi + r, oj + c)] = v;
                        m[(oj + c, oi + r)] = v;
                    }
                }
            }
        }
        m
    }

    /// Number of stored blocks in the lower triangle.
    pub fn num_stored_blocks(&self) -> usize {
        self.store.num_blocks()
    }

    /// Right-looking block Cholesky `A = L L^T`.
    ///
    /// Fails with the index of the first block whose pivot is not positive or
    /// has lost nearly all of its original magnitude.
    pub fn cholesky(&self) -> Result<BlockCholesky, usize> {
        self.factor(None)
    }

    /// Cholesky of `A + diag(shift)` without modifying `A`.
    pub fn cholesky_shifted(&self, shift: &DVector<f64>) -> Result<BlockCholesky, usize> {
        self.factor(Some(shift))
    }

    fn factor(&self, shift: Option<&DVector<f64>>) -> Result<BlockCholesky, usize> {
        let lay = &self.layout;
        let n = lay.num_blocks();
        let original_diag = self.diagonal();
        let mut work = self.store.clone();
        if let Some(s) = shift {
            for j in 0..n {
                let (dj, off) = (lay.dim(j), work.cols[j][0].1);
                for k in 0..dj {
                    work.data[off + k * dj + k] += s[lay.offset(j) + k];
                }
            }
        }
        let mut l = BlockStore {
            cols: Vec::with_capacity(n),
            data: Vec::with_capacity(work.data.len()),
        };
        for j in 0..n {
            let col = std::mem::take(&mut work.cols[j]);
            let dj = lay.dim(j);
            let d0 = col[0].1;
            // Dense Cholesky of the diagonal block, in place, lower triangle.
            let base = l.data.len();
            l.data.extend_from_slice(&work.data[d0..d0 + dj * dj]);
            let ljj = &mut l.data[base..base + dj * dj];
            for c in 0..dj {
                let mut p = ljj[c * dj + c];
                for k in 0..c {
                    p -= ljj[k * dj + c] * ljj[k * dj + c];
                }
                let orig = original_diag[lay.offset(j) + c];
                if !(p.is_finite() && p > 0.0 && orig > 0.0 && p > PIVOT_RATIO * orig) {
                    return Err(j);
                }
                let p = p.sqrt();
                ljj[c * dj + c] = p;
                for r in c + 1..dj {
                    let mut v = ljj[c * dj + r];
                    for k in 0..c {
                        v -= ljj[k * dj + r] * ljj[k * dj + c];
                    }
                    ljj[c * dj + r] = v / p;
                }
                for r in 0..c {
                    ljj[c * dj + r] = 0.0;
                }
            }
            let mut lc = Vec::with_capacity(col.len());
            lc.push((j, base));
            for &(i, off) in &col[1..] {
                // L_ij = B_ij * L_jj^-T, column by column.
                let di = lay.dim(i);
                let lb = l.data.len();
                l.data.extend_from_slice(&work.data[off..off + di * dj]);
                let (head, x) = l.data.split_at_mut(lb);
                let ljj = &head[base..base + dj * dj];
                for c in 0..dj {
                    for k in 0..c {
                        let f = ljj[k * dj + c];
                        for r in 0..di {
                            x[c * di + r] -= x[k * di + r] * f;
                        }
                    }
                    let p = ljj[c * dj + c];
                    for r in 0..di {
                        x[c * di + r] /= p;
                    }
                }
                lc.push((i, lb));
            }
            for a in 1..lc.len() {
                let (i, oa) = lc[a];
                let di = lay.dim(i);
                for &(k, ob) in &lc[1..=a] {
                    let dk = lay.dim(k);
                    let t = work.entry(lay, i, k);
                    let target = &mut work.data[t..t + di * dk];
                    for c in 0..dk {
                        for m in 0..dj {
                            let f = l.data[ob + m * dk + c];
                            if f == 0.0 {
                                continue;
                            }
                            for r in 0..di {
                                target[c * di + r] -= l.data[oa + m * di + r] * f;
                            }
                        }
                    }
                }
            }
            l.cols.push(lc);
        }
        Ok(BlockCholesky {
            layout: self.layout.clone(),
            store: l,
        })
    }
}

/// Lower-triangular block factor.
#[derive(Clone, Debug)]
pub struct BlockCholesky {
    layout: BlockLayout,
    store: BlockStore,
}

impl BlockCholesky {
    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = b.clone();
        let lay = &self.layout;
        let data = &self.store.data;
        for (j, col) in self.store.cols.iter().enumerate() {
            let (oj, dj) = (lay.offset(j), lay.dim(j));
            let d = col[0].1;
            for c in 0..dj {
                let mut v = y[oj + c];
                for k in 0..c {
                    v -= data[d + k * dj + c] * y[oj + k];
                }
                y[oj + c] = v / data[d + c * dj + c];
            }
            for &(i, off) in &col[1..] {
                let (oi, di) = (lay.offset(i), lay.dim(i));
                for c in 0..dj {
                    let yc = y[oj + c];
                    for r in 0..di {
                        y[oi + r] -= data[off + c * di + r] * yc;
                    }
                }
            }
        }
        for (j, col) in self.store.cols.iter().enumerate().rev() {
            let (oj, dj) = (lay.offset(j), lay.dim(j));
            for &(i, off) in &col[1..] {
                let (oi, di) = (lay.offset(i), lay.dim(i));
                for c in 0..dj {
                    let mut s = 0.0;
                    for r in 0..di {
                        s += data[off + c * di + r] * y[oi + r];
                    }
                    y[oj + c] -= s;
                }
            }
            let d = col[0].1;
            for c in (0..dj).rev() {
                let mut v = y[oj + c];
                for k in c + 1..dj {
                    v -= data[d + c * dj + k] * y[oj + k];
                }
                y[oj + c] = v / data[d + c * dj + c];
            }
        }
        y
    }

    /// Inverse of `A` restricted to blocks `start..`, in their order.
    ///
    /// Because `L^-1` is lower triangular, that part of `A^-1` depends only on
    /// the trailing square of the factor.
    pub fn trailing_inverse(&self, start: usize) -> DMatrix<f64> {
        let lay = &self.layout;
        let base = if start < lay.num_blocks() { lay.offset(start) } else { lay.total() };
        let n = lay.total() - base;
        let mut lt = DMatrix::zeros(n, n);
        for (j, col) in self.store.cols.iter().enumerate().skip(start) {
            let (oj, dj) = (lay.offset(j) - base, lay.dim(j));
            for &(i, off) in col {
                let (oi, di) = (lay.offset(i) - base, lay.dim(i));
                for c in 0..dj {
                    for r in 0..di {
                        lt[(oi + r, oj + c)] = self.store.data[off + c * di + r];
                    }
                }
            }
        }
        let linv = lt
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("non-singular triangular factor");
        linv.tr_mul(&linv)
    }

    pub fn num_stored_blocks(&self) -> usize {
        self.store.num_blocks()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, dims: &[usize], density: f64) -> SymmetricBlockMatrix {
        let layout = BlockLayout::new(dims.to_vec());
        let mut a = SymmetricBlockMatrix::new(layout);
        for j in 0..dims.len() {
            for i in j..dims.len() {
                if i == j || rng.random_bool(density) {
                    let r = DMatrix::from_fn(dims[i], dims[j], |_, _| rng.random_range(-1.0..1.0));
                    // Add a Gram contribution so the sum stays positive definite.
                    let m = DMatrix::from_fn(3, dims[i], |_, _| rng.random_range(-1.0..1.0));
                    let n = DMatrix::from_fn(3, dims[j], |_, _| rng.random_range(-1.0..1.0));
                    a.add_block(i, i, &(m.transpose() * &m));
                    a.add_block(j, j, &(n.transpose() * &n));
                    if i != j {
                        a.add_block(i, j, &(m.transpose() * &n));
                    } else {
                        a.add_block(i, i, &(&r * r.transpose() * 0.1));
                    }
                }
            }
        }
        let eye = DVector::from_element(a.layout().total(), 0.5);
        a.add_diagonal(&eye);
        a
    }

    #[test]
    fn solve_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..30 {
            let nb = 1 + trial % 9;
            let dims: Vec<usize> = (0..nb).map(|_| if rng.random_bool(0.5) { 6 } else { 3 }).collect();
            let a = random_spd(&mut rng, &dims, 0.4);
            let dense = a.to_dense();
            let b = DVector::from_fn(a.layout().total(), |_, _| rng.random_range(-1.0..1.0));
            let x = a.cholesky().unwrap().solve(&b);
            let expect = dense.clone().cholesky().unwrap().solve(&b);
            assert!((x - expect).amax() < 1e-10);
        }
    }

    #[test]
    fn shifted_factor_matches_explicit_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_spd(&mut rng, &[6, 6, 3, 3], 0.6);
        let shift = DVector::from_fn(a.layout().total(), |i, _| 0.1 * i as f64);
        let mut b = a.clone();
        b.add_diagonal(&shift);
        let rhs = DVector::from_fn(a.layout().total(), |_, _| rng.random_range(-1.0..1.0));
        let x = a.cholesky_shifted(&shift).unwrap().solve(&rhs);
        let y = b.cholesky().unwrap().solve(&rhs);
        assert!((x - y).amax() < 1e-12);
    }

    #[test]
    fn trailing_inverse_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let dims: Vec<usize> = (0..2 + trial % 7).map(|k| if k % 3 == 0 { 3 } else { 6 }).collect();
            let a = random_spd(&mut rng, &dims, 0.5);
            let inv = a.to_dense().try_inverse().unwrap();
            let chol = a.cholesky().unwrap();
            let start = trial % dims.len();
            let o = a.layout().offset(start);
            let n = a.layout().total() - o;
            let t = chol.trailing_inverse(start);
            assert!((t - inv.view((o, o), (n, n))).amax() < 1e-9);
        }
    }

    #[test]
    fn upper_blocks_are_transposed() {
        let mut a = SymmetricBlockMatrix::new(BlockLayout::new(vec![2, 1]));
        a.add_block(0, 1, &DMatrix::from_row_slice(2, 1, &[1.0, 2.0]));
        let d = a.to_dense();
        assert_eq!(d[(2, 0)], 1.0);
        assert_eq!(d[(2, 1)], 2.0);
        assert_eq!(d[(0, 2)], 1.0);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut a = SymmetricBlockMatrix::new(BlockLayout::new(vec![2, 2]));
        a.add_block(0, 0, &DMatrix::identity(2, 2));
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        a.add_block(1, 1, &v);
        assert_eq!(a.cholesky().unwrap_err(), 1);
    }
}
