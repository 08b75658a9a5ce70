//! Sparse symmetric positive-definite solves for the normal equations.
//!
//! Matrices are assembled from triplets into compressed-column form holding
//! the full symmetric pattern. Factorization is an up-looking LDLᵀ driven by
//! the elimination tree, applied after a minimum-degree ordering computed on
//! the block (per-pose) graph. The symbolic analysis only depends on the
//! pattern, so iterative solvers reuse it across iterations.

use std::collections::{BTreeSet, BinaryHeap};
use std::cmp::Reverse;

use crate::error::SolveError;

/// Compressed sparse column matrix. Row indices are sorted within a column.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Triplet accumulator; duplicates are summed on compression. Explicit zeros
/// are kept so that the pattern does not depend on the values.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, v: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, v));
    }

    pub fn into_csc(mut self) -> CscMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0; self.n + 1];
        let mut row_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.n {
            col_ptr[c + 1] += col_ptr[c];
        }
        CscMatrix {
            n: self.n,
            col_ptr,
            row_idx,
            values,
        }
    }
}

impl CscMatrix {
    pub fn same_pattern(&self, other: &CscMatrix) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (c, dc) in d.iter_mut().enumerate() {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                if self.row_idx[p] == c {
                    *dc += self.values[p];
                }
            }
        }
        d
    }

    /// Adds `f(k)` to each diagonal entry; the diagonal must be structurally present.
    pub fn add_to_diagonal(&mut self, f: impl Fn(usize) -> f64) {
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                if self.row_idx[p] == c {
                    self.values[p] += f(c);
                }
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[p]] += self.values[p] * x[c];
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                m[self.row_idx[p]][c] += self.values[p];
            }
        }
        m
    }
}

/// Greedy minimum-degree ordering of an undirected graph given by sorted
/// adjacency lists. Ties go to the lowest index. Returns `order[k] = node`.
pub fn minimum_degree_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut nbrs: Vec<BTreeSet<usize>> = adj
        .iter()
        .enumerate()
        .map(|(v, a)| a.iter().copied().filter(|&u| u != v).collect())
        .collect();
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((nbrs[v].len(), v))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != nbrs[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let clique: Vec<usize> = std::mem::take(&mut nbrs[v]).into_iter().collect();
        for &a in &clique {
            nbrs[a].remove(&v);
            for &b in &clique {
                if a != b {
                    nbrs[a].insert(b);
                }
            }
        }
        for &a in &clique {
            heap.push(Reverse((nbrs[a].len(), a)));
        }
    }
    order
}

/// Expands a block ordering into a scalar permutation `perm[k] = old index`.
pub fn expand_block_order(block_order: &[usize], block_size: usize) -> Vec<usize> {
    block_order
        .iter()
        .flat_map(|&b| (0..block_size).map(move |d| b * block_size + d))
        .collect()
}

/// Symbolic LDLᵀ analysis: elimination tree and column counts of `L` for
/// the permuted matrix `P A Pᵀ`.
#[derive(Clone, Debug)]
pub struct SymbolicLdl {
    n: usize,
    perm: Vec<usize>,
    pinv: Vec<usize>,
    parent: Vec<Option<usize>>,
    l_ptr: Vec<usize>,
    pattern: CscMatrix,
}

impl SymbolicLdl {
    /// `perm[k]` is the original index placed at position `k`.
    pub fn analyze(a: &CscMatrix, perm: Vec<usize>) -> Self {
        let n = a.n;
        assert_eq!(perm.len(), n, "permutation length mismatch");
        let mut pinv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        let mut parent = vec![None; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            let kk = perm[k];
            for p in a.col_ptr[kk]..a.col_ptr[kk + 1] {
                let mut i = pinv[a.row_idx[p]];
                if i < k {
                    while flag[i] != k {
                        if parent[i].is_none() {
                            parent[i] = Some(k);
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i].expect("elimination tree path");
                    }
                }
            }
        }
        let mut l_ptr = vec![0; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + lnz[k];
        }
        Self {
            n,
            perm,
            pinv,
            parent,
            l_ptr,
            pattern: CscMatrix {
                values: Vec::new(),
                ..a.clone()
            },
        }
    }

    pub fn nnz_l(&self) -> usize {
        self.l_ptr[self.n]
    }

    pub fn matches(&self, a: &CscMatrix) -> bool {
        self.pattern.same_pattern(a)
    }

    pub fn factor(&self, a: &CscMatrix) -> Result<NumericLdl<'_>, SolveError> {
        assert!(self.matches(a), "matrix pattern differs from the analyzed one");
        let n = self.n;
        let nnz = self.nnz_l();
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0; nnz];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];

        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            let kk = self.perm[k];
            for p in a.col_ptr[kk]..a.col_ptr[kk + 1] {
                let mut i = self.pinv[a.row_idx[p]];
                if i <= k {
                    y[i] += a.values[p];
                    let mut len = 0;
                    while flag[i] != k {
                        pattern[len] = i;
                        len += 1;
                        flag[i] = k;
                        i = self.parent[i].expect("elimination tree path");
                    }
                    while len > 0 {
                        top -= 1;
                        len -= 1;
                        pattern[top] = pattern[len];
                    }
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = self.l_ptr[i];
                let end = start + lnz[i];
                for p in start..end {
                    y[li[p]] -= lx[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                li[end] = k;
                lx[end] = l_ki;
                lnz[i] += 1;
            }
            if !(d[k] > 0.0) || !d[k].is_finite() {
                return Err(SolveError::NotPositiveDefinite {
                    pivot: self.perm[k],
                    value: d[k],
                });
            }
        }
        Ok(NumericLdl {
            symbolic: self,
            li,
            lx,
            d,
        })
    }
}

#[derive(Debug)]
pub struct NumericLdl<'a> {
    symbolic: &'a SymbolicLdl,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl NumericLdl<'_> {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = self.symbolic;
        let n = s.n;
        let mut x: Vec<f64> = (0..n).map(|k| b[s.perm[k]]).collect();
        for j in 0..n {
            let xj = x[j];
            for p in s.l_ptr[j]..s.l_ptr[j + 1] {
                x[self.li[p]] -= self.lx[p] * xj;
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in s.l_ptr[j]..s.l_ptr[j + 1] {
                xj -= self.lx[p] * x[self.li[p]];
            }
            x[j] = xj;
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            out[s.perm[k]] = x[k];
        }
        out
    }
}

/// One-shot solve with a minimum-degree ordering over `block_size` blocks.
pub fn solve_spd(a: &CscMatrix, b: &[f64], block_adj: &[Vec<usize>], block_size: usize) -> Result<Vec<f64>, SolveError> {
    let perm = expand_block_order(&minimum_degree_order(block_adj), block_size);
    let sym = SymbolicLdl::analyze(a, perm);
    Ok(sym.factor(a)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Dense Cholesky + triangular solves, the reference for every sparse test.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut l = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut s = a[j][j];
            for k in 0..j {
                s -= l[j][k] * l[j][k];
            }
            l[j][j] = s.sqrt();
            for i in j + 1..n {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                l[i][j] = s / l[j][j];
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= l[i][k] * y[k];
            }
            y[i] /= l[i][i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= l[k][i] * y[k];
            }
            y[i] /= l[i][i];
        }
        y
    }

    fn random_spd(rng: &mut ChaCha8Rng, nb: usize, bs: usize, extra: usize) -> (CscMatrix, Vec<Vec<usize>>) {
        let n = nb * bs;
        let mut pairs: Vec<(usize, usize)> = (1..nb).map(|k| (k - 1, k)).collect();
        for _ in 0..extra {
            let a = rng.gen_range(0..nb);
            let b = rng.gen_range(0..nb);
            if a != b {
                pairs.push((a, b));
            }
        }
        let mut t = TripletBuilder::new(n);
        let mut adj = vec![Vec::new(); nb];
        for k in 0..n {
            t.push(k, k, 0.1);
        }
        for &(a, b) in &pairs {
            adj[a].push(b);
            adj[b].push(a);
            // J = [A  B] with random blocks; add JᵀJ.
            let ja: Vec<f64> = (0..bs * bs).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let jb: Vec<f64> = (0..bs * bs).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let blocks = [(a, &ja), (b, &jb)];
            for &(u, ju) in &blocks {
                for &(v, jv) in &blocks {
                    for r in 0..bs {
                        for c in 0..bs {
                            let mut s = 0.0;
                            for k in 0..bs {
                                s += ju[k * bs + r] * jv[k * bs + c];
                            }
                            t.push(u * bs + r, v * bs + c, s);
                        }
                    }
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        (t.into_csc(), adj)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let mut t = TripletBuilder::new(2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 0, 0.0);
        let m = t.into_csc();
        assert_eq!(m.col_ptr, vec![0, 2, 2]);
        assert_eq!(m.values, vec![3.0, 0.0]);
    }

    #[test]
    fn matches_dense_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..30 {
            let (a, adj) = random_spd(&mut rng, 3 + trial % 17, 1 + trial % 3, trial % 11);
            let b: Vec<f64> = (0..a.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = solve_spd(&a, &b, &adj, a.n / adj.len()).unwrap();
            let xd = dense_solve(&a.to_dense(), &b);
            for (u, v) in x.iter().zip(&xd) {
                assert!((u - v).abs() < 1e-8 * (1.0 + v.abs()), "{u} vs {v}");
            }
            let r = a.mul_vec(&x);
            for (u, v) in r.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn minimum_degree_is_a_permutation_and_reduces_fill_on_arrow() {
        // Arrow matrix: node 0 linked to all others. Eliminating it first
        // fills everything; minimum degree eliminates it last.
        let n = 30;
        let mut adj = vec![Vec::new(); n];
        for k in 1..n {
            adj[0].push(k);
            adj[k].push(0);
        }
        let order = minimum_degree_order(&adj);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        // Node 0 ties with the last leaf once its degree drops to one.
        assert!(order.iter().position(|&v| v == 0).unwrap() >= n - 2);

        let mut t = TripletBuilder::new(n);
        for k in 0..n {
            t.push(k, k, n as f64);
            if k > 0 {
                t.push(0, k, 1.0);
                t.push(k, 0, 1.0);
            }
        }
        let a = t.into_csc();
        let natural = SymbolicLdl::analyze(&a, (0..n).collect());
        let md = SymbolicLdl::analyze(&a, order);
        assert_eq!(md.nnz_l(), n - 1);
        assert!(natural.nnz_l() > md.nnz_l());
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut t = TripletBuilder::new(2);
        t.push(0, 0, 1.0);
        t.push(1, 1, -1.0);
        let a = t.into_csc();
        let sym = SymbolicLdl::analyze(&a, vec![0, 1]);
        assert!(matches!(sym.factor(&a), Err(SolveError::NotPositiveDefinite { pivot: 1, .. })));
    }
}
