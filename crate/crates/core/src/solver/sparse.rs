//! Sparse matrix plumbing for the QP subsolver: compressed row storage,
//! reverse Cuthill-McKee ordering and an envelope (profile) Cholesky
//! factorization. Transcribed trajectory problems couple only neighbouring
//! knots, so after reordering the envelope stays narrow.

use std::collections::VecDeque;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix, summing duplicate entries. Column indices within a
    /// row end up sorted.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let (pattern, map) = Self::pattern_from_triplets(nrows, ncols, triplets.iter().map(|t| (t.0, t.1)));
        let mut m = pattern;
        for (k, t) in triplets.iter().enumerate() {
            m.data[map[k]] += t.2;
        }
        m
    }

    /// Structure-only construction. Returns the (zero-valued) matrix and, for
    /// every input entry, the slot in `data` it accumulates into.
    pub fn pattern_from_triplets(
        nrows: usize,
        ncols: usize,
        entries: impl Iterator<Item = (usize, usize)>,
    ) -> (Self, Vec<usize>) {
        let entries: Vec<(usize, usize)> = entries.collect();
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by_key(|&k| entries[k]);
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::new();
        let mut map = vec![0usize; entries.len()];
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let e = entries[k];
            debug_assert!(e.0 < nrows && e.1 < ncols);
            if last != Some(e) {
                indices.push(e.1);
                indptr[e.0 + 1] += 1;
                last = Some(e);
            }
            map[k] = indices.len() - 1;
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        let nnz = indices.len();
        (
            Self { nrows, ncols, indptr, indices, data: vec![0.0; nnz] },
            map,
        )
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.data[span].iter().copied())
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.nrows) {
            *yr = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `y = Aᵀ x`
    pub fn tmul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate().take(self.nrows) {
            if xr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
    }

    /// `y = S x` for a symmetric `S` stored as its lower triangle.
    pub fn sym_lower_mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                y[r] += v * x[c];
                if c != r {
                    y[c] += v * x[r];
                }
            }
        }
    }
}

/// Reverse Cuthill-McKee ordering of an undirected graph given as adjacency
/// lists. Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = peripheral_node(adj, &degree, seed);
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Pseudo-peripheral node of the component containing `seed`, found by
/// repeated breadth-first sweeps.
fn peripheral_node(adj: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adj, node);
        let depth = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        if depth <= ecc && ecc > 0 {
            break;
        }
        ecc = depth;
        node = levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(depth))
            .map(|(v, _)| v)
            .min_by_key(|&v| (degree[v], v))
            .unwrap_or(node);
    }
    node
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    level[start] = Some(0);
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap_or(0);
        for &w in &adj[v] {
            if level[w].is_none() {
                level[w] = Some(lv + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorError {
    /// Pivot at the given (permuted) row was not positive.
    NotPositiveDefinite(usize),
}

/// Row-envelope storage of the lower triangle of a symmetric matrix in a
/// permuted order, together with its in-place Cholesky factor.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv[old] = new`
    inv: Vec<usize>,
    /// first stored column of each permuted row
    first: Vec<usize>,
    /// start of each permuted row in `values`
    start: Vec<usize>,
    values: Vec<f64>,
    work: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Symbolic setup from the lower-triangle pattern `(row, col)` in original
    /// indices. Orders with reverse Cuthill-McKee.
    pub fn new(n: usize, pattern: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(r, c) in pattern {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(r, c) in pattern {
            let (pr, pc) = (inv[r], inv[c]);
            let (hi, lo) = if pr >= pc { (pr, pc) } else { (pc, pr) };
            first[hi] = first[hi].min(lo);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for i in 0..n {
            start.push(acc);
            acc += i - first[i] + 1;
        }
        start.push(acc);
        Self { n, perm, inv, first, start, values: vec![0.0; acc], work: vec![0.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Storage size of the envelope.
    pub fn envelope_len(&self) -> usize {
        self.values.len()
    }

    /// Slot in the value array for original entry `(r, c)`; must lie in the
    /// pattern given at construction.
    pub fn slot(&self, r: usize, c: usize) -> usize {
        let (pr, pc) = (self.inv[r], self.inv[c]);
        let (hi, lo) = if pr >= pc { (pr, pc) } else { (pc, pr) };
        debug_assert!(lo >= self.first[hi]);
        self.start[hi] + lo - self.first[hi]
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// In-place factorization `A = L Lᵀ` of the values currently stored.
    pub fn factor(&mut self) -> Result<(), FactorError> {
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..=i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut sum = self.values[si + j - fi];
                let a = &self.values[si + k0 - fi..si + j - fi];
                let b = &self.values[sj + k0 - fj..sj + j - fj];
                sum -= a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                if j == i {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(FactorError::NotPositiveDefinite(i));
                    }
                    self.values[si + i - fi] = sum.sqrt();
                } else {
                    self.values[si + j - fi] = sum / self.values[sj + j - fj];
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place using the stored factor.
    pub fn solve(&mut self, b: &mut [f64]) {
        let n = self.n;
        let w = &mut self.work;
        for i in 0..n {
            w[i] = b[self.perm[i]];
        }
        // forward: L y = b
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let row = &self.values[si..si + i - fi];
            let s: f64 = row.iter().zip(&w[fi..i]).map(|(l, y)| l * y).sum();
            w[i] = (w[i] - s) / self.values[si + i - fi];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            w[i] /= self.values[si + i - fi];
            let xi = w[i];
            for (k, l) in self.values[si..si + i - fi].iter().enumerate() {
                w[fi + k] -= l * xi;
            }
        }
        for i in 0..n {
            b[self.perm[i]] = w[i];
        }
    }
}
