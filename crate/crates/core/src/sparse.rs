//! Real sparse symmetric kernels: reverse Cuthill–McKee ordering and an
//! envelope (skyline) Cholesky factorization.

use std::collections::VecDeque;

/// Symmetric matrix stored as full adjacency rows (both triangles).
#[derive(Debug, Clone)]
pub(crate) struct SymSparse {
    pub(crate) diag: Vec<f64>,
    /// `rows[i]` holds `(j, a_ij)` for `j ≠ i`.
    pub(crate) rows: Vec<Vec<(usize, f64)>>,
}

impl SymSparse {
    pub(crate) fn len(&self) -> usize {
        self.diag.len()
    }
}

/// Reverse Cuthill–McKee permutation: `order[new] = old`.
pub(crate) fn rcm_order(rows: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = rows.len();
    let degree: Vec<usize> = rows.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(rows, seed, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = rows[v].iter().map(|&(w, _)| w).filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Endpoint of a long BFS path inside the component of `seed`.
fn pseudo_peripheral(rows: &[Vec<(usize, f64)>], seed: usize, degree: &[usize]) -> usize {
    let mut start = seed;
    let mut depth = 0;
    for _ in 0..8 {
        let levels = bfs_levels(rows, start);
        let max_level = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        if max_level <= depth && depth > 0 {
            break;
        }
        depth = max_level;
        start = levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(max_level))
            .min_by_key(|(v, _)| (degree[*v], *v))
            .map(|(v, _)| v)
            .unwrap_or(start);
    }
    start
}

fn bfs_levels(rows: &[Vec<(usize, f64)>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; rows.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].unwrap_or(0);
        for &(w, _) in &rows[v] {
            if level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NotPositiveDefinite {
    pub(crate) row: usize,
}

/// `P A Pᵀ = L Lᵀ` with `L` stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub(crate) struct EnvelopeCholesky {
    /// `perm[new] = old`.
    perm: Vec<usize>,
    first: Vec<usize>,
    /// Row `i` occupies `start[i]..start[i+1]`, covering columns
    /// `first[i]..=i`.
    start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    pub(crate) fn factor(a: &SymSparse) -> Result<Self, NotPositiveDefinite> {
        let n = a.len();
        let perm = rcm_order(&a.rows);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, row) in a.rows.iter().enumerate() {
            let i = inv[old];
            for &(w, _) in row {
                let j = inv[w];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut values = vec![0.0; start[n]];
        for (old, row) in a.rows.iter().enumerate() {
            let i = inv[old];
            values[start[i] + (i - first[i])] += a.diag[old];
            for &(w, v) in row {
                let j = inv[w];
                if j < i {
                    values[start[i] + (j - first[i])] += v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let row_i = start[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let row_j = start[j];
                let mut s = values[row_i + (j - fi)];
                let xi = &values[row_i + (lo - fi)..row_i + (j - fi)];
                let xj = &values[row_j + (lo - fj)..row_j + (j - fj)];
                s -= dot(xi, xj);
                values[row_i + (j - fi)] = s / values[row_j + (j - fj)];
            }
            let xi = &values[row_i..row_i + (i - fi)];
            let d = values[row_i + (i - fi)] - dot(xi, xi);
            if !(d > 0.0) {
                return Err(NotPositiveDefinite { row: perm[i] });
            }
            values[row_i + (i - fi)] = d.sqrt();
        }
        Ok(Self { perm, first, start, values })
    }

    pub(crate) fn len(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b` in place for every column of the row-major block
    /// `b` (`b[v * cols + c]`).
    pub(crate) fn solve_block(&self, b: &mut [f64], cols: usize) {
        let n = self.len();
        debug_assert_eq!(b.len(), n * cols);
        let mut y = vec![0.0; n * cols];
        for (new, &old) in self.perm.iter().enumerate() {
            y[new * cols..(new + 1) * cols].copy_from_slice(&b[old * cols..(old + 1) * cols]);
        }
        // forward: L y = b
        let mut acc = vec![0.0; cols];
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let (done, rest) = y.split_at_mut(i * cols);
            acc.copy_from_slice(&rest[..cols]);
            for (&l, yj) in row[..i - fi].iter().zip(done[fi * cols..].chunks_exact(cols)) {
                for (a, &v) in acc.iter_mut().zip(yj) {
                    *a -= l * v;
                }
            }
            let d = row[i - fi];
            for (out, a) in rest[..cols].iter_mut().zip(&acc) {
                *out = a / d;
            }
        }
        // backward: Lᵀ x = y, column sweep over rows
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let d = row[i - fi];
            let (head, tail) = y.split_at_mut(i * cols);
            let xi = &mut tail[..cols];
            xi.iter_mut().for_each(|x| *x /= d);
            for (&l, yj) in row[..i - fi].iter().zip(head[fi * cols..].chunks_exact_mut(cols)) {
                for (v, &x) in yj.iter_mut().zip(xi.iter()) {
                    *v -= l * x;
                }
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old * cols..(old + 1) * cols].copy_from_slice(&y[new * cols..(new + 1) * cols]);
        }
    }

    #[cfg(test)]
    pub(crate) fn envelope_size(&self) -> usize {
        self.values.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn grid_laplacian(nx: usize, shift: f64) -> SymSparse {
        let n = nx * nx;
        let mut rows = vec![Vec::new(); n];
        let mut diag = vec![shift; n];
        for i in 0..nx {
            for j in 0..nx {
                let v = i * nx + j;
                for (di, dj) in [(1, 0), (0, 1)] {
                    let (a, b) = (i + di, j + dj);
                    if a < nx && b < nx {
                        let w = b + a * nx;
                        rows[v].push((w, -1.0));
                        rows[w].push((v, -1.0));
                        diag[v] += 1.0;
                        diag[w] += 1.0;
                    }
                }
            }
        }
        SymSparse { diag, rows }
    }

    fn dense(a: &SymSparse) -> DMatrix<f64> {
        let n = a.len();
        let mut m = DMatrix::from_diagonal(&DVector::from_vec(a.diag.clone()));
        for (i, row) in a.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        let _ = n;
        m
    }

    #[test]
    fn rcm_is_a_permutation_with_small_bandwidth() {
        let a = grid_laplacian(12, 0.1);
        let order = rcm_order(&a.rows);
        let mut seen = order.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..144).collect::<Vec<_>>());
        let mut inv = vec![0; 144];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        let bw = a
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, _)| (i, j)))
            .map(|(i, j)| inv[i].abs_diff(inv[j]))
            .max()
            .unwrap();
        assert!(bw <= 14, "bandwidth {bw}");
    }

    #[test]
    fn solves_match_dense() {
        let a = grid_laplacian(9, 0.3);
        let f = EnvelopeCholesky::factor(&a).unwrap();
        assert!(f.envelope_size() < 81 * 20);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cols = 3;
        let b: Vec<f64> = (0..81 * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut x = b.clone();
        f.solve_block(&mut x, cols);
        let d = dense(&a);
        for c in 0..cols {
            let xc = DVector::from_iterator(81, (0..81).map(|v| x[v * cols + c]));
            let bc = DVector::from_iterator(81, (0..81).map(|v| b[v * cols + c]));
            assert!((&d * xc - bc).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = grid_laplacian(4, -1.0);
        assert!(EnvelopeCholesky::factor(&a).is_err());
    }

    #[test]
    fn handles_disconnected_components() {
        let mut a = grid_laplacian(3, 1.0);
        a.diag.push(2.0);
        a.rows.push(Vec::new());
        let f = EnvelopeCholesky::factor(&a).unwrap();
        let mut b = vec![1.0; 10];
        f.solve_block(&mut b, 1);
        assert!((b[9] - 0.5).abs() < 1e-15);
    }
}
