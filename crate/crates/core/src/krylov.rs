//! Shift-invert block Krylov eigensolver for Hermitian pencils `K x = λ M x`
//! with diagonal positive `M`.
//!
//! Complex blocks are stored as real `2n × cols` column-major arrays (real
//! parts above imaginary parts) so every projection is a real GEMM, with
//! transposition expressed through strides.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type CMat = DMatrix<C64>;

/// Block size.
const BLOCK: usize = 4;
/// Residual tolerance, relative to the largest Ritz value of `T`.
const TOL: f64 = 1e-12;
/// The Gram-based residual estimate is trusted only above this level.
const ESTIMATE_FLOOR: f64 = 1e-6;
const MAX_RESTARTS: usize = 60;

/// A pencil with a cheap solve of `(K + sM) x = f` for a fixed `s > 0`.
pub(crate) trait ShiftInvert {
    fn mass(&self) -> &[f64];
    /// `(K + sM)⁻¹ F`, column by column.
    fn solve(&self, f: &CMat) -> CMat;
    /// `K X`.
    fn apply_k(&self, x: &CMat) -> CMat;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NoConvergence {
    pub(crate) residual: f64,
}

/// Complex `n × cols` block, real parts in rows `0..n`, imaginary parts in
/// rows `n..2n`.
#[derive(Debug, Clone)]
pub(crate) struct Stack {
    n: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Stack {
    fn zeros(n: usize, cols: usize) -> Self {
        Self { n, cols, data: vec![0.0; 2 * n * cols] }
    }

    fn from_cmat(m: &CMat) -> Self {
        let (n, cols) = m.shape();
        let mut s = Self::zeros(n, cols);
        for c in 0..cols {
            for r in 0..n {
                let z = m[(r, c)];
                s.data[c * 2 * n + r] = z.re;
                s.data[c * 2 * n + n + r] = z.im;
            }
        }
        s
    }

    fn to_cmat(&self) -> CMat {
        let n = self.n;
        CMat::from_fn(n, self.cols, |r, c| C64::new(self.data[c * 2 * n + r], self.data[c * 2 * n + n + r]))
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * 2 * self.n..(j + 1) * 2 * self.n]
    }

    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.n;
        &mut self.data[j * 2 * n..(j + 1) * 2 * n]
    }

    fn append(&mut self, other: &Stack) {
        debug_assert_eq!(self.n, other.n);
        self.data.extend_from_slice(&other.data);
        self.cols += other.cols;
    }

    fn columns(&self, from: usize) -> Stack {
        Stack { n: self.n, cols: self.cols - from, data: self.data[from * 2 * self.n..].to_vec() }
    }

    fn push_col(&mut self, col: &[f64]) {
        self.data.extend_from_slice(col);
        self.cols += 1;
    }

    fn weighted(&self, mass: &[f64]) -> Stack {
        let mut out = self.clone();
        let n = self.n;
        for c in 0..self.cols {
            let col = out.col_mut(c);
            for (r, m) in mass.iter().enumerate() {
                col[r] *= m;
                col[n + r] *= m;
            }
        }
        out
    }
}

/// `C = αAB + βC` on strided real views, `A: m×k`, `B: k×n`.
#[allow(clippy::too_many_arguments)]
fn dgemm(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
    (a, rsa, csa): (&[f64], usize, usize),
    (b, rsb, csb): (&[f64], usize, usize),
    beta: f64,
    (c, rsc, csc): (&mut [f64], usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(a.len() > last(m, k, rsa, csa) && b.len() > last(k, n, rsb, csb) && c.len() > last(m, n, rsc, csc));
    // SAFETY: every index touched is within the checked slice bounds, and `c`
    // is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `D = Vᴴ M B`.
fn m_dots(mass: &[f64], v: &Stack, b: &Stack) -> CMat {
    let (n, d, p) = (v.n, v.cols, b.cols);
    let mb = b.weighted(mass);
    let ld = 2 * n;
    let vt = (&v.data[..], ld, 1);
    let vb = (&v.data[n.min(v.data.len())..], ld, 1);
    let bt = (&mb.data[..], 1, ld);
    let bb = (&mb.data[n.min(mb.data.len())..], 1, ld);
    let mut re = vec![0.0; d * p];
    let mut im = vec![0.0; d * p];
    dgemm((d, n, p), 1.0, vt, bt, 0.0, (&mut re, 1, d));
    dgemm((d, n, p), 1.0, vb, bb, 1.0, (&mut re, 1, d));
    dgemm((d, n, p), 1.0, vt, bb, 0.0, (&mut im, 1, d));
    dgemm((d, n, p), -1.0, vb, bt, 1.0, (&mut im, 1, d));
    CMat::from_fn(d, p, |i, c| C64::new(re[c * d + i], im[c * d + i]))
}

/// `T += sign · V C`.
fn add_product(t: &mut Stack, v: &Stack, coef: &CMat, sign: f64) {
    let (n, d, p) = (v.n, v.cols, coef.ncols());
    debug_assert_eq!((t.cols, coef.nrows()), (p, d));
    let cr: Vec<f64> = coef.iter().map(|z| z.re).collect();
    let ci: Vec<f64> = coef.iter().map(|z| z.im).collect();
    let ld = 2 * n;
    let vt = (&v.data[..], 1, ld);
    let vb = (&v.data[n.min(v.data.len())..], 1, ld);
    // Real and imaginary rows interleave by column, so the two halves are
    // updated through separate offsets of the same buffer.
    let off = n.min(t.data.len());
    dgemm((n, d, p), sign, vt, (&cr, 1, d), 1.0, (&mut t.data[..], 1, ld));
    dgemm((n, d, p), -sign, vb, (&ci, 1, d), 1.0, (&mut t.data[..], 1, ld));
    dgemm((n, d, p), sign, vb, (&cr, 1, d), 1.0, (&mut t.data[off..], 1, ld));
    dgemm((n, d, p), sign, vt, (&ci, 1, d), 1.0, (&mut t.data[off..], 1, ld));
}

fn combine(v: &Stack, coef: &CMat) -> Stack {
    let mut out = Stack::zeros(v.n, coef.ncols());
    add_product(&mut out, v, coef, 1.0);
    out
}

fn m_norm(mass: &[f64], x: &[f64]) -> f64 {
    let n = mass.len();
    let s: f64 = (0..n).map(|r| mass[r] * (x[r] * x[r] + x[n + r] * x[n + r])).sum();
    s.sqrt()
}

/// Two block passes removing the `basis` components of `cands`.
fn project_out(mass: &[f64], basis: &Stack, cands: &mut Stack) {
    if basis.cols == 0 || cands.cols == 0 {
        return;
    }
    for _ in 0..2 {
        let coef = m_dots(mass, basis, cands);
        add_product(cands, basis, &coef, -1.0);
    }
}

/// `M`-orthonormalizes `cands` against `basis` and each other; nearly
/// dependent candidates are dropped.
fn orthonormalize(mass: &[f64], basis: &Stack, mut cands: Stack) -> Stack {
    let n = cands.n;
    let before: Vec<f64> = (0..cands.cols).map(|c| m_norm(mass, cands.col(c))).collect();
    project_out(mass, basis, &mut cands);
    let mut out = Stack::zeros(n, 0);
    for (c, before) in before.into_iter().enumerate() {
        if !(before > 0.0) {
            continue;
        }
        let mut x = Stack { n, cols: 1, data: cands.col(c).to_vec() };
        project_out(mass, &out, &mut x);
        let after = m_norm(mass, &x.data);
        if after > 1e-10 * before {
            x.data.iter_mut().for_each(|e| *e /= after);
            out.push_col(&x.data);
        }
    }
    out
}

/// The `p` directions carrying most of the `M`-energy of `cands`, made
/// orthogonal to `basis`. Converged Ritz vectors leave tiny, noisy residuals
/// that must not crowd out the informative ones.
fn dominant_directions(mass: &[f64], basis: &Stack, mut cands: Stack, p: usize) -> Stack {
    project_out(mass, basis, &mut cands);
    let gram = m_dots(mass, &cands, &cands);
    let gram = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..cands.cols).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let picked: Vec<usize> = order.into_iter().take(p).filter(|&i| eig.eigenvalues[i] > 1e-20 * top).collect();
    let coef = CMat::from_fn(cands.cols, picked.len(), |r, c| eig.eigenvectors[(r, picked[c])]);
    orthonormalize(mass, basis, combine(&cands, &coef))
}

fn random_block(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Stack {
    let mut s = Stack::zeros(n, p);
    s.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    s
}

/// Appends Gram columns (`fresh`: `dim × (dim − old)`) to a Hermitian Gram
/// matrix of order `old`.
fn grow_gram(prev: &CMat, fresh: &CMat) -> CMat {
    let old = prev.nrows();
    let dim = fresh.nrows();
    let mut grown = CMat::zeros(dim, dim);
    grown.view_mut((0, 0), (old, old)).copy_from(prev);
    grown.view_mut((0, old), (dim, dim - old)).copy_from(fresh);
    for i in old..dim {
        for j in 0..old {
            grown[(i, j)] = fresh[(j, i - old)].conj();
        }
    }
    grown
}

/// Lowest `k` eigenpairs, ascending, with `M`-normalized vectors.
///
/// Iterates on `T = (K + sM)⁻¹ M` with full reorthogonalization and thick
/// restarts; eigenvalues are the Rayleigh quotients `x*Kx / x*Mx` of the
/// converged Ritz vectors. Requires `k ≤ n`.
pub(crate) fn lowest(op: &impl ShiftInvert, k: usize, seed: u64) -> Result<(Vec<f64>, CMat), NoConvergence> {
    let mass = op.mass();
    let n = mass.len();
    assert!(k <= n && k > 0);
    let p = BLOCK.min(n);
    let m_max = n.min((3 * k + 2 * p).max(48));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apply_t = |b: &Stack| Stack::from_cmat(&op.solve(&b.weighted(mass).to_cmat()));

    // T V = W; H = VᴴMW; G = WᴴMW.
    let mut v = Stack::zeros(n, 0);
    let mut w = Stack::zeros(n, 0);
    let mut h = CMat::zeros(0, 0);
    let mut g = CMat::zeros(0, 0);
    let mut block = orthonormalize(mass, &v, random_block(n, p, &mut rng));
    let mut restarts = 0;
    let mut worst = f64::INFINITY;
    loop {
        if block.cols == 0 && v.cols < n {
            block = orthonormalize(mass, &v, random_block(n, p, &mut rng));
        }
        let images = apply_t(&block);
        let old = v.cols;
        v.append(&block);
        w.append(&images);
        let dim = v.cols;
        h = grow_gram(&h, &m_dots(mass, &v, &images));
        g = grow_gram(&g, &m_dots(mass, &w, &images));

        let hs = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let eig = hs.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let wanted = k.min(dim);
        let keep = (k + p).min(dim);
        let ritz = |count: usize| -> (Vec<f64>, Stack, Stack) {
            let y = CMat::from_fn(dim, count, |r, c| eig.eigenvectors[(r, order[c])]);
            (order[..count].iter().map(|&i| eig.eigenvalues[i]).collect(), combine(&v, &y), combine(&w, &y))
        };
        let residual = |nu: f64, x: &[f64], tx: &[f64]| -> f64 {
            let r: Vec<f64> = x.iter().zip(tx).map(|(a, b)| b - nu * a).collect();
            m_norm(mass, &r)
        };
        // Rounding in T is relative to its norm ≈ ν_max.
        let scale = eig.eigenvalues[order[0]].abs();
        // ‖Ty − νy‖² = y*Gy − ν² without forming vectors; cancellation limits
        // it to about √ε, so exact residuals are formed only below that.
        let estimate = order[..wanted]
            .iter()
            .map(|&i| {
                let y = eig.eigenvectors.column(i);
                let nu = eig.eigenvalues[i];
                (y.dotc(&(&g * y)).re - nu * nu).max(0.0).sqrt() / scale
            })
            .fold(0.0, f64::max);

        let full = dim == n;
        let mut kept = None;
        if full || (dim >= k + p && estimate <= ESTIMATE_FLOOR) {
            let (nus, xs, txs) = ritz(keep);
            worst = (0..wanted).map(|c| residual(nus[c], xs.col(c), txs.col(c)) / scale).fold(0.0, f64::max);
            if full || worst <= TOL {
                let mut first = xs;
                first.data.truncate(2 * n * k);
                first.cols = k;
                return Ok(finish(op, &first.to_cmat()));
            }
            kept = Some((nus, xs, txs));
        }
        if dim + p > m_max {
            restarts += 1;
            if restarts > MAX_RESTARTS {
                return Err(NoConvergence { residual: worst.min(estimate) });
            }
            let (nus, xs, txs) = kept.unwrap_or_else(|| ritz(keep));
            let mut residuals = txs.clone();
            for (c, nu) in nus.iter().enumerate() {
                let x = xs.col(c).to_vec();
                residuals.col_mut(c).iter_mut().zip(&x).for_each(|(r, a)| *r -= nu * a);
            }
            v = xs;
            w = txs;
            h = m_dots(mass, &v, &w);
            g = m_dots(mass, &w, &w);
            block = dominant_directions(mass, &v, residuals, p);
        } else {
            block = orthonormalize(mass, &v, w.columns(old));
        }
    }
}

fn finish(op: &impl ShiftInvert, x: &CMat) -> (Vec<f64>, CMat) {
    let mass = op.mass();
    let kx = op.apply_k(x);
    let mut pairs: Vec<(f64, usize, f64)> = (0..x.ncols())
        .map(|c| {
            let col = x.column(c);
            let num = col.dotc(&kx.column(c)).re;
            let den: f64 = col.iter().zip(mass).map(|(z, m)| z.norm_sqr() * m).sum();
            (num / den, c, den.sqrt())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let vectors = CMat::from_fn(x.nrows(), pairs.len(), |r, c| x[(r, pairs[c].1)] / pairs[c].2);
    (pairs.iter().map(|p| p.0).collect(), vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense Hermitian pencil with an explicit inverse.
    struct Dense {
        k: CMat,
        mass: Vec<f64>,
        inv: CMat,
    }

    impl Dense {
        fn random(n: usize, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = CMat::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let k = &a * a.adjoint();
            let mass: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let shifted = CMat::from_fn(n, n, |i, j| k[(i, j)] + if i == j { C64::new(0.1 * mass[i], 0.0) } else { C64::new(0.0, 0.0) });
            let inv = shifted.try_inverse().unwrap();
            Self { k, mass, inv }
        }
    }

    impl ShiftInvert for Dense {
        fn mass(&self) -> &[f64] {
            &self.mass
        }
        fn solve(&self, f: &CMat) -> CMat {
            &self.inv * f
        }
        fn apply_k(&self, x: &CMat) -> CMat {
            &self.k * x
        }
    }

    #[test]
    fn stack_products_match_dense_complex_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d, p) = (13, 5, 3);
        let mass: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let v = random_block(n, d, &mut rng);
        let b = random_block(n, p, &mut rng);
        let (vc, bc) = (v.to_cmat(), b.to_cmat());
        let mdiag = CMat::from_fn(n, n, |i, j| if i == j { C64::new(mass[i], 0.0) } else { C64::new(0.0, 0.0) });
        assert!((m_dots(&mass, &v, &b) - vc.adjoint() * &mdiag * &bc).norm() < 1e-12);
        let coef = CMat::from_fn(d, p, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let mut t = b.clone();
        add_product(&mut t, &v, &coef, -1.0);
        assert!((t.to_cmat() - (&bc - &vc * &coef)).norm() < 1e-12);
    }

    #[test]
    fn lowest_matches_dense_eigensolver() {
        for seed in 0..4 {
            let n = 60 + 7 * seed as usize;
            let op = Dense::random(n, seed);
            let (values, vectors) = lowest(&op, 6, 1).unwrap();
            let scale: Vec<f64> = op.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
            let hm = CMat::from_fn(n, n, |i, j| op.k[(i, j)] * (scale[i] * scale[j]));
            let mut exact: Vec<f64> = hm.symmetric_eigen().eigenvalues.iter().copied().collect();
            exact.sort_by(f64::total_cmp);
            for (a, b) in values.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{values:?} vs {:?}", &exact[..6]);
            }
            for (c, &value) in values.iter().enumerate().take(6) {
                let x = vectors.column(c);
                let r = &op.k * x - CMat::from_fn(n, 1, |i, _| x[i] * op.mass[i] * value);
                assert!(r.norm() < 1e-7 * (1.0 + value));
            }
        }
    }

    #[test]
    fn whole_space_is_exact() {
        let op = Dense::random(6, 9);
        let (values, _) = lowest(&op, 6, 3).unwrap();
        assert_eq!(values.len(), 6);
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
    }
}
