//! Symmetric tridiagonal pencils `K x = λ M x` with diagonal positive `M`.
//!
//! Eigenvalues come from bisection on Sturm counts: the number of negative
//! pivots in the `LDLᵀ` factorization of `K − λM` equals the number of
//! eigenvalues below `λ` (Sylvester inertia).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TridiagError {
    #[error("requested {requested} eigenvalues from a pencil of size {size}")]
    TooMany { requested: usize, size: usize },
    #[error("mass entries must be positive (index {0})")]
    BadMass(usize),
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TridiagPencil {
    /// Row excess `K[i,i] − |K[i,i−1]| − |K[i,i+1]|`; zero on interior rows of
    /// a Laplacian.
    excess: Vec<f64>,
    /// Off-diagonal of `K`, `off[i] = K[i, i+1]`.
    off: Vec<f64>,
    /// Diagonal mass matrix.
    mass: Vec<f64>,
}

impl TridiagPencil {
    pub fn new(diag: Vec<f64>, off: Vec<f64>, mass: Vec<f64>) -> Result<Self, TridiagError> {
        Self::check_shape(diag.len(), off.len(), mass.len())?;
        let excess = (0..diag.len())
            .map(|i| {
                let left = if i > 0 { off[i - 1].abs() } else { 0.0 };
                let right = off.get(i).map_or(0.0, |o| o.abs());
                diag[i] - left - right
            })
            .collect();
        Self::from_excess(excess, off, mass)
    }

    /// Builds the pencil from row excesses, which keeps the small row sums of
    /// Laplacian-like matrices exact instead of recovering them by
    /// cancellation.
    pub fn from_excess(excess: Vec<f64>, off: Vec<f64>, mass: Vec<f64>) -> Result<Self, TridiagError> {
        Self::check_shape(excess.len(), off.len(), mass.len())?;
        if let Some(i) = mass.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(TridiagError::BadMass(i));
        }
        Ok(Self { excess, off, mass })
    }

    fn check_shape(diag: usize, off: usize, mass: usize) -> Result<(), TridiagError> {
        if diag != mass || off + 1 != diag.max(1) {
            return Err(TridiagError::Shape(format!("diag {diag} / off {off} / mass {mass}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                self.excess[i] + left + self.off.get(i).map_or(0.0, |o| o.abs())
            })
            .collect()
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Number of eigenvalues strictly below `x`.
    ///
    /// Pivots `q_i` of `K − xM` are carried as `s_i = q_i − |off_i|`, with
    /// `s_i = e_i − x m_i + |off_{i−1}| s_{i−1} / q_{i−1}`.
    pub fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut s_prev = 0.0;
        let mut q_prev = 1.0_f64;
        for i in 0..self.len() {
            let carried = if i == 0 { 0.0 } else { self.off[i - 1].abs() * (s_prev / q_prev) };
            let s = (self.excess[i] - x * self.mass[i]) + carried;
            let mut q = s + self.off.get(i).map_or(0.0, |o| o.abs());
            if q == 0.0 {
                // Perturb an exact zero pivot; it only shifts the count at x itself.
                q = -f64::MIN_POSITIVE;
            }
            if q < 0.0 {
                count += 1;
            }
            s_prev = s;
            q_prev = q;
        }
        count
    }

    /// Gershgorin interval of `M^{-1/2} K M^{-1/2}`.
    pub fn bounds(&self) -> (f64, f64) {
        let n = self.len();
        let diag = self.diag();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, &d) in diag.iter().enumerate() {
            let mut r = 0.0;
            if i > 0 {
                r += self.off[i - 1].abs() / (self.mass[i] * self.mass[i - 1]).sqrt();
            }
            if i + 1 < n {
                r += self.off[i].abs() / (self.mass[i] * self.mass[i + 1]).sqrt();
            }
            let c = d / self.mass[i];
            lo = lo.min(c - r);
            hi = hi.max(c + r);
        }
        (lo, hi)
    }

    /// The `k`-th eigenvalue (0-based, ascending), bisected until the bracket
    /// cannot shrink further in floating point.
    pub fn eigenvalue(&self, k: usize) -> Result<f64, TridiagError> {
        if k >= self.len() {
            return Err(TridiagError::TooMany { requested: k + 1, size: self.len() });
        }
        let (mut lo, mut hi) = self.bounds();
        let pad = 1e-12 * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        lo -= pad;
        hi += pad;
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return Ok(mid);
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }

    /// The lowest `k` eigenvalues, ascending.
    pub fn lowest(&self, k: usize) -> Result<Vec<f64>, TridiagError> {
        if k > self.len() {
            return Err(TridiagError::TooMany { requested: k, size: self.len() });
        }
        (0..k).map(|i| self.eigenvalue(i)).collect()
    }
}
