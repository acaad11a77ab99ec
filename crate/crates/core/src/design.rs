//! Bubble geometry ↔ homogenized parameters.
//!
//! The forward map sends per-channel hole/bubble coefficients `(d_j, b_j)` to
//! the resonance `σ_j` and mass weight `ρ_j` of the limit operator. The
//! inverse map picks `(d_j, b_j)` so that the limit gaps are exactly the
//! requested `(α_j, β_j)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispersion;
use crate::interval::GapSpec;

/// Separation constant used by [`design_geometry`] when the caller has no
/// preference.
pub const DEFAULT_KAPPA: f64 = 0.5;

/// Relative tolerance under which two resonances count as equal.
pub const SIGMA_DISTINCT_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("sphere dimension must be at least 1, got {0}")]
    SphereDimension(usize),
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("channel {index}: coefficients must be positive and finite (d={d}, b={b})")]
    BadChannel { index: usize, d: f64, b: f64 },
    #[error("separation constant kappa must be positive, got {0}")]
    BadKappa(f64),
    #[error("channels {first} and {second} have equal resonance sigma={sigma}")]
    DuplicateSigma { first: usize, second: usize, sigma: f64 },
    #[error("model parameters invalid: {0}")]
    BadModel(String),
    #[error("internal: nonpositive radicand {value} for channel {index}")]
    Radicand { index: usize, value: f64 },
    #[error("internal: weight system is singular")]
    SingularSystem,
    #[error(transparent)]
    Dispersion(#[from] dispersion::DispersionError),
}

/// Riemannian volume of the unit `k`-sphere `S^k ⊂ ℝ^{k+1}`.
///
/// Uses the recursion `ω_k = 2π/(k−1) · ω_{k−2}` from `ω_1 = 2π`, `ω_2 = 4π`.
pub fn sphere_measure(k: usize) -> Result<f64, DesignError> {
    if k < 1 {
        return Err(DesignError::SphereDimension(k));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let (mut w, mut j) = if k % 2 == 1 { (two_pi, 1) } else { (2.0 * two_pi, 2) };
    while j < k {
        j += 2;
        w *= two_pi / (j as f64 - 1.0);
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    /// Hole-size coefficient `d_j`.
    pub d: f64,
    /// Bubble-radius coefficient `b_j`.
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleGeometry {
    pub n: usize,
    pub channels: Vec<Channel>,
    pub kappa: f64,
}

impl BubbleGeometry {
    /// Validates positivity and orders channels by increasing `σ_j`.
    ///
    /// Distinctness of the resonances is checked by [`forward_model`].
    pub fn new(n: usize, channels: Vec<Channel>, kappa: f64) -> Result<Self, DesignError> {
        if n < 2 {
            return Err(DesignError::Dimension(n));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(DesignError::BadKappa(kappa));
        }
        for (index, c) in channels.iter().enumerate() {
            if !(c.d > 0.0 && c.d.is_finite() && c.b > 0.0 && c.b.is_finite()) {
                return Err(DesignError::BadChannel { index, d: c.d, b: c.b });
            }
        }
        let mut geom = Self { n, channels, kappa };
        let sig: Vec<f64> = geom.channels.iter().map(|c| channel_sigma(n, c)).collect();
        let mut order: Vec<usize> = (0..sig.len()).collect();
        order.sort_by(|&a, &b| sig[a].total_cmp(&sig[b]));
        geom.channels = order.iter().map(|&k| geom.channels[k]).collect();
        Ok(geom)
    }

    pub fn m(&self) -> usize {
        self.channels.len()
    }
}

fn channel_sigma(n: usize, c: &Channel) -> f64 {
    if n == 2 {
        c.d / (4.0 * c.b * c.b)
    } else {
        let nf = n as f64;
        let w_lo = sphere_measure(n - 1).expect("n >= 3");
        let w_hi = sphere_measure(n).expect("n >= 3");
        0.5 * (nf - 2.0) * c.d.powi(n as i32 - 2) * w_lo / (c.b.powi(n as i32) * w_hi)
    }
}

fn channel_rho(n: usize, c: &Channel) -> f64 {
    c.b.powi(n as i32) * sphere_measure(n).expect("n >= 2")
}

/// Limit operator in coefficient form: resonances `σ_j`, weights `ρ_j` and,
/// once solved, the upper gap edges `μ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedModel {
    pub n: usize,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

impl HomogenizedModel {
    /// Checks `0 < σ_1 < … < σ_m` and `ρ_j > 0`. `m = 0` is allowed.
    pub fn new(n: usize, sigma: Vec<f64>, rho: Vec<f64>) -> Result<Self, DesignError> {
        if sigma.len() != rho.len() {
            return Err(DesignError::BadModel(format!(
                "{} resonances but {} weights",
                sigma.len(),
                rho.len()
            )));
        }
        if let Some(k) = sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(DesignError::BadModel(format!("sigma[{k}] must be positive and finite")));
        }
        if let Some(k) = rho.iter().position(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(DesignError::BadModel(format!("rho[{k}] must be positive and finite")));
        }
        if let Some(k) = sigma.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(DesignError::BadModel(format!("sigma must be strictly increasing (index {})", k + 1)));
        }
        Ok(Self { n, sigma, rho, mu: None })
    }

    pub fn m(&self) -> usize {
        self.sigma.len()
    }

    /// Solves for the gap edges and stores them.
    pub fn with_mu(mut self) -> Result<Self, DesignError> {
        let mu = dispersion::mu_roots(&self)?;
        self.mu = Some(mu);
        Ok(self)
    }
}

/// `σ_j`, `ρ_j` from the bubble coefficients, sorted by `σ`.
pub fn forward_model(geom: &BubbleGeometry) -> Result<HomogenizedModel, DesignError> {
    let n = geom.n;
    let mut rows: Vec<(usize, f64, f64)> = geom
        .channels
        .iter()
        .enumerate()
        .map(|(k, c)| (k, channel_sigma(n, c), channel_rho(n, c)))
        .collect();
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    for w in rows.windows(2) {
        let (s0, s1) = (w[0].1, w[1].1);
        if (s1 - s0).abs() <= SIGMA_DISTINCT_RTOL * s0.abs().max(s1.abs()) {
            return Err(DesignError::DuplicateSigma { first: w[0].0.min(w[1].0), second: w[0].0.max(w[1].0), sigma: s0 });
        }
    }
    HomogenizedModel::new(n, rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect())
}

/// `(β_j − α_j) · Π_{i≠j} (β_i − α_j)/(α_i − α_j)`, positive for a valid chain.
fn edge_products(alpha: &[f64], beta: &[f64]) -> Vec<f64> {
    (0..alpha.len())
        .map(|j| {
            let mut p = beta[j] - alpha[j];
            for i in (0..alpha.len()).filter(|&i| i != j) {
                p *= (beta[i] - alpha[j]) / (alpha[i] - alpha[j]);
            }
            p
        })
        .collect()
}

/// Weights `ρ_j` that put the upper gap edges at `β_j`, in closed form.
pub fn weights_closed_form(spec: &GapSpec) -> Vec<f64> {
    let (alpha, beta) = (spec.alpha(), spec.beta());
    edge_products(&alpha, &beta).iter().zip(&alpha).map(|(p, a)| p / a).collect()
}

/// Weights from the linear system `Σ_j α_j ρ_j / (β_k − α_j) = 1`, by dense
/// LU with partial pivoting.
pub fn solve_weight_system(spec: &GapSpec) -> Result<Vec<f64>, DesignError> {
    let (alpha, beta) = (spec.alpha(), spec.beta());
    let m = alpha.len();
    let a = DMatrix::from_fn(m, m, |k, j| alpha[j] / (beta[k] - alpha[j]));
    let rhs = DVector::from_element(m, 1.0);
    let sol = a.lu().solve(&rhs).ok_or(DesignError::SingularSystem)?;
    Ok(sol.iter().copied().collect())
}

/// Coefficients `(d_j, b_j)` realizing the target gaps, with κ = [`DEFAULT_KAPPA`].
pub fn design_geometry(spec: &GapSpec) -> Result<(BubbleGeometry, HomogenizedModel), DesignError> {
    design_geometry_with_kappa(spec, DEFAULT_KAPPA)
}

pub fn design_geometry_with_kappa(
    spec: &GapSpec,
    kappa: f64,
) -> Result<(BubbleGeometry, HomogenizedModel), DesignError> {
    let n = spec.n;
    let (alpha, beta) = (spec.alpha(), spec.beta());
    let prods = edge_products(&alpha, &beta);
    let w_n = sphere_measure(n)?;
    let mut channels = Vec::with_capacity(alpha.len());
    for (index, (&p, &a)) in prods.iter().zip(&alpha).enumerate() {
        let d_rad = if n == 2 {
            p / std::f64::consts::PI
        } else {
            2.0 * p / (sphere_measure(n - 1)? * (n as f64 - 2.0))
        };
        let b_rad = p / (w_n * a);
        for value in [d_rad, b_rad] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DesignError::Radicand { index, value });
            }
        }
        let d = if n == 2 { d_rad } else { d_rad.powf(1.0 / (n as f64 - 2.0)) };
        let b = b_rad.powf(1.0 / n as f64);
        channels.push(Channel { d, b });
    }
    let geom = BubbleGeometry::new(n, channels, kappa)?;
    let model = forward_model(&geom)?.with_mu()?;
    Ok((geom, model))
}
