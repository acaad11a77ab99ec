//! Dispersion function of the limit operator and its exact band/gap
//! structure.
//!
//! With `F(λ) = 1 + Σ_j σ_j ρ_j / (σ_j − λ)`, a point `λ ≥ 0` away from the
//! poles lies in the spectrum iff `λ F(λ) ≥ 0`. `λF(λ)` is strictly
//! increasing on each branch between consecutive poles, so every root search
//! below is a bracketed bisection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::HomogenizedModel;
use crate::interval::{complement_on, IntervalSet};

/// Relative distance to a pole below which `F` is not evaluated.
pub const POLE_RTOL: f64 = 1e-14;

/// Absolute distance to a pole below which a plotted sample is flagged.
pub const POLE_ADJACENT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("lambda={lambda} is at the pole sigma[{index}]")]
    Pole { lambda: f64, index: usize },
    #[error("internal: no sign change bracketing root {0}")]
    Bracket(usize),
    #[error("level must be nonnegative, got {0}")]
    NegativeLevel(f64),
    #[error("horizon L={l} must exceed {needed}")]
    HorizonTooSmall { l: f64, needed: f64 },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

fn check_pole(model: &HomogenizedModel, lambda: f64) -> Result<(), DispersionError> {
    match model.sigma.iter().position(|&s| (lambda - s).abs() < POLE_RTOL * s) {
        Some(index) => Err(DispersionError::Pole { lambda, index }),
        None => Ok(()),
    }
}

fn f_raw(model: &HomogenizedModel, lambda: f64) -> f64 {
    1.0 + model.sigma.iter().zip(&model.rho).map(|(s, r)| s * r / (s - lambda)).sum::<f64>()
}

/// `F(λ)`.
pub fn f_eval(model: &HomogenizedModel, lambda: f64) -> Result<f64, DispersionError> {
    check_pole(model, lambda)?;
    Ok(f_raw(model, lambda))
}

/// `λF(λ)`.
pub fn dispersion_eval(model: &HomogenizedModel, lambda: f64) -> Result<f64, DispersionError> {
    check_pole(model, lambda)?;
    Ok(lambda * f_raw(model, lambda))
}

/// Bisection for an increasing function with `g(lo) < 0 < g(hi)` (endpoint
/// values are never evaluated). Runs until the bracket cannot shrink.
fn bisect_increasing(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return mid;
        }
        let v = g(mid);
        if v == 0.0 {
            return mid;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Upper bracket for the root beyond the last pole: starts from
/// `σ_m(1 + Σρ) + Σσρ` and doubles until `g` turns positive.
fn last_branch_upper(model: &HomogenizedModel, g: impl Fn(f64) -> f64, root: usize) -> Result<f64, DispersionError> {
    let sm = *model.sigma.last().unwrap_or(&0.0);
    let rho_sum: f64 = model.rho.iter().sum();
    let sr_sum: f64 = model.sigma.iter().zip(&model.rho).map(|(s, r)| s * r).sum();
    let mut hi = sm * (1.0 + rho_sum) + sr_sum;
    for _ in 0..200 {
        if g(hi) > 0.0 {
            return Ok(hi);
        }
        hi = 2.0 * hi.max(1.0);
    }
    Err(DispersionError::Bracket(root))
}

/// Roots `μ_1 < … < μ_m` of `F`: one in each `(σ_j, σ_{j+1})` and one past `σ_m`.
pub fn mu_roots(model: &HomogenizedModel) -> Result<Vec<f64>, DispersionError> {
    let m = model.m();
    let g = |x: f64| f_raw(model, x);
    let mut mu = Vec::with_capacity(m);
    for j in 0..m {
        let lo = model.sigma[j];
        let hi = if j + 1 < m { model.sigma[j + 1] } else { last_branch_upper(model, g, j)? };
        let root = bisect_increasing(g, lo, hi);
        if !(root > lo && root < hi) {
            return Err(DispersionError::Bracket(j));
        }
        mu.push(root);
    }
    Ok(mu)
}

/// All real solutions of `λF(λ) = a`, one per monotone branch (`m + 1` total).
pub fn level_set_roots(model: &HomogenizedModel, a: f64) -> Result<Vec<f64>, DispersionError> {
    if !(a >= 0.0) {
        return Err(DispersionError::NegativeLevel(a));
    }
    let m = model.m();
    let g = |x: f64| x * f_raw(model, x) - a;
    let mut roots = Vec::with_capacity(m + 1);
    // Branch (−∞, σ_1): λF(λ) vanishes at 0, so the root sits in [0, σ_1).
    if a == 0.0 {
        roots.push(0.0);
    } else if m == 0 {
        roots.push(a);
    } else {
        roots.push(bisect_increasing(g, 0.0, model.sigma[0]));
    }
    for j in 0..m {
        let lo = model.sigma[j];
        let hi = if j + 1 < m { model.sigma[j + 1] } else { last_branch_upper(model, g, j + 1)? };
        roots.push(bisect_increasing(g, lo, hi));
    }
    Ok(roots)
}

/// Coefficients (constant term first) of
/// `λ·[Π(σ_i−λ) + Σ_j σ_jρ_j Π_{i≠j}(σ_i−λ)] − a·Π(σ_i−λ)`,
/// whose roots are the solutions of `λF(λ) = a`.
pub fn level_set_polynomial(model: &HomogenizedModel, a: f64) -> Vec<f64> {
    fn mul_linear(p: &[f64], root: f64) -> Vec<f64> {
        // p(λ)·(root − λ)
        let mut out = vec![0.0; p.len() + 1];
        for (k, c) in p.iter().enumerate() {
            out[k] += root * c;
            out[k + 1] -= c;
        }
        out
    }
    let m = model.m();
    let full = model.sigma.iter().fold(vec![1.0], |p, &s| mul_linear(&p, s));
    let mut bracket = full.clone();
    for j in 0..m {
        let partial = (0..m).filter(|&i| i != j).fold(vec![1.0], |p, i| mul_linear(&p, model.sigma[i]));
        for (k, c) in partial.iter().enumerate() {
            bracket[k] += model.sigma[j] * model.rho[j] * c;
        }
    }
    let mut poly = vec![0.0; m + 2];
    for (k, c) in bracket.iter().enumerate() {
        poly[k + 1] += c;
    }
    for (k, c) in full.iter().enumerate() {
        poly[k] -= a * c;
    }
    poly
}

/// Spectrum of the limit operator on `[0, L]`: bands are the complement of
/// the gaps `(σ_j, μ_j)`.
pub fn limit_spectrum(model: &HomogenizedModel, l: f64) -> Result<(IntervalSet, IntervalSet), DispersionError> {
    let mu = match &model.mu {
        Some(mu) => mu.clone(),
        None => mu_roots(model)?,
    };
    let needed = mu.last().copied().unwrap_or(0.0).max(model.sigma.last().copied().unwrap_or(0.0));
    if !(l > needed) {
        return Err(DispersionError::HorizonTooSmall { l, needed });
    }
    let gaps = IntervalSet::new(model.sigma.iter().copied().zip(mu.iter().copied()))
        .expect("interlacing makes the gaps an ordered chain");
    let bands = complement_on(&gaps, l);
    // complement_on returns open pieces; as a closed union they are the bands.
    Ok((bands, gaps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub lambda: f64,
    /// `None` for pole-adjacent samples.
    pub value: Option<f64>,
    pub pole_adjacent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionCurve {
    pub samples: Vec<CurveSample>,
    pub model: HomogenizedModel,
}

impl DispersionCurve {
    /// CSV with header `lambda,value,pole_adjacent`; flagged rows leave `value` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,value,pole_adjacent\n");
        for s in &self.samples {
            let value = s.value.map(crate::fmt_real).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", crate::fmt_real(s.lambda), value, s.pole_adjacent));
        }
        out
    }
}

/// Uniform samples of `λF(λ)` on `[lo, hi]`, flagging points within
/// [`POLE_ADJACENT`] of a pole.
pub fn sample_curve(model: &HomogenizedModel, range: (f64, f64), count: usize) -> Result<DispersionCurve, DispersionError> {
    if count < 2 {
        return Err(DispersionError::TooFewSamples(count));
    }
    let (lo, hi) = range;
    let step = (hi - lo) / (count - 1) as f64;
    let samples = (0..count)
        .map(|i| {
            let lambda = if i + 1 == count { hi } else { lo + i as f64 * step };
            let pole_adjacent = model.sigma.iter().any(|s| (lambda - s).abs() < POLE_ADJACENT);
            let value = if pole_adjacent { None } else { Some(lambda * f_raw(model, lambda)) };
            CurveSample { lambda, value, pole_adjacent }
        })
        .collect();
    Ok(DispersionCurve { samples, model: model.clone() })
}
