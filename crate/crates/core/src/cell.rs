//! Single bubble cell at scale ε.
//!
//! The cell is a flat annulus `d_eps ≤ r ≤ d_eps + κε/2` around a hole glued
//! to a sphere of radius `b_eps` truncated at polar angle `Θ`. Zonally
//! symmetric functions reduce the Laplacian to a 1-D Sturm–Liouville problem
//! on the chain `θ = π → θ = Θ ≡ r = d_eps → r = R`, which is discretized
//! with linear finite elements and a lumped mass.
//!
//! Only zonal modes are enumerated. The ground state is zonal, so `λ₁` is
//! exact in the reduction; higher values form the zonal spectrum.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{forward_model, sphere_measure, BubbleGeometry, DesignError};
use crate::quad::{integrate, QuadError};
use crate::tridiag::{TridiagError, TridiagPencil};
use crate::fmt_real;

/// Fewest elements accepted on any segment of a [`RadialCell`].
pub const MIN_ELEMENTS: usize = 64;

/// Default number of elements per segment.
pub const DEFAULT_RESOLUTION: usize = 512;

const TRIAL_DENOMINATOR_TOL: f64 = 1e-14;
const QUAD_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error("eps must be positive and finite, got {0}")]
    BadEps(f64),
    #[error("channel {index} out of range (m = {m})")]
    NoChannel { index: usize, m: usize },
    #[error("channel {index}: hole radius {d_eps} is not below bubble radius {b_eps}")]
    HoleNotInsideBubble { index: usize, d_eps: f64, b_eps: f64 },
    #[error("channel {index}: hole radius {d_eps} is not below kappa*eps/2 = {half_sep}")]
    HoleTooLarge { index: usize, d_eps: f64, half_sep: f64 },
    #[error("channel {index}: hole radius exp(-1/(d eps^2)) underflows at eps={eps}; use a larger eps")]
    RepresentableScale { index: usize, eps: f64 },
    #[error("angle {0} outside the open interval (0, pi)")]
    ThetaOutOfRange(f64),
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("trial function denominator {0} is numerically zero")]
    DegenerateTrial(f64),
    #[error("segment {segment} has {elements} elements; at least {MIN_ELEMENTS} required")]
    TooFewElements { segment: usize, elements: usize },
    #[error("bad cell: {0}")]
    BadCell(String),
    #[error("eps list must be nonempty and strictly decreasing")]
    EpsOrder,
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Eigen(#[from] TridiagError),
    #[error(transparent)]
    Design(#[from] DesignError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsChannel {
    pub d_eps: f64,
    pub b_eps: f64,
    /// Truncation angle `arcsin(d_eps / b_eps)`.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsGeometry {
    pub base: BubbleGeometry,
    pub eps: f64,
    pub channels: Vec<EpsChannel>,
}

impl EpsGeometry {
    pub fn n(&self) -> usize {
        self.base.n
    }

    /// Half the hole separation, `κε/2`.
    pub fn half_separation(&self) -> f64 {
        0.5 * self.base.kappa * self.eps
    }

    /// Radius of the Dirichlet surface around channel `j`.
    pub fn outer_radius(&self, j: usize) -> f64 {
        self.channels[j].d_eps + self.half_separation()
    }

    fn channel(&self, j: usize) -> Result<&EpsChannel, CellError> {
        self.channels.get(j).ok_or(CellError::NoChannel { index: j, m: self.channels.len() })
    }
}

/// Applies the dimension-dependent size laws: `d_eps = d ε^{n/(n−2)}`
/// (`exp(−1/(d ε²))` in the plane) and `b_eps = b ε`.
pub fn eps_scale(base: &BubbleGeometry, eps: f64) -> Result<EpsGeometry, CellError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CellError::BadEps(eps));
    }
    let n = base.n;
    let mut channels = Vec::with_capacity(base.channels.len());
    for (index, ch) in base.channels.iter().enumerate() {
        let d_eps = if n == 2 {
            let v = (-1.0 / (ch.d * eps * eps)).exp();
            if v < f64::MIN_POSITIVE {
                return Err(CellError::RepresentableScale { index, eps });
            }
            v
        } else {
            ch.d * eps.powf(n as f64 / (n as f64 - 2.0))
        };
        let b_eps = ch.b * eps;
        if d_eps >= b_eps {
            return Err(CellError::HoleNotInsideBubble { index, d_eps, b_eps });
        }
        channels.push(EpsChannel { d_eps, b_eps, theta: (d_eps / b_eps).asin() });
    }
    Ok(EpsGeometry { base: base.clone(), eps, channels })
}

/// `∫_{π/2}^{θ} sin^{1−n}ψ dψ`.
///
/// Evaluated in `t = ln tan(ψ/2)`, where the integrand becomes the entire
/// function `cosh^{n−2} t`.
pub fn angular_integral_f(theta: f64, n: usize) -> Result<f64, CellError> {
    if n < 2 {
        return Err(CellError::Dimension(n));
    }
    if !(theta > 0.0 && theta < PI) {
        return Err(CellError::ThetaOutOfRange(theta));
    }
    if theta == FRAC_PI_2 {
        return Ok(0.0);
    }
    let t = (0.5 * theta).tan().ln();
    let p = n as i32 - 2;
    Ok(integrate(|s: f64| s.cosh().powi(p), 0.0, t, 0.0, QUAD_RTOL)?.value)
}

/// C² step: 1 on `[0, π/4]`, 0 on `[π/2, ∞)`, quintic smoothstep between.
pub fn cutoff(theta: f64) -> f64 {
    1.0 - smoothstep((theta - FRAC_PI_4) / FRAC_PI_4)
}

fn cutoff_derivative(theta: f64) -> f64 {
    let s = (theta - FRAC_PI_4) / FRAC_PI_4;
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        -30.0 * s * s * (1.0 - s) * (1.0 - s) / FRAC_PI_4
    }
}

fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    }
}

/// Harmonic profile that is 0 on the flat side and 1 on the sphere equator.
///
/// Annulus: `A r^{2−n} + B` (`A ln r + B` in the plane) for
/// `d_eps ≤ r ≤ κε/2`, and 0 on the thin shell out to the Dirichlet surface.
/// Cap: `C F(θ) + 1` for `Θ ≤ θ ≤ π/2`, and 1 beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialFunction {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d_eps: f64,
    pub b_eps: f64,
    pub theta: f64,
    /// Radius where the annulus profile reaches zero, `κε/2`.
    pub zero_radius: f64,
    pub outer_radius: f64,
}

impl TrialFunction {
    /// Profile on the annulus, without cutoff.
    pub fn annulus_value(&self, r: f64) -> f64 {
        if r >= self.zero_radius {
            0.0
        } else if self.n == 2 {
            self.a * r.ln() + self.b
        } else {
            self.a * r.powi(2 - self.n as i32) + self.b
        }
    }

    /// Profile on the sphere, without cutoff.
    pub fn cap_value(&self, theta: f64) -> Result<f64, CellError> {
        if theta >= FRAC_PI_2 {
            return Ok(1.0);
        }
        Ok(self.c * angular_integral_f(theta, self.n)? + 1.0)
    }

    /// Cutoff-modified profile on the sphere: `1 + (v̂ − 1)Φ`.
    pub fn modified_cap_value(&self, theta: f64) -> Result<f64, CellError> {
        Ok(1.0 + (self.cap_value(theta)? - 1.0) * cutoff(theta))
    }
}

pub fn trial_constants(geom: &EpsGeometry, j: usize) -> Result<TrialFunction, CellError> {
    let ch = *geom.channel(j)?;
    let n = geom.n();
    let half = geom.half_separation();
    if ch.d_eps >= half {
        return Err(CellError::HoleTooLarge { index: j, d_eps: ch.d_eps, half_sep: half });
    }
    let f_theta = angular_integral_f(ch.theta, n)?;
    let (a, b, c) = if n == 2 {
        let den = (ch.d_eps / half).ln() + f_theta;
        if den.abs() < TRIAL_DENOMINATOR_TOL {
            return Err(CellError::DegenerateTrial(den));
        }
        let a = 1.0 / den;
        (a, -a * half.ln(), -a)
    } else {
        let p = n as i32 - 2;
        let nm2 = n as f64 - 2.0;
        let den = 1.0 - (ch.d_eps / half).powi(p) - nm2 * f_theta * (ch.d_eps / ch.b_eps).powi(p);
        if den.abs() < TRIAL_DENOMINATOR_TOL {
            return Err(CellError::DegenerateTrial(den));
        }
        let a = ch.d_eps.powi(p) / den;
        (a, -a / half.powi(p), nm2 * a / ch.b_eps.powi(p))
    };
    Ok(TrialFunction {
        n,
        a,
        b,
        c,
        d_eps: ch.d_eps,
        b_eps: ch.b_eps,
        theta: ch.theta,
        zero_radius: half,
        outer_radius: geom.outer_radius(j),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRayleigh {
    /// `‖∇𝐯‖²` over the cell.
    pub numerator: f64,
    /// `‖𝐯‖²` over the cell.
    pub denominator: f64,
    pub quotient: f64,
}

/// Rayleigh quotient of the cutoff-modified trial function; an upper bound
/// for the first Dirichlet eigenvalue of the cell.
pub fn trial_rayleigh(geom: &EpsGeometry, j: usize) -> Result<TrialRayleigh, CellError> {
    let tf = trial_constants(geom, j)?;
    let n = tf.n;
    let omega = sphere_measure(n - 1)?;
    let nm2 = n as f64 - 2.0;
    let p = n as i32;

    // Annulus in s = ln r, up to where the profile vanishes.
    let s0 = tf.d_eps.ln();
    let s1 = tf.zero_radius.ln();
    let grad2 = |s: f64| {
        let r = s.exp();
        if n == 2 {
            tf.a * tf.a
        } else {
            // |∂_r v|² r^{n−1} dr = (n−2)² A² r^{2−n} ds
            nm2 * nm2 * tf.a * tf.a * r.powi(2 - p)
        }
    };
    let val2 = |s: f64| {
        let r = s.exp();
        let v = tf.annulus_value(r);
        v * v * r.powi(p)
    };
    let ann_num = integrate(grad2, s0, s1, 0.0, QUAD_RTOL)?.value;
    let ann_den = integrate(val2, s0, s1, 0.0, QUAD_RTOL)?.value;

    // Cap in t = ln tan(θ/2): dθ = sin θ dt, sin θ = 1/cosh t.
    let t_start = (0.5 * tf.theta).tan().ln();
    let t_quarter = (0.5 * FRAC_PI_4).tan().ln();
    let big_f = |t: f64| -> f64 {
        integrate(|s: f64| s.cosh().powi(p - 2), 0.0, t, 0.0, QUAD_RTOL)
            .map(|q| q.value)
            .unwrap_or(f64::NAN)
    };
    let cap_grad2 = |t: f64| {
        let sin = 1.0 / t.cosh();
        let theta = 2.0 * t.exp().atan();
        let dv_dt = tf.c * (t.cosh().powi(p - 2) * cutoff(theta) + big_f(t) * cutoff_derivative(theta) * sin);
        // b^{n−2} sin^{n−1} |∂_θ v|² dθ = b^{n−2} sin^{n−2} |∂_t v|² dt
        sin.powi(p - 2) * dv_dt * dv_dt
    };
    let cap_val2 = |t: f64| {
        let sin = 1.0 / t.cosh();
        let theta = 2.0 * t.exp().atan();
        let v = 1.0 + tf.c * big_f(t) * cutoff(theta);
        sin.powi(p) * v * v
    };
    let mut cap_num = 0.0;
    let mut cap_den = 0.0;
    for (lo, hi) in [(t_start, t_start.max(t_quarter)), (t_start.max(t_quarter), 0.0)] {
        cap_num += integrate(cap_grad2, lo, hi, 0.0, QUAD_RTOL)?.value;
        cap_den += integrate(cap_val2, lo, hi, 0.0, QUAD_RTOL)?.value;
    }
    let far = integrate(|th: f64| th.sin().powi(p - 1), FRAC_PI_2, PI, 0.0, QUAD_RTOL)?.value;

    let numerator = omega * (ann_num + tf.b_eps.powi(p - 2) * cap_num);
    let denominator = omega * (ann_den + tf.b_eps.powi(p) * (cap_den + far));
    if !(numerator.is_finite() && denominator.is_finite()) {
        return Err(CellError::BadCell("trial quadrature produced a non-finite value".into()));
    }
    Ok(TrialRayleigh { numerator, denominator, quotient: numerator / denominator })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionFlux {
    /// Total flux of the trial profile through the hole boundary.
    pub flux: f64,
    /// `flux / (σ ρ ε^n)`.
    pub ratio: f64,
}

pub fn junction_flux(geom: &EpsGeometry, j: usize) -> Result<JunctionFlux, CellError> {
    let tf = trial_constants(geom, j)?;
    let n = tf.n;
    let omega = sphere_measure(n - 1)?;
    let flux = if n == 2 { -tf.a * omega } else { (n as f64 - 2.0) * tf.a * omega };
    let model = forward_model(&geom.base)?;
    let scale = model.sigma[j] * model.rho[j] * geom.eps.powi(n as i32);
    Ok(JunctionFlux { flux, ratio: flux / scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SegmentKind {
    /// Meridian of a sphere of the given radius; the coordinate is the polar
    /// angle.
    Arc { radius: f64 },
    /// Radial line in flat space; the coordinate is the radius.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Nodes in chain order (monotone, possibly decreasing).
    pub nodes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndCondition {
    Natural,
    Dirichlet,
}

/// Chain of 1-D segments; consecutive segments share their junction node.
/// Stiffness and mass densities omit the common factor `ω_{n−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialCell {
    pub n: usize,
    pub segments: Vec<Segment>,
    pub first: EndCondition,
    pub last: EndCondition,
}

/// `x0 + s sinh(ξ)` with `ξ` uniform, so nodes cluster within a few `s`
/// of `x0`.
fn graded_nodes(x0: f64, x1: f64, scale: Option<f64>, elements: usize) -> Vec<f64> {
    let len = x1 - x0;
    let mut nodes: Vec<f64> = match scale {
        Some(s) if s > 0.0 && s < len => {
            let xi_max = (len / s).asinh();
            (0..=elements)
                .map(|i| x0 + s * (xi_max * i as f64 / elements as f64).sinh())
                .collect()
        }
        _ => (0..=elements).map(|i| x0 + len * i as f64 / elements as f64).collect(),
    };
    nodes[0] = x0;
    nodes[elements] = x1;
    nodes
}

fn check_elements(elements: usize) -> Result<(), CellError> {
    if elements < MIN_ELEMENTS {
        return Err(CellError::TooFewElements { segment: 0, elements });
    }
    Ok(())
}

impl RadialCell {
    /// Bubble cell of channel `j`: natural at `θ = π`, Dirichlet on the
    /// outer surface.
    pub fn bubble(geom: &EpsGeometry, j: usize, elements: usize) -> Result<Self, CellError> {
        check_elements(elements)?;
        let ch = *geom.channel(j)?;
        let mut arc = graded_nodes(ch.theta, PI, Some(ch.theta), elements);
        arc.reverse();
        let ann = graded_nodes(ch.d_eps, geom.outer_radius(j), Some(ch.d_eps), elements);
        Ok(Self {
            n: geom.n(),
            segments: vec![
                Segment { kind: SegmentKind::Arc { radius: ch.b_eps }, nodes: arc },
                Segment { kind: SegmentKind::Flat, nodes: ann },
            ],
            first: EndCondition::Natural,
            last: EndCondition::Dirichlet,
        })
    }

    /// Spherical cap `θ ∈ [Θ, π]` with Dirichlet data on its rim.
    pub fn cap(n: usize, radius: f64, theta: f64, elements: usize) -> Result<Self, CellError> {
        check_elements(elements)?;
        if !(theta > 0.0 && theta < PI) {
            return Err(CellError::ThetaOutOfRange(theta));
        }
        let mut arc = graded_nodes(theta, PI, Some(theta), elements);
        arc.reverse();
        Ok(Self {
            n,
            segments: vec![Segment { kind: SegmentKind::Arc { radius }, nodes: arc }],
            first: EndCondition::Natural,
            last: EndCondition::Dirichlet,
        })
    }

    /// Flat ball of the given radius with Dirichlet data on its boundary.
    pub fn ball(n: usize, radius: f64, elements: usize) -> Result<Self, CellError> {
        check_elements(elements)?;
        Ok(Self {
            n,
            segments: vec![Segment { kind: SegmentKind::Flat, nodes: graded_nodes(0.0, radius, None, elements) }],
            first: EndCondition::Natural,
            last: EndCondition::Dirichlet,
        })
    }

    /// Whole sphere; both poles natural.
    pub fn sphere(n: usize, radius: f64, elements: usize) -> Result<Self, CellError> {
        check_elements(elements)?;
        Ok(Self {
            n,
            segments: vec![Segment { kind: SegmentKind::Arc { radius }, nodes: graded_nodes(0.0, PI, None, elements) }],
            first: EndCondition::Natural,
            last: EndCondition::Natural,
        })
    }

    /// Homothety by `factor`: radii scale, angles do not.
    pub fn scaled(&self, factor: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|seg| match seg.kind {
                SegmentKind::Arc { radius } => Segment { kind: SegmentKind::Arc { radius: radius * factor }, nodes: seg.nodes.clone() },
                SegmentKind::Flat => Segment { kind: SegmentKind::Flat, nodes: seg.nodes.iter().map(|r| r * factor).collect() },
            })
            .collect();
        Self { segments, ..self.clone() }
    }

    pub fn arc_nodes(&self) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| matches!(s.kind, SegmentKind::Arc { .. }))
            .map(|s| s.nodes.as_slice())
    }

    pub fn annulus_nodes(&self) -> Option<&[f64]> {
        self.segments.iter().find(|s| s.kind == SegmentKind::Flat).map(|s| s.nodes.as_slice())
    }

    fn validate(&self) -> Result<(), CellError> {
        if self.n < 2 {
            return Err(CellError::Dimension(self.n));
        }
        if self.segments.is_empty() {
            return Err(CellError::BadCell("no segments".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            let elements = seg.nodes.len().saturating_sub(1);
            if elements < MIN_ELEMENTS {
                return Err(CellError::TooFewElements { segment: i, elements });
            }
            let inc = seg.nodes[1] > seg.nodes[0];
            if seg.nodes.windows(2).any(|w| (w[1] > w[0]) != inc || w[1] == w[0]) {
                return Err(CellError::BadCell(format!("segment {i} nodes are not strictly monotone")));
            }
        }
        Ok(())
    }

    /// Stiffness/mass pencil over the free nodes.
    pub fn assemble(&self) -> Result<TridiagPencil, CellError> {
        self.validate()?;
        let total: usize = self.segments.iter().map(|s| s.nodes.len() - 1).sum::<usize>() + 1;
        // Element couplings k_e: K = Σ k_e (e_g − e_{g+1})(e_g − e_{g+1})ᵀ.
        let mut coupling = Vec::with_capacity(total - 1);
        let mut mass = vec![0.0; total];
        let p = self.n as i32;
        for seg in &self.segments {
            let (ks, km): (f64, f64) = match seg.kind {
                SegmentKind::Arc { radius } => (radius.powi(p - 2), radius.powi(p)),
                SegmentKind::Flat => (1.0, 1.0),
            };
            let density = |x: f64| match seg.kind {
                SegmentKind::Arc { .. } => x.sin().abs().powi(p - 1),
                SegmentKind::Flat => x.abs().powi(p - 1),
            };
            for w in seg.nodes.windows(2) {
                let (xa, xb) = (w[0], w[1]);
                let h = xb - xa;
                let (mut int_w, mut int_wa, mut int_wb) = (0.0, 0.0, 0.0);
                for (node, weight) in GAUSS5 {
                    let u = 0.5 * (node + 1.0);
                    let f = density(xa + u * h) * weight * 0.5 * h.abs();
                    int_w += f;
                    int_wa += f * (1.0 - u);
                    int_wb += f * u;
                }
                let g = coupling.len();
                coupling.push(ks * int_w / (h * h));
                mass[g] += km * int_wa;
                mass[g + 1] += km * int_wb;
            }
        }
        let lo = usize::from(self.first == EndCondition::Dirichlet);
        let hi = total - usize::from(self.last == EndCondition::Dirichlet);
        let mut excess = vec![0.0; hi - lo];
        if lo == 1 {
            excess[0] += coupling[0];
        }
        if hi < total {
            excess[hi - lo - 1] += coupling[total - 2];
        }
        let off = coupling[lo..hi - 1].iter().map(|c| -c).collect();
        Ok(TridiagPencil::from_excess(excess, off, mass[lo..hi].to_vec())?)
    }
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Lowest `k` zonal eigenvalues of the cell.
pub fn radial_eigenvalues(cell: &RadialCell, k: usize) -> Result<Vec<f64>, CellError> {
    Ok(cell.assemble()?.lowest(k)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolated {
    pub coarse: f64,
    pub fine: f64,
    /// `(4·fine − coarse)/3`, the second-order Richardson value.
    pub value: f64,
}

/// Eigenvalues at `elements` and `2·elements`, combined by Richardson
/// extrapolation.
pub fn extrapolated_eigenvalues(
    make: impl Fn(usize) -> Result<RadialCell, CellError>,
    elements: usize,
    k: usize,
) -> Result<Vec<Extrapolated>, CellError> {
    let coarse = radial_eigenvalues(&make(elements)?, k)?;
    let fine = radial_eigenvalues(&make(2 * elements)?, k)?;
    Ok(coarse
        .into_iter()
        .zip(fine)
        .map(|(c, f)| Extrapolated { coarse: c, fine: f, value: (4.0 * f - c) / 3.0 })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLimits {
    /// First Dirichlet eigenvalue of the flat ball of radius `κ/2`.
    pub lambda1_d_disk: f64,
    /// Second eigenvalue `n/b_j²` of the sphere of radius `b_j`.
    pub lambda2_sphere: f64,
    /// Second Neumann eigenvalue `π²` of the unit cube.
    pub lambda2_n_cube: f64,
    /// Limit of `ε²λ₂` for the rescaled channel cell.
    pub lj_lambda2: f64,
    /// Threshold above the last resonance band of the full period cell.
    pub l_lambda_m_plus_2: f64,
}

pub fn reference_limits(base: &BubbleGeometry, kappa: f64, j: usize) -> Result<ReferenceLimits, CellError> {
    let ch = base.channels.get(j).ok_or(CellError::NoChannel { index: j, m: base.channels.len() })?;
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(DesignError::BadKappa(kappa).into());
    }
    let n = base.n;
    let disk = extrapolated_eigenvalues(|e| RadialCell::ball(n, 0.5 * kappa, e), 4096, 1)?[0].value;
    let sphere = n as f64 / (ch.b * ch.b);
    let cube = PI * PI;
    let min_sphere = base.channels.iter().map(|c| n as f64 / (c.b * c.b)).fold(f64::INFINITY, f64::min);
    Ok(ReferenceLimits {
        lambda1_d_disk: disk,
        lambda2_sphere: sphere,
        lambda2_n_cube: cube,
        lj_lambda2: disk.min(sphere),
        l_lambda_m_plus_2: cube.min(min_sphere),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rayleigh_upper: f64,
    pub eps2_lambda2: f64,
    pub sigma_target: f64,
    pub lj_lambda2: f64,
    pub resolution: usize,
    /// Unextrapolated values on the finer mesh, kept for convergence checks.
    pub lambda1_fine: f64,
    pub lambda1_coarse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub channel: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub const CSV_HEADER: &'static str = "eps,lambda1,lambda2,rayleigh_upper,eps2_lambda2,sigma_target,Lj_lambda2,resolution";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let reals = [r.eps, r.lambda1, r.lambda2, r.rayleigh_upper, r.eps2_lambda2, r.sigma_target, r.lj_lambda2];
            for x in reals {
                out.push_str(&fmt_real(x));
                out.push(',');
            }
            out.push_str(&r.resolution.to_string());
            out.push('\n');
        }
        out
    }
}

/// One row per ε: Richardson-extrapolated zonal `λ₁, λ₂`, the trial upper
/// bound, and the reference limits they should approach.
pub fn convergence_table(
    base: &BubbleGeometry,
    kappa: f64,
    j: usize,
    eps_list: &[f64],
    resolution: usize,
) -> Result<ConvergenceTable, CellError> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(CellError::EpsOrder);
    }
    let base = BubbleGeometry::new(base.n, base.channels.clone(), kappa)?;
    let model = forward_model(&base)?;
    let sigma = *model.sigma.get(j).ok_or(CellError::NoChannel { index: j, m: model.m() })?;
    let limits = reference_limits(&base, kappa, j)?;
    let rows = eps_list
        .iter()
        .map(|&eps| {
            let geom = eps_scale(&base, eps)?;
            let ev = extrapolated_eigenvalues(|e| RadialCell::bubble(&geom, j, e), resolution, 2)?;
            let trial = trial_rayleigh(&geom, j)?;
            Ok(ConvergenceRow {
                eps,
                lambda1: ev[0].value,
                lambda2: ev[1].value,
                rayleigh_upper: trial.quotient,
                eps2_lambda2: eps * eps * ev[1].value,
                sigma_target: sigma,
                lj_lambda2: limits.lj_lambda2,
                resolution,
                lambda1_fine: ev[0].fine,
                lambda1_coarse: ev[0].coarse,
            })
        })
        .collect::<Result<Vec<_>, CellError>>()?;
    Ok(ConvergenceTable { channel: j, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Channel;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn unit_geom(n: usize, kappa: f64) -> BubbleGeometry {
        BubbleGeometry::new(n, vec![Channel { d: 1.0, b: 1.0 }], kappa).unwrap()
    }

    fn design_1_2() -> BubbleGeometry {
        let spec = crate::interval::validate_gap_spec(&[(1.0, 2.0)], 3, 0.01, 50.0).unwrap();
        crate::design::design_geometry(&spec).unwrap().0
    }

    #[test]
    fn scale_examples() {
        let g = eps_scale(&unit_geom(3, 0.5), 0.1).unwrap();
        let c = g.channels[0];
        assert!(rel(c.d_eps, 1e-3) < 1e-12);
        assert!(rel(c.b_eps, 0.1) < 1e-15);
        assert!(rel(c.theta, 0.01f64.asin()) < 1e-15);
        assert!((c.theta - 0.010_000_166_67).abs() < 1e-11);

        let g = eps_scale(&unit_geom(2, 0.5), 0.5).unwrap();
        assert!(rel(g.channels[0].d_eps, (-4.0f64).exp()) < 1e-15);
        assert!((g.channels[0].d_eps - 0.0183156).abs() < 1e-7);

        let half = BubbleGeometry::new(3, vec![Channel { d: 1.0, b: 2.0 }], 0.5).unwrap();
        // d ε³ / (b ε) = 1/2 at ε² = 1
        let g = eps_scale(&half, 1.0).unwrap();
        assert!((g.channels[0].theta - PI / 6.0).abs() < 1e-15);
    }

    #[test]
    fn scale_errors() {
        assert!(matches!(eps_scale(&unit_geom(3, 0.5), 0.0), Err(CellError::BadEps(_))));
        assert!(matches!(eps_scale(&unit_geom(3, 0.5), 1.0), Err(CellError::HoleNotInsideBubble { .. })));
        let plane = BubbleGeometry::new(2, vec![Channel { d: 0.3, b: 1.0 }], 0.5).unwrap();
        assert!(matches!(eps_scale(&plane, 0.05), Err(CellError::RepresentableScale { index: 0, .. })));
        assert!(eps_scale(&plane, 0.1).is_ok());
    }

    #[test]
    fn angular_integral_closed_forms() {
        for n in 2..6 {
            assert_eq!(angular_integral_f(FRAC_PI_2, n).unwrap(), 0.0);
        }
        assert!((angular_integral_f(3.0 * PI / 4.0, 3).unwrap() - 1.0).abs() < 1e-12);
        assert!((angular_integral_f(PI / 3.0, 2).unwrap() - (PI / 6.0).tan().ln()).abs() < 1e-12);
        assert!((angular_integral_f(PI / 3.0, 2).unwrap() + 0.549306).abs() < 1e-6);
        for &th in &[1e-6, 1e-3, 0.3, 1.0, 2.0, 3.1] {
            let f2 = angular_integral_f(th, 2).unwrap();
            let f3 = angular_integral_f(th, 3).unwrap();
            assert!((f2 - (0.5 * th).tan().ln()).abs() < 1e-10 * (1.0 + f2.abs()));
            assert!((f3 + 1.0 / th.tan()).abs() < 1e-10 * (1.0 + f3.abs()));
        }
        assert!(matches!(angular_integral_f(0.0, 3), Err(CellError::ThetaOutOfRange(_))));
        assert!(matches!(angular_integral_f(PI, 3), Err(CellError::ThetaOutOfRange(_))));
    }

    #[test]
    fn angular_integral_matches_direct_quadrature() {
        // Direct integration in θ away from the singular endpoints.
        for n in 4..7 {
            let direct = integrate(|p: f64| p.sin().powi(1 - n as i32), FRAC_PI_2, 0.4, 0.0, 1e-13).unwrap().value;
            assert!(rel(angular_integral_f(0.4, n).unwrap(), direct) < 1e-10);
        }
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(cutoff(0.0), 1.0);
        assert_eq!(cutoff(FRAC_PI_4), 1.0);
        assert_eq!(cutoff(FRAC_PI_2), 0.0);
        assert_eq!(cutoff(3.0), 0.0);
        let h = 1e-6;
        for &th in &[0.9, 1.1, 1.3, 1.5] {
            let fd = (cutoff(th + h) - cutoff(th - h)) / (2.0 * h);
            assert!((fd - cutoff_derivative(th)).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&cutoff(th)));
        }
    }

    #[test]
    fn trial_identities_and_boundary_values() {
        for n in 3..6 {
            let g = eps_scale(&unit_geom(n, 0.5), 0.1).unwrap();
            let tf = trial_constants(&g, 0).unwrap();
            let half = g.half_separation();
            let p = n as i32 - 2;
            assert!(rel(tf.b * half.powi(p), -tf.a) < 1e-14);
            assert!(rel(tf.c, (n as f64 - 2.0) * tf.a / tf.b_eps.powi(p)) < 1e-14);
            assert_eq!(tf.annulus_value(g.outer_radius(0)), 0.0);
            assert!(tf.annulus_value(half * (1.0 - 1e-12)).abs() < 1e-9);
            assert!((tf.cap_value(FRAC_PI_2).unwrap() - 1.0).abs() < 1e-12);
            let jump = tf.annulus_value(tf.d_eps) - tf.cap_value(tf.theta).unwrap();
            assert!(jump.abs() < 1e-9, "n={n}: {jump}");
            assert_eq!(tf.modified_cap_value(2.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn planar_trial_matches_junction_conditions() {
        let g = eps_scale(&BubbleGeometry::new(2, vec![Channel { d: 0.3, b: 1.0 }], 0.5).unwrap(), 0.5).unwrap();
        let tf = trial_constants(&g, 0).unwrap();
        assert!((tf.annulus_value(tf.d_eps) - tf.cap_value(tf.theta).unwrap()).abs() < 1e-12);
        // Flux balance: ∂_r v + b⁻¹ ∂_θ v = 0 at the junction.
        let dr = tf.a / tf.d_eps;
        let dtheta = tf.c / tf.theta.sin();
        assert!((dr + dtheta / tf.b_eps).abs() < 1e-9 * dr.abs());
        assert!(tf.annulus_value(0.999_999 * tf.zero_radius).abs() < 1e-6);
    }

    #[test]
    fn flux_is_closed_form() {
        let g = eps_scale(&unit_geom(3, 0.5), 0.1).unwrap();
        let tf = trial_constants(&g, 0).unwrap();
        let fl = junction_flux(&g, 0).unwrap();
        assert!(rel(fl.flux, 4.0 * PI * tf.a) < 1e-15);
    }

    #[test]
    fn flux_ratio_tends_to_one() {
        let base = design_1_2();
        let mut last = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05, 0.025, 0.0125] {
            let r = junction_flux(&eps_scale(&base, eps).unwrap(), 0).unwrap().ratio;
            assert!((r - 1.0).abs() < last);
            last = (r - 1.0).abs();
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn flux_scales_with_leading_hole_power() {
        // Doubling d^{n−2} doubles the leading flux; corrections are O(d_eps/κε).
        let g1 = eps_scale(&BubbleGeometry::new(3, vec![Channel { d: 0.1, b: 1.0 }], 0.5).unwrap(), 0.02).unwrap();
        let g2 = eps_scale(&BubbleGeometry::new(3, vec![Channel { d: 0.2, b: 1.0 }], 0.5).unwrap(), 0.02).unwrap();
        let ratio = junction_flux(&g2, 0).unwrap().flux / junction_flux(&g1, 0).unwrap().flux;
        assert!((ratio - 2.0).abs() < 1e-3);
    }

    #[test]
    fn disk_and_ball_references() {
        let j01 = 2.404_825_557_695_773;
        let disk = extrapolated_eigenvalues(|e| RadialCell::ball(2, 0.5, e), 2048, 1).unwrap()[0].value;
        assert!(rel(disk, (2.0 * j01) * (2.0 * j01)) < 1e-7);
        assert!((disk - 23.1323).abs() < 1e-3);
        let ball = extrapolated_eigenvalues(|e| RadialCell::ball(3, 1.0, e), 2048, 1).unwrap()[0].value;
        assert!(rel(ball, PI * PI) < 1e-7);

        let lim = reference_limits(&unit_geom(2, 1.0), 1.0, 0).unwrap();
        assert!(rel(lim.lambda1_d_disk, (2.0 * j01) * (2.0 * j01)) < 1e-7);
        assert_eq!(lim.lambda2_sphere, 2.0);
        assert_eq!(lim.lj_lambda2, 2.0);
        assert_eq!(lim.l_lambda_m_plus_2, 2.0);
        let lim = reference_limits(&unit_geom(3, 2.0), 2.0, 0).unwrap();
        assert!(rel(lim.lambda1_d_disk, PI * PI) < 1e-7);
    }

    #[test]
    fn sphere_zonal_spectrum() {
        // l(l+n−1)/b² for the zonal harmonics.
        for n in 2..5 {
            let ev = extrapolated_eigenvalues(|e| RadialCell::sphere(n, 1.5, e), 1024, 3).unwrap();
            assert!(ev[0].value.abs() < 1e-9);
            for (l, e) in ev.iter().enumerate().skip(1) {
                let exact = (l * (l + n - 1)) as f64 / 2.25;
                assert!(rel(e.value, exact) < 1e-7, "n={n} l={l}: {} vs {exact}", e.value);
            }
        }
    }

    /// Cotangent Laplacian on a subdivided icosahedron with barycentric mass.
    fn icosphere_second_eigenvalue(levels: usize) -> f64 {
        use nalgebra::{DMatrix, Vector3};
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut v: Vec<Vector3<f64>> = [
            [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
            [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
            [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]).normalize())
        .collect();
        let mut f: Vec<[usize; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4], [11, 10, 2],
            [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5],
            [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..levels {
            let mut mid = std::collections::HashMap::new();
            let mut next = Vec::new();
            let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    v.push((v[a] + v[b]).normalize());
                    v.len() - 1
                })
            };
            for [a, b, c] in f {
                let ab = midpoint(a, b, &mut v);
                let bc = midpoint(b, c, &mut v);
                let ca = midpoint(c, a, &mut v);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            f = next;
        }
        let nv = v.len();
        let mut k = DMatrix::<f64>::zeros(nv, nv);
        let mut m = vec![0.0; nv];
        for tri in &f {
            let area = 0.5 * (v[tri[1]] - v[tri[0]]).cross(&(v[tri[2]] - v[tri[0]])).norm();
            for i in 0..3 {
                let (a, b, c) = (tri[i], tri[(i + 1) % 3], tri[(i + 2) % 3]);
                m[a] += area / 3.0;
                let e1 = v[b] - v[a];
                let e2 = v[c] - v[a];
                let cot = e1.dot(&e2) / e1.cross(&e2).norm();
                // angle at a is opposite edge (b, c)
                k[(b, c)] -= 0.5 * cot;
                k[(c, b)] -= 0.5 * cot;
                k[(b, b)] += 0.5 * cot;
                k[(c, c)] += 0.5 * cot;
            }
        }
        let h = DMatrix::from_fn(nv, nv, |i, j| k[(i, j)] / (m[i] * m[j]).sqrt());
        let mut e: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e[1]
    }

    #[test]
    fn unit_two_sphere_against_mesh_oracle() {
        let radial = extrapolated_eigenvalues(|e| RadialCell::sphere(2, 1.0, e), 1024, 2).unwrap()[1].value;
        assert!((radial - 2.0).abs() < 1e-8);
        let mesh = icosphere_second_eigenvalue(3);
        assert!((mesh - 2.0).abs() < 0.02, "mesh oracle {mesh}");
        assert!((radial - mesh).abs() < 0.02);
        assert_eq!(reference_limits(&unit_geom(2, 1.0), 1.0, 0).unwrap().lambda2_sphere, 2.0);
    }

    #[test]
    fn cap_self_convergence() {
        let ev = |e| radial_eigenvalues(&RadialCell::cap(3, 1.0, 0.3, e).unwrap(), 1).unwrap()[0];
        let (l1, l2, l4) = (ev(256), ev(512), ev(1024));
        assert!(rel(l2, l4) < 1e-4);
        // Second order: successive differences shrink by four.
        let ratio = (l1 - l2) / (l2 - l4);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn bubble_cell_second_order() {
        let g = eps_scale(&design_1_2(), 0.1).unwrap();
        let ev = |e| radial_eigenvalues(&RadialCell::bubble(&g, 0, e).unwrap(), 2).unwrap();
        let (a, b, c) = (ev(128), ev(256), ev(512));
        for k in 0..2 {
            let ratio = (a[k] - b[k]) / (b[k] - c[k]);
            assert!((ratio - 4.0).abs() < 0.2, "k={k} ratio {ratio}");
        }
    }

    #[test]
    fn homothety_scales_eigenvalues_exactly() {
        let g = eps_scale(&design_1_2(), 0.05).unwrap();
        let cell = RadialCell::bubble(&g, 0, 128).unwrap();
        let scaled = cell.scaled(1.0 / g.eps);
        let a = radial_eigenvalues(&cell, 3).unwrap();
        let b = radial_eigenvalues(&scaled, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(rel(*x, y / (g.eps * g.eps)) < 1e-12);
        }
    }

    #[test]
    fn eigenvalues_positive_and_trial_bounds_ground_state() {
        for (n, eps) in [(3, 0.2), (3, 0.05), (4, 0.1), (2, 0.6)] {
            let base = BubbleGeometry::new(n, vec![Channel { d: 0.5, b: 1.0 }], 0.5).unwrap();
            let g = eps_scale(&base, eps).unwrap();
            let q = trial_rayleigh(&g, 0).unwrap().quotient;
            for res in [64, 256] {
                let ev = radial_eigenvalues(&RadialCell::bubble(&g, 0, res).unwrap(), 4).unwrap();
                assert!(ev.iter().all(|&x| x > 0.0));
            }
            let ev = extrapolated_eigenvalues(|e| RadialCell::bubble(&g, 0, e), 1024, 1).unwrap()[0];
            assert!(q >= ev.value * (1.0 - 1e-10), "n={n} eps={eps}: {q} < {}", ev.value);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(RadialCell::ball(3, 1.0, 10), Err(CellError::TooFewElements { .. })));
        let cell = RadialCell::ball(3, 1.0, 64).unwrap();
        assert!(matches!(radial_eigenvalues(&cell, 100), Err(CellError::Eigen(_))));
        let base = unit_geom(3, 0.5);
        assert!(matches!(convergence_table(&base, 0.5, 0, &[0.1, 0.2], 64), Err(CellError::EpsOrder)));
        assert!(matches!(trial_constants(&eps_scale(&base, 0.1).unwrap(), 3), Err(CellError::NoChannel { .. })));
        // d_eps = 0.4 ε³ against κε/2 = 0.05 ε at ε = 0.5.
        let wide = BubbleGeometry::new(3, vec![Channel { d: 0.4, b: 1.0 }], 0.1).unwrap();
        assert!(matches!(trial_constants(&eps_scale(&wide, 0.5).unwrap(), 0), Err(CellError::HoleTooLarge { .. })));
    }

    #[test]
    fn table_csv_shape() {
        let t = convergence_table(&design_1_2(), 0.5, 0, &[0.2, 0.1], 64).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ConvergenceTable::CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",64"));
        for r in &t.rows {
            assert!(r.lambda1 <= r.rayleigh_upper);
            assert!(rel(r.sigma_target, 1.0) < 1e-14);
        }
    }
}
