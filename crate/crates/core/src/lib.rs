//! Spectral gap design for periodic manifolds built from a perforated flat
//! space with small spherical bubbles glued into the holes.
//!
//! * [`interval`]: interval-set algebra, target-gap validation, Hausdorff
//!   distance and gap-matching reports.
//! * [`design`]: bubble coefficients ↔ homogenized resonances and weights,
//!   including the inverse design for prescribed gaps.
//! * [`dispersion`]: the scalar dispersion relation of the limit operator,
//!   its roots and the exact band/gap structure.
//! * [`cell`]: radial reduction of a single bubble cell, trial-function
//!   bounds and reference limits of the rescaled cell.
//! * [`floquet`]: weighted-graph period cells, θ-periodic spectra, band
//!   structure and Neumann/Dirichlet enclosure.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod design;
pub mod dispersion;
pub mod floquet;
pub mod interval;
pub mod quad;
pub mod tridiag;

mod krylov;
mod sparse;

pub use design::{
    design_geometry, design_geometry_with_kappa, forward_model, solve_weight_system, sphere_measure,
    weights_closed_form, BubbleGeometry, Channel, HomogenizedModel,
};
pub use dispersion::{dispersion_eval, f_eval, level_set_roots, limit_spectrum, mu_roots, sample_curve};
pub use interval::{complement_on, gap_match_report, hausdorff_distance, validate_gap_spec, GapSpec, IntervalSet};

/// Fixed-width real formatting used by every CSV/JSON emitter: 17
/// significant digits in scientific notation, so outputs are byte-stable.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}
