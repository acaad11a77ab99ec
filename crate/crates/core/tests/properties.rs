//! Randomized invariants across the modules.

use gapforge::cell::{eps_scale, extrapolated_eigenvalues, trial_rayleigh, RadialCell};
use gapforge::dispersion::level_set_polynomial;
use gapforge::floquet::{
    dirichlet_spectrum, folded_stiffness, EigenMethod, neumann_spectrum, theta_eigenpairs, theta_spectrum, BoundaryPair, Edge,
    PeriodCellGraph,
};
use gapforge::{
    complement_on, design_geometry, dispersion_eval, forward_model, gap_match_report, hausdorff_distance,
    level_set_roots, limit_spectrum, mu_roots, solve_weight_system, validate_gap_spec, weights_closed_form,
    BubbleGeometry, Channel, GapSpec, HomogenizedModel, IntervalSet,
};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// `2m` sorted, well-separated points in (0, 100) as a gap chain.
fn gap_chain(max_m: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    (1..=max_m).prop_flat_map(|m| prop::collection::vec(0.05f64..1.0, 2 * m + 1)).prop_map(|steps| {
        let total: f64 = steps.iter().sum();
        let mut x = 0.0;
        let pts: Vec<f64> = steps[..steps.len() - 1]
            .iter()
            .map(|s| {
                x += 100.0 * s / total;
                x
            })
            .collect();
        pts.chunks(2).map(|c| (c[0], c[1])).collect()
    })
}

fn spec_strategy(max_m: usize) -> impl Strategy<Value = GapSpec> {
    (gap_chain(max_m), 2usize..=5).prop_map(|(raw, n)| {
        let top = raw.last().unwrap().1;
        validate_gap_spec(&raw, n, 1e-6, 10.0 * top).unwrap()
    })
}

fn model_strategy() -> impl Strategy<Value = HomogenizedModel> {
    (1usize..=6)
        .prop_flat_map(|m| (prop::collection::vec(0.1f64..2.0, m), prop::collection::vec(-2.0f64..1.0, m)))
        .prop_map(|(gaps, log_rho)| {
            let mut s = 0.0;
            let sigma: Vec<f64> = gaps
                .iter()
                .map(|g| {
                    s += g;
                    s
                })
                .collect();
            let rho = log_rho.iter().map(|l| 10f64.powf(*l)).collect();
            HomogenizedModel::new(3, sigma, rho).unwrap()
        })
}

/// Disjoint closed intervals in [0, 10].
fn band_set() -> impl Strategy<Value = IntervalSet> {
    prop::collection::vec(0.1f64..1.0, 2..=9).prop_map(|steps| {
        let total: f64 = steps.iter().sum();
        let mut x = 0.0;
        let pts: Vec<f64> = steps
            .iter()
            .map(|s| {
                let p = x;
                x += 10.0 * s / total;
                p
            })
            .collect();
        IntervalSet::new(pts.chunks_exact(2).map(|c| (c[0], c[1]))).unwrap()
    })
}

/// Distance between closed unions on `[0, l]` by dense sampling.
fn sampled_hausdorff(a: &IntervalSet, b: &IntervalSet, l: f64) -> f64 {
    let points = |s: &IntervalSet| -> Vec<f64> {
        let mut out = Vec::new();
        for iv in s.clipped(l) {
            let k = ((iv.hi - iv.lo) / 1e-3).ceil() as usize;
            out.extend((0..=k).map(|i| iv.lo + (iv.hi - iv.lo) * i as f64 / k as f64));
        }
        out
    };
    let dist = |x: f64, s: &IntervalSet| s.clipped(l).iter().map(|iv| (iv.lo - x).max(x - iv.hi).max(0.0)).fold(f64::INFINITY, f64::min);
    let one = |p: &IntervalSet, q: &IntervalSet| points(p).into_iter().map(|x| dist(x, q)).fold(0.0, f64::max);
    one(a, b).max(one(b, a))
}

fn small_graph(masses: Vec<f64>, weights: Vec<(usize, usize, f64)>) -> PeriodCellGraph {
    let n = masses.len();
    let mut edges: Vec<Edge> = (0..n - 1).map(|i| Edge { a: i, b: i + 1, w: 1.0 }).collect();
    edges.extend(weights.into_iter().filter(|(a, b, _)| a % n != b % n).map(|(a, b, w)| Edge { a: a % n, b: b % n, w }));
    let pairs = vec![BoundaryPair { a: 0, b: n - 1, dir: 1 }, BoundaryPair { a: 1, b: n - 2, dir: 2 }];
    PeriodCellGraph::new(masses, edges, pairs, 2).unwrap()
}

fn graph_strategy() -> impl Strategy<Value = PeriodCellGraph> {
    (6usize..=12)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.2f64..2.0, n),
                prop::collection::vec((0usize..12, 0usize..12, 0.1f64..3.0), 0..12),
            )
        })
        .prop_map(|(m, w)| small_graph(m, w))
}

proptest! {
    #[test]
    fn complement_is_an_involution(bands in band_set()) {
        let l = 10.0;
        let twice = complement_on(&complement_on(&bands, l), l);
        let open: Vec<(f64, f64)> = bands.pairs().into_iter().filter(|(lo, hi)| hi > lo).collect();
        prop_assert_eq!(twice.pairs().len(), open.len());
        for (a, b) in twice.pairs().iter().zip(&open) {
            prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn hausdorff_is_a_symmetric_distance(a in band_set(), b in band_set()) {
        let l = 10.0;
        let ab = hausdorff_distance(&a, &b, l).unwrap();
        let ba = hausdorff_distance(&b, &a, l).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(hausdorff_distance(&a, &a, l).unwrap(), 0.0);
        prop_assert!((ab - sampled_hausdorff(&a, &b, l)).abs() < 1e-3);
    }

    #[test]
    fn gap_matching_ignores_input_order(spec in spec_strategy(4), shift in -1e-3f64..1e-3) {
        let gaps: Vec<(f64, f64)> = spec.targets.pairs().into_iter().map(|(a, b)| (a + shift, b - shift)).collect();
        let mut reversed = gaps.clone();
        reversed.reverse();
        prop_assert_eq!(gap_match_report(&gaps, &spec), gap_match_report(&reversed, &spec));
    }

    #[test]
    fn design_round_trip(spec in spec_strategy(5)) {
        let (geom, _) = design_geometry(&spec).unwrap();
        let model = forward_model(&geom).unwrap();
        for (s, a) in model.sigma.iter().zip(spec.alpha()) {
            prop_assert!(rel(*s, a) <= 1e-12);
        }
        for (u, b) in mu_roots(&model).unwrap().iter().zip(spec.beta()) {
            prop_assert!(rel(*u, b) <= 1e-9);
        }
        prop_assert!(model.rho.iter().all(|r| *r > 0.0));
    }

    #[test]
    fn weight_oracles_agree(spec in spec_strategy(8)) {
        let solved = solve_weight_system(&spec).unwrap();
        for (a, b) in solved.iter().zip(weights_closed_form(&spec)) {
            prop_assert!(rel(*a, b) <= 1e-9);
        }
    }

    #[test]
    fn design_scales_linearly(spec in spec_strategy(4), c in 0.1f64..10.0) {
        let (_, base) = design_geometry(&spec).unwrap();
        let (_, scaled) = design_geometry(&spec.scaled(c)).unwrap();
        for j in 0..spec.m() {
            prop_assert!(rel(scaled.sigma[j], c * base.sigma[j]) <= 1e-12);
            prop_assert!(rel(scaled.rho[j], base.rho[j]) <= 1e-12);
            prop_assert!(rel(scaled.mu.as_ref().unwrap()[j], c * base.mu.as_ref().unwrap()[j]) <= 1e-9);
        }
    }

    #[test]
    fn gap_edges_interlace(model in model_strategy()) {
        let mu = mu_roots(&model).unwrap();
        for (j, &edge) in mu.iter().enumerate() {
            let next = model.sigma.get(j + 1).copied().unwrap_or(f64::INFINITY);
            prop_assert!(model.sigma[j] < edge && edge < next);
        }
    }

    #[test]
    fn dispersion_increases_on_each_branch(model in model_strategy()) {
        let mut poles = vec![0.0];
        poles.extend(&model.sigma);
        poles.push(2.0 * model.sigma.last().unwrap() + 5.0);
        for w in poles.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let pad = 1e-6 * (hi - lo);
            let values: Vec<f64> = (0..1000)
                .map(|i| dispersion_eval(&model, lo + pad + (hi - lo - 2.0 * pad) * i as f64 / 999.0).unwrap())
                .collect();
            prop_assert!(values.windows(2).all(|v| v[1] > v[0]));
        }
    }

    #[test]
    fn level_sets_have_m_plus_one_roots(model in model_strategy(), t in 0.0f64..1.0) {
        let mu = mu_roots(&model).unwrap();
        let a = 10.0 * mu.last().unwrap() * t;
        let roots = level_set_roots(&model, a).unwrap();
        prop_assert_eq!(roots.len(), model.m() + 1);
        prop_assert!(roots.iter().all(|r| *r >= 0.0));
        let poly = level_set_polynomial(&model, a);
        let scale: f64 = poly.iter().map(|c| c.abs()).sum();
        for r in &roots {
            let p = poly.iter().rev().fold(0.0, |acc, c| acc * r + c);
            let size: f64 = poly.iter().enumerate().map(|(k, c)| (c * r.powi(k as i32)).abs()).sum();
            prop_assert!(p.abs() <= 1e-9 * size.max(scale), "residual {p} at {r}");
        }
    }

    #[test]
    fn sign_matches_band_structure(model in model_strategy()) {
        let mu = mu_roots(&model).unwrap();
        let l = 1.5 * mu.last().unwrap();
        let (_, gaps) = limit_spectrum(&model, l).unwrap();
        for i in 0..2000 {
            let lambda = l * (i as f64 + 0.5) / 2000.0;
            let Ok(v) = dispersion_eval(&model, lambda) else { continue };
            let in_gap = gaps.iter().any(|g| g.lo < lambda && lambda < g.hi);
            prop_assert_eq!(in_gap, v < 0.0, "lambda {}", lambda);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trial_quotient_bounds_ground_state(n in 3usize..=4, d in 0.1f64..5.0, b in 0.3f64..2.0, eps in 0.02f64..0.2) {
        let base = BubbleGeometry::new(n, vec![Channel { d, b }], 0.5).unwrap();
        let geom = eps_scale(&base, eps);
        prop_assume!(geom.as_ref().is_ok_and(|g| trial_rayleigh(g, 0).is_ok() && RadialCell::bubble(g, 0, 512).is_ok()));
        let geom = geom.unwrap();
        // Discrete eigenvalues approach λ₁ from above, and the margin to the
        // trial quotient can be below single-mesh error; compare against the
        // extrapolated value.
        let ev = extrapolated_eigenvalues(|e| RadialCell::bubble(&geom, 0, e), 512, 1).unwrap()[0];
        let trial = trial_rayleigh(&geom, 0).unwrap().quotient;
        prop_assert!(ev.value > 0.0 && ev.fine <= ev.coarse);
        prop_assert!(trial >= ev.value * (1.0 - 1e-10), "trial {trial} < lambda {}", ev.value);
    }

    #[test]
    fn floquet_spectra_are_enclosed(graph in graph_strategy(), a1 in 0.0f64..6.3, a2 in 0.0f64..6.3) {
        let theta = [C64::from_polar(1.0, a1), C64::from_polar(1.0, a2)];
        prop_assert!(folded_stiffness(&graph, &theta).unwrap().is_hermitian());
        // Every pair vertex is clamped in the Dirichlet problem.
        let k = (graph.len() - 4).min(4);
        let got = theta_spectrum(&graph, &theta, k).unwrap();
        let neumann = neumann_spectrum(&graph, k).unwrap();
        let dirichlet = dirichlet_spectrum(&graph, k).unwrap();
        for j in 0..k {
            prop_assert!(neumann[j] <= got[j] + 1e-10 && got[j] <= dirichlet[j] + 1e-10);
        }
        let conj: Vec<C64> = theta.iter().map(|t| t.conj()).collect();
        for (x, y) in got.iter().zip(theta_spectrum(&graph, &conj, k).unwrap()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn trivial_character_has_constant_ground_state(graph in graph_strategy()) {
        let one = [C64::new(1.0, 0.0); 2];
        let pairs = theta_eigenpairs(&graph, &one, 1, EigenMethod::Auto).unwrap();
        prop_assert!(pairs.values[0].abs() < 1e-10);
        let v = pairs.vectors.column(0);
        let mean = v.iter().sum::<C64>() / v.len() as f64;
        for x in v.iter() {
            prop_assert!((x - mean).norm() <= 1e-8 * mean.norm());
        }
    }
}
