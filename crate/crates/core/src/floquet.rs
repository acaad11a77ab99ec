//! θ-periodic spectra of weighted-graph period cells.
//!
//! A [`PeriodCellGraph`] carries a stiffness (edge conductances), a lumped
//! mass per vertex, and boundary pairs `(a, b, α)` meaning vertex `b` is the
//! lattice shift of `a` along direction `α`. For a character `θ` the
//! quasi-periodic condition `u(b) = conj(θ_α) u(a)` folds every pair into a
//! single unknown, which gives a Hermitian pencil on the folded vertex set.
//!
//! Large pencils are solved by shift-invert block Krylov iteration. Vertices
//! that take part in no pair are factored once, independently of `θ`; only
//! a small boundary Schur complement is refolded for each character.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::{PI, TAU};

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::EpsGeometry;
use crate::design::{forward_model, BubbleGeometry, Channel, HomogenizedModel};
use crate::fmt_real;
use crate::interval::IntervalSet;
use crate::krylov::{self, ShiftInvert};
use crate::sparse::{EnvelopeCholesky, SymSparse};

/// Folded dimensions up to this size use a dense Hermitian eigensolver.
pub const DENSE_LIMIT: usize = 500;

/// Allowed deviation of `|θ_α|` from 1.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;

/// Absolute slack of the Neumann/Dirichlet enclosure check.
pub const ENCLOSURE_SLACK: f64 = 1e-8;

/// Fewest grid cells required across a hole diameter.
pub const MIN_CELLS_PER_HOLE: f64 = 6.0;

const SUBSAMPLE: usize = 8;

type CMat = DMatrix<C64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FloquetError {
    #[error("vertex {index}: id must equal position and mass must be positive (mass {mass})")]
    BadVertex { index: usize, mass: f64 },
    #[error("edge {index}: endpoints must be distinct vertices and weight positive")]
    BadEdge { index: usize },
    #[error("boundary pair {index}: {reason}")]
    BadPair { index: usize, reason: String },
    #[error("graph is not connected")]
    Disconnected,
    #[error("character has {got} components, graph has {expected} directions")]
    ThetaLength { expected: usize, got: usize },
    #[error("character component {index} has modulus {modulus}, expected 1")]
    ThetaModulus { index: usize, modulus: f64 },
    #[error("requested {requested} eigenvalues, only {available} unknowns")]
    TooMany { requested: usize, available: usize },
    #[error("hole {index} spans {cells:.2} grid cells; at least {MIN_CELLS_PER_HOLE} required")]
    Unresolvable { index: usize, cells: f64 },
    #[error("separation violated: {0}")]
    Separation(String),
    #[error("invalid cell parameters: {0}")]
    BadParams(String),
    #[error("theta resolution must be at least 2, got {0}")]
    ThetaResolution(usize),
    #[error("shifted stiffness is not positive definite")]
    NotPositiveDefinite,
    #[error("eigensolver did not converge for {wanted} eigenvalues (worst residual {residual:e})")]
    NoConvergence { wanted: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub w: f64,
}

/// `b` is the image of `a` under the lattice shift along `dir` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub a: usize,
    pub b: usize,
    pub dir: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleParams {
    pub center: (f64, f64),
    pub radius: f64,
    /// Radius of the sphere glued into the hole; `None` leaves a bare hole.
    pub bubble_radius: Option<f64>,
}

/// Explicit geometry of a planar period cell `[0, ε]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGraphParams {
    pub eps: f64,
    /// Grid cells per side.
    pub grid: usize,
    pub holes: Vec<HoleParams>,
    pub kappa: f64,
    /// Latitude rings per bubble; by default chosen so the meridional
    /// spacing matches the grid spacing.
    pub rings: Option<usize>,
}

impl CellGraphParams {
    /// One centered hole of radius 0.05 carrying a bubble of radius 0.3 on
    /// the unit cell, 64×64 grid.
    pub fn demo() -> Self {
        Self::demo_with_bubble(0.3)
    }

    pub fn demo_with_bubble(bubble_radius: f64) -> Self {
        Self {
            eps: 1.0,
            grid: 64,
            holes: vec![HoleParams { center: (0.5, 0.5), radius: 0.05, bubble_radius: Some(bubble_radius) }],
            kappa: 0.5,
            rings: None,
        }
    }

    /// Holes of `geom` on the diagonal of the cell, with the scaled radii.
    pub fn from_eps_geometry(geom: &EpsGeometry, grid: usize) -> Result<Self, FloquetError> {
        if geom.n() != 2 {
            return Err(FloquetError::BadParams(format!("graph cells are planar; got dimension {}", geom.n())));
        }
        let m = geom.channels.len() as f64;
        let holes = geom
            .channels
            .iter()
            .enumerate()
            .map(|(j, ch)| {
                let c = (j as f64 + 0.5) / m * geom.eps;
                HoleParams { center: (c, c), radius: ch.d_eps, bubble_radius: Some(ch.b_eps) }
            })
            .collect();
        Ok(Self { eps: geom.eps, grid, holes, kappa: geom.base.kappa, rings: None })
    }
}

impl CellGraphParams {
    /// Limit model whose planar scaling laws reproduce this cell's radii at
    /// its `ε`: hole radius `exp(−1/(d ε²))` and bubble radius `b ε`. `None`
    /// when no hole carries a bubble. At `ε` of order one this is a guide for
    /// where gaps open, not a converged prediction.
    pub fn homogenized_guide(&self) -> Result<Option<HomogenizedModel>, FloquetError> {
        let eps = self.eps;
        let mut channels = Vec::new();
        for (index, hole) in self.holes.iter().enumerate() {
            let Some(b) = hole.bubble_radius else { continue };
            if !(hole.radius < 1.0) {
                return Err(FloquetError::BadParams(format!("hole {index}: radius must be below 1 for the planar scaling law")));
            }
            channels.push(Channel { d: -1.0 / (eps * eps * hole.radius.ln()), b: b / eps });
        }
        if channels.is_empty() {
            return Ok(None);
        }
        let geom = BubbleGeometry::new(2, channels, self.kappa).map_err(|e| FloquetError::BadParams(e.to_string()))?;
        let model = forward_model(&geom)
            .and_then(HomogenizedModel::with_mu)
            .map_err(|e| FloquetError::BadParams(e.to_string()))?;
        Ok(Some(model))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodCellGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub boundary_pairs: Vec<BoundaryPair>,
    pub directions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<CellGraphParams>,
}

/// Representative and lattice shift of every vertex under the pair
/// identifications.
#[derive(Debug, Clone)]
struct FoldPlan {
    /// Folded index of each vertex.
    folded: Vec<usize>,
    /// `shift[v·d + α]`: `u(v) = Π conj(θ_α)^{shift} · x(folded[v])`.
    shift: Vec<i32>,
    dim: usize,
    in_pair: Vec<bool>,
}

impl PeriodCellGraph {
    pub fn new(
        masses: Vec<f64>,
        edges: Vec<Edge>,
        boundary_pairs: Vec<BoundaryPair>,
        directions: usize,
    ) -> Result<Self, FloquetError> {
        let g = Self {
            vertices: masses.into_iter().enumerate().map(|(id, mass)| Vertex { id, mass }).collect(),
            edges,
            boundary_pairs,
            directions,
            metadata: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let g: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        g.validate().map_err(|e| e.to_string())?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.vertices.iter().map(|v| v.mass).sum()
    }

    /// Number of unknowns after folding the boundary pairs.
    pub fn folded_dim(&self) -> Result<usize, FloquetError> {
        Ok(self.fold_plan()?.dim)
    }

    pub fn validate(&self) -> Result<(), FloquetError> {
        let n = self.len();
        for (index, v) in self.vertices.iter().enumerate() {
            if v.id != index || !(v.mass > 0.0 && v.mass.is_finite()) {
                return Err(FloquetError::BadVertex { index, mass: v.mass });
            }
        }
        for (index, e) in self.edges.iter().enumerate() {
            if e.a >= n || e.b >= n || e.a == e.b || !(e.w > 0.0 && e.w.is_finite()) {
                return Err(FloquetError::BadEdge { index });
            }
        }
        let mut seen_a = vec![false; n * self.directions.max(1)];
        let mut seen_b = seen_a.clone();
        for (index, p) in self.boundary_pairs.iter().enumerate() {
            let bad = |reason: &str| FloquetError::BadPair { index, reason: reason.into() };
            if p.dir < 1 || p.dir > self.directions {
                return Err(bad("direction out of range"));
            }
            if p.a >= n || p.b >= n || p.a == p.b {
                return Err(bad("endpoints must be distinct vertices"));
            }
            let slot = |v: usize| v * self.directions + (p.dir - 1);
            if std::mem::replace(&mut seen_a[slot(p.a)], true) || std::mem::replace(&mut seen_b[slot(p.b)], true) {
                return Err(bad("vertex paired twice in the same direction"));
            }
        }
        if n == 0 || !self.is_connected() {
            return Err(FloquetError::Disconnected);
        }
        self.fold_plan().map(|_| ())
    }

    fn is_connected(&self) -> bool {
        let n = self.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == n
    }

    fn fold_plan(&self) -> Result<FoldPlan, FloquetError> {
        let n = self.len();
        let d = self.directions;
        let mut links = vec![Vec::new(); n];
        for (index, p) in self.boundary_pairs.iter().enumerate() {
            links[p.a].push((p.b, p.dir - 1, 1, index));
            links[p.b].push((p.a, p.dir - 1, -1, index));
        }
        let mut folded = vec![usize::MAX; n];
        let mut shift = vec![0i32; n * d];
        let mut dim = 0;
        for root in 0..n {
            if folded[root] != usize::MAX {
                continue;
            }
            folded[root] = dim;
            let mut queue = VecDeque::from([root]);
            while let Some(v) = queue.pop_front() {
                for &(w, alpha, sign, index) in &links[v] {
                    let mut expected: Vec<i32> = shift[v * d..(v + 1) * d].to_vec();
                    expected[alpha] += sign;
                    if folded[w] == usize::MAX {
                        folded[w] = dim;
                        shift[w * d..(w + 1) * d].copy_from_slice(&expected);
                        queue.push_back(w);
                    } else if shift[w * d..(w + 1) * d] != expected[..] {
                        return Err(FloquetError::BadPair {
                            index,
                            reason: "identifications are inconsistent (a vertex folds onto its own shift)".into(),
                        });
                    }
                }
            }
            dim += 1;
        }
        let in_pair = links.iter().map(|l| !l.is_empty()).collect();
        Ok(FoldPlan { folded, shift, dim, in_pair })
    }

    fn stiffness(&self) -> SymSparse {
        let n = self.len();
        let mut diag = vec![0.0; n];
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for e in &self.edges {
            diag[e.a] += e.w;
            diag[e.b] += e.w;
            *acc[e.a].entry(e.b).or_insert(0.0) -= e.w;
            *acc[e.b].entry(e.a).or_insert(0.0) -= e.w;
        }
        SymSparse { diag, rows: acc.into_iter().map(|r| r.into_iter().collect()).collect() }
    }

    fn masses(&self) -> Vec<f64> {
        self.vertices.iter().map(|v| v.mass).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }
}

fn check_theta(graph: &PeriodCellGraph, theta: &[C64]) -> Result<(), FloquetError> {
    if theta.len() != graph.directions {
        return Err(FloquetError::ThetaLength { expected: graph.directions, got: theta.len() });
    }
    for (index, t) in theta.iter().enumerate() {
        let modulus = t.norm();
        if !((modulus - 1.0).abs() <= UNIT_MODULUS_TOL) {
            return Err(FloquetError::ThetaModulus { index, modulus });
        }
    }
    Ok(())
}

fn phase(theta: &[C64], shift: &[i32]) -> C64 {
    let mut z = C64::new(1.0, 0.0);
    for (t, &k) in theta.iter().zip(shift) {
        let base = if k >= 0 { t.conj() } else { *t };
        for _ in 0..k.unsigned_abs() {
            z *= base;
        }
    }
    z
}

/// Folded stiffness `P* K P` stored by rows; entries `(r, s)` and `(s, r)`
/// are accumulated as exact conjugates.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedMatrix {
    pub diag: Vec<f64>,
    pub rows: Vec<BTreeMap<usize, C64>>,
}

impl FoldedMatrix {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Bitwise check `K = K*`.
    pub fn is_hermitian(&self) -> bool {
        self.rows.iter().enumerate().all(|(r, row)| {
            row.iter().all(|(&s, &z)| s != r && self.rows[s].get(&r).is_some_and(|w| *w == z.conj()))
        })
    }

    pub fn to_dense(&self) -> CMat {
        let n = self.dim();
        let mut m = CMat::zeros(n, n);
        for (r, row) in self.rows.iter().enumerate() {
            m[(r, r)] = C64::new(self.diag[r], 0.0);
            for (&s, &z) in row {
                m[(r, s)] = z;
            }
        }
        m
    }
}

pub fn folded_stiffness(graph: &PeriodCellGraph, theta: &[C64]) -> Result<FoldedMatrix, FloquetError> {
    check_theta(graph, theta)?;
    let plan = graph.fold_plan()?;
    Ok(fold_stiffness(graph, &plan, theta))
}

fn fold_stiffness(graph: &PeriodCellGraph, plan: &FoldPlan, theta: &[C64]) -> FoldedMatrix {
    let d = graph.directions;
    let ph: Vec<C64> = (0..graph.len()).map(|v| phase(theta, &plan.shift[v * d..(v + 1) * d])).collect();
    let mut diag = vec![0.0; plan.dim];
    let mut rows: Vec<BTreeMap<usize, C64>> = vec![BTreeMap::new(); plan.dim];
    for e in &graph.edges {
        let (ra, rb) = (plan.folded[e.a], plan.folded[e.b]);
        diag[ra] += e.w;
        diag[rb] += e.w;
        let z = -e.w * ph[e.a].conj() * ph[e.b];
        if ra == rb {
            diag[ra] += 2.0 * z.re;
        } else {
            *rows[ra].entry(rb).or_insert(C64::new(0.0, 0.0)) += z;
            *rows[rb].entry(ra).or_insert(C64::new(0.0, 0.0)) += z.conj();
        }
    }
    FoldedMatrix { diag, rows }
}

fn fold_mass(graph: &PeriodCellGraph, plan: &FoldPlan) -> Vec<f64> {
    let mut m = vec![0.0; plan.dim];
    for v in &graph.vertices {
        m[plan.folded[v.id]] += v.mass;
    }
    m
}

/// How to solve a pencil: dense below [`DENSE_LIMIT`] unknowns by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenMethod {
    Auto,
    Dense,
    Krylov,
}

/// Eigenvalues ascending with `M`-normalized eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

fn dense_lowest(k_mat: &CMat, mass: &[f64], k: usize) -> EigenPairs {
    let n = mass.len();
    let scale: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let h = CMat::from_fn(n, n, |i, j| k_mat[(i, j)] * (scale[i] * scale[j]));
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])] * scale[r]);
    EigenPairs { values, vectors }
}

/// Shifted stiffness `A = K + sM` split into vertices outside every pair
/// (`I`, factored once) and pair vertices (`B`, condensed to the Schur
/// complement `S = A_BB − A_BI A_II⁻¹ A_IB`).
struct CellSolver {
    interior: Vec<usize>,
    boundary: Vec<usize>,
    chol: EnvelopeCholesky,
    /// `a_bi[b]`: couplings of boundary vertex `b` to interior positions.
    a_bi: Vec<Vec<(usize, f64)>>,
    schur: DMatrix<f64>,
    stiffness: SymSparse,
    mass: Vec<f64>,
}

impl CellSolver {
    /// With `clamp_boundary` the pair vertices are dropped (Dirichlet) and no
    /// Schur complement is formed.
    fn new(graph: &PeriodCellGraph, in_pair: &[bool], clamp_boundary: bool) -> Result<Self, FloquetError> {
        let stiffness = graph.stiffness();
        let mass = graph.masses();
        let shift = default_shift(&stiffness.diag, &mass);
        let n = graph.len();
        let mut local = vec![usize::MAX; n];
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for v in 0..n {
            if in_pair[v] {
                local[v] = boundary.len();
                boundary.push(v);
            } else {
                local[v] = interior.len();
                interior.push(v);
            }
        }
        let a_ii = SymSparse {
            diag: interior.iter().map(|&v| stiffness.diag[v] + shift * mass[v]).collect(),
            rows: interior
                .iter()
                .map(|&v| stiffness.rows[v].iter().filter(|(w, _)| !in_pair[*w]).map(|&(w, x)| (local[w], x)).collect())
                .collect(),
        };
        let chol = EnvelopeCholesky::factor(&a_ii).map_err(|_| FloquetError::NotPositiveDefinite)?;
        let a_bi: Vec<Vec<(usize, f64)>> = boundary
            .iter()
            .map(|&v| stiffness.rows[v].iter().filter(|(w, _)| !in_pair[*w]).map(|&(w, x)| (local[w], x)).collect())
            .collect();
        let nb = if clamp_boundary { 0 } else { boundary.len() };
        let mut schur = DMatrix::<f64>::zeros(nb, nb);
        if nb > 0 {
            for (bl, &v) in boundary.iter().enumerate() {
                schur[(bl, bl)] = stiffness.diag[v] + shift * mass[v];
                for &(w, x) in &stiffness.rows[v] {
                    if in_pair[w] {
                        schur[(bl, local[w])] += x;
                    }
                }
            }
            let ni = interior.len();
            if ni > 0 {
                // Z = A_II⁻¹ A_IB, one column per boundary vertex.
                let mut z = vec![0.0; ni * nb];
                for (bl, row) in a_bi.iter().enumerate() {
                    for &(i, x) in row {
                        z[i * nb + bl] = x;
                    }
                }
                chol.solve_block(&mut z, nb);
                for (bl, row) in a_bi.iter().enumerate() {
                    for &(i, x) in row {
                        for c in 0..nb {
                            schur[(bl, c)] -= x * z[i * nb + c];
                        }
                    }
                }
            }
            schur = (&schur + schur.transpose()) * 0.5;
        }
        let boundary = if clamp_boundary { Vec::new() } else { boundary };
        let a_bi = if clamp_boundary { Vec::new() } else { a_bi };
        Ok(Self { interior, boundary, chol, a_bi, schur, stiffness, mass })
    }

    fn solve_interior(&self, x: &CMat) -> CMat {
        let (n, p) = x.shape();
        let mut buf = vec![0.0; n * 2 * p];
        for r in 0..n {
            for c in 0..p {
                buf[r * 2 * p + 2 * c] = x[(r, c)].re;
                buf[r * 2 * p + 2 * c + 1] = x[(r, c)].im;
            }
        }
        self.chol.solve_block(&mut buf, 2 * p);
        CMat::from_fn(n, p, |r, c| C64::new(buf[r * 2 * p + 2 * c], buf[r * 2 * p + 2 * c + 1]))
    }
}

fn default_shift(diag: &[f64], mass: &[f64]) -> f64 {
    let k: f64 = diag.iter().sum();
    let m: f64 = mass.iter().sum();
    (1e-4 * k / m).max(1e-12)
}

/// Folding of the condensed boundary for one character.
struct BoundaryFold {
    /// Folded boundary slot and phase of each boundary vertex.
    map: Vec<(usize, C64)>,
    dim: usize,
}

struct ShiftedOperator<'a> {
    solver: &'a CellSolver,
    fold: BoundaryFold,
    schur: Option<Cholesky<C64, Dyn>>,
    mass: Vec<f64>,
}

impl<'a> ShiftedOperator<'a> {
    fn new(solver: &'a CellSolver, fold: BoundaryFold) -> Result<Self, FloquetError> {
        let ni = solver.interior.len();
        let mut mass: Vec<f64> = solver.interior.iter().map(|&v| solver.mass[v]).collect();
        mass.resize(ni + fold.dim, 0.0);
        for (bl, &(slot, _)) in fold.map.iter().enumerate() {
            mass[ni + slot] += solver.mass[solver.boundary[bl]];
        }
        let schur = if fold.dim == 0 {
            None
        } else {
            let mut s = CMat::zeros(fold.dim, fold.dim);
            for (b, &(rb, pb)) in fold.map.iter().enumerate() {
                for (c, &(rc, pc)) in fold.map.iter().enumerate() {
                    s[(rb, rc)] += pb.conj() * solver.schur[(b, c)] * pc;
                }
            }
            let s = (&s + s.adjoint()) * C64::new(0.5, 0.0);
            Some(Cholesky::new(s).ok_or(FloquetError::NotPositiveDefinite)?)
        };
        Ok(Self { solver, fold, schur, mass })
    }

    fn dim(&self) -> usize {
        self.mass.len()
    }

    /// `(K + sM)⁻¹ F` by block elimination of the interior.
    fn solve(&self, f: &CMat) -> CMat {
        let sv = self.solver;
        let ni = sv.interior.len();
        let p = f.ncols();
        let g = sv.solve_interior(&f.rows(0, ni).into_owned());
        if self.fold.dim == 0 {
            return g;
        }
        let mut rhs = f.rows(ni, self.fold.dim).into_owned();
        for (b, row) in sv.a_bi.iter().enumerate() {
            let (slot, ph) = self.fold.map[b];
            for c in 0..p {
                let mut acc = C64::new(0.0, 0.0);
                for &(i, x) in row {
                    acc += g[(i, c)] * x;
                }
                rhs[(slot, c)] -= ph.conj() * acc;
            }
        }
        let xb = self.schur.as_ref().expect("boundary factor").solve(&rhs);
        let mut t = CMat::zeros(ni, p);
        for (b, row) in sv.a_bi.iter().enumerate() {
            let (slot, ph) = self.fold.map[b];
            for c in 0..p {
                let u = ph * xb[(slot, c)];
                for &(i, x) in row {
                    t[(i, c)] += u * x;
                }
            }
        }
        let xi = g - sv.solve_interior(&t);
        let mut out = CMat::zeros(ni + self.fold.dim, p);
        out.rows_mut(0, ni).copy_from(&xi);
        out.rows_mut(ni, self.fold.dim).copy_from(&xb);
        out
    }

    /// Folded stiffness times `X`.
    fn apply_k(&self, x: &CMat) -> CMat {
        let sv = self.solver;
        let ni = sv.interior.len();
        let nv = sv.mass.len();
        let p = x.ncols();
        let mut u = CMat::zeros(nv, p);
        for (i, &v) in sv.interior.iter().enumerate() {
            u.row_mut(v).copy_from(&x.row(i));
        }
        for (b, &(slot, ph)) in self.fold.map.iter().enumerate() {
            let v = sv.boundary[b];
            for c in 0..p {
                u[(v, c)] = ph * x[(ni + slot, c)];
            }
        }
        let mut ku = CMat::zeros(nv, p);
        for v in 0..nv {
            for c in 0..p {
                let mut acc = u[(v, c)] * sv.stiffness.diag[v];
                for &(w, k) in &sv.stiffness.rows[v] {
                    acc += u[(w, c)] * k;
                }
                ku[(v, c)] = acc;
            }
        }
        let mut out = CMat::zeros(self.dim(), p);
        for (i, &v) in sv.interior.iter().enumerate() {
            out.row_mut(i).copy_from(&ku.row(v));
        }
        for (b, &(slot, ph)) in self.fold.map.iter().enumerate() {
            let v = sv.boundary[b];
            for c in 0..p {
                out[(ni + slot, c)] += ph.conj() * ku[(v, c)];
            }
        }
        out
    }

    fn lowest(&self, k: usize, seed: u64) -> Result<EigenPairs, FloquetError> {
        let (values, vectors) = krylov::lowest(self, k, seed)
            .map_err(|e| FloquetError::NoConvergence { wanted: k, residual: e.residual })?;
        Ok(EigenPairs { values, vectors })
    }
}

impl ShiftInvert for ShiftedOperator<'_> {
    fn mass(&self) -> &[f64] {
        &self.mass
    }

    fn solve(&self, f: &CMat) -> CMat {
        ShiftedOperator::solve(self, f)
    }

    fn apply_k(&self, x: &CMat) -> CMat {
        ShiftedOperator::apply_k(self, x)
    }
}

/// Prepared solver for one graph; reusable across characters.
pub struct ThetaSolver<'g> {
    graph: &'g PeriodCellGraph,
    plan: FoldPlan,
    method: EigenMethod,
    krylov: Option<CellSolver>,
}

impl<'g> ThetaSolver<'g> {
    pub fn new(graph: &'g PeriodCellGraph, method: EigenMethod) -> Result<Self, FloquetError> {
        graph.validate()?;
        let plan = graph.fold_plan()?;
        let use_krylov = match method {
            EigenMethod::Auto => plan.dim > DENSE_LIMIT,
            EigenMethod::Dense => false,
            EigenMethod::Krylov => true,
        };
        let krylov = if use_krylov { Some(CellSolver::new(graph, &plan.in_pair, false)?) } else { None };
        Ok(Self { graph, plan, method, krylov })
    }

    pub fn folded_dim(&self) -> usize {
        self.plan.dim
    }

    pub fn eigenpairs(&self, theta: &[C64], k: usize) -> Result<EigenPairs, FloquetError> {
        check_theta(self.graph, theta)?;
        if k > self.plan.dim {
            return Err(FloquetError::TooMany { requested: k, available: self.plan.dim });
        }
        if k == 0 {
            return Ok(EigenPairs { values: Vec::new(), vectors: CMat::zeros(self.plan.dim, 0) });
        }
        match &self.krylov {
            None => {
                let km = fold_stiffness(self.graph, &self.plan, theta).to_dense();
                Ok(dense_lowest(&km, &fold_mass(self.graph, &self.plan), k))
            }
            Some(sv) => {
                let d = self.graph.directions;
                // Folded boundary slots in order of first appearance.
                let mut slot_of = BTreeMap::new();
                let map = sv
                    .boundary
                    .iter()
                    .map(|&v| {
                        let next = slot_of.len();
                        let slot = *slot_of.entry(self.plan.folded[v]).or_insert(next);
                        (slot, phase(theta, &self.plan.shift[v * d..(v + 1) * d]))
                    })
                    .collect();
                let fold = BoundaryFold { map, dim: slot_of.len() };
                let op = ShiftedOperator::new(sv, fold)?;
                let mut pairs = op.lowest(k, 0x5eed_cafe)?;
                // Report vectors in the folded vertex numbering.
                pairs.vectors = self.reorder_krylov_vectors(sv, &op, &pairs.vectors);
                Ok(pairs)
            }
        }
    }

    fn reorder_krylov_vectors(&self, sv: &CellSolver, op: &ShiftedOperator<'_>, x: &CMat) -> CMat {
        let ni = sv.interior.len();
        let mut out = CMat::zeros(self.plan.dim, x.ncols());
        for (i, &v) in sv.interior.iter().enumerate() {
            out.row_mut(self.plan.folded[v]).copy_from(&x.row(i));
        }
        for (b, &(slot, _)) in op.fold.map.iter().enumerate() {
            let v = sv.boundary[b];
            out.row_mut(self.plan.folded[v]).copy_from(&x.row(ni + slot));
        }
        out
    }

    pub fn method(&self) -> EigenMethod {
        self.method
    }
}

/// Lowest `k` eigenvalues of the θ-periodic pencil, ascending with
/// multiplicity.
pub fn theta_spectrum(graph: &PeriodCellGraph, theta: &[C64], k: usize) -> Result<Vec<f64>, FloquetError> {
    Ok(ThetaSolver::new(graph, EigenMethod::Auto)?.eigenpairs(theta, k)?.values)
}

pub fn theta_eigenpairs(
    graph: &PeriodCellGraph,
    theta: &[C64],
    k: usize,
    method: EigenMethod,
) -> Result<EigenPairs, FloquetError> {
    ThetaSolver::new(graph, method)?.eigenpairs(theta, k)
}

/// Spectrum with every pair vertex left free and unidentified.
pub fn neumann_spectrum(graph: &PeriodCellGraph, k: usize) -> Result<Vec<f64>, FloquetError> {
    graph.validate()?;
    let n = graph.len();
    if k > n {
        return Err(FloquetError::TooMany { requested: k, available: n });
    }
    if n <= DENSE_LIMIT {
        let plan = graph.fold_plan()?;
        let free = FoldPlan { folded: (0..n).collect(), shift: vec![0; n * graph.directions], dim: n, in_pair: plan.in_pair };
        let km = fold_stiffness(graph, &free, &vec![C64::new(1.0, 0.0); graph.directions]).to_dense();
        return Ok(dense_lowest(&km, &graph.masses(), k).values);
    }
    let plan = graph.fold_plan()?;
    let sv = CellSolver::new(graph, &plan.in_pair, false)?;
    let map = (0..sv.boundary.len()).map(|b| (b, C64::new(1.0, 0.0))).collect();
    let op = ShiftedOperator::new(&sv, BoundaryFold { map, dim: sv.boundary.len() })?;
    Ok(op.lowest(k, 0x5eed_0001)?.values)
}

/// Spectrum with every pair vertex clamped to zero.
pub fn dirichlet_spectrum(graph: &PeriodCellGraph, k: usize) -> Result<Vec<f64>, FloquetError> {
    graph.validate()?;
    let plan = graph.fold_plan()?;
    let free: Vec<usize> = (0..graph.len()).filter(|&v| !plan.in_pair[v]).collect();
    if k > free.len() {
        return Err(FloquetError::TooMany { requested: k, available: free.len() });
    }
    if free.len() <= DENSE_LIMIT {
        let stiff = graph.stiffness();
        let mut local = vec![usize::MAX; graph.len()];
        for (i, &v) in free.iter().enumerate() {
            local[v] = i;
        }
        let nf = free.len();
        let mut km = CMat::zeros(nf, nf);
        for (i, &v) in free.iter().enumerate() {
            km[(i, i)] = C64::new(stiff.diag[v], 0.0);
            for &(w, x) in &stiff.rows[v] {
                if local[w] != usize::MAX {
                    km[(i, local[w])] = C64::new(x, 0.0);
                }
            }
        }
        let mass: Vec<f64> = free.iter().map(|&v| graph.vertices[v].mass).collect();
        return Ok(dense_lowest(&km, &mass, k).values);
    }
    let sv = CellSolver::new(graph, &plan.in_pair, true)?;
    let op = ShiftedOperator::new(&sv, BoundaryFold { map: Vec::new(), dim: 0 })?;
    Ok(op.lowest(k, 0x5eed_0002)?.values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStructure {
    pub theta_resolution: usize,
    pub directions: usize,
    /// Grid multi-indices `p`, character `θ_α = exp(2πi p_α / T)`.
    pub theta_grid: Vec<Vec<usize>>,
    /// `eigen_table[g][k]` is `λ_{k+1}` at grid point `g`.
    pub eigen_table: Vec<Vec<f64>>,
    pub bands: Vec<(f64, f64)>,
    pub gaps: IntervalSet,
}

impl BandStructure {
    pub fn theta_angles(&self, g: usize) -> Vec<f64> {
        self.theta_grid[g].iter().map(|&p| TAU * p as f64 / self.theta_resolution as f64).collect()
    }

    pub fn theta(&self, g: usize) -> Vec<C64> {
        self.theta_angles(g).into_iter().map(|a| C64::from_polar(1.0, a)).collect()
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("theta_index");
        for a in 1..=self.directions {
            h.push_str(&format!(",theta_{a}"));
        }
        h.push_str(",k,lambda");
        h
    }

    /// One row per grid point and band index; angles in radians.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for (g, row) in self.eigen_table.iter().enumerate() {
            let angles: Vec<String> = self.theta_angles(g).into_iter().map(fmt_real).collect();
            for (k, lambda) in row.iter().enumerate() {
                out.push_str(&format!("{g},{},{},{}\n", angles.join(","), k + 1, fmt_real(*lambda)));
            }
        }
        out
    }
}

fn grid_points(directions: usize, t: usize) -> Vec<Vec<usize>> {
    let total = t.pow(directions as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0; directions];
            for a in (0..directions).rev() {
                p[a] = idx % t;
                idx /= t;
            }
            p
        })
        .collect()
}

/// θ-spectra over the uniform grid `exp(2πi p/T)` in every direction.
///
/// `λ^θ = λ^{conj θ}` for real stiffness, so only one point of each
/// conjugate pair is solved.
pub fn band_structure(graph: &PeriodCellGraph, theta_resolution: usize, k: usize) -> Result<BandStructure, FloquetError> {
    band_structure_with(graph, theta_resolution, k, EigenMethod::Auto)
}

pub fn band_structure_with(
    graph: &PeriodCellGraph,
    theta_resolution: usize,
    k: usize,
    method: EigenMethod,
) -> Result<BandStructure, FloquetError> {
    if theta_resolution < 2 {
        return Err(FloquetError::ThetaResolution(theta_resolution));
    }
    let solver = ThetaSolver::new(graph, method)?;
    if k > solver.folded_dim() {
        return Err(FloquetError::TooMany { requested: k, available: solver.folded_dim() });
    }
    let t = theta_resolution;
    let d = graph.directions;
    let grid = grid_points(d, t);
    let index_of = |p: &[usize]| p.iter().fold(0, |acc, &x| acc * t + x);
    let mirror: Vec<usize> = grid.iter().map(|p| index_of(&p.iter().map(|&x| (t - x) % t).collect::<Vec<_>>())).collect();
    let canonical: Vec<usize> = (0..grid.len()).filter(|&g| g <= mirror[g]).collect();
    let angle = |p: usize| TAU * p as f64 / t as f64;
    let solved: Vec<Vec<f64>> = canonical
        .par_iter()
        .map(|&g| {
            let theta: Vec<C64> = grid[g].iter().map(|&p| C64::from_polar(1.0, angle(p))).collect();
            solver.eigenpairs(&theta, k).map(|e| e.values)
        })
        .collect::<Result<_, _>>()?;
    let mut table = vec![Vec::new(); grid.len()];
    for (&g, values) in canonical.iter().zip(solved) {
        table[mirror[g]] = values.clone();
        table[g] = values;
    }
    let bands: Vec<(f64, f64)> = (0..k)
        .map(|j| {
            let lo = table.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = table.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    let gaps = gaps_between(&bands, f64::INFINITY);
    Ok(BandStructure { theta_resolution: t, directions: d, theta_grid: grid, eigen_table: table, bands, gaps })
}

fn gaps_between(bands: &[(f64, f64)], l: f64) -> IntervalSet {
    let Some(top) = bands.iter().map(|b| b.1).reduce(f64::max) else {
        return IntervalSet::empty();
    };
    let cap = l.min(top);
    let merged = IntervalSet::union_of(bands.iter().copied());
    let pieces = merged.intervals();
    let gaps = pieces
        .windows(2)
        .map(|w| (w[0].hi, w[1].lo))
        .filter(|&(lo, hi)| lo < hi && hi <= cap);
    IntervalSet::new(gaps).expect("gaps between merged bands are ordered")
}

/// Open gaps between the merged bands lying inside `[0, min(L, top band)]`.
pub fn detect_gaps(bs: &BandStructure, l: f64) -> IntervalSet {
    gaps_between(&bs.bands, l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnclosureReport {
    pub neumann: Vec<f64>,
    pub dirichlet: Vec<f64>,
    pub enclosure_ok: bool,
    /// Largest violation of `λ^N_k ≤ λ^θ_k ≤ λ^D_k` over the sampled grid;
    /// nonpositive when the enclosure holds strictly.
    pub max_violation: f64,
    pub theta_resolution: usize,
}

/// Neumann and Dirichlet spectra and the enclosure check on a θ-grid of 8.
pub fn nd_enclosure(graph: &PeriodCellGraph, k: usize) -> Result<EnclosureReport, FloquetError> {
    let bs = band_structure(graph, 8, k)?;
    nd_enclosure_on(graph, &bs)
}

/// Enclosure check against an existing band table.
pub fn nd_enclosure_on(graph: &PeriodCellGraph, bs: &BandStructure) -> Result<EnclosureReport, FloquetError> {
    let k = bs.bands.len();
    let neumann = neumann_spectrum(graph, k)?;
    let dirichlet = dirichlet_spectrum(graph, k)?;
    let mut worst = f64::NEG_INFINITY;
    for row in &bs.eigen_table {
        for j in 0..k {
            worst = worst.max(neumann[j] - row[j]).max(row[j] - dirichlet[j]);
        }
    }
    Ok(EnclosureReport {
        neumann,
        dirichlet,
        enclosure_ok: worst <= ENCLOSURE_SLACK,
        max_violation: worst,
        theta_resolution: bs.theta_resolution,
    })
}

/// Finite-volume graph of the perforated square with latitude–longitude
/// bubbles glued along the hole rims.
///
/// Grid vertices inside a hole are removed; the kept vertices next to a hole
/// form the rim. Masses are control areas outside the holes. Edge
/// conductances are 1, halved along the faces of the square. Each bubble
/// shares its first ring with the rim vertices (azimuths measured about the
/// hole center) and carries `rings − 1` further rings and a pole.
pub fn build_cell_graph(params: &CellGraphParams) -> Result<PeriodCellGraph, FloquetError> {
    let eps = params.eps;
    let n = params.grid;
    if !(eps > 0.0 && eps.is_finite()) || n < 2 || !(params.kappa > 0.0) {
        return Err(FloquetError::BadParams("eps and kappa must be positive and grid at least 2".into()));
    }
    let h = eps / n as f64;
    let half_sep = 0.5 * params.kappa * eps;
    for (index, hole) in params.holes.iter().enumerate() {
        let (cx, cy) = hole.center;
        if !(hole.radius > 0.0) {
            return Err(FloquetError::BadParams(format!("hole {index} radius must be positive")));
        }
        let cells = 2.0 * hole.radius / h;
        if cells < MIN_CELLS_PER_HOLE {
            return Err(FloquetError::Unresolvable { index, cells });
        }
        let reach = hole.radius + half_sep;
        if cx - reach < 0.0 || cx + reach > eps || cy - reach < 0.0 || cy + reach > eps {
            return Err(FloquetError::Separation(format!("hole {index} is within kappa*eps/2 of a cell face")));
        }
        if let Some(b) = hole.bubble_radius {
            if !(b > hole.radius) {
                return Err(FloquetError::BadParams(format!("hole {index}: bubble radius must exceed hole radius")));
            }
        }
        for (other, o) in params.holes.iter().enumerate().skip(index + 1) {
            let dist = (cx - o.center.0).hypot(cy - o.center.1);
            if dist < hole.radius + o.radius + params.kappa * eps {
                return Err(FloquetError::Separation(format!("holes {index} and {other} are closer than kappa*eps")));
            }
        }
    }

    let inside = |x: f64, y: f64| params.holes.iter().any(|o| (x - o.center.0).hypot(y - o.center.1) < o.radius);
    let node = |i: usize, j: usize| (i as f64 * h, j as f64 * h);
    let mut id = vec![usize::MAX; (n + 1) * (n + 1)];
    let mut masses = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let (x, y) = node(i, j);
            if inside(x, y) {
                continue;
            }
            let (x0, x1) = ((x - 0.5 * h).max(0.0), (x + 0.5 * h).min(eps));
            let (y0, y1) = ((y - 0.5 * h).max(0.0), (y + 0.5 * h).min(eps));
            let mut outside = 0;
            for a in 0..SUBSAMPLE {
                for b in 0..SUBSAMPLE {
                    let sx = x0 + (x1 - x0) * (a as f64 + 0.5) / SUBSAMPLE as f64;
                    let sy = y0 + (y1 - y0) * (b as f64 + 0.5) / SUBSAMPLE as f64;
                    if !inside(sx, sy) {
                        outside += 1;
                    }
                }
            }
            let area = (x1 - x0) * (y1 - y0) * outside as f64 / (SUBSAMPLE * SUBSAMPLE) as f64;
            if area <= 0.0 {
                // Fully covered control volume: treat as part of the hole.
                continue;
            }
            id[j * (n + 1) + i] = masses.len();
            masses.push(area);
        }
    }
    let grid_id = |i: usize, j: usize| id[j * (n + 1) + i];
    let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let add_edge = |edges: &mut BTreeMap<(usize, usize), f64>, a: usize, b: usize, w: f64| {
        *edges.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
    };
    for j in 0..=n {
        for i in 0..=n {
            let v = grid_id(i, j);
            if v == usize::MAX {
                continue;
            }
            if i < n && grid_id(i + 1, j) != usize::MAX {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                add_edge(&mut edges, v, grid_id(i + 1, j), w);
            }
            if j < n && grid_id(i, j + 1) != usize::MAX {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                add_edge(&mut edges, v, grid_id(i, j + 1), w);
            }
        }
    }

    for hole in &params.holes {
        let Some(b) = hole.bubble_radius else { continue };
        let (cx, cy) = hole.center;
        // Rim: kept grid vertices with a removed 4-neighbour, by azimuth.
        let mut rim: Vec<(f64, f64, usize)> = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                let v = grid_id(i, j);
                if v == usize::MAX {
                    continue;
                }
                let (x, y) = node(i, j);
                if (x - cx).hypot(y - cy) > hole.radius + 2.0 * h {
                    continue;
                }
                let neighbours = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
                let touches = neighbours.iter().any(|&(a, c)| a <= n && c <= n && grid_id(a, c) == usize::MAX);
                if touches {
                    rim.push(((y - cy).atan2(x - cx), (x - cx).hypot(y - cy), v));
                }
            }
        }
        rim.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
        rim.dedup_by(|later, earlier| (later.0 - earlier.0).abs() < 1e-12);
        if rim.len() < 3 {
            return Err(FloquetError::BadParams("hole rim has fewer than three distinct azimuths".into()));
        }
        let az: Vec<f64> = rim.iter().map(|r| r.0).collect();
        let na = az.len();
        let gap: Vec<f64> = (0..na)
            .map(|l| if l + 1 < na { az[l + 1] - az[l] } else { az[0] + TAU - az[l] })
            .collect();
        let dual: Vec<f64> = (0..na).map(|l| 0.5 * (gap[(l + na - 1) % na] + gap[l])).collect();

        let theta0 = (hole.radius / b).asin();
        let rings = params.rings.unwrap_or_else(|| ((b * (PI - theta0)) / h).ceil() as usize).max(2);
        let dt = (PI - theta0) / rings as f64;
        let theta_k = |k: usize| if k == rings { PI } else { theta0 + k as f64 * dt };
        let b2 = b * b;
        // ring[k][l] vertex ids; ring 0 is the rim.
        let mut ring: Vec<Vec<usize>> = vec![rim.iter().map(|r| r.2).collect()];
        for (l, &v) in ring[0].iter().enumerate() {
            masses[v] += b2 * (theta0.cos() - (theta0 + 0.5 * dt).cos()) * dual[l];
        }
        for k in 1..rings {
            let th = theta_k(k);
            let ids: Vec<usize> = (0..na)
                .map(|l| {
                    masses.push(b2 * ((th - 0.5 * dt).cos() - (th + 0.5 * dt).cos()) * dual[l]);
                    masses.len() - 1
                })
                .collect();
            ring.push(ids);
        }
        let pole = masses.len();
        masses.push(b2 * ((PI - 0.5 * dt).cos() + 1.0) * TAU);
        for k in 0..rings {
            let th = theta_k(k);
            let mid = (th + 0.5 * dt).sin();
            let width = if k == 0 { 0.5 * dt } else { dt };
            for l in 0..na {
                let up = if k + 1 == rings { pole } else { ring[k + 1][l] };
                add_edge(&mut edges, ring[k][l], up, mid * dual[l] / dt);
                let next = ring[k][(l + 1) % na];
                add_edge(&mut edges, ring[k][l], next, width / (th.sin() * gap[l]));
            }
        }
    }

    let mut pairs = Vec::new();
    for j in 0..=n {
        pairs.push(BoundaryPair { a: grid_id(0, j), b: grid_id(n, j), dir: 1 });
    }
    for i in 0..=n {
        pairs.push(BoundaryPair { a: grid_id(i, 0), b: grid_id(i, n), dir: 2 });
    }
    let edges = edges.into_iter().map(|((a, b), w)| Edge { a, b, w }).collect();
    let mut g = PeriodCellGraph::new(masses, edges, pairs, 2)?;
    g.metadata = Some(params.clone());
    Ok(g)
}
