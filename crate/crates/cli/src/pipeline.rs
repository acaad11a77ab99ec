use gapforge::cell::{
    convergence_table, eps_scale, extrapolated_eigenvalues, junction_flux, reference_limits, trial_rayleigh, CellError,
    ConvergenceTable, RadialCell,
};
use gapforge::design::DesignError;
use gapforge::dispersion::DispersionError;
use gapforge::floquet::{band_structure, build_cell_graph, detect_gaps, nd_enclosure_on, FloquetError};
use gapforge::{
    design_geometry_with_kappa, fmt_real, forward_model, gap_match_report, limit_spectrum, mu_roots, sample_curve,
    BubbleGeometry, HomogenizedModel,
};
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::config::{Command, RunConfig, HORIZON_FACTOR};

/// Relative tolerance of the designed resonances against the lower targets.
pub const SIGMA_RTOL: f64 = 1e-12;
/// Relative tolerance of the recomputed gap edges against the upper targets.
pub const MU_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Floquet(#[from] FloquetError),
    #[error("serializing results: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub status: Status,
    pub checks: Vec<Check>,
    /// Keyed results, sorted by key so output is byte-stable.
    pub results: Map<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// CSV table of the command, when it has one.
    #[serde(skip)]
    pub table: Option<String>,
}

impl Report {
    fn new(command: Command) -> Self {
        Self { command: command.name(), status: Status::Pass, checks: Vec::new(), results: Map::new(), error: None, table: None }
    }

    fn put(&mut self, key: &str, value: &impl Serialize) -> Result<(), RunError> {
        self.results.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), pass, detail });
    }

    /// 0 when every check passed, 1 when a check failed, 2 on error.
    pub fn exit_code(&self) -> u8 {
        match self.status {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Error => 2,
        }
    }
}

/// Runs one command. Module errors end the run with `status: "error"` but
/// keep every result recorded before the failure.
pub fn run_pipeline(cfg: &RunConfig) -> Report {
    let mut report = Report::new(cfg.command);
    let outcome = match cfg.command {
        Command::Design => design(cfg, &mut report),
        Command::Dispersion => dispersion(cfg, &mut report),
        Command::LimitSpectrum => limit(cfg, &mut report),
        Command::CellEigs => cell_eigs(cfg, &mut report),
        Command::Convergence => convergence(cfg, &mut report),
        Command::Bands => bands(cfg, &mut report),
        Command::Verify => verify(cfg, &mut report),
    };
    report.status = match outcome {
        Err(e) => {
            report.error = Some(format!("{}: {e}", cfg.command));
            Status::Error
        }
        Ok(()) if report.checks.iter().all(|c| c.pass) => Status::Pass,
        Ok(()) => Status::Fail,
    };
    report
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn designed(cfg: &RunConfig) -> Option<Result<(BubbleGeometry, HomogenizedModel), RunError>> {
    cfg.spec.as_ref().map(|spec| Ok(design_geometry_with_kappa(spec, cfg.kappa)?))
}

/// Directly given model, else the designed one.
fn model_of(cfg: &RunConfig) -> Result<HomogenizedModel, RunError> {
    match &cfg.model {
        Some(model) => Ok(model.clone()),
        None => Ok(designed(cfg).expect("validated: model or intervals")?.1),
    }
}

/// Directly given geometry, else the designed one.
fn geometry_of(cfg: &RunConfig) -> Result<BubbleGeometry, RunError> {
    match &cfg.geometry {
        Some(geom) => Ok(BubbleGeometry::new(geom.n, geom.channels.clone(), cfg.kappa)?),
        None => Ok(designed(cfg).expect("validated: geometry or intervals")?.0),
    }
}

fn top_edge(model: &HomogenizedModel) -> f64 {
    let mu = model.mu.as_deref().unwrap_or(&[]);
    mu.iter().chain(&model.sigma).copied().fold(0.0, f64::max)
}

fn horizon(cfg: &RunConfig, model: &HomogenizedModel) -> f64 {
    cfg.horizon
        .or(cfg.spec.as_ref().map(|s| s.horizon))
        .unwrap_or_else(|| HORIZON_FACTOR * top_edge(model))
}

fn design(cfg: &RunConfig, report: &mut Report) -> Result<(), RunError> {
    let spec = cfg.spec.as_ref().expect("validated: intervals");
    report.put("spec", spec)?;
    let (geom, model) = design_geometry_with_kappa(spec, cfg.kappa)?;
    report.put("geometry", &geom)?;
    report.put("model", &model)?;
    let mu = model.mu.clone().unwrap_or_default();
    report.put("mu", &mu)?;
    let mut table = String::from("j,alpha,beta,d,b,sigma,rho,mu\n");
    for (j, iv) in spec.targets.iter().enumerate() {
        let ch = geom.channels[j];
        let row = [iv.lo, iv.hi, ch.d, ch.b, model.sigma[j], model.rho[j], mu[j]].map(fmt_real).join(",");
        table.push_str(&format!("{j},{row}\n"));
    }
    report.table = Some(table);
    Ok(())
}

fn dispersion(cfg: &RunConfig, report: &mut Report) -> Result<(), RunError> {
    let model = model_of(cfg)?;
    report.put("model", &model)?;
    let range = cfg.range.unwrap_or((0.0, 2.0 * top_edge(&model)));
    report.put("range", &range)?;
    let curve = sample_curve(&model, range, cfg.count)?;
    report.put("samples", &curve.samples)?;
    report.table = Some(curve.to_csv());
    Ok(())
}

fn limit(cfg: &RunConfig, report: &mut Report) -> Result<(), RunError> {
    let model = model_of(cfg)?;
    report.put("model", &model)?;
    let l = horizon(cfg, &model);
    report.put("L", &l)?;
    let (bands, gaps) = limit_spectrum(&model, l)?;
    report.put("bands", &bands)?;
    report.put("gaps", &gaps)?;
    let mut table = String::from("kind,lo,hi\n");
    for (kind, set) in [("band", &bands), ("gap", &gaps)] {
        for (lo, hi) in set.pairs() {
            table.push_str(&format!("{kind},{},{}\n", fmt_real(lo), fmt_real(hi)));
        }
    }
    report.table = Some(table);
    Ok(())
}

fn cell_eigs(cfg: &RunConfig, report: &mut Report) -> Result<(), RunError> {
    let base = geometry_of(cfg)?;
    report.put("geometry", &base)?;
    let j = cfg.channel;
    let eps = cfg.eps.expect("validated: eps");
    let model = forward_model(&base)?;
    report.put("sigma", &model.sigma.get(j))?;
    let geom = eps_scale(&base, eps)?;
    report.put("eps_geometry", &geom)?;
    let ev = extrapolated_eigenvalues(|e| RadialCell::bubble(&geom, j, e), cfg.resolution, cfg.num_eigs)?;
    report.put("eigenvalues", &ev)?;
    report.put("trial", &trial_rayleigh(&geom, j)?)?;
    report.put("flux", &junction_flux(&geom, j)?)?;
    report.put("limits", &reference_limits(&base, cfg.kappa, j)?)?;
    let mut table = String::from("k,coarse,fine,extrapolated\n");
    for (k, e) in ev.iter().enumerate() {
        table.push_str(&format!("{},{},{},{}\n", k + 1, fmt_real(e.coarse), fmt_real(e.fine), fmt_real(e.value)));
    }
    report.table = Some(table);
    Ok(())
}

fn convergence(cfg: &RunConfig, report: &mut Report) -> Result<(), RunError> {
    let base = geometry_of(cfg)?;
    report.put("geometry", &base)?;
    let table = convergence_table(&base, cfg.kappa, cfg.channel, &cfg.eps_list, cfg.resolution)?;
    report.put("convergence", &table)?;
    report.table = Some(table.to_csv());
    Ok(())
}

/// `|λ₁ − σ|` strictly decreasing along the ladder, and the trial quotient
/// above `λ₁` at every scale.
fn convergence_checks(table: &ConvergenceTable, report: &mut Report) {
    let dev: Vec<f64> = table.rows.iter().map(|r| (r.lambda1 - r.sigma_target).abs()).collect();
    let decreasing = dev.windows(2).all(|w| w[1] < w[0]);
    report.check("lambda1_approaches_sigma", decreasing, format!("|lambda1 - sigma| = {dev:?}"));
    let margins: Vec<f64> = table.rows.iter().map(|r| r.rayleigh_upper - r.lambda1).collect();
    let bounded = table.rows.iter().all(|r| r.rayleigh_upper >= r.lambda1 * (1.0 - 1e-12));
    report.check("trial_quotient_bounds_lambda1", bounded, format!("rayleigh - lambda1 = {margins:?}"));
}

fn bands(cfg: &RunConfig, report: &mut Report) -> Result<(), RunError> {
    bands_into(cfg, report, false)
}

fn bands_into(cfg: &RunConfig, report: &mut Report, with_checks: bool) -> Result<(), RunError> {
    report.put("cell", &cfg.cell)?;
    let guide = cfg.cell.homogenized_guide()?;
    report.put("homogenized_guide", &guide)?;
    let graph = build_cell_graph(&cfg.cell)?;
    report.put("vertices", &graph.len())?;
    let bs = band_structure(&graph, cfg.theta_grid, cfg.num_bands)?;
    let l = cfg.horizon.unwrap_or(f64::INFINITY);
    let gaps = detect_gaps(&bs, l);
    report.put("bands", &bs.bands)?;
    report.put("gaps", &gaps)?;
    report.put("theta_grid", &cfg.theta_grid)?;
    report.table = Some(bs.to_csv());
    let enclosure = nd_enclosure_on(&graph, &bs)?;
    report.put("enclosure", &enclosure)?;
    if with_checks {
        report.check("bands_gap_detected", !gaps.is_empty(), format!("gaps = {:?}", gaps.pairs()));
        report.check(
            "nd_enclosure",
            enclosure.enclosure_ok,
            format!("max violation {:e} over {} bands", enclosure.max_violation, bs.bands.len()),
        );
    }
    Ok(())
}

/// design → forward model → gap edges → limit spectrum → gap matching, plus
/// the optional radial and Floquet checks.
fn verify(cfg: &RunConfig, report: &mut Report) -> Result<(), RunError> {
    let spec = cfg.spec.as_ref().expect("validated: intervals");
    report.put("spec", spec)?;
    let (geom, _) = design_geometry_with_kappa(spec, cfg.kappa)?;
    report.put("geometry", &geom)?;

    let forward = forward_model(&geom)?;
    let alpha = spec.alpha();
    let sigma_err = forward.sigma.iter().zip(&alpha).map(|(s, a)| rel(*s, *a)).fold(0.0, f64::max);
    report.check("sigma_equals_alpha", sigma_err <= SIGMA_RTOL, format!("max relative error {sigma_err:e}"));

    let mu = mu_roots(&forward)?;
    let beta = spec.beta();
    let mu_err = mu.iter().zip(&beta).map(|(m, b)| rel(*m, *b)).fold(0.0, f64::max);
    report.check("mu_equals_beta", mu_err <= MU_RTOL, format!("max relative error {mu_err:e}"));
    let model = HomogenizedModel { mu: Some(mu), ..forward };
    report.put("model", &model)?;

    let (bands, gaps) = limit_spectrum(&model, spec.horizon)?;
    report.put("limit_bands", &bands)?;
    report.put("limit_gaps", &gaps)?;
    let matched = gap_match_report(&gaps.pairs(), spec);
    report.check(
        "gap_match",
        matched.pass,
        matched.reason.clone().unwrap_or_else(|| format!("all {} gaps within delta {:e}", spec.m(), spec.delta)),
    );
    report.put("gap_match", &matched)?;

    if cfg.checks.convergence {
        let table = convergence_table(&geom, cfg.kappa, cfg.channel, &cfg.eps_list, cfg.resolution)?;
        report.put("convergence", &table)?;
        convergence_checks(&table, report);
    }
    if cfg.checks.bands {
        let mut floquet = Report::new(Command::Bands);
        let outcome = bands_into(cfg, &mut floquet, true);
        report.checks.append(&mut floquet.checks);
        report.put("floquet", &floquet.results)?;
        outcome?;
    }
    Ok(())
}
