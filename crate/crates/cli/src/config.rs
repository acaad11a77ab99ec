use std::fmt;
use std::path::{Path, PathBuf};

use clap::Parser;
use gapforge::cell::{DEFAULT_RESOLUTION, MIN_ELEMENTS};
use gapforge::floquet::CellGraphParams;
use gapforge::interval::IntervalError;
use gapforge::{validate_gap_spec, BubbleGeometry, Channel, GapSpec, HomogenizedModel};
use serde::Deserialize;
use thiserror::Error;

pub const COMMANDS: [&str; 7] = ["design", "dispersion", "limit-spectrum", "cell-eigs", "convergence", "bands", "verify"];

pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_KAPPA: f64 = gapforge::design::DEFAULT_KAPPA;
/// Default horizon as a multiple of the last target or resonance edge.
pub const HORIZON_FACTOR: f64 = 10.0;
pub const DEFAULT_COUNT: usize = 1001;
pub const DEFAULT_NUM_EIGS: usize = 2;
pub const DEFAULT_THETA_GRID: usize = 16;
pub const DEFAULT_NUM_BANDS: usize = 12;
pub const DEFAULT_EPS_LIST: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
/// Dimension recorded on models given directly by `σ, ρ`; the dispersion
/// relation does not depend on it.
pub const DEFAULT_MODEL_DIM: usize = 3;

pub const MAX_RESOLUTION: usize = 1 << 20;
pub const MAX_COUNT: usize = 10_000_000;
pub const MAX_NUM_EIGS: usize = 32;
pub const MAX_THETA_GRID: usize = 256;
pub const MAX_NUM_BANDS: usize = 128;
pub const MAX_DIM: usize = 16;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown command `{0}`; valid commands: {list}", list = COMMANDS.join(", "))]
    UnknownCommand(String),
    #[error("no command given; valid commands: {list}", list = COMMANDS.join(", "))]
    MissingCommand,
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    fn field(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Self::Field { field: field.into(), message: message.to_string() }
    }

    /// Offending field for validation errors.
    pub fn field_name(&self) -> Option<&str> {
        match self {
            Self::Field { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Design,
    Dispersion,
    LimitSpectrum,
    CellEigs,
    Convergence,
    Bands,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Design => "design",
            Self::Dispersion => "dispersion",
            Self::LimitSpectrum => "limit-spectrum",
            Self::CellEigs => "cell-eigs",
            Self::Convergence => "convergence",
            Self::Bands => "bands",
            Self::Verify => "verify",
        }
    }

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Ok(match name {
            "design" => Self::Design,
            "dispersion" => Self::Dispersion,
            "limit-spectrum" => Self::LimitSpectrum,
            "cell-eigs" => Self::CellEigs,
            "convergence" => Self::Convergence,
            "bands" => Self::Bands,
            "verify" => Self::Verify,
            other => return Err(ConfigError::UnknownCommand(other.to_string())),
        })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// Optional checks of the `verify` pipeline beyond the limit-model chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Checks {
    pub convergence: bool,
    pub bands: bool,
}

/// Inline flags; each overrides the same key of the `--config` file.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "gapforge", version, about = "Design and verify periodic manifolds with prescribed spectral gaps")]
#[command(allow_negative_numbers = true)]
pub struct Args {
    /// One of: design, dispersion, limit-spectrum, cell-eigs, convergence, bands, verify.
    pub command: Option<String>,
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; results go to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// json or csv.
    #[arg(long)]
    pub format: Option<String>,
    /// Target gaps as "a1,b1;a2,b2".
    #[arg(long)]
    pub intervals: Option<String>,
    /// Dimension n of the periodic manifold.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Gap edge tolerance.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Spectral horizon.
    #[arg(long = "L")]
    pub horizon: Option<f64>,
    /// Separation constant of the holes.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Resonances of a directly given limit model, "s1,s2".
    #[arg(long)]
    pub sigma: Option<String>,
    /// Weights of a directly given limit model, "r1,r2".
    #[arg(long)]
    pub rho: Option<String>,
    /// Sample window "lo,hi" of the dispersion curve.
    #[arg(long)]
    pub range: Option<String>,
    /// Number of dispersion samples.
    #[arg(long)]
    pub count: Option<usize>,
    /// Cell scale for cell-eigs.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Decreasing cell scales "e1,e2,...".
    #[arg(long)]
    pub eps_list: Option<String>,
    /// Elements per radial segment.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Channel index (0-based).
    #[arg(long)]
    pub channel: Option<usize>,
    /// Number of radial eigenvalues for cell-eigs.
    #[arg(long)]
    pub num_eigs: Option<usize>,
    /// θ-grid points per direction.
    #[arg(long)]
    pub theta_grid: Option<usize>,
    /// Number of Floquet bands.
    #[arg(long)]
    pub num_bands: Option<usize>,
    /// Grid cells per side of the period cell.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Radius of every hole of the period cell.
    #[arg(long)]
    pub hole_radius: Option<f64>,
    /// Radius of every bubble of the period cell.
    #[arg(long)]
    pub bubble_radius: Option<f64>,
    /// verify: add the radial convergence checks.
    #[arg(long)]
    pub check_convergence: bool,
    /// verify: add the Floquet band checks.
    #[arg(long)]
    pub check_bands: bool,
}

/// Config file schema. Keys match the inline flags with `_` for `-`; `n` is
/// the dimension and `L` the horizon.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub command: Option<String>,
    pub intervals: Option<Vec<(f64, f64)>>,
    pub n: Option<usize>,
    pub delta: Option<f64>,
    #[serde(rename = "L")]
    pub horizon: Option<f64>,
    pub kappa: Option<f64>,
    pub sigma: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
    /// Bubble coefficients given directly instead of designed.
    pub geometry: Option<Vec<Channel>>,
    pub range: Option<(f64, f64)>,
    pub count: Option<usize>,
    pub eps: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub resolution: Option<usize>,
    pub channel: Option<usize>,
    pub num_eigs: Option<usize>,
    pub cell: Option<CellGraphParams>,
    pub theta_grid: Option<usize>,
    pub num_bands: Option<usize>,
    pub grid: Option<usize>,
    pub hole_radius: Option<f64>,
    pub bubble_radius: Option<f64>,
    pub check_convergence: Option<bool>,
    pub check_bands: Option<bool>,
    pub format: Option<String>,
    pub out: Option<PathBuf>,
}

/// Validated run: one command, its inputs, and every knob with defaults
/// applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub spec: Option<GapSpec>,
    /// Limit model given directly by `σ, ρ`.
    pub model: Option<HomogenizedModel>,
    /// Bubble coefficients given directly.
    pub geometry: Option<BubbleGeometry>,
    pub kappa: f64,
    /// Explicit horizon; otherwise the gap spec's or `10·μ_m`.
    pub horizon: Option<f64>,
    pub range: Option<(f64, f64)>,
    pub count: usize,
    pub eps: Option<f64>,
    pub eps_list: Vec<f64>,
    pub resolution: usize,
    pub channel: usize,
    pub num_eigs: usize,
    pub cell: CellGraphParams,
    pub theta_grid: usize,
    pub num_bands: usize,
    pub checks: Checks,
    pub format: Format,
    pub out: Option<PathBuf>,
}

fn parse_list(field: &str, text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| ConfigError::field(field, format!("`{s}`: {e}"))))
        .collect()
}

fn parse_pair(field: &str, text: &str) -> Result<(f64, f64), ConfigError> {
    match parse_list(field, text)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err(ConfigError::field(field, format!("expected two numbers \"lo,hi\", got `{text}`"))),
    }
}

/// Parses `"a1,b1;a2,b2"`.
pub fn parse_intervals(text: &str) -> Result<Vec<(f64, f64)>, ConfigError> {
    text.split(';')
        .enumerate()
        .map(|(k, piece)| parse_pair(&format!("intervals[{k}]"), piece))
        .collect()
}

/// Reads a JSON config file.
pub fn read_config_file(path: &Path) -> Result<RawConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Schema { path: path.to_path_buf(), message: e.to_string() })
}

impl RawConfig {
    /// Inline flags win over file values.
    pub fn overlay(mut self, args: &Args) -> Result<Self, ConfigError> {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if args.$field.is_some() { self.$field = args.$field.clone(); })*
            };
        }
        take!(command, delta, horizon, kappa, count, eps, resolution, channel, num_eigs, theta_grid, num_bands, grid, hole_radius, bubble_radius, format, out);
        if args.dim.is_some() {
            self.n = args.dim;
        }
        if let Some(text) = &args.intervals {
            self.intervals = Some(parse_intervals(text)?);
        }
        if let Some(text) = &args.sigma {
            self.sigma = Some(parse_list("sigma", text)?);
        }
        if let Some(text) = &args.rho {
            self.rho = Some(parse_list("rho", text)?);
        }
        if let Some(text) = &args.range {
            self.range = Some(parse_pair("range", text)?);
        }
        if let Some(text) = &args.eps_list {
            self.eps_list = Some(parse_list("eps_list", text)?);
        }
        if args.check_convergence {
            self.check_convergence = Some(true);
        }
        if args.check_bands {
            self.check_bands = Some(true);
        }
        Ok(self)
    }

    pub fn validate(self) -> Result<RunConfig, ConfigError> {
        let command = Command::parse(self.command.as_deref().ok_or(ConfigError::MissingCommand)?)?;
        let format = match self.format.as_deref() {
            None | Some("json") => Format::Json,
            Some("csv") => Format::Csv,
            Some(other) => return Err(ConfigError::field("format", format!("`{other}` is not one of json, csv"))),
        };
        if command == Command::Verify && format == Format::Csv {
            return Err(ConfigError::field("format", "verify emits a JSON report only"));
        }
        if let Some(n) = self.n {
            if !(2..=MAX_DIM).contains(&n) {
                return Err(ConfigError::field("n", format!("must lie in [2, {MAX_DIM}], got {n}")));
            }
        }
        let kappa = self.kappa.unwrap_or(DEFAULT_KAPPA);
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(ConfigError::field("kappa", format!("must be positive and finite, got {kappa}")));
        }
        if let Some(l) = self.horizon {
            if !(l > 0.0 && l.is_finite()) {
                return Err(ConfigError::field("L", format!("must be positive and finite, got {l}")));
            }
        }

        let spec = self.intervals.as_deref().map(|raw| gap_spec(raw, self.n, self.delta, self.horizon)).transpose()?;
        if spec.is_none() && self.delta.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return Err(ConfigError::field("delta", "must be positive and finite"));
        }
        let model = match (&self.sigma, &self.rho) {
            (None, None) => None,
            (Some(_), None) => return Err(ConfigError::field("rho", "required together with sigma")),
            (None, Some(_)) => return Err(ConfigError::field("sigma", "required together with rho")),
            (Some(s), Some(r)) => Some(
                HomogenizedModel::new(self.n.unwrap_or(DEFAULT_MODEL_DIM), s.clone(), r.clone())
                    .and_then(HomogenizedModel::with_mu)
                    .map_err(|e| ConfigError::field("sigma", e))?,
            ),
        };
        let geometry = match &self.geometry {
            None => None,
            Some(channels) => {
                let n = self.n.ok_or_else(|| ConfigError::field("n", "required with geometry"))?;
                Some(BubbleGeometry::new(n, channels.clone(), kappa).map_err(|e| ConfigError::field("geometry", e))?)
            }
        };

        let count = self.count.unwrap_or(DEFAULT_COUNT);
        if !(2..=MAX_COUNT).contains(&count) {
            return Err(ConfigError::field("count", format!("must lie in [2, {MAX_COUNT}], got {count}")));
        }
        if let Some((lo, hi)) = self.range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ConfigError::field("range", format!("need finite lo < hi, got ({lo}, {hi})")));
            }
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(ConfigError::field("eps", format!("must be positive and finite, got {eps}")));
            }
        }
        let eps_list = self.eps_list.clone().unwrap_or_else(|| DEFAULT_EPS_LIST.to_vec());
        if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(ConfigError::field("eps_list", "must be a nonempty list of positive scales"));
        }
        if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(ConfigError::field("eps_list", "must be strictly decreasing"));
        }
        let resolution = self.resolution.unwrap_or(DEFAULT_RESOLUTION);
        if !(MIN_ELEMENTS..=MAX_RESOLUTION).contains(&resolution) {
            return Err(ConfigError::field(
                "resolution",
                format!("must lie in [{MIN_ELEMENTS}, {MAX_RESOLUTION}], got {resolution}"),
            ));
        }
        let num_eigs = self.num_eigs.unwrap_or(DEFAULT_NUM_EIGS);
        if !(1..=MAX_NUM_EIGS).contains(&num_eigs) {
            return Err(ConfigError::field("num_eigs", format!("must lie in [1, {MAX_NUM_EIGS}], got {num_eigs}")));
        }
        let theta_grid = self.theta_grid.unwrap_or(DEFAULT_THETA_GRID);
        if !(2..=MAX_THETA_GRID).contains(&theta_grid) {
            return Err(ConfigError::field("theta_grid", format!("must lie in [2, {MAX_THETA_GRID}], got {theta_grid}")));
        }
        let num_bands = self.num_bands.unwrap_or(DEFAULT_NUM_BANDS);
        if !(1..=MAX_NUM_BANDS).contains(&num_bands) {
            return Err(ConfigError::field("num_bands", format!("must lie in [1, {MAX_NUM_BANDS}], got {num_bands}")));
        }

        let mut cell = self.cell.clone().unwrap_or_else(CellGraphParams::demo);
        if let Some(grid) = self.grid {
            cell.grid = grid;
        }
        if let Some(r) = self.hole_radius {
            cell.holes.iter_mut().for_each(|h| h.radius = r);
        }
        if let Some(b) = self.bubble_radius {
            cell.holes.iter_mut().for_each(|h| h.bubble_radius = Some(b));
        }

        let channels = geometry.as_ref().map(BubbleGeometry::m).or(spec.as_ref().map(GapSpec::m));
        let channel = self.channel.unwrap_or(0);
        if let Some(m) = channels {
            if channel >= m {
                return Err(ConfigError::field("channel", format!("index {channel} out of range for {m} channels")));
            }
        }

        let needs = |field: &str, ok: bool| if ok { Ok(()) } else { Err(ConfigError::field(field, format!("required for `{command}`"))) };
        match command {
            Command::Design | Command::Verify => needs("intervals", spec.is_some())?,
            Command::Dispersion | Command::LimitSpectrum => needs("sigma", model.is_some() || spec.is_some())?,
            Command::CellEigs => {
                needs("geometry", geometry.is_some() || spec.is_some())?;
                needs("eps", self.eps.is_some())?;
            }
            Command::Convergence => needs("geometry", geometry.is_some() || spec.is_some())?,
            Command::Bands => {}
        }

        let out = self.out.clone();
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).map_err(|e| ConfigError::field("out", format!("{}: {e}", dir.display())))?;
        }

        Ok(RunConfig {
            command,
            spec,
            model,
            geometry,
            kappa,
            horizon: self.horizon,
            range: self.range,
            count,
            eps: self.eps,
            eps_list,
            resolution,
            channel,
            num_eigs,
            cell,
            theta_grid,
            num_bands,
            checks: Checks {
                convergence: self.check_convergence.unwrap_or(false),
                bands: self.check_bands.unwrap_or(false),
            },
            format,
            out,
        })
    }
}

/// Gap spec with `δ = 0.01` and `L = 10·β_m` by default; errors name the
/// offending interval.
fn gap_spec(raw: &[(f64, f64)], n: Option<usize>, delta: Option<f64>, horizon: Option<f64>) -> Result<GapSpec, ConfigError> {
    let n = n.ok_or_else(|| ConfigError::field("n", "required with intervals"))?;
    let top = raw.iter().map(|p| p.1).filter(|b| b.is_finite()).fold(0.0, f64::max);
    let l = horizon.unwrap_or(if top > 0.0 { HORIZON_FACTOR * top } else { 1.0 });
    let spec = validate_gap_spec(raw, n, delta.unwrap_or(DEFAULT_DELTA), l).map_err(|e| {
        let field = match &e {
            IntervalError::EmptyInterval { index, .. } | IntervalError::BadEndpoint { index } => format!("intervals[{index}]"),
            IntervalError::Overlap { second, .. } => format!("intervals[{second}]"),
            IntervalError::NonPositiveStart(lo) => match raw.iter().position(|p| p.0 == *lo) {
                Some(k) => format!("intervals[{k}]"),
                None => "intervals".into(),
            },
            IntervalError::DimensionTooSmall(_) => "n".into(),
            IntervalError::NonPositiveDelta(_) => "delta".into(),
            IntervalError::NonPositiveHorizon(_) => "L".into(),
            _ => "intervals".into(),
        };
        ConfigError::field(field, e)
    })?;
    if !(spec.horizon > top) {
        return Err(ConfigError::field("L", format!("must exceed the last target edge {top}")));
    }
    Ok(spec)
}

/// Merges `--config` with the inline flags and validates.
pub fn load_config(args: &Args) -> Result<RunConfig, ConfigError> {
    let raw = match &args.config {
        Some(path) => read_config_file(path)?,
        None => RawConfig::default(),
    };
    raw.overlay(args)?.validate()
}

/// Parses a JSON config document without flags.
pub fn config_from_json(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Schema { path: PathBuf::from("<inline>"), message: e.to_string() })?;
    raw.validate()
}

/// `GAPFORGE_THREADS` as a positive count, if set.
pub fn thread_cap(value: Option<&str>) -> Result<Option<usize>, ConfigError> {
    match value {
        None => Ok(None),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError::field("GAPFORGE_THREADS", format!("must be a positive integer, got `{v}`"))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_design_fills_defaults() {
        let cfg = config_from_json(r#"{"command":"design","intervals":[[1,2]],"n":3}"#).unwrap();
        let spec = cfg.spec.unwrap();
        assert_eq!(spec.delta, 0.01);
        assert_eq!(spec.horizon, 20.0);
        assert_eq!(cfg.resolution, DEFAULT_RESOLUTION);
        assert_eq!(cfg.theta_grid, 16);
        assert_eq!(cfg.kappa, 0.5);
        assert_eq!(cfg.format, Format::Json);
    }

    #[test]
    fn reversed_interval_names_field() {
        let err = config_from_json(r#"{"command":"design","intervals":[[2,1]],"n":3}"#).unwrap_err();
        assert_eq!(err.field_name(), Some("intervals[0]"));
        let err = config_from_json(r#"{"command":"design","intervals":[[1,2],[5,4]],"n":3}"#).unwrap_err();
        assert_eq!(err.field_name(), Some("intervals[1]"));
    }

    #[test]
    fn unknown_command_lists_valid_ones() {
        let msg = config_from_json(r#"{"command":"plot"}"#).unwrap_err().to_string();
        for c in COMMANDS {
            assert!(msg.contains(c), "{msg}");
        }
    }

    #[test]
    fn inline_flags_parse_and_override() {
        let args = Args::try_parse_from(["gapforge", "verify", "--intervals", "1,2; 3,4", "--dim", "3", "--delta", "1e-9"]).unwrap();
        let cfg = load_config(&args).unwrap();
        let spec = cfg.spec.unwrap();
        assert_eq!(spec.alpha(), vec![1.0, 3.0]);
        assert_eq!(spec.beta(), vec![2.0, 4.0]);
        assert_eq!(spec.delta, 1e-9);
        assert_eq!(spec.horizon, 40.0);
    }

    #[test]
    fn out_of_range_knobs_name_field() {
        let cases = [
            (r#"{"command":"bands","theta_grid":1}"#, "theta_grid"),
            (r#"{"command":"bands","num_bands":0}"#, "num_bands"),
            (r#"{"command":"convergence","intervals":[[1,2]],"n":3,"resolution":8}"#, "resolution"),
            (r#"{"command":"convergence","intervals":[[1,2]],"n":3,"eps_list":[0.1,0.2]}"#, "eps_list"),
            (r#"{"command":"dispersion","sigma":[1]}"#, "rho"),
            (r#"{"command":"dispersion","sigma":[1],"rho":[1],"count":1}"#, "count"),
            (r#"{"command":"design","intervals":[[1,2]],"n":3,"L":1.5}"#, "L"),
            (r#"{"command":"design","intervals":[[1,2]],"n":1}"#, "n"),
            (r#"{"command":"design","intervals":[[1,2]],"n":3,"delta":0}"#, "delta"),
            (r#"{"command":"design","intervals":[[1,2]],"n":3,"channel":1}"#, "channel"),
            (r#"{"command":"design","n":3}"#, "intervals"),
            (r#"{"command":"cell-eigs","intervals":[[1,2]],"n":3}"#, "eps"),
            (r#"{"command":"verify","intervals":[[1,2]],"n":3,"format":"csv"}"#, "format"),
        ];
        for (text, field) in cases {
            let err = config_from_json(text).unwrap_err();
            assert_eq!(err.field_name(), Some(field), "{text}: {err}");
        }
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        assert!(matches!(config_from_json(r#"{"command":"bands","theta":3}"#), Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn thread_cap_parses() {
        assert_eq!(thread_cap(None).unwrap(), None);
        assert_eq!(thread_cap(Some("2")).unwrap(), Some(2));
        assert!(thread_cap(Some("0")).is_err());
        assert!(thread_cap(Some("x")).is_err());
    }
}
