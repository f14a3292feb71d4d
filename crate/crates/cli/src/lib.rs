//! Command-line front end: coefficient files, order checks, convergence
//! studies and figure data.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use thiserror::Error;

use splitgen::bch_oracle::{self, MatrixPair};
use splitgen::error_kernel::DEFAULT_TOL;
use splitgen::extended_linear::{position_from_v, positivity_report, velocity_from_t, PositivityReport};
use splitgen::stepper::{self, fmt_f64, BuiltinSystem, Distribution};
use splitgen::{classify_order, error_coefficients, make_family, CoefficientFile, Family, SplitCoefficients};

/// Agreement required between oracle estimates and closed forms.
pub const ORACLE_TOL: f64 = 1e-6;

const OVERLAY_DATA: &str = include_str!("../data/published_overlay.json");

#[derive(Debug, Parser)]
#[command(name = "splitgen", version, about = "Fourth-order splitting coefficients: build, check, converge, plot data")]
pub struct Cli {
    /// Seed for the random matrix pairs used by --oracle.
    #[arg(long, global = true, env = "SPLITGEN_SEED")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a coefficient file for a named family.
    Gen {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate error coefficients and the order of a coefficient file.
    Check {
        file: PathBuf,
        /// Order the file is expected to reach. Defaults to 2 for leapfrog
        /// and 4 otherwise.
        #[arg(long)]
        order: Option<u8>,
        /// Also extract the coefficients numerically from random matrices.
        #[arg(long)]
        oracle: bool,
        /// Classification tolerance.
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Global error against step size on a test system, as CSV.
    Converge {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, value_enum, default_value_t = SystemArg::Harmonic)]
        system: SystemArg,
        #[arg(long, default_value_t = 1e-3)]
        eps_min: f64,
        #[arg(long, default_value_t = 1e-1)]
        eps_max: f64,
        #[arg(long, default_value_t = 9)]
        eps_count: usize,
        /// How the gradient term is spread over the kicks. Without this flag:
        /// none if e_VTV vanishes, else central when the kick count is odd,
        /// else proportional.
        #[arg(long, value_enum)]
        gradient: Option<GradientArg>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Data behind the coefficient-comparison figures, as CSV.
    Figure {
        #[arg(value_enum)]
        which: FigureId,
        /// Extra overlay points, same layout as the bundled overlay file.
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct FamilyArgs {
    /// Family name, e.g. 4a, 4b, 4c, 4d, 4bda, 4acb, forest-ruth, leapfrog,
    /// minimal-velocity, nine-position, eleven-velocity, fr-even.
    #[arg(long)]
    pub family: String,
    /// Stage count for the minimal families.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t2: Option<f64>,
    #[arg(long)]
    pub t3: Option<f64>,
    #[arg(long)]
    pub v2: Option<f64>,
    #[arg(long)]
    pub v3: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
}

impl FamilyArgs {
    pub fn resolve(&self) -> Result<Family, CliError> {
        let mut params: Vec<f64> = Vec::new();
        params.extend(self.n.map(|n| n as f64));
        params.extend(self.t2.or(self.v2));
        params.extend(self.t3.or(self.v3));
        params.extend(&self.alphas);
        if (self.t2.is_some() && self.v2.is_some()) || (self.t3.is_some() && self.v3.is_some()) {
            return Err(CliError::Usage("give either t or v parameters, not both".into()));
        }
        Family::from_name(&self.family, &params).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn label(&self) -> String {
        self.family.trim().to_ascii_lowercase().replace('_', "-")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    Harmonic,
    #[value(alias = "kepler2d")]
    Kepler,
}

impl From<SystemArg> for BuiltinSystem {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Harmonic => BuiltinSystem::Harmonic,
            SystemArg::Kepler => BuiltinSystem::Kepler2d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradientArg {
    Central,
    Proportional,
    None,
}

impl From<GradientArg> for Distribution {
    fn from(g: GradientArg) -> Self {
        match g {
            GradientArg::Central => Distribution::Central,
            GradientArg::Proportional => Distribution::Proportional,
            GradientArg::None => Distribution::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureId {
    Fig1,
    Fig2,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Verification(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
        }
    }
}

/// Output of a command: the main text, and notes meant for stderr.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub notes: String,
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let seed = cli.seed.unwrap_or(bch_oracle::DEFAULT_SEED);
    match &cli.command {
        Command::Gen { family, output } => {
            let out = cmd_gen(family)?;
            emit(out, output.as_ref())
        }
        Command::Check { file, order, oracle, tol } => {
            let text = std::fs::read_to_string(file).map_err(|source| io_error(file, source))?;
            cmd_check(&text, *order, oracle.then_some(seed), *tol)
        }
        Command::Converge { family, system, eps_min, eps_max, eps_count, gradient, output } => {
            let text = cmd_converge(family, *system, *eps_min, *eps_max, *eps_count, *gradient)?;
            emit(Outcome { text, notes: String::new() }, output.as_ref())
        }
        Command::Figure { which, overlay, output } => {
            let extra = match overlay {
                Some(path) => Some(std::fs::read_to_string(path).map_err(|source| io_error(path, source))?),
                None => None,
            };
            let text = cmd_figure(*which, extra.as_deref())?;
            emit(Outcome { text, notes: String::new() }, output.as_ref())
        }
    }
}

fn io_error(path: &std::path::Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

/// Writes the text to `path` if given, leaving only the notes to print.
fn emit(out: Outcome, path: Option<&PathBuf>) -> Result<Outcome, CliError> {
    match path {
        Some(p) => {
            std::fs::File::create(p)
                .and_then(|mut f| f.write_all(out.text.as_bytes()))
                .map_err(|source| io_error(p, source))?;
            Ok(Outcome { text: String::new(), notes: out.notes })
        }
        None => Ok(out),
    }
}

fn positivity_text(p: &PositivityReport) -> String {
    let mut s = String::new();
    writeln!(s, "forward: {}", p.forward).unwrap();
    writeln!(s, "negative t indices: {:?}", p.negative_t).unwrap();
    writeln!(s, "negative v indices: {:?}", p.negative_v).unwrap();
    writeln!(s, "adjacent negative (t, v) pairs: {:?}", p.negative_pairs).unwrap();
    match p.adjacent_negative_pair {
        Some(true) => writeln!(s, "adjacent negative pair present: yes").unwrap(),
        Some(false) => writeln!(s, "adjacent negative pair present: no (expected for order > 2)").unwrap(),
        None => {}
    }
    s
}

/// Coefficient file JSON; the positivity report goes to the notes.
pub fn cmd_gen(args: &FamilyArgs) -> Result<Outcome, CliError> {
    let family = args.resolve()?;
    let out = make_family(&family).map_err(|e| CliError::Usage(e.to_string()))?;
    let e_vtv = out.params.map(|p| p.analytic_e_vtv());
    let file = CoefficientFile::new(args.label(), &out.coefficients, e_vtv);
    let mut notes = String::new();
    writeln!(notes, "family: {} {:?}", family.name(), family.params()).unwrap();
    if let Some(p) = out.params {
        writeln!(notes, "C2: {}  phi: {}  delta_g: {}", fmt_f64(p.c2), fmt_f64(p.phi), fmt_f64(p.delta_g)).unwrap();
    }
    notes.push_str(&positivity_text(&out.positivity));
    Ok(Outcome { text: file.to_json() + "\n", notes })
}

fn claimed_order(name: &str) -> u8 {
    match name.trim().to_ascii_lowercase().as_str() {
        "leapfrog" | "verlet" => 2,
        _ => 4,
    }
}

/// Report on a coefficient file. `Verification` if the claimed order is
/// not reached or the oracle disagrees.
pub fn cmd_check(json: &str, order: Option<u8>, oracle_seed: Option<u64>, tol: f64) -> Result<Outcome, CliError> {
    let file = CoefficientFile::from_json(json).map_err(|e| CliError::Usage(format!("invalid coefficient file: {e}")))?;
    let c = file.coefficients().map_err(|e| CliError::Usage(format!("invalid coefficient file: {e}")))?;
    let claimed = order.unwrap_or_else(|| claimed_order(&file.name));
    let e = error_coefficients(&c);
    let class = classify_order(&c, tol);

    let mut s = String::new();
    writeln!(s, "name: {}", file.name).unwrap();
    writeln!(s, "stages: {}", c.len()).unwrap();
    for (k, x) in [("e_T", e.e_t), ("e_V", e.e_v), ("e_TV", e.e_tv), ("e_TTV", e.e_ttv), ("e_VTV", e.e_vtv)] {
        writeln!(s, "{k} = {}", fmt_f64(x)).unwrap();
    }
    writeln!(s, "order: {}", class.order).unwrap();
    writeln!(s, "symmetric: {}", class.symmetric).unwrap();

    let mut failures = Vec::new();
    for (name, sum) in [("sum t = 1", c.sum_t()), ("sum v = 1", c.sum_v())] {
        if (sum - 1.0).abs() > tol {
            failures.push(format!("primary constraint {name} violated (sum = {})", fmt_f64(sum)));
        }
    }

    let effective = match (class.vtv_residual, file.e_vtv) {
        (Some(r), Some(declared)) if (r - declared).abs() <= tol.max(1e-12) => {
            writeln!(s, "gradient term: declared e_VTV {} cancelled by a force-gradient kick", fmt_f64(declared)).unwrap();
            writeln!(s, "order without gradient term: {}", class.without_gradient()).unwrap();
            class.with_gradient()
        }
        (Some(r), Some(declared)) => {
            failures.push(format!(
                "declared e_VTV {} does not match computed {}",
                fmt_f64(declared),
                fmt_f64(r)
            ));
            class.without_gradient()
        }
        (Some(_), None) => {
            writeln!(s, "gradient term: none declared").unwrap();
            class.without_gradient()
        }
        (None, _) => class.without_gradient(),
    };
    writeln!(s, "effective order: {effective}").unwrap();
    writeln!(s, "claimed order: {claimed}").unwrap();
    s.push_str(&positivity_text(&positivity_report(&c)));

    if let Some(seed) = oracle_seed {
        oracle_section(&c, &e, seed, &mut s, &mut failures)?;
    }
    if effective < claimed {
        failures.push(format!("order {effective} is below the claimed order {claimed}"));
    }

    if failures.is_empty() {
        writeln!(s, "status: confirmed").unwrap();
        Ok(Outcome { text: s, notes: String::new() })
    } else {
        for f in &failures {
            writeln!(s, "FAILED: {f}").unwrap();
        }
        Err(CliError::Verification(s))
    }
}

fn oracle_section(
    c: &SplitCoefficients,
    e: &splitgen::ErrorCoefficients,
    seed: u64,
    s: &mut String,
    failures: &mut Vec<String>,
) -> Result<(), CliError> {
    let pair = MatrixPair::random(bch_oracle::DEFAULT_DIM, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    match bch_oracle::extract_error_coefficients(c, &pair, &bch_oracle::default_grid()) {
        Ok(x) => {
            writeln!(s, "oracle seed: {seed}").unwrap();
            let mut worst: f64 = 0.0;
            for (k, got, want) in [("e_TV", x.e_tv, e.e_tv), ("e_TTV", x.e_ttv, e.e_ttv), ("e_VTV", x.e_vtv, e.e_vtv)] {
                worst = worst.max((got - want).abs());
                writeln!(s, "oracle {k} = {} (difference {:.3e})", fmt_f64(got), (got - want).abs()).unwrap();
            }
            writeln!(s, "oracle residual order: {:.3} +- {:.3}", x.residual_order, x.residual_order_stderr).unwrap();
            let agree = worst <= ORACLE_TOL;
            writeln!(s, "oracle agreement: {}", if agree { "yes" } else { "no" }).unwrap();
            if !agree {
                failures.push(format!("oracle disagrees with closed forms by {worst:.3e}"));
            }
            if !x.primary_ok {
                failures.push(format!(
                    "oracle finds e_T = {}, e_V = {}",
                    fmt_f64(x.e_t),
                    fmt_f64(x.e_v)
                ));
            }
        }
        Err(err) => failures.push(format!("oracle failed: {err}")),
    }
    Ok(())
}

pub fn cmd_converge(
    args: &FamilyArgs,
    system: SystemArg,
    eps_min: f64,
    eps_max: f64,
    eps_count: usize,
    gradient: Option<GradientArg>,
) -> Result<String, CliError> {
    if !(eps_min > 0.0 && eps_max > eps_min) || eps_count < 2 {
        return Err(CliError::Usage("need 0 < eps-min < eps-max and eps-count >= 2".into()));
    }
    let family = args.resolve()?;
    let c = make_family(&family).map_err(|e| CliError::Usage(e.to_string()))?.coefficients;
    let distribution = match gradient {
        Some(g) => g.into(),
        None => default_distribution(&c),
    };
    let integrator = stepper::make_integrator(&c, distribution).map_err(|e| CliError::Usage(e.to_string()))?;
    let sys = BuiltinSystem::from(system);
    let (start, t_final) = sys.default_problem();
    let report = stepper::convergence_study(
        &integrator,
        sys.system().as_ref(),
        &start,
        t_final,
        &stepper::geometric_steps(eps_min, eps_max, eps_count),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(report.to_csv())
}

fn default_distribution(c: &SplitCoefficients) -> Distribution {
    let class = classify_order(c, DEFAULT_TOL);
    if class.vtv_residual.is_none() || !class.symmetric {
        return Distribution::None;
    }
    if c.v.iter().filter(|&&v| v != 0.0).count() % 2 == 1 {
        Distribution::Central
    } else {
        Distribution::Proportional
    }
}

/// One overlay point: interior parameters (two for 11 stages, one for 9)
/// and the published coefficient pair, or `null` for a placeholder.
#[derive(Debug, Clone, Deserialize)]
pub struct OverlayPoint {
    pub label: String,
    pub params: Option<Vec<f64>>,
    pub published: Option<[f64; 2]>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Overlay {
    #[serde(default)]
    pub fig1: Vec<OverlayPoint>,
    #[serde(default)]
    pub fig2: Vec<OverlayPoint>,
}

pub fn bundled_overlay() -> Overlay {
    serde_json::from_str(OVERLAY_DATA).expect("bundled overlay data is valid")
}

/// Interior weights `(w2, .., wN)` of a symmetric 9- or 11-stage set.
fn symmetric_interior(params: &[f64]) -> Result<Vec<f64>, CliError> {
    match *params {
        [a] => Ok(vec![a, 0.5 - a, 0.5 - a, a]),
        [a, b] => Ok(vec![a, b, 1.0 - 2.0 * (a + b), b, a]),
        _ => Err(CliError::Usage(format!("overlay params must have 1 or 2 entries, got {}", params.len()))),
    }
}

/// Predicted pair and phi: `(v1, v2)` for fig1, `(t1, t2)` for fig2.
fn predict(which: FigureId, params: &[f64]) -> Result<([f64; 2], f64), CliError> {
    let interior = symmetric_interior(params)?;
    let built = match which {
        FigureId::Fig1 => velocity_from_t(&interior).map(|c| ([c.coefficients.v[0], c.coefficients.v[1]], c.params.phi)),
        FigureId::Fig2 => {
            position_from_v(&interior).map(|c| ([c.coefficients.t[0], c.coefficients.t[1]], c.params.phi))
        }
    };
    built.map_err(|e| CliError::Usage(e.to_string()))
}

/// `fig1`: `series,t2,t3,v1,v2,phi`; `fig2`: `series,v2,v3,t1,t2,phi`.
///
/// The `predicted` series sweeps the 9-stage parameter from 0 to 1/2 in
/// steps of 0.01. Each overlay point with published values adds a
/// `published:<label>` row and a `predicted:<label>` row.
pub fn cmd_figure(which: FigureId, extra_overlay: Option<&str>) -> Result<String, CliError> {
    let mut overlay = bundled_overlay();
    if let Some(text) = extra_overlay {
        let extra: Overlay =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid overlay file: {e}")))?;
        for (mine, theirs) in [(&mut overlay.fig1, extra.fig1), (&mut overlay.fig2, extra.fig2)] {
            for p in theirs {
                match mine.iter_mut().find(|q| q.label == p.label) {
                    Some(q) => *q = p,
                    None => mine.push(p),
                }
            }
        }
    }
    let (header, points) = match which {
        FigureId::Fig1 => ("series,t2,t3,v1,v2,phi", &overlay.fig1),
        FigureId::Fig2 => ("series,v2,v3,t1,t2,phi", &overlay.fig2),
    };

    let mut out = String::from(header);
    out.push('\n');
    let row = |out: &mut String, series: &str, a: f64, b: f64, pair: [f64; 2], phi: Option<f64>| {
        let phi = phi.map(fmt_f64).unwrap_or_default();
        writeln!(out, "{series},{},{},{},{},{phi}", fmt_f64(a), fmt_f64(b), fmt_f64(pair[0]), fmt_f64(pair[1])).unwrap();
    };
    for k in 0..=50 {
        let x = k as f64 / 100.0;
        let (pair, phi) = predict(which, &[x])?;
        row(&mut out, "predicted", x, 0.5 - x, pair, Some(phi));
    }
    for p in points {
        let (Some(params), Some(published)) = (&p.params, p.published) else { continue };
        let (a, b) = match params[..] {
            [a] => (a, 0.5 - a),
            [a, b] => (a, b),
            _ => return Err(CliError::Usage(format!("overlay '{}' needs 1 or 2 params", p.label))),
        };
        row(&mut out, &format!("published:{}", p.label), a, b, published, None);
        let (pair, phi) = predict(which, params)?;
        row(&mut out, &format!("predicted:{}", p.label), a, b, pair, Some(phi));
    }
    Ok(out)
}
