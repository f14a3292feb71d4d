//! Executable splittings for separable Hamiltonians `H = |p|^2/2 + V(q)`.
//!
//! A drift `exp(tau T)` is `q <- q + tau p` and a kick `exp(tau V)` is
//! `p <- p + tau F(q)` with `F = -grad V`. Acting on phase-space functions,
//! `T = p . d/dq` and `V = F . d/dp`, so
//!
//! ```text
//! [V,[T,V]] = grad(|F|^2) . d/dp = grad(|grad V|^2) . d/dp
//! ```
//!
//! and a factor `exp(eps^3 c [V,[T,V]])` is the kick
//! `p <- p + eps^3 c grad(|grad V|^2)`. Systems expose
//! `gradient_force = -grad(|grad V|^2)`, hence [`GRADIENT_KICK_SIGN`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bch_oracle::fit_slope;
use crate::error_kernel::{classify_order, error_coefficients, Op, SplitCoefficients, DEFAULT_TOL};
use crate::extended_linear::positivity_report;

/// Sign applied to `gradient_force` in a gradient kick.
pub const GRADIENT_KICK_SIGN: f64 = -1.0;

/// Global errors below this are roundoff and are left out of slope fits.
pub const ERROR_FLOOR: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("step size must be non-zero and finite")]
    BadStep,
    #[error("state became non-finite")]
    NonFinite,
    #[error("force is singular at the origin")]
    Singular,
    #[error("system provides no force gradient")]
    NoGradient,
    #[error("state has dimension {got}, system expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("central distribution needs an odd number of non-zero kicks, found {0}; use proportional")]
    EvenKickCount(usize),
    #[error("gradient distribution needs a symmetric set meeting the third-order conditions up to e_VTV (order {order}, symmetric {symmetric})")]
    NotGradientCandidate { order: u8, symmetric: bool },
    #[error("forward integrator produced a backward drift ({0})")]
    BackwardDrift(f64),
    #[error("step list must span at least one decade")]
    NarrowRange,
    #[error("fewer than two errors above the roundoff floor")]
    TooFewPoints,
    #[error("unknown system '{0}'")]
    UnknownSystem(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        Self { q, p }
    }

    pub fn distance(&self, other: &State) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.q.iter().chain(&self.p).map(|x| x * x).sum::<f64>().sqrt()
    }

    fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }
}

/// A separable Hamiltonian with unit mass.
pub trait SplitSystem {
    fn dimension(&self) -> usize;

    /// Kinetic flow; leaves `p` unchanged.
    fn drift(&self, q: &mut [f64], p: &[f64], tau: f64) {
        for (qi, pi) in q.iter_mut().zip(p) {
            *qi += tau * pi;
        }
    }

    /// `-grad V(q)`.
    fn kick_force(&self, q: &[f64], out: &mut [f64]) -> Result<(), StepError>;

    /// `-grad(|grad V(q)|^2)`.
    fn gradient_force(&self, _q: &[f64], _out: &mut [f64]) -> Result<(), StepError> {
        Err(StepError::NoGradient)
    }

    fn exact_flow(&self, _start: &State, _t: f64) -> Option<State> {
        None
    }

    fn energy(&self, s: &State) -> Result<f64, StepError>;
}

/// `V = |q|^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub dim: usize,
}

impl SplitSystem for Harmonic {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn kick_force(&self, q: &[f64], out: &mut [f64]) -> Result<(), StepError> {
        for (o, x) in out.iter_mut().zip(q) {
            *o = -x;
        }
        Ok(())
    }

    fn gradient_force(&self, q: &[f64], out: &mut [f64]) -> Result<(), StepError> {
        for (o, x) in out.iter_mut().zip(q) {
            *o = -2.0 * x;
        }
        Ok(())
    }

    fn exact_flow(&self, s: &State, t: f64) -> Option<State> {
        let (c, sn) = (t.cos(), t.sin());
        let q = s.q.iter().zip(&s.p).map(|(q, p)| q * c + p * sn).collect();
        let p = s.q.iter().zip(&s.p).map(|(q, p)| -q * sn + p * c).collect();
        Some(State { q, p })
    }

    fn energy(&self, s: &State) -> Result<f64, StepError> {
        Ok(0.5 * s.q.iter().chain(&s.p).map(|x| x * x).sum::<f64>())
    }
}

/// Planar Kepler problem, `V = -1/|q|`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Kepler2d;

impl Kepler2d {
    fn radius(q: &[f64]) -> Result<f64, StepError> {
        let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
        if r == 0.0 {
            Err(StepError::Singular)
        } else {
            Ok(r)
        }
    }

    /// Initial data at pericentre for a unit-semi-major-axis orbit of the
    /// given eccentricity; the period is `2 pi`.
    pub fn pericentre(eccentricity: f64) -> State {
        let e = eccentricity;
        State::new(vec![1.0 - e, 0.0], vec![0.0, ((1.0 + e) / (1.0 - e)).sqrt()])
    }
}

impl SplitSystem for Kepler2d {
    fn dimension(&self) -> usize {
        2
    }

    fn kick_force(&self, q: &[f64], out: &mut [f64]) -> Result<(), StepError> {
        let r = Self::radius(q)?;
        let r3 = r * r * r;
        out[0] = -q[0] / r3;
        out[1] = -q[1] / r3;
        Ok(())
    }

    fn gradient_force(&self, q: &[f64], out: &mut [f64]) -> Result<(), StepError> {
        // |grad V|^2 = r^-4, grad(r^-4) = -4 q r^-6
        let r = Self::radius(q)?;
        let r6 = r.powi(6);
        out[0] = 4.0 * q[0] / r6;
        out[1] = 4.0 * q[1] / r6;
        Ok(())
    }

    /// Bound orbits only: solves Kepler's equation in eccentric-anomaly
    /// difference form and applies the Lagrange f and g functions.
    fn exact_flow(&self, s: &State, t: f64) -> Option<State> {
        let (q0, p0) = (&s.q, &s.p);
        let r0 = (q0[0] * q0[0] + q0[1] * q0[1]).sqrt();
        let v2 = p0[0] * p0[0] + p0[1] * p0[1];
        let energy = 0.5 * v2 - 1.0 / r0;
        if !(energy < 0.0) || r0 == 0.0 {
            return None;
        }
        let a = -0.5 / energy;
        let sqrt_a = a.sqrt();
        let sigma = (q0[0] * p0[0] + q0[1] * p0[1]) / sqrt_a;
        let ec = 1.0 - r0 / a;
        let mean = t / (a * sqrt_a);

        // mean = x - ec sin x + sigma (1 - cos x)
        let mut x = mean;
        for _ in 0..100 {
            let (sn, cs) = x.sin_cos();
            let f = x - ec * sn + sigma * (1.0 - cs) - mean;
            let df = 1.0 - ec * cs + sigma * sn;
            let dx = f / df;
            x -= dx;
            if dx.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        let (sn, cs) = x.sin_cos();
        let r = a + (r0 - a) * cs + sigma * sqrt_a * sn;
        let f = 1.0 - a / r0 * (1.0 - cs);
        let g = t - a * sqrt_a * (x - sn);
        let fdot = -sqrt_a / (r * r0) * sn;
        let gdot = 1.0 - a / r * (1.0 - cs);
        Some(State::new(
            vec![f * q0[0] + g * p0[0], f * q0[1] + g * p0[1]],
            vec![fdot * q0[0] + gdot * p0[0], fdot * q0[1] + gdot * p0[1]],
        ))
    }

    fn energy(&self, s: &State) -> Result<f64, StepError> {
        let r = Self::radius(&s.q)?;
        Ok(0.5 * (s.p[0] * s.p[0] + s.p[1] * s.p[1]) - 1.0 / r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinSystem {
    Harmonic,
    Kepler2d,
}

impl BuiltinSystem {
    pub fn from_name(name: &str) -> Result<Self, StepError> {
        match name.to_ascii_lowercase().as_str() {
            "harmonic" => Ok(Self::Harmonic),
            "kepler" | "kepler2d" => Ok(Self::Kepler2d),
            _ => Err(StepError::UnknownSystem(name.to_string())),
        }
    }

    pub fn system(self) -> Box<dyn SplitSystem + Send + Sync> {
        match self {
            Self::Harmonic => Box::new(Harmonic { dim: 1 }),
            Self::Kepler2d => Box::new(Kepler2d),
        }
    }

    /// Initial state, final time and default step range used by the
    /// convergence demos.
    pub fn default_problem(self) -> (State, f64) {
        match self {
            Self::Harmonic => (State::new(vec![1.0], vec![0.0]), 1.0),
            Self::Kepler2d => (Kepler2d::pericentre(0.2), 2.0 * std::f64::consts::PI),
        }
    }
}

pub fn builtin_system(name: &str) -> Result<Box<dyn SplitSystem + Send + Sync>, StepError> {
    Ok(BuiltinSystem::from_name(name)?.system())
}

/// How the `-e_VTV` gradient weight is spread over the kicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// All of it on the middle non-zero kick.
    Central,
    /// `c_i = -e_VTV v_i / sum v` over the non-zero kicks.
    Proportional,
    None,
}

impl std::str::FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "central" => Ok(Self::Central),
            "proportional" => Ok(Self::Proportional),
            "none" => Ok(Self::None),
            other => Err(format!("unknown gradient distribution '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integrator {
    pub coefficients: SplitCoefficients,
    /// One weight per kick, aligned with `coefficients.v`.
    pub gradient_weights: Vec<f64>,
    pub distribution: Distribution,
    /// No negative coefficient anywhere.
    pub forward: bool,
}

pub fn make_integrator(c: &SplitCoefficients, distribution: Distribution) -> Result<Integrator, StepError> {
    let n = c.len();
    let forward = positivity_report(c).forward;
    let mut weights = vec![0.0; n];
    if distribution != Distribution::None {
        let class = classify_order(c, DEFAULT_TOL);
        if class.order < 3 || !class.symmetric {
            return Err(StepError::NotGradientCandidate { order: class.order, symmetric: class.symmetric });
        }
        let total = -error_coefficients(c).e_vtv;
        if total.abs() > DEFAULT_TOL {
            let kicks: Vec<usize> = (0..n).filter(|&i| c.v[i] != 0.0).collect();
            match distribution {
                Distribution::Central => {
                    if kicks.len().is_multiple_of(2) {
                        return Err(StepError::EvenKickCount(kicks.len()));
                    }
                    weights[kicks[kicks.len() / 2]] = total;
                }
                Distribution::Proportional => {
                    let sum: f64 = kicks.iter().map(|&i| c.v[i]).sum();
                    for &i in &kicks {
                        weights[i] = total * c.v[i] / sum;
                    }
                }
                Distribution::None => unreachable!(),
            }
        }
    }
    Ok(Integrator { coefficients: c.clone(), gradient_weights: weights, distribution, forward })
}

impl Integrator {
    /// Advances `state` by one step of size `eps` (negative allowed).
    pub fn step(&self, system: &dyn SplitSystem, state: &mut State, eps: f64) -> Result<(), StepError> {
        if eps == 0.0 || !eps.is_finite() {
            return Err(StepError::BadStep);
        }
        let dim = system.dimension();
        if state.q.len() != dim || state.p.len() != dim {
            return Err(StepError::Dimension { expected: dim, got: state.q.len() });
        }
        let mut force = vec![0.0; dim];
        let mut grad = vec![0.0; dim];
        let eps3 = eps * eps * eps;
        for (pos, f) in self.coefficients.factors().iter().enumerate() {
            match f.op {
                Op::T => {
                    if f.weight == 0.0 {
                        continue;
                    }
                    let tau = f.weight * eps;
                    if self.forward && eps > 0.0 && tau < 0.0 {
                        return Err(StepError::BackwardDrift(tau));
                    }
                    system.drift(&mut state.q, &state.p, tau);
                }
                Op::V => {
                    let c = self.gradient_weights[pos / 2];
                    if f.weight != 0.0 {
                        system.kick_force(&state.q, &mut force)?;
                        let tau = f.weight * eps;
                        for (p, fi) in state.p.iter_mut().zip(&force) {
                            *p += tau * fi;
                        }
                    }
                    if c != 0.0 {
                        system.gradient_force(&state.q, &mut grad)?;
                        let scale = eps3 * c * GRADIENT_KICK_SIGN;
                        for (p, gi) in state.p.iter_mut().zip(&grad) {
                            *p += scale * gi;
                        }
                    }
                }
            }
        }
        if !state.is_finite() {
            return Err(StepError::NonFinite);
        }
        Ok(())
    }

    /// Runs `steps` steps from `start`.
    pub fn integrate(&self, system: &dyn SplitSystem, start: &State, eps: f64, steps: usize) -> Result<State, StepError> {
        let mut s = start.clone();
        for _ in 0..steps {
            self.step(system, &mut s, eps)?;
        }
        Ok(s)
    }

    /// CSV trajectory: `step,q0..,p0..,energy_error`, one row every `every`
    /// steps including the start.
    pub fn trajectory_csv(
        &self,
        system: &dyn SplitSystem,
        start: &State,
        eps: f64,
        steps: usize,
        every: usize,
    ) -> Result<String, StepError> {
        let dim = system.dimension();
        let mut out = String::from("step");
        for i in 0..dim {
            write!(out, ",q{i}").unwrap();
        }
        for i in 0..dim {
            write!(out, ",p{i}").unwrap();
        }
        out.push_str(",energy_error\n");
        let e0 = system.energy(start)?;
        let mut s = start.clone();
        let every = every.max(1);
        for k in 0..=steps {
            if k > 0 {
                self.step(system, &mut s, eps)?;
            }
            if k % every == 0 || k == steps {
                write!(out, "{k}").unwrap();
                for x in s.q.iter().chain(&s.p) {
                    write!(out, ",{}", fmt_f64(*x)).unwrap();
                }
                writeln!(out, ",{}", fmt_f64(system.energy(&s)? - e0)).unwrap();
            }
        }
        Ok(out)
    }
}

/// Shortest representation that parses back to the same binary64 value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Actual step sizes (`t_final / n`), strictly decreasing.
    pub step_sizes: Vec<f64>,
    pub global_errors: Vec<f64>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    /// Number of points above [`ERROR_FLOOR`] used in the fit.
    pub points_used: usize,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,global_error\n");
        for (e, g) in self.step_sizes.iter().zip(&self.global_errors) {
            writeln!(out, "{},{}", fmt_f64(*e), fmt_f64(*g)).unwrap();
        }
        writeln!(out, "# slope={} stderr={} points={}", fmt_f64(self.fitted_slope), fmt_f64(self.slope_stderr), self.points_used)
            .unwrap();
        out
    }
}

/// Geometric list of `count` step sizes from `max` down to `min`.
pub fn geometric_steps(min: f64, max: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![max];
    }
    let ratio = (min / max).powf(1.0 / (count - 1) as f64);
    (0..count).map(|i| max * ratio.powi(i as i32)).collect()
}

/// Global error at `t_final` for each step size, and the log-log slope.
///
/// The reference is the exact flow when the system has one, otherwise a run
/// with a step 8 times finer than the finest requested.
pub fn convergence_study(
    integrator: &Integrator,
    system: &dyn SplitSystem,
    start: &State,
    t_final: f64,
    eps_list: &[f64],
) -> Result<ConvergenceReport, StepError> {
    let mut requested: Vec<f64> = eps_list.to_vec();
    requested.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (max, min) = (requested[0], *requested.last().unwrap());
    if !(max >= 10.0 * min * (1.0 - 1e-12)) {
        return Err(StepError::NarrowRange);
    }
    let mut counts: Vec<usize> = requested.iter().map(|e| ((t_final / e).round() as usize).max(1)).collect();
    counts.dedup();

    let reference = match system.exact_flow(start, t_final) {
        Some(s) => s,
        None => {
            let n = 8 * counts.last().unwrap();
            integrator.integrate(system, start, t_final / n as f64, n)?
        }
    };

    let mut step_sizes = Vec::with_capacity(counts.len());
    let mut global_errors = Vec::with_capacity(counts.len());
    for &n in &counts {
        let eps = t_final / n as f64;
        let end = integrator.integrate(system, start, eps, n)?;
        step_sizes.push(eps);
        global_errors.push(end.distance(&reference));
    }

    let (xs, ys): (Vec<f64>, Vec<f64>) =
        step_sizes.iter().zip(&global_errors).filter(|(_, &g)| g > ERROR_FLOOR).map(|(e, g)| (*e, *g)).unzip();
    if xs.len() < 2 {
        return Err(StepError::TooFewPoints);
    }
    let (fitted_slope, slope_stderr) = fit_slope(&xs, &ys);
    Ok(ConvergenceReport { step_sizes, global_errors, fitted_slope, slope_stderr, points_used: xs.len() })
}
