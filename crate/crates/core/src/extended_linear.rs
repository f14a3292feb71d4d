//! Closed-form coefficient families.
//!
//! Given the drift weights `t = (0, t_2, ..., t_N)`, the extended-linear kicks
//!
//! ```text
//! v_1 = 1/2 + C2 (1 - t_2)
//! v_i = -C2 (t_i + t_{i+1})        1 < i < N
//! v_N = 1/2 + C2 (1 - t_N)
//! ```
//!
//! satisfy `e_V = 1` and `e_TV = 0` for any `C2`. The single nonlinear factor
//! `C2` is then fixed by the cube sum `delta_g = sum t_i^3`:
//!
//! - velocity type, `e_TTV = 0`: `C2 = -1/(2 phi)`, `phi = 1 - delta_g`,
//!   leaving `e_VTV = -(1/phi - 1)/24`;
//! - position type, the same map with the roles of `t` and `v` exchanged and
//!   the kicks applied first: `C2 = -1/(2 phi')`, `phi' = sqrt(1 - delta_g')`,
//!   leaving `e_VTV = -(1 - phi')/12`;
//! - linear type, `C2 = -1/2`: `v_i = (t_i + t_{i+1})/2` for every `i`, with
//!   `e_TTV = 2 e_VTV = delta_g/12`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error_kernel::{
    classify_order, delta_g, error_coefficients, Arrangement, ErrorCoefficients, Factor, KernelError, Op,
    SplitCoefficients, DEFAULT_TOL,
};

/// Entries with magnitude below this are treated as zero when reporting signs.
pub const SIGN_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructionError {
    #[error("weights must sum to 1, got sum of {which} = {sum}")]
    NotNormalised { which: &'static str, sum: f64 },
    #[error("{name} = {value} must be positive")]
    NonPositivePhi { name: &'static str, value: f64 },
    #[error("leading drift weight t_1 must be 0, got {0}")]
    LeadingDrift(f64),
    #[error("need at least {min} interior weights, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("{family}: parameter {param} = {value} is outside the domain ({reason})")]
    Domain { family: &'static str, param: &'static str, value: f64, reason: &'static str },
    #[error("{family} takes {expected} parameter(s), got {got}")]
    Arity { family: String, expected: String, got: usize },
    #[error("unknown family '{0}'")]
    UnknownFamily(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Velocity,
    Position,
    Linear,
}

/// The proportionality data behind an extended-linear set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedLinearParams {
    pub c2: f64,
    /// `1/2 - c2`
    pub c1: f64,
    /// `1 - delta_g` for velocity and linear kinds, `sqrt(1 - delta_g')` for
    /// the position kind.
    pub phi: f64,
    /// Cube sum of the free weights (`t` for velocity/linear, `v` for position).
    pub delta_g: f64,
    pub kind: FamilyKind,
}

impl ExtendedLinearParams {
    fn new(c2: f64, phi: f64, delta_g: f64, kind: FamilyKind) -> Self {
        Self { c2, c1: 0.5 - c2, phi, delta_g, kind }
    }

    /// The `e_VTV` the construction leaves behind, from its closed form.
    pub fn analytic_e_vtv(&self) -> f64 {
        match self.kind {
            FamilyKind::Velocity => -(1.0 / self.phi - 1.0) / 24.0,
            FamilyKind::Position => -(1.0 - self.phi) / 12.0,
            FamilyKind::Linear => self.delta_g / 24.0,
        }
    }

    pub fn analytic_e_ttv(&self) -> f64 {
        match self.kind {
            FamilyKind::Velocity | FamilyKind::Position => 0.0,
            FamilyKind::Linear => self.delta_g / 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Construction {
    pub coefficients: SplitCoefficients,
    pub errors: ErrorCoefficients,
    pub params: ExtendedLinearParams,
}

fn check_sum(which: &'static str, list: &[f64]) -> Result<(), ConstructionError> {
    let sum: f64 = list.iter().sum();
    if (sum - 1.0).abs() > DEFAULT_TOL {
        return Err(ConstructionError::NotNormalised { which, sum });
    }
    Ok(())
}

/// The extended-linear map from one weight list (leading entry zero) to the
/// other, for a given `C2`.
pub fn extended_linear_map(w: &[f64], c2: f64) -> Vec<f64> {
    let n = w.len();
    (0..n)
        .map(|i| match i {
            0 => 0.5 + c2 * (1.0 - w[1]),
            i if i == n - 1 => 0.5 + c2 * (1.0 - w[n - 1]),
            i => -c2 * (w[i] + w[i + 1]),
        })
        .collect()
}

fn with_leading_zero(interior: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(interior.len() + 1);
    out.push(0.0);
    out.extend_from_slice(interior);
    out
}

/// Velocity-type set from `t = (0, t_interior)`; `e_TTV = 0`.
pub fn velocity_from_t(t_interior: &[f64]) -> Result<Construction, ConstructionError> {
    if t_interior.is_empty() {
        return Err(ConstructionError::TooShort { min: 1, got: 0 });
    }
    let t = with_leading_zero(t_interior);
    check_sum("t", &t)?;
    let dg = delta_g(&t);
    let phi = 1.0 - dg;
    if phi <= 0.0 {
        return Err(ConstructionError::NonPositivePhi { name: "1 - delta_g", value: phi });
    }
    let c2 = -1.0 / (2.0 * phi);
    let v = extended_linear_map(&t, c2);
    let coefficients = SplitCoefficients::t_first(t, v)?;
    Ok(Construction {
        errors: error_coefficients(&coefficients),
        coefficients,
        params: ExtendedLinearParams::new(c2, phi, dg, FamilyKind::Velocity),
    })
}

/// Position-type set from `v = (0, v_interior)`, arranged kick-first.
///
/// The negative root for `C2` is always taken; the positive one gives
/// negative drifts.
pub fn position_from_v(v_interior: &[f64]) -> Result<Construction, ConstructionError> {
    if v_interior.is_empty() {
        return Err(ConstructionError::TooShort { min: 1, got: 0 });
    }
    let v = with_leading_zero(v_interior);
    check_sum("v", &v)?;
    let dg = delta_g(&v);
    if 1.0 - dg <= 0.0 {
        return Err(ConstructionError::NonPositivePhi { name: "1 - delta_g'", value: 1.0 - dg });
    }
    let phi = (1.0 - dg).sqrt();
    let c2 = -1.0 / (2.0 * phi);
    let t = extended_linear_map(&v, c2);
    let coefficients = SplitCoefficients::v_first(t, v)?;
    Ok(Construction {
        errors: error_coefficients(&coefficients),
        coefficients,
        params: ExtendedLinearParams::new(c2, phi, dg, FamilyKind::Position),
    })
}

/// Linear set `v_i = (t_i + t_{i+1})/2` with `t_{N+1} = 0`.
///
/// The weights need not sum to one; `e_TTV = 2 e_VTV = delta_g/12` holds
/// regardless.
pub fn linear_from_t(t: &[f64]) -> Result<Construction, ConstructionError> {
    match t.first() {
        None => return Err(ConstructionError::TooShort { min: 1, got: 0 }),
        Some(&t1) if t1 != 0.0 => return Err(ConstructionError::LeadingDrift(t1)),
        _ => {}
    }
    let n = t.len();
    let v: Vec<f64> = (0..n).map(|i| 0.5 * (t[i] + if i + 1 < n { t[i + 1] } else { 0.0 })).collect();
    let dg = delta_g(t);
    let coefficients = SplitCoefficients::t_first(t.to_vec(), v)?;
    Ok(Construction {
        errors: error_coefficients(&coefficients),
        coefficients,
        params: ExtendedLinearParams::new(-0.5, 1.0 - dg, dg, FamilyKind::Linear),
    })
}

/// Named families. Parameters are in the units of the weights they set.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `t_i = 1/(N-1)`, minimal `|e_VTV|` velocity type.
    MinimalVelocity { n: usize },
    /// `v_i = 1/(N-1)`, minimal `|e_VTV|` position type.
    MinimalPosition { n: usize },
    /// `t = (0, t2, 1 - 2 t2, t2)`.
    Alg4bda { t2: f64 },
    /// `v = (0, v2, 1 - 2 v2, v2)`, kick first.
    Alg4acb { v2: f64 },
    /// `t = (0, t2, 1/2 - t2, 1/2 - t2, t2)`.
    NineStageVelocity { t2: f64 },
    /// `v = (0, v2, 1/2 - v2, 1/2 - v2, v2)`, kick first.
    NineStagePosition { v2: f64 },
    /// `t = (0, t2, t3, 1 - 2 t2 - 2 t3, t3, t2)`.
    ElevenStageVelocity { t2: f64, t3: f64 },
    /// `v = (0, v2, v3, 1 - 2 v2 - 2 v3, v3, v2)`, kick first.
    ElevenStagePosition { v2: f64, v3: f64 },
    ForestRuth,
    /// `N = 2k`; `alphas = (alpha_2, ..., alpha_k)` with `alpha_2 = 1`.
    GeneralizedFrEven { alphas: Vec<f64> },
    /// `N = 2k + 1`, `k > 2`; `alphas = (alpha_2, ..., alpha_k)` with `alpha_2 = 1`.
    GeneralizedFrOdd { alphas: Vec<f64> },
    /// Velocity Verlet, `t = (0, 1)`, `v = (1/2, 1/2)`. Second order.
    Leapfrog,
}

/// Name + parameter form used by the CLI and JSON configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl Family {
    /// Resolves a family name and its parameter list.
    ///
    /// `4a`, `4b`, `4c` and `4d` are aliases for the families at their
    /// defining parameters.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Family, ConstructionError> {
        let key = name.trim().to_ascii_lowercase().replace('_', "-");
        let arity = |expected: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(ConstructionError::Arity { family: key.clone(), expected: expected.into(), got: params.len() })
            }
        };
        let count = |x: f64, param: &'static str| {
            if x.fract() == 0.0 && x >= 3.0 {
                Ok(x as usize)
            } else {
                Err(ConstructionError::Domain { family: "minimal", param, value: x, reason: "integer N >= 3" })
            }
        };
        let family = match key.as_str() {
            "4a" => {
                arity("0", params.is_empty())?;
                Family::MinimalVelocity { n: 3 }
            }
            "4b" => {
                arity("0", params.is_empty())?;
                Family::MinimalPosition { n: 3 }
            }
            "4c" => {
                arity("0", params.is_empty())?;
                Family::Alg4acb { v2: 3.0 / 8.0 }
            }
            "4d" => {
                arity("0", params.is_empty())?;
                Family::MinimalVelocity { n: 4 }
            }
            "leapfrog" | "verlet" => {
                arity("0", params.is_empty())?;
                Family::Leapfrog
            }
            "forest-ruth" | "fr" => {
                arity("0", params.is_empty())?;
                Family::ForestRuth
            }
            "minimal-velocity" => {
                arity("1 (N)", params.len() == 1)?;
                Family::MinimalVelocity { n: count(params[0], "N")? }
            }
            "minimal-position" => {
                arity("1 (N)", params.len() == 1)?;
                Family::MinimalPosition { n: count(params[0], "N")? }
            }
            "4bda" => {
                arity("1 (t2)", params.len() == 1)?;
                Family::Alg4bda { t2: params[0] }
            }
            "4acb" => {
                arity("1 (v2)", params.len() == 1)?;
                Family::Alg4acb { v2: params[0] }
            }
            "nine-velocity" => {
                arity("1 (t2)", params.len() == 1)?;
                Family::NineStageVelocity { t2: params[0] }
            }
            "nine-position" => {
                arity("1 (v2)", params.len() == 1)?;
                Family::NineStagePosition { v2: params[0] }
            }
            "eleven-velocity" => {
                arity("2 (t2, t3)", params.len() == 2)?;
                Family::ElevenStageVelocity { t2: params[0], t3: params[1] }
            }
            "eleven-position" => {
                arity("2 (v2, v3)", params.len() == 2)?;
                Family::ElevenStagePosition { v2: params[0], v3: params[1] }
            }
            "fr-even" => {
                arity(">= 1 (alpha_2 .. alpha_k)", !params.is_empty())?;
                Family::GeneralizedFrEven { alphas: params.to_vec() }
            }
            "fr-odd" => {
                arity(">= 2 (alpha_2 .. alpha_k)", params.len() >= 2)?;
                Family::GeneralizedFrOdd { alphas: params.to_vec() }
            }
            _ => return Err(ConstructionError::UnknownFamily(name.to_string())),
        };
        Ok(family)
    }

    pub fn from_spec(spec: &FamilySpec) -> Result<Family, ConstructionError> {
        Self::from_name(&spec.family, &spec.params)
    }

    /// Canonical name accepted by [`Family::from_name`].
    pub fn name(&self) -> &'static str {
        match self {
            Family::MinimalVelocity { .. } => "minimal-velocity",
            Family::MinimalPosition { .. } => "minimal-position",
            Family::Alg4bda { .. } => "4bda",
            Family::Alg4acb { .. } => "4acb",
            Family::NineStageVelocity { .. } => "nine-velocity",
            Family::NineStagePosition { .. } => "nine-position",
            Family::ElevenStageVelocity { .. } => "eleven-velocity",
            Family::ElevenStagePosition { .. } => "eleven-position",
            Family::ForestRuth => "forest-ruth",
            Family::GeneralizedFrEven { .. } => "fr-even",
            Family::GeneralizedFrOdd { .. } => "fr-odd",
            Family::Leapfrog => "leapfrog",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Family::MinimalVelocity { n } | Family::MinimalPosition { n } => vec![*n as f64],
            Family::Alg4bda { t2 } | Family::NineStageVelocity { t2 } => vec![*t2],
            Family::Alg4acb { v2 } | Family::NineStagePosition { v2 } => vec![*v2],
            Family::ElevenStageVelocity { t2, t3 } => vec![*t2, *t3],
            Family::ElevenStagePosition { v2, v3 } => vec![*v2, *v3],
            Family::GeneralizedFrEven { alphas } | Family::GeneralizedFrOdd { alphas } => alphas.clone(),
            Family::ForestRuth | Family::Leapfrog => vec![],
        }
    }

    /// Order the family is built to reach (with its gradient term, if any).
    pub fn claimed_order(&self) -> u8 {
        match self {
            Family::Leapfrog => 2,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyOutput {
    pub coefficients: SplitCoefficients,
    pub errors: ErrorCoefficients,
    pub params: Option<ExtendedLinearParams>,
    pub positivity: PositivityReport,
}

impl FamilyOutput {
    fn from_construction(c: Construction) -> Self {
        let positivity = positivity_report(&c.coefficients);
        Self { coefficients: c.coefficients, errors: c.errors, params: Some(c.params), positivity }
    }
}

fn domain(family: &'static str, param: &'static str, value: f64, reason: &'static str) -> ConstructionError {
    ConstructionError::Domain { family, param, value, reason }
}

/// Symmetric completion `(0, w..., centre..., reverse(w))`.
fn palindrome(head: &[f64], centre: &[f64]) -> Vec<f64> {
    let mut t = with_leading_zero(head);
    t.extend_from_slice(centre);
    t.extend(head.iter().rev());
    t
}

fn generalized_fr(alphas: &[f64], odd: bool) -> Result<Construction, ConstructionError> {
    let family = if odd { "fr-odd" } else { "fr-even" };
    let min = if odd { 2 } else { 1 };
    if alphas.len() < min {
        return Err(ConstructionError::TooShort { min, got: alphas.len() });
    }
    if alphas[0] != 1.0 {
        return Err(domain(family, "alpha_2", alphas[0], "alpha_2 is fixed to 1"));
    }
    let sum: f64 = alphas.iter().sum();
    let cube_root = alphas.iter().map(|a| a * a * a).sum::<f64>().cbrt();
    // N = 2k: one central drift t_{k+1} = -2^(1/3) R t_2
    // N = 2k+1: two equal central drifts t_{k+1} = t_{k+2} = -R t_2
    let central = if odd { -cube_root } else { -(2f64.cbrt()) * cube_root };
    let denominator = if odd { 2.0 * sum - 2.0 * cube_root } else { 2.0 * sum - 2f64.cbrt() * cube_root };
    if denominator.abs() < 1e-12 {
        return Err(domain(family, "alphas", denominator, "t_2 denominator vanishes"));
    }
    let t2 = 1.0 / denominator;
    let head: Vec<f64> = alphas.iter().map(|a| a * t2).collect();
    let centre: Vec<f64> = if odd { vec![central * t2; 2] } else { vec![central * t2] };
    linear_from_t(&palindrome(&head, &centre))
}

/// Builds a named family.
///
/// Domain violations (complex or singular coefficients) are errors; negative
/// coefficients are only recorded in the positivity report.
pub fn make_family(family: &Family) -> Result<FamilyOutput, ConstructionError> {
    let construction = match *family {
        Family::MinimalVelocity { n } => {
            if n < 3 {
                return Err(domain("minimal-velocity", "N", n as f64, "N >= 3"));
            }
            velocity_from_t(&vec![1.0 / (n - 1) as f64; n - 1])?
        }
        Family::MinimalPosition { n } => {
            if n < 3 {
                return Err(domain("minimal-position", "N", n as f64, "N >= 3"));
            }
            position_from_v(&vec![1.0 / (n - 1) as f64; n - 1])?
        }
        Family::Alg4bda { t2 } => {
            if !(t2 > 0.0 && t2 < 1.0) {
                return Err(domain("4bda", "t2", t2, "0 < t2 < 1"));
            }
            velocity_from_t(&[t2, 1.0 - 2.0 * t2, t2])?
        }
        Family::Alg4acb { v2 } => {
            if v2 <= 0.0 {
                return Err(domain("4acb", "v2", v2, "v2 > 0"));
            }
            if v2 == 1.0 {
                return Err(domain("4acb", "v2", v2, "phi' vanishes at v2 = 1"));
            }
            position_from_v(&[v2, 1.0 - 2.0 * v2, v2])?
        }
        Family::NineStageVelocity { t2 } => {
            let phi = 15.0 / 16.0 - 3.0 * (t2 - 0.25).powi(2);
            if phi <= 0.0 {
                return Err(domain("nine-velocity", "t2", t2, "phi = 15/16 - 3 (t2 - 1/4)^2 must be positive"));
            }
            velocity_from_t(&[t2, 0.5 - t2, 0.5 - t2, t2])?
        }
        Family::NineStagePosition { v2 } => {
            let phi_sq = 15.0 / 16.0 - 3.0 * (v2 - 0.25).powi(2);
            if phi_sq <= 0.0 {
                return Err(domain("nine-position", "v2", v2, "phi'^2 = 15/16 - 3 (v2 - 1/4)^2 must be positive"));
            }
            position_from_v(&[v2, 0.5 - v2, 0.5 - v2, v2])?
        }
        Family::ElevenStageVelocity { t2, t3 } => {
            let t4 = 1.0 - 2.0 * t2 - 2.0 * t3;
            let phi = 1.0 - 2.0 * t2.powi(3) - 2.0 * t3.powi(3) - t4.powi(3);
            if phi <= 0.0 {
                return Err(domain("eleven-velocity", "phi", phi, "phi must be positive"));
            }
            velocity_from_t(&[t2, t3, t4, t3, t2])?
        }
        Family::ElevenStagePosition { v2, v3 } => {
            let v4 = 1.0 - 2.0 * v2 - 2.0 * v3;
            let phi_sq = 1.0 - 2.0 * v2.powi(3) - 2.0 * v3.powi(3) - v4.powi(3);
            if phi_sq <= 0.0 {
                return Err(domain("eleven-position", "phi'^2", phi_sq, "phi'^2 must be positive"));
            }
            position_from_v(&[v2, v3, v4, v3, v2])?
        }
        Family::ForestRuth => {
            let a = 1.0 / (2.0 - 2f64.cbrt());
            linear_from_t(&[0.0, a, 1.0 - 2.0 * a, a])?
        }
        Family::GeneralizedFrEven { ref alphas } => generalized_fr(alphas, false)?,
        Family::GeneralizedFrOdd { ref alphas } => generalized_fr(alphas, true)?,
        Family::Leapfrog => {
            let coefficients = SplitCoefficients::t_first(vec![0.0, 1.0], vec![0.5, 0.5])?;
            return Ok(FamilyOutput {
                errors: error_coefficients(&coefficients),
                positivity: positivity_report(&coefficients),
                coefficients,
                params: None,
            });
        }
    };
    Ok(FamilyOutput::from_construction(construction))
}

/// Sign structure of a coefficient set. Indices are 1-based, matching the
/// `t_1 .. t_N` labels of the stored arrangement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub negative_t: Vec<usize>,
    pub negative_v: Vec<usize>,
    /// All entries non-negative.
    pub forward: bool,
    /// Pairs `(k, j)` where `t_k < 0` and an adjacent kick `v_j < 0`.
    pub negative_pairs: Vec<(usize, usize)>,
    /// For sets with all third-order conditions met (`e_VTV` included):
    /// whether some negative drift has a negative neighbouring kick.
    pub adjacent_negative_pair: Option<bool>,
}

pub fn positivity_report(c: &SplitCoefficients) -> PositivityReport {
    let neg = |list: &[f64]| -> Vec<usize> {
        list.iter().enumerate().filter(|(_, &x)| x < -SIGN_TOL).map(|(i, _)| i + 1).collect()
    };
    let negative_t = neg(&c.t);
    let negative_v = neg(&c.v);
    let forward = negative_t.is_empty() && negative_v.is_empty();

    // neighbours in the raw factor sequence; factor 2i / 2i+1 belong to pair i
    let factors: Vec<Factor> = c.factors();
    let mut negative_pairs = Vec::new();
    for (pos, f) in factors.iter().enumerate() {
        if f.op != Op::T || f.weight >= -SIGN_TOL {
            continue;
        }
        let k = pos / 2 + 1;
        for npos in [pos.checked_sub(1), Some(pos + 1)].into_iter().flatten() {
            if let Some(nb) = factors.get(npos) {
                if nb.op == Op::V && nb.weight < -SIGN_TOL {
                    negative_pairs.push((k, npos / 2 + 1));
                }
            }
        }
    }

    let class = classify_order(c, DEFAULT_TOL);
    let third_order = class.order >= 3 && class.vtv_residual.is_none();
    let adjacent_negative_pair = third_order.then_some(!negative_pairs.is_empty());
    PositivityReport { negative_t, negative_v, forward, negative_pairs, adjacent_negative_pair }
}

/// Arrangement of the family's stored coefficients.
pub fn arrangement_of(kind: FamilyKind) -> Arrangement {
    match kind {
        FamilyKind::Position => Arrangement::VFirst,
        FamilyKind::Velocity | FamilyKind::Linear => Arrangement::TFirst,
    }
}
