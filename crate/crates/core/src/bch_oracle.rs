//! Numerical extraction of BCH error coefficients.
//!
//! A splitting is applied to a random non-commuting matrix pair `(T, V)` and
//! the defect `L(eps) = log(prod) - eps (T + V)` is projected onto the
//! commutator basis. Using both signs of `eps` separates the series exactly
//! into its even part (`eps^2 e_TV [T,V] + O(eps^4)`) and odd part
//! (`eps (e_T - 1) T + eps (e_V - 1) V + eps^3 (...) + O(eps^5)`), so each
//! projected coefficient is a power series in `eps^2` and is extrapolated to
//! `eps = 0` by a weighted polynomial fit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error_kernel::{Op, SplitCoefficients};
use crate::linalg::{commutator, expm, logm, LinalgError, Matrix};

pub const DEFAULT_DIM: usize = 4;
pub const DEFAULT_SEED: u64 = 0x5EED;
/// Gram matrices of the commutator basis must be better conditioned than this.
pub const MAX_GRAM_CONDITION: f64 = 1e6;
/// Defect norms below this are treated as roundoff when fitting orders. The
/// roundoff plateau of `L(eps)` for unit-scale 4x4 pairs sits near 1e-15.
pub const NOISE_FLOOR: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("matrix dimension {0} is below 3")]
    Dimension(usize),
    #[error("commutator basis is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("could not draw a usable matrix pair in {0} attempts")]
    Degenerate(usize),
    #[error("step grid needs at least 3 strictly decreasing positive values")]
    Grid,
    #[error("extrapolation did not converge: {what} changes by {change:.3e} between fit degrees")]
    NotConverged { what: &'static str, change: f64 },
    #[error("too few points above the noise floor to fit an order")]
    NoSignal,
    #[error("matrix function failed at eps = {eps}: {source}")]
    Linalg { eps: f64, source: LinalgError },
}

/// Default step grid: `2^-4, ..., 2^-10`.
pub fn default_grid() -> Vec<f64> {
    (4..=10).map(|k| 2f64.powi(-k)).collect()
}

/// The commutator basis of a pair, in the order `T, V, [T,V], [T,[T,V]], [V,[T,V]]`.
#[derive(Debug, Clone)]
pub struct Basis {
    pub t: Matrix,
    pub v: Matrix,
    pub tv: Matrix,
    pub ttv: Matrix,
    pub vtv: Matrix,
}

impl Basis {
    fn new(t: &Matrix, v: &Matrix) -> Self {
        let tv = commutator(t, v);
        let ttv = commutator(t, &tv);
        let vtv = commutator(v, &tv);
        Self { t: t.clone(), v: v.clone(), tv, ttv, vtv }
    }

    fn elements(&self) -> [&Matrix; 5] {
        [&self.t, &self.v, &self.tv, &self.ttv, &self.vtv]
    }

    fn gram(&self) -> DMatrix<f64> {
        let e = self.elements();
        DMatrix::from_fn(5, 5, |i, j| e[i].dot(e[j]))
    }

    /// Condition number of the Frobenius Gram matrix.
    pub fn condition(&self) -> f64 {
        let eig = self.gram().symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.iter().cloned().fold(f64::MAX, f64::min);
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Least-squares coordinates of `m` in the basis.
    fn project(&self, m: &Matrix) -> [f64; 5] {
        let e = self.elements();
        let rhs = DVector::from_iterator(5, e.iter().map(|b| b.dot(m)));
        let x = self.gram().cholesky().expect("basis Gram matrix is positive definite").solve(&rhs);
        [x[0], x[1], x[2], x[3], x[4]]
    }
}

/// A random non-commuting pair with its commutator basis.
#[derive(Debug, Clone)]
pub struct MatrixPair {
    pub t: Matrix,
    pub v: Matrix,
    pub seed: u64,
    basis: Basis,
}

impl MatrixPair {
    /// Draws `T` and `V` with entries uniform in [-1, 1]. Draws whose
    /// commutator basis is degenerate or ill-conditioned are replaced by the
    /// next draw of the same stream.
    pub fn random(dim: usize, seed: u64) -> Result<Self, OracleError> {
        if dim < 3 {
            return Err(OracleError::Dimension(dim));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        const ATTEMPTS: usize = 32;
        for _ in 0..ATTEMPTS {
            let t = Matrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..=1.0));
            let v = Matrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..=1.0));
            if let Ok(pair) = Self::from_matrices(t, v, seed) {
                return Ok(pair);
            }
        }
        Err(OracleError::Degenerate(ATTEMPTS))
    }

    pub fn from_matrices(t: Matrix, v: Matrix, seed: u64) -> Result<Self, OracleError> {
        let basis = Basis::new(&t, &v);
        let cond = basis.condition();
        if !(cond < MAX_GRAM_CONDITION) {
            return Err(OracleError::IllConditioned(cond));
        }
        Ok(Self { t, v, seed, basis })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn scaled(&self, a: f64, b: f64) -> Result<Self, OracleError> {
        Self::from_matrices(&self.t * a, &self.v * b, self.seed)
    }
}

/// Weight of an extra `exp(eps^3 c [V,[T,V]])` factor attached to each kick.
fn product(c: &SplitCoefficients, gradient: Option<&[f64]>, pair: &MatrixPair, eps: f64) -> Result<Matrix, OracleError> {
    let n = pair.t.nrows();
    let mut out = Matrix::identity(n, n);
    let lin = |source| OracleError::Linalg { eps, source };
    for (pos, f) in c.factors().iter().enumerate() {
        let index = pos / 2;
        let grad = gradient.map_or(0.0, |g| g[index]);
        let generator = match f.op {
            Op::T if f.weight == 0.0 => continue,
            Op::T => &pair.t * (f.weight * eps),
            Op::V if f.weight == 0.0 && grad == 0.0 => continue,
            Op::V => &pair.v * (f.weight * eps) + &pair.basis.vtv * (grad * eps.powi(3)),
        };
        out *= expm(&generator).map_err(lin)?;
    }
    Ok(out)
}

fn defect(c: &SplitCoefficients, gradient: Option<&[f64]>, pair: &MatrixPair, eps: f64) -> Result<Matrix, OracleError> {
    let p = product(c, gradient, pair, eps)?;
    let log = logm(&p).map_err(|source| OracleError::Linalg { eps, source })?;
    Ok(log - (&pair.t + &pair.v) * eps)
}

/// `log(prod_i exp(t_i eps T) exp(v_i eps V)) - eps (T + V)`, in the stored
/// arrangement.
pub fn product_defect(c: &SplitCoefficients, pair: &MatrixPair, eps: f64) -> Result<Matrix, OracleError> {
    defect(c, None, pair, eps)
}

/// Least-squares fit of `y = a0 + a1 x + ... + a_deg x^deg` with weights;
/// returns `a0`.
fn weighted_intercept(x: &[f64], y: &[f64], w: &[f64], deg: usize) -> f64 {
    let rows = x.len();
    let a = DMatrix::from_fn(rows, deg + 1, |i, j| w[i].sqrt() * x[i].powi(j as i32));
    let b = DVector::from_iterator(rows, y.iter().zip(w).map(|(y, w)| w.sqrt() * y));
    let svd = a.svd(true, true);
    let sol = svd.solve(&b, 1e-14).expect("svd solve");
    sol[0]
}

/// Log-log slope of `y` against `x` by least squares, with its standard error.
pub fn fit_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let stderr = if x.len() > 2 {
        let intercept = my - slope * mx;
        let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, stderr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub e_t: f64,
    pub e_v: f64,
    pub e_tv: f64,
    pub e_ttv: f64,
    pub e_vtv: f64,
    /// `e_T = e_V = 1` within 1e-8.
    pub primary_ok: bool,
    /// Fitted exponent of `||L(eps) - fitted terms||`.
    pub residual_order: f64,
    pub residual_order_stderr: f64,
    /// Step sizes whose residual was above the noise floor and entered the
    /// order fit.
    pub residual_points: usize,
    pub epsilons_used: Vec<f64>,
}

const EXTRAPOLATION_DEGREE: usize = 3;
/// Largest change in an extrapolated coefficient between fit degrees
/// `EXTRAPOLATION_DEGREE - 1` and `EXTRAPOLATION_DEGREE`.
const EXTRAPOLATION_TOL: f64 = 1e-7;

fn check_grid(grid: &[f64]) -> Result<(), OracleError> {
    let decreasing = grid.windows(2).all(|w| w[1] < w[0]);
    if grid.len() < 3 || !decreasing || grid.iter().any(|&e| !(e > 0.0)) {
        return Err(OracleError::Grid);
    }
    Ok(())
}

pub fn extract_error_coefficients(
    c: &SplitCoefficients,
    pair: &MatrixPair,
    grid: &[f64],
) -> Result<ExtractionResult, OracleError> {
    check_grid(grid)?;
    let basis = pair.basis();
    let mut even = Vec::with_capacity(grid.len());
    let mut odd = Vec::with_capacity(grid.len());
    let mut full = Vec::with_capacity(grid.len());
    for &eps in grid {
        let plus = product_defect(c, pair, eps)?;
        let minus = product_defect(c, pair, -eps)?;
        even.push(basis.project(&((&plus + &minus) * 0.5)));
        odd.push(basis.project(&((&plus - &minus) * 0.5)));
        full.push(plus);
    }

    let x: Vec<f64> = grid.iter().map(|e| e * e).collect();
    // roundoff in the defect is roughly constant, so the coefficient
    // divided by eps^p carries noise ~ eps^-p: weight by eps^(2p)
    let extrapolate = |what: &'static str, power: i32, pick: &dyn Fn(usize) -> f64| -> Result<f64, OracleError> {
        let y: Vec<f64> = (0..grid.len()).map(|i| pick(i) / grid[i].powi(power)).collect();
        let w: Vec<f64> = grid.iter().map(|e| e.powi(2 * power)).collect();
        let deg = EXTRAPOLATION_DEGREE.min(grid.len() - 1);
        let hi = weighted_intercept(&x, &y, &w, deg);
        let lo = weighted_intercept(&x, &y, &w, deg - 1);
        let change = (hi - lo).abs();
        if change > EXTRAPOLATION_TOL * (1.0 + hi.abs()) {
            return Err(OracleError::NotConverged { what, change });
        }
        Ok(hi)
    };

    let e_t = 1.0 + extrapolate("e_T", 1, &|i| odd[i][0])?;
    let e_v = 1.0 + extrapolate("e_V", 1, &|i| odd[i][1])?;
    let e_tv = extrapolate("e_TV", 2, &|i| even[i][2])?;
    let e_ttv = extrapolate("e_TTV", 3, &|i| odd[i][3])?;
    let e_vtv = extrapolate("e_VTV", 3, &|i| odd[i][4])?;

    let mut xs = Vec::new();
    let mut rs = Vec::new();
    for (i, &eps) in grid.iter().enumerate() {
        let model = &basis.t * ((e_t - 1.0) * eps)
            + &basis.v * ((e_v - 1.0) * eps)
            + &basis.tv * (e_tv * eps * eps)
            + (&basis.ttv * e_ttv + &basis.vtv * e_vtv) * eps.powi(3);
        let r = (&full[i] - model).norm();
        if r > NOISE_FLOOR {
            xs.push(eps);
            rs.push(r);
        }
    }
    let (residual_order, residual_order_stderr) =
        if xs.len() >= 2 { fit_slope(&xs, &rs) } else { (f64::NAN, f64::NAN) };

    Ok(ExtractionResult {
        e_t,
        e_v,
        e_tv,
        e_ttv,
        e_vtv,
        primary_ok: (e_t - 1.0).abs() <= 1e-8 && (e_v - 1.0).abs() <= 1e-8,
        residual_order,
        residual_order_stderr,
        residual_points: xs.len(),
        epsilons_used: grid.to_vec(),
    })
}

/// Outcome of attaching `[V,[T,V]]` factors to the kicks of a splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Fitted exponent of `||L(eps)||` with the factors attached.
    pub defect_order: f64,
    /// Order required for success: 4.8 for palindromic sets, 3.8 otherwise.
    pub required_order: f64,
    pub passed: bool,
}

/// Attaches `exp(eps^3 c_i [V,[T,V]])` to the `i`-th kick (`c` aligned with
/// the `v` list) and measures the order of the resulting defect.
///
/// With `sum c_i = -e_VTV` the third-order term cancels and the defect is
/// `O(eps^4)`, or `O(eps^5)` for palindromic sequences.
pub fn verify_gradient_realization(
    c: &SplitCoefficients,
    gradient_weights: &[f64],
    pair: &MatrixPair,
) -> Result<GradientCheck, OracleError> {
    assert_eq!(gradient_weights.len(), c.len(), "one gradient weight per kick");
    let defect_order = defect_order(c, Some(gradient_weights), pair, &default_grid())?;
    let required_order = if c.is_palindromic(1e-12) { 4.8 } else { 3.8 };
    Ok(GradientCheck { defect_order, required_order, passed: defect_order >= required_order })
}

/// Fitted exponent of `||L(eps)||` over the grid, ignoring points below the
/// noise floor.
pub fn defect_order(
    c: &SplitCoefficients,
    gradient: Option<&[f64]>,
    pair: &MatrixPair,
    grid: &[f64],
) -> Result<f64, OracleError> {
    check_grid(grid)?;
    let mut xs = Vec::new();
    let mut ns = Vec::new();
    for &eps in grid {
        let n = defect(c, gradient, pair, eps)?.norm();
        if n > NOISE_FLOOR {
            xs.push(eps);
            ns.push(n);
        }
    }
    if xs.len() < 2 {
        return Err(OracleError::NoSignal);
    }
    Ok(fit_slope(&xs, &ns).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_kernel::error_coefficients;
    use crate::extended_linear::{make_family, Family};

    fn pair() -> MatrixPair {
        MatrixPair::random(DEFAULT_DIM, DEFAULT_SEED).unwrap()
    }

    fn tf(t: &[f64], v: &[f64]) -> SplitCoefficients {
        SplitCoefficients::t_first(t.to_vec(), v.to_vec()).unwrap()
    }

    fn verlet() -> SplitCoefficients {
        tf(&[0.0, 1.0], &[0.5, 0.5])
    }

    #[test]
    fn commuting_pair_has_no_defect() {
        let t = Matrix::from_diagonal(&DVector::from_vec(vec![0.3, -0.2, 0.9, 0.1]));
        let v = Matrix::from_diagonal(&DVector::from_vec(vec![-0.5, 0.4, 0.2, 0.7]));
        let basis = Basis::new(&t, &v);
        // built directly: the pair constructor would reject the degenerate basis
        let pair = MatrixPair { t, v, seed: 0, basis };
        let fr = make_family(&Family::ForestRuth).unwrap().coefficients;
        for c in [verlet(), fr] {
            for eps in [0.1, 0.01] {
                assert!(product_defect(&c, &pair, eps).unwrap().norm() < 1e-14);
            }
        }
    }

    #[test]
    fn degenerate_pairs_are_rejected() {
        let t = Matrix::identity(4, 4);
        let v = Matrix::from_fn(4, 4, |i, j| (i + j) as f64);
        assert!(matches!(MatrixPair::from_matrices(t, v, 0), Err(OracleError::IllConditioned(_))));
        assert_eq!(MatrixPair::random(2, 1).unwrap_err(), OracleError::Dimension(2));
    }

    #[test]
    fn verlet_defect_is_third_order() {
        let p = pair();
        let c = verlet();
        let e = error_coefficients(&c);
        let eps = 1e-2;
        let l = product_defect(&c, &p, eps).unwrap();
        let bound = eps.powi(3) * (e.e_ttv * p.basis.ttv.norm() + e.e_vtv * p.basis.vtv.norm()) * 1.1;
        assert!(l.norm() <= bound, "{} > {}", l.norm(), bound);
        let predicted = (&p.basis.ttv * e.e_ttv + &p.basis.vtv * e.e_vtv) * eps.powi(3);
        assert!((&l - predicted).norm() < 1e-8 * eps.powi(3) * 1e3);
    }

    #[test]
    fn single_split_leading_term() {
        let p = pair();
        let eps = 1e-2;
        let l = product_defect(&tf(&[1.0], &[1.0]), &p, eps).unwrap();
        let lead = &p.basis.tv * (0.5 * eps * eps);
        assert!((&l - &lead).norm() <= 10.0 * eps.powi(3) * p.basis.ttv.norm().max(p.basis.vtv.norm()));
    }

    #[test]
    fn extraction_4a() {
        let c = make_family(&Family::MinimalVelocity { n: 3 }).unwrap().coefficients;
        let r = extract_error_coefficients(&c, &pair(), &default_grid()).unwrap();
        assert!(r.primary_ok);
        assert!(r.e_tv.abs() < 1e-6);
        assert!(r.e_ttv.abs() < 1e-6);
        assert!((r.e_vtv + 1.0 / 72.0).abs() < 1e-6, "{}", r.e_vtv);
    }

    #[test]
    fn extraction_forest_ruth() {
        let c = make_family(&Family::ForestRuth).unwrap().coefficients;
        let r = extract_error_coefficients(&c, &pair(), &default_grid()).unwrap();
        assert!(r.e_tv.abs() < 1e-10);
        assert!(r.e_ttv.abs() < 1e-6 && r.e_vtv.abs() < 1e-6);
        assert!(r.residual_order > 4.8, "{}", r.residual_order);
    }

    #[test]
    fn extraction_flags_identity_splitting() {
        let r = extract_error_coefficients(&tf(&[1.0], &[0.0]), &pair(), &default_grid()).unwrap();
        assert!(!r.primary_ok);
        assert!(r.e_v.abs() < 1e-10);
        assert!((r.e_t - 1.0).abs() < 1e-10);
        assert!(r.e_tv.abs() < 1e-10 && r.e_ttv.abs() < 1e-10 && r.e_vtv.abs() < 1e-10);
    }

    #[test]
    fn grid_is_validated() {
        let c = verlet();
        assert_eq!(extract_error_coefficients(&c, &pair(), &[0.1, 0.05]).unwrap_err(), OracleError::Grid);
        assert_eq!(extract_error_coefficients(&c, &pair(), &[0.01, 0.05, 0.1]).unwrap_err(), OracleError::Grid);
    }

    #[test]
    fn gradient_factor_sign() {
        let p = pair();
        let c = make_family(&Family::MinimalVelocity { n: 3 }).unwrap().coefficients;
        let good = verify_gradient_realization(&c, &[0.0, 1.0 / 72.0, 0.0], &p).unwrap();
        assert!(good.passed && good.defect_order >= 4.8, "{good:?}");
        let bad = verify_gradient_realization(&c, &[0.0, -1.0 / 72.0, 0.0], &p).unwrap();
        assert!(!bad.passed);
        assert!((bad.defect_order - 3.0).abs() < 0.2, "{bad:?}");

        let fr = make_family(&Family::ForestRuth).unwrap().coefficients;
        let zero = verify_gradient_realization(&fr, &[0.0; 4], &p).unwrap();
        assert!(zero.passed, "{zero:?}");
    }

    #[test]
    fn scale_covariance() {
        // Coordinates in the scaled pair's own basis are unchanged, so in the
        // original basis e_TTV picks up a^2 b and e_VTV picks up a b^2.
        let p = pair();
        let (a, b) = (0.7, 1.3);
        let scaled = p.scaled(a, b).unwrap();
        let c = make_family(&Family::Alg4bda { t2: 0.3 }).unwrap().coefficients;
        let base = extract_error_coefficients(&c, &p, &default_grid()).unwrap();
        let r = extract_error_coefficients(&c, &scaled, &default_grid()).unwrap();
        assert!((r.e_ttv - base.e_ttv).abs() < 1e-6);
        assert!((r.e_vtv - base.e_vtv).abs() < 1e-6);
        let eps = 1e-2;
        let l = product_defect(&c, &scaled, eps).unwrap();
        let coords = p.basis.project(&l);
        assert!((coords[4] / eps.powi(3) - a * b * b * base.e_vtv).abs() < 1e-4);
    }
}
