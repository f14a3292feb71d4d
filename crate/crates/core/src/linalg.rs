//! Dense matrix exponential and principal logarithm.
//!
//! `expm` is scaling and squaring with the diagonal Padé approximants of
//! degree 3, 5, 7, 9 and 13 (Higham 2005). `logm` is inverse scaling and
//! squaring: Denman–Beavers square roots until `X - I` is small, then the
//! partial-fraction Padé form of `log(I + Y)` with Gauss–Legendre nodes.

use nalgebra::DMatrix;
use thiserror::Error;

pub type Matrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular")]
    Singular,
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("square root iteration did not converge")]
    SqrtNotConverged,
    #[error("no principal logarithm: too many square roots needed")]
    LogBranch,
}

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152e0;

const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Coefficients of the `[m/m]` Padé numerator of `exp`.
fn pade_coefficients(m: usize) -> Vec<f64> {
    let mut b = vec![1.0; m + 1];
    for i in 1..=m {
        b[i] = b[i - 1] * (m + 1 - i) as f64 / (i * (2 * m + 1 - i)) as f64;
    }
    b
}

pub fn norm1(a: &Matrix) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn solve(q: Matrix, p: &Matrix) -> Result<Matrix, LinalgError> {
    q.lu().solve(p).ok_or(LinalgError::Singular)
}

fn square(a: &Matrix) -> Result<(), LinalgError> {
    if a.is_square() {
        Ok(())
    } else {
        Err(LinalgError::NotSquare(a.nrows(), a.ncols()))
    }
}

pub fn expm(a: &Matrix) -> Result<Matrix, LinalgError> {
    square(a)?;
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let norm = norm1(a);

    for &(m, theta) in &THETA {
        if norm <= theta {
            let b = pade_coefficients(m);
            let a2 = a * a;
            let mut u = &id * b[1];
            let mut v = &id * b[0];
            let mut power = id.clone();
            for k in 1..=m / 2 {
                power = &power * &a2;
                u += &power * b[2 * k + 1];
                v += &power * b[2 * k];
            }
            let u = a * u;
            return solve(&v - &u, &(&v + &u));
        }
    }

    let s = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let b = &B13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = &a * (&a6 * u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_inner = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let mut r = solve(&v - &u, &(&v + &u))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Principal square root by the product form of the Denman–Beavers iteration.
pub fn sqrtm(a: &Matrix) -> Result<Matrix, LinalgError> {
    square(a)?;
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let mut m = a.clone();
    let mut x = a.clone();
    for _ in 0..100 {
        let m_inv = m.clone().try_inverse().ok_or(LinalgError::Singular)?;
        x = &x * (&id + &m_inv) * 0.5;
        let next = (&id * 2.0 + &m + &m_inv) * 0.25;
        let delta = norm1(&(&next - &id));
        m = next;
        if delta <= 1e-15 * n as f64 {
            return Ok(x);
        }
    }
    Err(LinalgError::SqrtNotConverged)
}

/// Gauss–Legendre nodes and weights on [0, 1].
fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(m);
    for i in 1..=m {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out
}

const LOG_PADE_NODES: usize = 10;
const LOG_RADIUS: f64 = 0.25;

/// Principal matrix logarithm.
pub fn logm(a: &Matrix) -> Result<Matrix, LinalgError> {
    square(a)?;
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let mut x = a.clone();
    let mut roots = 0;
    while norm1(&(&x - &id)) > LOG_RADIUS {
        if roots >= 40 {
            return Err(LinalgError::LogBranch);
        }
        x = sqrtm(&x)?;
        roots += 1;
    }
    let y = &x - &id;
    let mut log = Matrix::zeros(n, n);
    for (node, weight) in gauss_legendre(LOG_PADE_NODES) {
        let denom = &id + &y * node;
        log += solve(denom, &y)? * weight;
    }
    Ok(log * 2f64.powi(roots))
}

pub fn commutator(a: &Matrix, b: &Matrix) -> Matrix {
    a * b - b * a
}
