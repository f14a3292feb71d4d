//! Leading Baker–Campbell–Hausdorff error coefficients of a splitting.
//!
//! A splitting is the product of exponentials
//!
//! ```text
//! prod_i exp(t_i eps T) exp(v_i eps V)
//!   = exp( eps e_T T + eps e_V V + eps^2 e_TV [T,V]
//!          + eps^3 e_TTV [T,[T,V]] + eps^3 e_VTV [V,[T,V]] + ... )
//! ```
//!
//! and everything here is a closed-form function of the weight lists.
//! With `s_i` the prefix sums of `t` and `u_i` the suffix sums of `v`,
//!
//! ```text
//! P  = sum_i (s_i - s_{i-1}) u_i
//! Q  = 1/2 sum_i (s_i^2 - s_{i-1}^2) u_i
//! M  = sum_i (s_i - s_{i-1}) u_i^2
//!
//! e_TV  = P - e_T e_V / 2
//! e_TTV = Q - e_T P / 2 + e_T^2 e_V / 12
//! e_VTV = e_V P / 2 - M / 2 - e_T e_V^2 / 12
//! ```
//!
//! Under the primary constraints `e_T = e_V = 1` these are the familiar
//! `1/2 + e_TV = P`, `1/6 + e_TV/2 + e_TTV = Q` and
//! `1/6 + e_TV/2 - e_VTV = M/2`. The general form keeps sets that violate
//! the primary constraints (the identity splitting, unnormalised linear sets)
//! consistent with the matrix oracle in [`crate::bch_oracle`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when classifying closed-form coefficient sets.
pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("coefficient lists are empty")]
    Empty,
    #[error("t has {t} entries but v has {v}")]
    LengthMismatch { t: usize, v: usize },
    #[error("coefficient {which}[{index}] is not finite")]
    NonFinite { which: &'static str, index: usize },
    #[error("primary constraint violated: sum of {which} is {sum}, expected 1")]
    PrimaryConstraint { which: &'static str, sum: f64 },
}

/// Order in which the two exponentials of each pair are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arrangement {
    /// `prod_i exp(t_i eps T) exp(v_i eps V)`
    #[serde(rename = "t_first")]
    TFirst,
    /// `prod_i exp(v_i eps V) exp(t_i eps T)`
    #[serde(rename = "v_first")]
    VFirst,
}

/// One of the two non-commuting generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    T,
    V,
}

/// A single exponential `exp(weight * eps * op)` in a product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factor {
    pub op: Op,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCoefficients {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub arrangement: Arrangement,
}

impl SplitCoefficients {
    pub fn new(t: Vec<f64>, v: Vec<f64>, arrangement: Arrangement) -> Result<Self, KernelError> {
        if t.is_empty() && v.is_empty() {
            return Err(KernelError::Empty);
        }
        if t.len() != v.len() {
            return Err(KernelError::LengthMismatch { t: t.len(), v: v.len() });
        }
        for (which, list) in [("t", &t), ("v", &v)] {
            if let Some(index) = list.iter().position(|x| !x.is_finite()) {
                return Err(KernelError::NonFinite { which, index });
            }
        }
        Ok(Self { t, v, arrangement })
    }

    pub fn t_first(t: Vec<f64>, v: Vec<f64>) -> Result<Self, KernelError> {
        Self::new(t, v, Arrangement::TFirst)
    }

    pub fn v_first(t: Vec<f64>, v: Vec<f64>) -> Result<Self, KernelError> {
        Self::new(t, v, Arrangement::VFirst)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Re-expresses the product in T-first form.
    ///
    /// A V-first set with `v_1 = 0` maps to `v' = (v_2, ..., v_N, 0)` with
    /// `t` unchanged. Otherwise a leading zero drift is prepended, giving
    /// `t' = (0, t_1, ..., t_N)` and `v' = (v_1, ..., v_N, 0)`.
    pub fn to_t_first(&self) -> SplitCoefficients {
        match self.arrangement {
            Arrangement::TFirst => self.clone(),
            Arrangement::VFirst if self.v[0] == 0.0 => {
                let mut v: Vec<f64> = self.v[1..].to_vec();
                v.push(0.0);
                SplitCoefficients { t: self.t.clone(), v, arrangement: Arrangement::TFirst }
            }
            Arrangement::VFirst => {
                let mut t = Vec::with_capacity(self.t.len() + 1);
                t.push(0.0);
                t.extend_from_slice(&self.t);
                let mut v = self.v.clone();
                v.push(0.0);
                SplitCoefficients { t, v, arrangement: Arrangement::TFirst }
            }
        }
    }

    /// Factors in application order, zero weights included.
    pub fn factors(&self) -> Vec<Factor> {
        let mut out = Vec::with_capacity(2 * self.len());
        for (&t, &v) in self.t.iter().zip(&self.v) {
            let (a, b) = match self.arrangement {
                Arrangement::TFirst => (Factor { op: Op::T, weight: t }, Factor { op: Op::V, weight: v }),
                Arrangement::VFirst => (Factor { op: Op::V, weight: v }, Factor { op: Op::T, weight: t }),
            };
            out.push(a);
            out.push(b);
        }
        out
    }

    /// Factors with |weight| <= tol dropped and adjacent same-operator
    /// factors merged.
    pub fn compressed(&self, tol: f64) -> Vec<Factor> {
        compress(&self.factors(), tol)
    }

    /// True when the effective operator sequence reads the same both ways.
    pub fn is_palindromic(&self, tol: f64) -> bool {
        let seq = self.compressed(tol);
        let n = seq.len();
        (0..n / 2).all(|i| {
            let (a, b) = (seq[i], seq[n - 1 - i]);
            a.op == b.op && (a.weight - b.weight).abs() <= tol
        })
    }

    /// Same effective operator sequence after compression.
    pub fn equivalent(&self, other: &SplitCoefficients, tol: f64) -> bool {
        let (a, b) = (self.compressed(tol), other.compressed(tol));
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.op == y.op && (x.weight - y.weight).abs() <= tol)
    }

    pub fn sum_t(&self) -> f64 {
        self.t.iter().sum()
    }

    pub fn sum_v(&self) -> f64 {
        self.v.iter().sum()
    }
}

pub fn compress(factors: &[Factor], tol: f64) -> Vec<Factor> {
    let mut out: Vec<Factor> = Vec::with_capacity(factors.len());
    for f in factors {
        if f.weight.abs() <= tol {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.op == f.op => last.weight += f.weight,
            _ => out.push(*f),
        }
    }
    // merging can produce new zeros (e.g. a + (-a)); drop them and re-merge
    if out.iter().any(|f| f.weight.abs() <= tol) {
        return compress(&out, tol);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCoefficients {
    pub e_t: f64,
    pub e_v: f64,
    pub e_tv: f64,
    pub e_ttv: f64,
    pub e_vtv: f64,
}

/// Partial sums of a T-first set.
///
/// `s[i]` is `s_i` for `i = 0..=N` (so `s[0] = 0`); `u[i]` is `u_{i+1}` for
/// `i = 0..=N` (so `u[N] = u_{N+1} = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixSums {
    pub s: Vec<f64>,
    pub u: Vec<f64>,
}

impl PrefixSums {
    /// `s_i^n - s_{i-1}^n` for `i` in `1..=N`.
    pub fn backward_difference(&self, n: i32, i: usize) -> f64 {
        self.s[i].powi(n) - self.s[i - 1].powi(n)
    }

    /// `u_1, ..., u_N` without the trailing zero.
    pub fn u_head(&self) -> &[f64] {
        &self.u[..self.u.len() - 1]
    }
}

/// Prefix sums of `t` and suffix sums of `v`, taken on the T-first form.
pub fn prefix_suffix_sums(c: &SplitCoefficients) -> PrefixSums {
    let c = c.to_t_first();
    let n = c.len();
    let mut s = Vec::with_capacity(n + 1);
    s.push(0.0);
    for &t in &c.t {
        s.push(s.last().unwrap() + t);
    }
    let mut u = vec![0.0; n + 1];
    for i in (0..n).rev() {
        u[i] = u[i + 1] + c.v[i];
    }
    PrefixSums { s, u }
}

pub fn error_coefficients(c: &SplitCoefficients) -> ErrorCoefficients {
    let sums = prefix_suffix_sums(c);
    let n = sums.s.len() - 1;
    let e_t = sums.s[n];
    let e_v = sums.u[0];

    let (mut p, mut q, mut m) = (0.0, 0.0, 0.0);
    for i in 1..=n {
        let u = sums.u[i - 1];
        let ds = sums.s[i] - sums.s[i - 1];
        p += ds * u;
        q += 0.5 * sums.backward_difference(2, i) * u;
        m += ds * u * u;
    }

    ErrorCoefficients {
        e_t,
        e_v,
        e_tv: p - 0.5 * e_t * e_v,
        e_ttv: q - 0.5 * e_t * p + e_t * e_t * e_v / 12.0,
        e_vtv: 0.5 * e_v * p - 0.5 * m - e_t * e_v * e_v / 12.0,
    }
}

/// Cube sum of the weights.
pub fn delta_g(t: &[f64]) -> f64 {
    t.iter().map(|x| x * x * x).sum()
}

/// `g = sum_i s_i s_{i-1} (s_i - s_{i-1})`, which equals `(1 - delta_g)/3`
/// when the weights sum to one.
///
/// Terms with `t_i = 0` contribute exactly zero, so leading zero drifts are
/// harmless.
pub fn g_sum(t: &[f64]) -> Result<f64, KernelError> {
    let total: f64 = t.iter().sum();
    if (total - 1.0).abs() > DEFAULT_TOL {
        return Err(KernelError::PrimaryConstraint { which: "t", sum: total });
    }
    let mut prev = 0.0;
    let mut g = 0.0;
    for &ti in t {
        let cur = prev + ti;
        g += cur * prev * ti;
        prev = cur;
    }
    Ok(g)
}

/// Result of [`classify_order`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderClass {
    /// Largest order whose conditions hold, counting an `e_VTV` residual
    /// as removable by a force-gradient term (see `vtv_residual`).
    pub order: u8,
    /// Effective operator sequence is a palindrome.
    pub symmetric: bool,
    /// `Some(e_VTV)` when every condition through third order holds except
    /// `e_VTV = 0`. Such a set is second order on its own and needs an
    /// attached `[V,[T,V]]` term of total weight `-e_VTV`.
    pub vtv_residual: Option<f64>,
}

impl OrderClass {
    /// Order of the bare product, with no gradient term attached.
    pub fn without_gradient(&self) -> u8 {
        if self.vtv_residual.is_some() {
            2
        } else {
            self.order
        }
    }

    /// Order once the `e_VTV` residual is absorbed by a gradient term.
    pub fn with_gradient(&self) -> u8 {
        match self.vtv_residual {
            Some(_) if self.symmetric => 4,
            _ => self.order,
        }
    }
}

pub fn classify_order(c: &SplitCoefficients, tol: f64) -> OrderClass {
    let e = error_coefficients(c);
    let symmetric = c.is_palindromic(tol);
    let mut class = OrderClass { order: 0, symmetric, vtv_residual: None };

    if (e.e_t - 1.0).abs() > tol || (e.e_v - 1.0).abs() > tol {
        return class;
    }
    class.order = 1;
    if e.e_tv.abs() > tol {
        return class;
    }
    class.order = 2;
    if e.e_ttv.abs() > tol {
        return class;
    }
    class.order = 3;
    if e.e_vtv.abs() > tol {
        class.vtv_residual = Some(e.e_vtv);
        return class;
    }
    if symmetric {
        class.order = 4;
    }
    class
}

/// On-disk form of a coefficient set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFile {
    pub name: String,
    pub arrangement: Arrangement,
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    /// Analytic `e_VTV` to be absorbed by a gradient term, if any.
    pub e_vtv: Option<f64>,
}

impl CoefficientFile {
    pub fn new(name: impl Into<String>, c: &SplitCoefficients, e_vtv: Option<f64>) -> Self {
        Self {
            name: name.into(),
            arrangement: c.arrangement,
            t: c.t.clone(),
            v: c.v.clone(),
            e_vtv,
        }
    }

    pub fn coefficients(&self) -> Result<SplitCoefficients, KernelError> {
        SplitCoefficients::new(self.t.clone(), self.v.clone(), self.arrangement)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("coefficient file serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tf(t: &[f64], v: &[f64]) -> SplitCoefficients {
        SplitCoefficients::t_first(t.to_vec(), v.to_vec()).unwrap()
    }

    fn forest_ruth() -> SplitCoefficients {
        let a = 1.0 / (2.0 - 2f64.cbrt());
        let t = vec![0.0, a, 1.0 - 2.0 * a, a];
        let v = vec![a / 2.0, (1.0 - a) / 2.0, (1.0 - a) / 2.0, a / 2.0];
        tf(&t, &v)
    }

    /// Truncated non-commutative power series in the letters T and V, kept
    /// up to total degree three. Words are encoded as (length, bits) with
    /// bit = 1 for V.
    mod series {
        use std::collections::BTreeMap;

        pub type Word = (u8, u8);
        #[derive(Clone, Default, Debug)]
        pub struct Series(pub BTreeMap<Word, f64>);

        impl Series {
            pub fn one() -> Self {
                let mut m = BTreeMap::new();
                m.insert((0, 0), 1.0);
                Series(m)
            }
            pub fn letter(is_v: bool, w: f64) -> Self {
                let mut m = BTreeMap::new();
                m.insert((1, is_v as u8), w);
                Series(m)
            }
            pub fn add(&self, o: &Series, k: f64) -> Series {
                let mut m = self.0.clone();
                for (w, c) in &o.0 {
                    *m.entry(*w).or_insert(0.0) += k * c;
                }
                Series(m)
            }
            pub fn mul(&self, o: &Series) -> Series {
                let mut m = BTreeMap::new();
                for ((la, ba), ca) in &self.0 {
                    for ((lb, bb), cb) in &o.0 {
                        if la + lb > 3 {
                            continue;
                        }
                        let w = (la + lb, (ba << lb) | bb);
                        *m.entry(w).or_insert(0.0) += ca * cb;
                    }
                }
                Series(m)
            }
            pub fn exp_letter(is_v: bool, w: f64) -> Series {
                let x = Series::letter(is_v, w);
                let x2 = x.mul(&x);
                let x3 = x2.mul(&x);
                Series::one().add(&x, 1.0).add(&x2, 0.5).add(&x3, 1.0 / 6.0)
            }
            pub fn log(&self) -> Series {
                let y = self.add(&Series::one(), -1.0);
                let y2 = y.mul(&y);
                let y3 = y2.mul(&y);
                Series::default().add(&y, 1.0).add(&y2, -0.5).add(&y3, 1.0 / 3.0)
            }
            pub fn coeff(&self, word: &str) -> f64 {
                let bits = word.chars().fold(0u8, |acc, ch| (acc << 1) | (ch == 'V') as u8);
                *self.0.get(&(word.len() as u8, bits)).unwrap_or(&0.0)
            }
        }
    }

    /// Brute-force BCH coefficients from the formal series of the product.
    /// [T,V] = TV - VT, [T,[T,V]] = TTV - 2TVT + VTT and
    /// [V,[T,V]] = 2VTV - VVT - TVV, so the words TV, TTV and VVT isolate
    /// e_TV, e_TTV and -e_VTV.
    fn series_oracle(c: &SplitCoefficients) -> ErrorCoefficients {
        let mut prod = series::Series::one();
        for f in c.factors() {
            prod = prod.mul(&series::Series::exp_letter(f.op == Op::V, f.weight));
        }
        let log = prod.log();
        ErrorCoefficients {
            e_t: log.coeff("T"),
            e_v: log.coeff("V"),
            e_tv: log.coeff("TV"),
            e_ttv: log.coeff("TTV"),
            e_vtv: -log.coeff("VVT"),
        }
    }

    fn assert_coeffs(a: ErrorCoefficients, b: ErrorCoefficients, tol: f64) {
        assert_abs_diff_eq!(a.e_t, b.e_t, epsilon = tol);
        assert_abs_diff_eq!(a.e_v, b.e_v, epsilon = tol);
        assert_abs_diff_eq!(a.e_tv, b.e_tv, epsilon = tol);
        assert_abs_diff_eq!(a.e_ttv, b.e_ttv, epsilon = tol);
        assert_abs_diff_eq!(a.e_vtv, b.e_vtv, epsilon = tol);
    }

    #[test]
    fn sums_of_4a() {
        let s = prefix_suffix_sums(&tf(&[0.0, 0.5, 0.5], &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]));
        assert_eq!(s.s, vec![0.0, 0.0, 0.5, 1.0]);
        let expected = [1.0, 5.0 / 6.0, 1.0 / 6.0];
        for (a, b) in s.u_head().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(*s.u.last().unwrap(), 0.0);
    }

    #[test]
    fn sums_trivial_and_verlet() {
        let s = prefix_suffix_sums(&tf(&[1.0], &[1.0]));
        assert_eq!(s.s, vec![0.0, 1.0]);
        assert_eq!(s.u_head(), &[1.0]);

        let s = prefix_suffix_sums(&tf(&[0.0, 1.0], &[0.5, 0.5]));
        assert_eq!(s.s, vec![0.0, 0.0, 1.0]);
        assert_eq!(s.u_head(), &[1.0, 0.5]);
    }

    #[test]
    fn coefficients_of_4a() {
        let e = error_coefficients(&tf(&[0.0, 0.5, 0.5], &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]));
        assert_abs_diff_eq!(e.e_t, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.e_v, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.e_tv, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.e_ttv, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.e_vtv, -1.0 / 72.0, epsilon = 1e-15);
    }

    #[test]
    fn single_split_has_half_commutator() {
        let e = error_coefficients(&tf(&[1.0], &[1.0]));
        assert_eq!(e.e_tv, 0.5);
    }

    #[test]
    fn velocity_verlet_hand_values() {
        let e = error_coefficients(&tf(&[0.0, 1.0], &[0.5, 0.5]));
        assert_abs_diff_eq!(e.e_tv, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.e_ttv, 1.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.e_vtv, 1.0 / 24.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_splitting_has_no_commutators() {
        let e = error_coefficients(&tf(&[1.0], &[0.0]));
        assert_eq!((e.e_t, e.e_v, e.e_tv, e.e_ttv, e.e_vtv), (1.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn cube_and_g_sums() {
        assert_abs_diff_eq!(delta_g(&[0.0, 0.5, 0.5]), 0.25);
        assert_eq!(delta_g(&[0.0, 1.0]), 1.0);
        let fr = forest_ruth();
        assert_abs_diff_eq!(delta_g(&fr.t), 0.0, epsilon = 1e-14);

        assert_abs_diff_eq!(g_sum(&[0.0, 0.5, 0.5]).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(g_sum(&[0.0, 1.0]).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        assert_abs_diff_eq!(g_sum(&[0.0, third, third, third]).unwrap(), 8.0 / 27.0, epsilon = 1e-15);
    }

    #[test]
    fn g_sum_rejects_unnormalised_weights() {
        let err = g_sum(&[0.0, 0.5, 0.6]).unwrap_err();
        assert!(matches!(err, KernelError::PrimaryConstraint { which: "t", .. }));
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_order(&forest_ruth(), DEFAULT_TOL).order, 4);
        assert_eq!(classify_order(&tf(&[1.0], &[1.0]), DEFAULT_TOL).order, 1);
        let lf = classify_order(&tf(&[0.0, 1.0], &[0.5, 0.5]), DEFAULT_TOL);
        assert_eq!(lf.order, 2);
        assert!(lf.symmetric);
        assert_eq!(classify_order(&tf(&[1.0], &[0.0]), DEFAULT_TOL).order, 0);
    }

    #[test]
    fn forward_set_reports_vtv_residual() {
        let class = classify_order(&tf(&[0.0, 0.5, 0.5], &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]), DEFAULT_TOL);
        assert_eq!(class.order, 3);
        assert!(class.symmetric);
        assert_abs_diff_eq!(class.vtv_residual.unwrap(), -1.0 / 72.0, epsilon = 1e-15);
        assert_eq!(class.without_gradient(), 2);
        assert_eq!(class.with_gradient(), 4);
    }

    #[test]
    fn v_first_short_and_padded_conversions_agree() {
        let t = vec![0.2, 0.6, 0.2];
        let v = vec![0.0, 0.5, 0.5];
        let c = SplitCoefficients::v_first(t.clone(), v.clone()).unwrap();
        let short = c.to_t_first();
        assert_eq!(short.t, t);
        assert_eq!(short.v, vec![0.5, 0.5, 0.0]);
        assert_eq!(error_coefficients(&c), error_coefficients(&short));

        let c = SplitCoefficients::v_first(vec![0.5, 0.5], vec![0.3, 0.7]).unwrap();
        let padded = c.to_t_first();
        assert_eq!(padded.t, vec![0.0, 0.5, 0.5]);
        assert_eq!(padded.v, vec![0.3, 0.7, 0.0]);
        assert_coeffs(error_coefficients(&c), series_oracle(&c), 1e-14);
    }

    #[test]
    fn constructor_validation() {
        assert_eq!(SplitCoefficients::t_first(vec![], vec![]).unwrap_err(), KernelError::Empty);
        assert!(matches!(
            SplitCoefficients::t_first(vec![1.0], vec![0.5, 0.5]),
            Err(KernelError::LengthMismatch { t: 1, v: 2 })
        ));
        assert!(matches!(
            SplitCoefficients::t_first(vec![f64::NAN], vec![1.0]),
            Err(KernelError::NonFinite { which: "t", index: 0 })
        ));
    }

    #[test]
    fn compression_merges_zero_drifts() {
        // alg 4BDA at t2 = 1/2 has a zero middle drift between two kicks
        let c = tf(&[0.0, 0.5, 0.0, 0.5], &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0]);
        let seq = c.compressed(DEFAULT_TOL);
        let ops: Vec<Op> = seq.iter().map(|f| f.op).collect();
        assert_eq!(ops, vec![Op::V, Op::T, Op::V, Op::T, Op::V]);
        assert_abs_diff_eq!(seq[2].weight, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn json_round_trip_keeps_full_precision() {
        let fr = forest_ruth();
        let file = CoefficientFile::new("forest-ruth", &fr, Some(0.0));
        let back = CoefficientFile::from_json(&file.to_json()).unwrap();
        assert_eq!(back, file);
        assert!(file.to_json().contains("\"t_first\""));
        let null = CoefficientFile::new("x", &fr, None).to_json();
        assert!(null.contains("\"e_vtv\": null"));
    }

    fn weights(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, n)
    }

    proptest! {
        #[test]
        fn matches_formal_series(t in weights(1..7), v in weights(1..7)) {
            let n = t.len().min(v.len());
            let c = tf(&t[..n], &v[..n]);
            let a = error_coefficients(&c);
            let b = series_oracle(&c);
            let scale = 1.0 + t.iter().chain(&v).map(|x| x.abs()).sum::<f64>().powi(3);
            prop_assert!((a.e_tv - b.e_tv).abs() <= 1e-12 * scale);
            prop_assert!((a.e_ttv - b.e_ttv).abs() <= 1e-12 * scale);
            prop_assert!((a.e_vtv - b.e_vtv).abs() <= 1e-12 * scale);
        }

        #[test]
        fn telescoping(t in weights(1..10)) {
            let c = tf(&t, &vec![0.0; t.len()]);
            let sums = prefix_suffix_sums(&c);
            let n = t.len();
            for p in 1..=3 {
                let total: f64 = (1..=n).map(|i| sums.backward_difference(p, i)).sum();
                prop_assert!((total - sums.s[n].powi(p)).abs() <= 1e-12 * (1.0 + sums.s[n].abs().powi(p)));
            }
        }

        #[test]
        fn g_closed_form(raw in prop::collection::vec(0.0f64..1.0, 2..10), lead_zero in any::<bool>()) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-3);
            let mut t: Vec<f64> = raw.iter().map(|x| x / total).collect();
            if lead_zero {
                t.insert(0, 0.0);
            }
            let sum: f64 = t.iter().sum();
            prop_assume!((sum - 1.0).abs() <= DEFAULT_TOL);
            let g = g_sum(&t).unwrap();
            prop_assert!((g - (1.0 - delta_g(&t)) / 3.0).abs() <= 1e-12);
        }

        #[test]
        fn arrangement_equivalence(t in weights(1..7), v in weights(1..7), zero_lead in any::<bool>()) {
            let n = t.len().min(v.len());
            let mut v = v[..n].to_vec();
            if zero_lead {
                v[0] = 0.0;
            }
            let c = SplitCoefficients::v_first(t[..n].to_vec(), v).unwrap();
            let a = error_coefficients(&c);
            let b = error_coefficients(&c.to_t_first());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn symmetric_sets_have_zero_tv(half in prop::collection::vec(0.05f64..1.0, 1..5), centre in 0.05f64..1.0) {
            // t = (0, h.., c, ..h) normalised, v from the palindromic rule
            let mut t = vec![0.0];
            t.extend(&half);
            t.push(centre);
            t.extend(half.iter().rev());
            let total: f64 = t.iter().sum();
            let t: Vec<f64> = t.iter().map(|x| x / total).collect();
            let n = t.len();
            let v: Vec<f64> = (0..n).map(|i| 0.5 * (t[i] + t.get(i + 1).copied().unwrap_or(0.0))).collect();
            let c = tf(&t, &v);
            prop_assert!(c.is_palindromic(1e-12));
            prop_assert!(error_coefficients(&c).e_tv.abs() <= 1e-14);
        }
    }
}
