//! Chebyshev–Hermite polynomials and the standard normal law.
//!
//! `H_m` is the probabilists' Hermite polynomial, so that
//! `Φ^{(m+1)}(x) = (-1)^m H_m(x) φ(x)` and `(H_m φ)' = -H_{m+1} φ`.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::{Error, Result};

/// Largest supported Hermite degree. Coefficients are formed in floating point.
pub const MAX_HERMITE_DEGREE: usize = 32;

/// `1 / sqrt(2π)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn check_degree(m: usize) -> Result<()> {
    if m > MAX_HERMITE_DEGREE {
        Err(Error::DegreeOutOfRange(m))
    } else {
        Ok(())
    }
}

/// Coefficients of `H_m` in ascending powers of `x`, from the explicit sum
/// `H_m(x) = m! Σ_{k ≤ m/2} (-1)^k x^{m-2k} / (k! (m-2k)! 2^k)`.
pub fn hermite_coefficients(m: usize) -> Result<Vec<f64>> {
    check_degree(m)?;
    let mut coeffs = vec![0.0; m + 1];
    let m_fact = factorial(m);
    for k in 0..=m / 2 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let denom = factorial(k) * factorial(m - 2 * k) * 2f64.powi(k as i32);
        coeffs[m - 2 * k] = sign * (m_fact / denom).round();
    }
    Ok(coeffs)
}

/// `H_m(x)` evaluated from the explicit coefficient sum.
pub fn hermite_explicit(m: usize, x: f64) -> Result<f64> {
    let coeffs = hermite_coefficients(m)?;
    // Horner on the (sparse) coefficient list.
    Ok(coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c))
}

/// `H_m(x)` by the upward recurrence `H_{m+1} = x H_m - m H_{m-1}`.
pub fn hermite_recurrence(m: usize, x: f64) -> Result<f64> {
    check_degree(m)?;
    Ok(hermite_table(m, x)[m])
}

/// Values `H_0(x), …, H_m(x)` by recurrence. No degree guard; callers keep `m` small.
pub fn hermite_table(m: usize, x: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(m + 1);
    h.push(1.0);
    if m >= 1 {
        h.push(x);
    }
    for j in 1..m {
        let next = x * h[j] - j as f64 * h[j - 1];
        h.push(next);
    }
    h
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub fn std_normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// `Φ(t)` via the complementary error function, accurate to well below `1e-12`.
pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
}

/// Display helper: clamps a raw expansion value into `[0, 1]`.
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

/// A function of the form `φ(t) Σ_m c_m H_m(t)`.
///
/// Every correction term in the expansions has this shape, and the family is
/// closed under differentiation because `(H_m φ)' = -H_{m+1} φ`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HermiteSeries {
    coeffs: Vec<f64>,
}

impl HermiteSeries {
    pub fn zero() -> Self {
        Self::default()
    }

    /// `c · H_m(t) φ(t)`.
    pub fn monomial(m: usize, c: f64) -> Self {
        let mut coeffs = vec![0.0; m + 1];
        coeffs[m] = c;
        Self { coeffs }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|&c| c != 0.0)
    }

    pub fn add_term(&mut self, m: usize, c: f64) {
        if self.coeffs.len() <= m {
            self.coeffs.resize(m + 1, 0.0);
        }
        self.coeffs[m] += c;
    }

    pub fn plus(&self, other: &HermiteSeries) -> HermiteSeries {
        let mut out = self.clone();
        for (m, &c) in other.coeffs.iter().enumerate() {
            out.add_term(m, c);
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> HermiteSeries {
        HermiteSeries {
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    /// Exact derivative in `t`.
    pub fn derivative(&self) -> HermiteSeries {
        let mut coeffs = vec![0.0; self.coeffs.len() + 1];
        for (m, &c) in self.coeffs.iter().enumerate() {
            coeffs[m + 1] = -c;
        }
        HermiteSeries { coeffs }
    }

    pub fn nth_derivative(&self, order: usize) -> HermiteSeries {
        (0..order).fold(self.clone(), |acc, _| acc.derivative())
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.coeffs.is_empty() {
            return 0.0;
        }
        let h = hermite_table(self.coeffs.len() - 1, t);
        let s: f64 = self.coeffs.iter().zip(&h).map(|(c, hm)| c * hm).sum();
        s * std_normal_pdf(t)
    }
}

/// `d^j/dt^j Φ(t)` for `j ≥ 1`, as a Hermite series: `(-1)^{j-1} H_{j-1} φ`.
pub fn normal_cdf_derivative(j: usize) -> HermiteSeries {
    assert!(j >= 1, "use std_normal_cdf for the zeroth derivative");
    let sign = if (j - 1) % 2 == 0 { 1.0 } else { -1.0 };
    HermiteSeries::monomial(j - 1, sign)
}
