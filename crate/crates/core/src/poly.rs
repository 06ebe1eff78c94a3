//! Real polynomial arithmetic with companion-matrix root finding.
//!
//! A `Polynomial` stores ascending coefficients c0..cm of sum c_l x^l. The same
//! coefficient list doubles as a filter polynomial in the delay operator
//! (sum c_l q^{-l}); which reading applies is decided by the caller.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::spectrum::SymmetricSpectrumCoeffs;

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial from ascending coefficients, trimming trailing zeros.
    /// The zero polynomial is stored as a single zero coefficient.
    pub fn new(coeffs: &[f64]) -> Self {
        let mut c: Vec<f64> = coeffs.to_vec();
        while c.len() > 1 && c.last() == Some(&0.0) {
            c.pop();
        }
        if c.is_empty() {
            c.push(0.0);
        }
        Self { coeffs: c }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(&[c])
    }

    /// q^{-k} when read as a filter polynomial.
    pub fn delay(k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        Self { coeffs: c }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Horner evaluation at a complex point.
    pub fn eval_complex(&self, x: Complex<f64>) -> Complex<f64> {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex::new(0.0, 0.0), |acc, &c| acc * x + c)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(&self.coeffs.iter().map(|c| c * s).collect::<Vec<_>>())
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.coeff(i) + other.coeff(i);
        }
        Self::new(&out)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(&out)
    }

    /// Coefficients in reverse order; x^m * p(1/x) for a degree-m polynomial.
    pub fn reversed(&self) -> Self {
        let mut c = self.coeffs.clone();
        c.reverse();
        Self::new(&c)
    }

    /// Euclidean division: returns (quotient, remainder) with
    /// self = quotient * divisor + remainder.
    pub fn div_rem(&self, divisor: &Self) -> Result<(Self, Self)> {
        if divisor.is_zero() {
            return Err(Error::DegenerateDenominator(
                "division by zero polynomial".into(),
            ));
        }
        let dd = divisor.degree();
        if self.degree() < dd || self.is_zero() {
            return Ok((Self::zero(), self.clone()));
        }
        let mut rem = self.coeffs.clone();
        let mut quot = vec![0.0; self.degree() - dd + 1];
        let lead = divisor.coeffs[dd];
        for i in (dd..rem.len()).rev() {
            let q = rem[i] / lead;
            quot[i - dd] = q;
            for j in 0..=dd {
                rem[i - dd + j] -= q * divisor.coeffs[j];
            }
        }
        rem.truncate(dd.max(1));
        Ok((Self::new(&quot), Self::new(&rem)))
    }

    /// Roots via companion-matrix eigenvalues. Degree-0 polynomials have none.
    pub fn roots(&self) -> Vec<Complex<f64>> {
        // strip exact trailing zeros already done; strip leading (x^k factor) roots at 0
        let mut c = self.coeffs.clone();
        let mut zeros_at_origin = 0usize;
        while c.len() > 1 && c[0] == 0.0 {
            c.remove(0);
            zeros_at_origin += 1;
        }
        let m = c.len() - 1;
        let mut roots = vec![Complex::new(0.0, 0.0); zeros_at_origin];
        if m == 0 {
            return roots;
        }
        let lead = c[m];
        let mut comp = DMatrix::<f64>::zeros(m, m);
        for i in 1..m {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..m {
            comp[(i, m - 1)] = -c[i] / lead;
        }
        let eig = comp.complex_eigenvalues();
        roots.extend(eig.iter().copied());
        roots
    }

    /// Coefficients of a(e^{j w}) a(e^{-j w}): c_k = sum_l a_l a_{l+k}.
    pub fn conj_product(&self) -> Result<SymmetricSpectrumCoeffs> {
        if self.is_zero() {
            return Err(Error::DegenerateDenominator(
                "conjugate product of zero polynomial".into(),
            ));
        }
        let m = self.degree();
        let mut c = vec![0.0; m + 1];
        for (k, ck) in c.iter_mut().enumerate() {
            for l in 0..=(m - k) {
                *ck += self.coeffs[l] * self.coeffs[l + k];
            }
        }
        Ok(SymmetricSpectrumCoeffs::new(&c))
    }
}
