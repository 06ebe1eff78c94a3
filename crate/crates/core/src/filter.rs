//! Rational filters in the delay operator, signal filtering and stationary
//! (H2) output variance.
//!
//! A filter is num(q^{-1})/den(q^{-1}). Poles live in the q-plane; the filter
//! is stable when every pole has modulus < 1. Roots within 1e-9 of the unit
//! circle are rejected as marginally stable.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Margin below the unit circle required of every pole.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RationalFilter {
    num: Polynomial,
    den: Polynomial,
}

impl RationalFilter {
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::DegenerateDenominator(
                "rational filter with zero denominator".into(),
            ));
        }
        if !num.is_finite() || !den.is_finite() {
            return Err(Error::InvalidArgument(
                "non-finite filter coefficients".into(),
            ));
        }
        Ok(Self { num, den })
    }

    pub fn from_coeffs(num: &[f64], den: &[f64]) -> Result<Self> {
        Self::new(Polynomial::new(num), Polynomial::new(den))
    }

    pub fn constant(c: f64) -> Self {
        Self {
            num: Polynomial::constant(c),
            den: Polynomial::one(),
        }
    }

    pub fn identity() -> Self {
        Self::constant(1.0)
    }

    /// Pure delay q^{-k}.
    pub fn delay(k: usize) -> Self {
        Self {
            num: Polynomial::delay(k),
            den: Polynomial::one(),
        }
    }

    pub fn numerator(&self) -> &Polynomial {
        &self.num
    }

    pub fn denominator(&self) -> &Polynomial {
        &self.den
    }

    pub fn is_identity(&self) -> bool {
        self.num == self.den
    }

    /// True when the filter is a constant gain (no dynamics).
    pub fn constant_gain(&self) -> Option<f64> {
        if self.num.degree() == 0 && self.den.degree() == 0 {
            Some(self.num.coeff(0) / self.den.coeff(0))
        } else {
            None
        }
    }

    /// Poles in the q-plane: roots of the reversed denominator. Requires a
    /// causal filter (nonzero constant denominator term).
    pub fn poles(&self) -> Result<Vec<Complex<f64>>> {
        if self.den.coeff(0) == 0.0 {
            return Err(Error::NonCausalFilter);
        }
        Ok(self.den.reversed().roots())
    }

    pub fn zeros(&self) -> Result<Vec<Complex<f64>>> {
        if self.num.is_zero() {
            return Ok(Vec::new());
        }
        if self.num.coeff(0) == 0.0 {
            // factor out the pure delay; it has no finite zeros in q^{-1} form
            let mut c = self.num.coeffs().to_vec();
            while c.len() > 1 && c[0] == 0.0 {
                c.remove(0);
            }
            return Ok(Polynomial::new(&c).reversed().roots());
        }
        Ok(self.num.reversed().roots())
    }

    pub fn is_stable(&self) -> bool {
        match self.poles() {
            Ok(poles) => poles.iter().all(|p| p.norm() < 1.0 - STABILITY_MARGIN),
            Err(_) => false,
        }
    }

    pub fn is_inversely_stable(&self) -> bool {
        if self.num.is_zero() || self.num.coeff(0) == 0.0 {
            return false;
        }
        self.num
            .reversed()
            .roots()
            .iter()
            .all(|z| z.norm() < 1.0 - STABILITY_MARGIN)
    }

    /// Frequency response num(e^{-jw})/den(e^{-jw}).
    pub fn freq_response(&self, omega: f64) -> Complex<f64> {
        let x = Complex::new((-omega).cos(), (-omega).sin());
        self.num.eval_complex(x) / self.den.eval_complex(x)
    }

    pub fn neg(&self) -> Self {
        Self {
            num: self.num.scale(-1.0),
            den: self.den.clone(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            num: self.num.mul(&other.num),
            den: self.den.mul(&other.den),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            num: self.num.mul(&other.den).add(&other.num.mul(&self.den)),
            den: self.den.mul(&other.den),
        }
    }

    /// Filters a signal under zero initial conditions; length preserved.
    pub fn filter_signal(&self, x: &[f64]) -> Result<Vec<f64>> {
        let a0 = self.den.coeff(0);
        if a0 == 0.0 {
            return Err(Error::NonCausalFilter);
        }
        let b = self.num.coeffs();
        let a = self.den.coeffs();
        let mut y = vec![0.0; x.len()];
        for t in 0..x.len() {
            let mut acc = 0.0;
            for (i, &bi) in b.iter().enumerate() {
                if t >= i {
                    acc += bi * x[t - i];
                }
            }
            for (i, &ai) in a.iter().enumerate().skip(1) {
                if t >= i {
                    acc -= ai * y[t - i];
                }
            }
            y[t] = acc / a0;
        }
        Ok(y)
    }

    /// First `len` impulse-response coefficients.
    pub fn impulse_response(&self, len: usize) -> Result<Vec<f64>> {
        let mut imp = vec![0.0; len];
        if len > 0 {
            imp[0] = 1.0;
        }
        self.filter_signal(&imp)
    }

    /// Impulse response extended until the certified geometric tail bound on
    /// sum g_k^2 drops below `rel_tol` of the partial sum. Returns the
    /// coefficients together with the final tail bound.
    pub fn impulse_until_tail(&self, rel_tol: f64) -> Result<(Vec<f64>, f64)> {
        let a0 = self.den.coeff(0);
        if a0 == 0.0 {
            return Err(Error::NonCausalFilter);
        }
        if !self.is_stable() {
            return Err(Error::VarianceUndefined);
        }
        let b: Vec<f64> = self.num.coeffs().iter().map(|c| c / a0).collect();
        let a: Vec<f64> = self.den.coeffs().iter().map(|c| c / a0).collect();
        let na = a.len() - 1;
        let nb = b.len() - 1;

        if self.num.is_zero() {
            return Ok((vec![0.0], 0.0));
        }
        if na == 0 {
            return Ok((b, 0.0));
        }

        // companion matrix of the homogeneous recursion g_k = -sum a_i g_{k-i}
        let mut comp = DMatrix::<f64>::zeros(na, na);
        for i in 0..na {
            comp[(0, i)] = -a[i + 1];
        }
        for i in 1..na {
            comp[(i, i - 1)] = 1.0;
        }
        // find J with ||A^J||_2 < 1/2 by repeated squaring
        let mut power = comp.clone();
        let mut contraction = spectral_norm(&power);
        let mut block = 1usize;
        while contraction >= 0.5 {
            power = &power * &power;
            block *= 2;
            contraction = spectral_norm(&power);
            if block > 1 << 16 {
                return Err(Error::VarianceUndefined);
            }
        }
        let tail_factor = 1.0 / (1.0 - contraction * contraction);

        let mut g: Vec<f64> = Vec::with_capacity(256);
        let mut sum = 0.0f64;
        let mut window = std::collections::VecDeque::with_capacity(block);
        let mut k = 0usize;
        let cap = 100_000_000usize;
        loop {
            let mut gk = if k <= nb { b[k] } else { 0.0 };
            for i in 1..=na.min(k) {
                gk -= a[i] * g[k - i];
            }
            g.push(gk);
            sum += gk * gk;
            if k >= nb {
                // squared norm of the state window (g_k .. g_{k-na+1})
                let mut w = 0.0;
                for i in 0..na.min(k + 1) {
                    w += g[k - i] * g[k - i];
                }
                window.push_back(w);
                if window.len() > block {
                    window.pop_front();
                }
                if window.len() == block {
                    let tail: f64 = window.iter().sum::<f64>() * tail_factor;
                    if tail <= rel_tol * sum || tail <= f64::MIN_POSITIVE {
                        return Ok((g, tail));
                    }
                }
            }
            k += 1;
            if k > cap {
                return Err(Error::VarianceUndefined);
            }
        }
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Stationary output variance of a stable filter driven by white noise,
/// computed by impulse-response summation with a certified tail bound
/// (truncated when the bound falls below 1e-12 of the partial sum).
pub fn h2_variance(filter: &RationalFilter, noise_variance: f64) -> Result<f64> {
    if !noise_variance.is_finite() || noise_variance < 0.0 {
        return Err(Error::InvalidArgument(
            "noise variance must be finite and nonnegative".into(),
        ));
    }
    let (g, _tail) = filter.impulse_until_tail(1e-12)?;
    Ok(noise_variance * g.iter().map(|x| x * x).sum::<f64>())
}

/// Stationary output variance by the linear-equation route: DF2T state space
/// plus a dense discrete Lyapunov solve. Exact up to the linear solver.
pub fn stationary_variance_exact(filter: &RationalFilter, noise_variance: f64) -> Result<f64> {
    if !noise_variance.is_finite() || noise_variance < 0.0 {
        return Err(Error::InvalidArgument(
            "noise variance must be finite and nonnegative".into(),
        ));
    }
    if !filter.is_stable() {
        return Err(Error::VarianceUndefined);
    }
    let a0 = filter.den.coeff(0);
    let b: Vec<f64> = filter.num.coeffs().iter().map(|c| c / a0).collect();
    let a: Vec<f64> = filter.den.coeffs().iter().map(|c| c / a0).collect();
    let n = (a.len() - 1).max(b.len() - 1);
    if n == 0 {
        return Ok(noise_variance * b[0] * b[0]);
    }
    let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let d = b[0];
    // transposed direct form II realization
    let mut amat = DMatrix::<f64>::zeros(n, n);
    let mut bvec = DVector::<f64>::zeros(n);
    for i in 0..n {
        amat[(i, 0)] = -coef(&a, i + 1);
        if i + 1 < n {
            amat[(i, i + 1)] = 1.0;
        }
        bvec[i] = coef(&b, i + 1) - d * coef(&a, i + 1);
    }
    // solve X = A X A^T + B B^T by vectorization
    let dim = n * n;
    let mut lhs = DMatrix::<f64>::identity(dim, dim);
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    lhs[(p * n + q, r * n + s)] -= amat[(p, r)] * amat[(q, s)];
                }
            }
        }
    }
    let mut rhs = DVector::<f64>::zeros(dim);
    for p in 0..n {
        for q in 0..n {
            rhs[p * n + q] = bvec[p] * bvec[q];
        }
    }
    let x = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Inconsistency("singular Lyapunov system".into()))?;
    // y = x_1 + d*u, so Var(y) = X_11 + d^2
    Ok(noise_variance * (x[0] + d * d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pure_delay_shifts() {
        let f = RationalFilter::delay(1);
        let y = f.filter_signal(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn first_order_recursion() {
        // 1/(1+0.5 q^-1): y_t = x_t - 0.5 y_{t-1}
        let f = RationalFilter::from_coeffs(&[1.0], &[1.0, 0.5]).unwrap();
        let y = f.filter_signal(&[1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(y[0], 1.0);
        assert_abs_diff_eq!(y[1], -0.5);
        assert_abs_diff_eq!(y[2], 0.25);
    }

    #[test]
    fn identity_passes_through() {
        let f = RationalFilter::identity();
        let x = vec![0.3, -1.2, 7.0];
        assert_eq!(f.filter_signal(&x).unwrap(), x);
    }

    #[test]
    fn non_causal_rejected() {
        let f = RationalFilter::from_coeffs(&[1.0], &[0.0, 1.0]).unwrap();
        assert!(matches!(
            f.filter_signal(&[1.0]),
            Err(Error::NonCausalFilter)
        ));
    }

    #[test]
    fn stability_classification() {
        let stable = RationalFilter::from_coeffs(&[1.0], &[1.0, -0.5]).unwrap();
        assert!(stable.is_stable());
        let unstable = RationalFilter::from_coeffs(&[1.0], &[1.0, -1.5]).unwrap();
        assert!(!unstable.is_stable());
        let marginal = RationalFilter::from_coeffs(&[1.0], &[1.0, -1.0]).unwrap();
        assert!(!marginal.is_stable());
    }

    #[test]
    fn h2_fir_sum_of_squares() {
        // f = 1 + 0.3 q^-1, variance 1 -> 1.09
        let f = RationalFilter::from_coeffs(&[1.0, 0.3], &[1.0]).unwrap();
        assert_abs_diff_eq!(h2_variance(&f, 1.0).unwrap(), 1.09, epsilon = 1e-12);
    }

    #[test]
    fn h2_geometric_series() {
        // f = 1/(1 - 0.5 q^-1) -> sum 0.25^k = 4/3
        let f = RationalFilter::from_coeffs(&[1.0], &[1.0, -0.5]).unwrap();
        assert_abs_diff_eq!(h2_variance(&f, 1.0).unwrap(), 4.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn h2_rejects_unstable() {
        let f = RationalFilter::from_coeffs(&[1.0], &[1.0, -2.0]).unwrap();
        assert!(matches!(
            h2_variance(&f, 1.0),
            Err(Error::VarianceUndefined)
        ));
    }

    #[test]
    fn h2_matches_lyapunov_route() {
        let cases = [
            RationalFilter::from_coeffs(&[1.0, 0.3], &[1.0, -0.5]).unwrap(),
            RationalFilter::from_coeffs(&[0.2, -0.4, 0.1], &[1.0, -0.9, 0.2]).unwrap(),
            RationalFilter::from_coeffs(&[1.0, 0.0, 0.5, 0.25], &[1.0, 0.3]).unwrap(),
        ];
        for f in &cases {
            let a = h2_variance(f, 3.0).unwrap();
            let b = stationary_variance_exact(f, 3.0).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn freq_response_at_dc() {
        let f = RationalFilter::from_coeffs(&[1.0, 0.3], &[1.0, -0.5]).unwrap();
        let g = f.freq_response(0.0);
        assert_abs_diff_eq!(g.re, 1.3 / 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.im, 0.0, epsilon = 1e-12);
    }
}
