//! Symmetric trigonometric polynomials sum c_k e^{jkw} with c_{-k} = c_k.

/// Shared frequency grid: uniform points on [0, pi].
pub const FREQ_GRID_POINTS: usize = 1024;

pub fn frequency_grid() -> Vec<f64> {
    (0..FREQ_GRID_POINTS)
        .map(|i| std::f64::consts::PI * i as f64 / (FREQ_GRID_POINTS - 1) as f64)
        .collect()
}

/// One-sided storage c_0..c_m of a symmetric coefficient sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSpectrumCoeffs {
    coeffs: Vec<f64>,
}

impl SymmetricSpectrumCoeffs {
    pub fn new(one_sided: &[f64]) -> Self {
        let mut c = one_sided.to_vec();
        while c.len() > 1 && c.last() == Some(&0.0) {
            c.pop();
        }
        if c.is_empty() {
            c.push(0.0);
        }
        Self { coeffs: c }
    }

    /// One-sided coefficients c_0..c_m.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// c_k for any signed lag; zero beyond the stored range.
    pub fn coeff(&self, k: i64) -> f64 {
        self.coeffs
            .get(k.unsigned_abs() as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn max_lag(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Real evaluation c_0 + 2 sum_k c_k cos(k w).
    pub fn eval(&self, omega: f64) -> f64 {
        let mut v = self.coeffs[0];
        for (k, &c) in self.coeffs.iter().enumerate().skip(1) {
            v += 2.0 * c * (k as f64 * omega).cos();
        }
        v
    }

    pub fn eval_grid(&self) -> Vec<f64> {
        frequency_grid().iter().map(|&w| self.eval(w)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Polynomial;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_spans_zero_to_pi() {
        let g = frequency_grid();
        assert_eq!(g.len(), FREQ_GRID_POINTS);
        assert_abs_diff_eq!(g[0], 0.0);
        assert_abs_diff_eq!(g[FREQ_GRID_POINTS - 1], std::f64::consts::PI);
    }

    #[test]
    fn eval_matches_modulus_squared() {
        let a = Polynomial::new(&[1.0, -0.7, 0.2]);
        let c = a.conj_product().unwrap();
        for &w in frequency_grid().iter().step_by(97) {
            let x = nalgebra::Complex::new(w.cos(), w.sin());
            let expect = a.eval_complex(x).norm_sqr();
            assert_abs_diff_eq!(c.eval(w), expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn conj_product_nonnegative_on_grid() {
        let a = Polynomial::new(&[0.3, -1.2, 0.9]);
        let c = a.conj_product().unwrap();
        assert!(c.eval_grid().iter().all(|&v| v >= -1e-12));
    }
}
