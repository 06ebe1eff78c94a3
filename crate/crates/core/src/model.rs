//! Model structures, parameter vectors and experiment specifications.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::RationalFilter;
use crate::poly::Polynomial;
use crate::stats::chi2_quantile;

/// Parameter vector theta with names matching the owning structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    values: Vec<f64>,
    labels: Vec<&'static str>,
}

impl ThetaVector {
    pub fn new(values: Vec<f64>, labels: Vec<&'static str>) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::InvalidArgument(
                "theta values and labels differ in length".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite theta entry".into()));
        }
        Ok(Self { values, labels })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[&'static str] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn perturbed(&self, i: usize, delta: f64) -> Self {
        let mut v = self.values.clone();
        v[i] += delta;
        Self {
            values: v,
            labels: self.labels.clone(),
        }
    }
}

/// Which parametric family the submodels belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    /// G = 1 + b q^-1, H = 1 + h q^-1, theta = (b, h)
    Fir1,
    /// G = k1/(1 + b q^-1), H = k2/(1 + b q^-1), theta = (k1, k2, b)
    SharedPole,
}

/// Model structure: the map theta -> (G, H) plus the disturbance shaping M.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStructure {
    kind: StructureKind,
    m_filter: RationalFilter,
}

impl ModelStructure {
    pub fn new(kind: StructureKind, m_filter: RationalFilter) -> Result<Self> {
        if !m_filter.is_stable() || !m_filter.is_inversely_stable() {
            return Err(Error::InvalidArgument(
                "disturbance shaping M must be stable and inversely stable".into(),
            ));
        }
        Ok(Self { kind, m_filter })
    }

    /// Structure with white measured disturbance (M = 1).
    pub fn white(kind: StructureKind) -> Self {
        Self {
            kind,
            m_filter: RationalFilter::identity(),
        }
    }

    pub fn fir1() -> Self {
        Self::white(StructureKind::Fir1)
    }

    pub fn shared_pole() -> Self {
        Self::white(StructureKind::SharedPole)
    }

    pub fn kind(&self) -> StructureKind {
        self.kind
    }

    pub fn m_filter(&self) -> &RationalFilter {
        &self.m_filter
    }

    pub fn theta_dim(&self) -> usize {
        match self.kind {
            StructureKind::Fir1 => 2,
            StructureKind::SharedPole => 3,
        }
    }

    pub fn labels(&self) -> Vec<&'static str> {
        match self.kind {
            StructureKind::Fir1 => vec!["b", "h"],
            StructureKind::SharedPole => vec!["k1", "k2", "b"],
        }
    }

    pub fn theta(&self, values: &[f64]) -> Result<ThetaVector> {
        if values.len() != self.theta_dim() {
            return Err(Error::InvalidArgument(format!(
                "theta dimension {} does not match structure (expected {})",
                values.len(),
                self.theta_dim()
            )));
        }
        ThetaVector::new(values.to_vec(), self.labels())
    }

    pub fn g(&self, theta: &ThetaVector) -> Result<RationalFilter> {
        self.check(theta)?;
        match self.kind {
            StructureKind::Fir1 => RationalFilter::from_coeffs(&[1.0, theta.get(0)], &[1.0]),
            StructureKind::SharedPole => {
                RationalFilter::from_coeffs(&[theta.get(0)], &[1.0, theta.get(2)])
            }
        }
    }

    pub fn h(&self, theta: &ThetaVector) -> Result<RationalFilter> {
        self.check(theta)?;
        match self.kind {
            StructureKind::Fir1 => RationalFilter::from_coeffs(&[1.0, theta.get(1)], &[1.0]),
            StructureKind::SharedPole => {
                RationalFilter::from_coeffs(&[theta.get(1)], &[1.0, theta.get(2)])
            }
        }
    }

    /// Per-parameter gradient filters (dG/dtheta_i, dH/dtheta_i) at theta.
    pub fn gradient_filters(
        &self,
        theta: &ThetaVector,
    ) -> Result<Vec<(RationalFilter, RationalFilter)>> {
        self.check(theta)?;
        let zero = RationalFilter::from_coeffs(&[0.0], &[1.0])?;
        match self.kind {
            StructureKind::Fir1 => Ok(vec![
                (RationalFilter::delay(1), zero.clone()),
                (zero, RationalFilter::delay(1)),
            ]),
            StructureKind::SharedPole => {
                let (k1, k2, b) = (theta.get(0), theta.get(1), theta.get(2));
                let den1 = Polynomial::new(&[1.0, b]);
                let den2 = den1.mul(&den1);
                let inv = RationalFilter::new(Polynomial::one(), den1)?;
                let db_g = RationalFilter::new(Polynomial::new(&[0.0, -k1]), den2.clone())?;
                let db_h = RationalFilter::new(Polynomial::new(&[0.0, -k2]), den2)?;
                Ok(vec![(inv.clone(), zero.clone()), (zero, inv), (db_g, db_h)])
            }
        }
    }

    fn check(&self, theta: &ThetaVector) -> Result<()> {
        if theta.dim() != self.theta_dim() {
            return Err(Error::InvalidArgument(format!(
                "theta dimension {} does not match structure (expected {})",
                theta.dim(),
                self.theta_dim()
            )));
        }
        Ok(())
    }
}

/// Noise variances of the experiment. lambda_v equals lambda_s scaled by the
/// H2 gain of M; for white disturbances (M = 1) the two coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub lambda_e: f64,
    pub lambda_s: f64,
    pub lambda_v: f64,
}

impl NoiseSpec {
    pub fn new(lambda_e: f64, lambda_s: f64, lambda_v: f64) -> Result<Self> {
        for (name, v) in [
            ("lambda_e", lambda_e),
            ("lambda_s", lambda_s),
            ("lambda_v", lambda_v),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        Ok(Self {
            lambda_e,
            lambda_s,
            lambda_v,
        })
    }

    /// White measured disturbance: lambda_v = lambda_s.
    pub fn white(lambda_e: f64, lambda_v: f64) -> Result<Self> {
        Self::new(lambda_e, lambda_v, lambda_v)
    }

    /// Design-facing paths need strictly positive variances.
    pub fn require_positive(&self) -> Result<()> {
        if self.lambda_e > 0.0 && self.lambda_s > 0.0 && self.lambda_v > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "noise variances must be strictly positive".into(),
            ))
        }
    }
}

/// Accuracy/confidence requirements of the application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationSpec {
    pub gamma: f64,
    pub alpha: f64,
    pub n_samples: usize,
    /// Direct kappa override; takes precedence over alpha and dof.
    pub kappa_override: Option<f64>,
    /// Chi-squared degrees of freedom override (defaults to dim(theta)).
    pub dof_override: Option<usize>,
}

impl ApplicationSpec {
    pub fn new(gamma: f64, alpha: f64, n_samples: usize) -> Result<Self> {
        let spec = Self {
            gamma,
            alpha,
            n_samples,
            kappa_override: None,
            dof_override: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa_override = Some(kappa);
        self
    }

    pub fn with_dof(mut self, dof: usize) -> Self {
        self.dof_override = Some(dof);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0, 1)".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("N must be >= 1".into()));
        }
        if let Some(k) = self.kappa_override {
            if !k.is_finite() || k <= 0.0 {
                return Err(Error::InvalidArgument(
                    "kappa override must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Chi-squared quantile used in the confidence scaling.
    pub fn kappa(&self, theta_dim: usize) -> Result<f64> {
        if let Some(k) = self.kappa_override {
            return Ok(k);
        }
        chi2_quantile(self.dof_override.unwrap_or(theta_dim), self.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fir1_filters() {
        let s = ModelStructure::fir1();
        let theta = s.theta(&[0.5, 0.3]).unwrap();
        let g = s.g(&theta).unwrap();
        assert_eq!(g.numerator().coeffs(), &[1.0, 0.5]);
        let h = s.h(&theta).unwrap();
        assert_eq!(h.numerator().coeffs(), &[1.0, 0.3]);
    }

    #[test]
    fn shared_pole_filters() {
        let s = ModelStructure::shared_pole();
        let theta = s.theta(&[1.0, 0.3, -0.5]).unwrap();
        let g = s.g(&theta).unwrap();
        assert_eq!(g.numerator().coeffs(), &[1.0]);
        assert_eq!(g.denominator().coeffs(), &[1.0, -0.5]);
        assert!(g.is_stable());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = ModelStructure::shared_pole();
        let theta = s.theta(&[1.0, 0.3, -0.5]).unwrap();
        let grads = s.gradient_filters(&theta).unwrap();
        let eps = 1e-6;
        for (i, grad) in grads.iter().enumerate() {
            let tp = s
                .theta(&theta.perturbed(i, eps).values().to_vec()[..])
                .unwrap();
            let tm = s
                .theta(&theta.perturbed(i, -eps).values().to_vec()[..])
                .unwrap();
            for &w in &[0.0, 0.7, 2.2] {
                let fd_g = (s.g(&tp).unwrap().freq_response(w)
                    - s.g(&tm).unwrap().freq_response(w))
                    / (2.0 * eps);
                let an_g = grad.0.freq_response(w);
                assert_abs_diff_eq!(fd_g.re, an_g.re, epsilon = 1e-7);
                assert_abs_diff_eq!(fd_g.im, an_g.im, epsilon = 1e-7);
                let fd_h = (s.h(&tp).unwrap().freq_response(w)
                    - s.h(&tm).unwrap().freq_response(w))
                    / (2.0 * eps);
                let an_h = grad.1.freq_response(w);
                assert_abs_diff_eq!(fd_h.re, an_h.re, epsilon = 1e-7);
                assert_abs_diff_eq!(fd_h.im, an_h.im, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn kappa_default_matches_dim_and_override_wins() {
        let spec = ApplicationSpec::new(100.0, 0.95, 1000).unwrap();
        let k3 = spec.kappa(3).unwrap();
        assert_abs_diff_eq!(k3, 7.815, epsilon = 2e-3);
        let spec = spec.with_kappa(5.99);
        assert_abs_diff_eq!(spec.kappa(3).unwrap(), 5.99);
        let spec2 = ApplicationSpec::new(100.0, 0.95, 1000).unwrap().with_dof(2);
        assert_abs_diff_eq!(spec2.kappa(3).unwrap(), 5.991, epsilon = 1e-3);
    }

    #[test]
    fn noise_rejects_negative() {
        assert!(NoiseSpec::white(-1.0, 1.0).is_err());
        assert!(NoiseSpec::white(0.0, 1.0)
            .unwrap()
            .require_positive()
            .is_err());
    }
}
