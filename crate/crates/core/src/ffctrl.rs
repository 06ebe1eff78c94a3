//! Feed-forward controller design, application cost and its Hessian.
//!
//! Sign convention: the controller enters as u = F_f v and the closed
//! expression H + G F_f must vanish at the true parameters, so design_ff
//! returns the canceling sign. The classical (c0, c1, a0) parametrization of
//! the first-order controller is exposed through `fir_coefficients`, which
//! reports the magnitudes of the standard table.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filter::{stationary_variance_exact, RationalFilter};
use crate::model::{ModelStructure, NoiseSpec, StructureKind, ThetaVector};

/// Width of the rejected band around |b| = 1 when designing the inverse.
const INVERTIBILITY_BAND: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FFController {
    filter: RationalFilter,
}

impl FFController {
    pub fn filter(&self) -> &RationalFilter {
        &self.filter
    }

    /// (c0, c1, a0) of F_f = -(c0 + c1 q^-1)/(1 + a0 q^-1); None when the
    /// controller is not first order.
    pub fn fir_coefficients(&self) -> Option<(f64, f64, f64)> {
        let den0 = self.filter.denominator().coeff(0);
        if den0 == 0.0
            || self.filter.numerator().degree() > 1
            || self.filter.denominator().degree() > 1
        {
            return None;
        }
        Some((
            -self.filter.numerator().coeff(0) / den0,
            -self.filter.numerator().coeff(1) / den0,
            self.filter.denominator().coeff(1) / den0,
        ))
    }
}

/// Designs the variance-minimizing feed-forward controller from theta.
pub fn design_ff(theta: &ThetaVector, structure: &ModelStructure) -> Result<FFController> {
    match structure.kind() {
        StructureKind::Fir1 => {
            let (b, h) = (theta.get(0), theta.get(1));
            if (b.abs() - 1.0).abs() < INVERTIBILITY_BAND {
                return Err(Error::StabilityMargin);
            }
            let filter = if b.abs() < 1.0 {
                RationalFilter::from_coeffs(&[-1.0, -h], &[1.0, b])?
            } else {
                // mirror the zero, then invert
                let c0 = (h * b * b + b - h) / (b * b * b);
                let c1 = h / (b * b);
                RationalFilter::from_coeffs(&[-c0, -c1], &[1.0, 1.0 / b])?
            };
            Ok(FFController { filter })
        }
        StructureKind::SharedPole => {
            let (k1, k2) = (theta.get(0), theta.get(1));
            if k1 == 0.0 {
                return Err(Error::ZeroPlantGain);
            }
            Ok(FFController {
                filter: RationalFilter::constant(-k2 / k1),
            })
        }
    }
}

/// Smallest achievable output variance for a non-minimum-phase FIR1 plant,
/// scaled by lambda_v. Zero for b0 = h0.
pub fn v_min(theta0: &ThetaVector, noise: &NoiseSpec) -> Result<f64> {
    let (b0, h0) = (theta0.get(0), theta0.get(1));
    if b0.abs() <= 1.0 {
        return Err(Error::WrongRegime(
            "V_min defined only for non-minimum phase".into(),
        ));
    }
    let b2 = b0 * b0;
    Ok(noise.lambda_v * (b2 - 1.0) * (b0 - h0) * (b0 - h0) / (b2 * b2))
}

/// The residual filter H(theta0) + G(theta0) F_f(theta), over a common
/// denominator.
fn residual_filter(
    theta: &ThetaVector,
    theta0: &ThetaVector,
    structure: &ModelStructure,
) -> Result<RationalFilter> {
    let ff = design_ff(theta, structure)?;
    let g0 = structure.g(theta0)?;
    let h0 = structure.h(theta0)?;
    Ok(h0.add(&g0.mul(ff.filter())))
}

/// Application cost: stationary output variance caused by designing the
/// controller at theta instead of theta0. For non-minimum-phase FIR1 plants
/// the achievable minimum is subtracted, making this an excess cost.
/// Returns +infinity when the resulting loop filter is unstable.
pub fn v_app(
    theta: &ThetaVector,
    theta0: &ThetaVector,
    structure: &ModelStructure,
    noise: &NoiseSpec,
) -> Result<f64> {
    let loop_filter = residual_filter(theta, theta0, structure)?.mul(structure.m_filter());
    if !loop_filter.is_stable() {
        return Ok(f64::INFINITY);
    }
    let raw = stationary_variance_exact(&loop_filter, noise.lambda_s)?;
    let offset = match structure.kind() {
        StructureKind::Fir1 if theta0.get(0).abs() > 1.0 => v_min(theta0, noise)?,
        _ => 0.0,
    };
    Ok(raw - offset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMethod {
    ClosedForm,
    FiniteDifference,
}

/// The FIR1 curvature constant p = (h0^2 - 2 h0 b0 + 1)/(1 - b0^2).
pub fn fir1_p(theta0: &ThetaVector) -> f64 {
    let (b0, h0) = (theta0.get(0), theta0.get(1));
    (h0 * h0 - 2.0 * h0 * b0 + 1.0) / (1.0 - b0 * b0)
}

/// Hessian of the application cost at theta0.
pub fn v_app_hessian(
    theta0: &ThetaVector,
    structure: &ModelStructure,
    noise: &NoiseSpec,
    method: HessianMethod,
) -> Result<DMatrix<f64>> {
    let hessian = match method {
        HessianMethod::ClosedForm => {
            if structure.kind() != StructureKind::Fir1 || theta0.get(0).abs() >= 1.0 {
                return Err(Error::Unsupported(
                    "closed-form Hessian available only for minimum-phase FIR1".into(),
                ));
            }
            let p = fir1_p(theta0);
            let s = 2.0 * noise.lambda_v;
            DMatrix::from_row_slice(2, 2, &[s * p, -s, -s, s])
        }
        HessianMethod::FiniteDifference => {
            let n = theta0.dim();
            let mut h = DMatrix::<f64>::zeros(n, n);
            let step: Vec<f64> = (0..n)
                .map(|i| 1e-4 * theta0.get(i).abs().max(1.0))
                .collect();
            let cost = |t: &ThetaVector| v_app(t, theta0, structure, noise);
            let center = cost(theta0)?;
            for i in 0..n {
                let vp = cost(&theta0.perturbed(i, step[i]))?;
                let vm = cost(&theta0.perturbed(i, -step[i]))?;
                h[(i, i)] = (vp - 2.0 * center + vm) / (step[i] * step[i]);
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let vpp = cost(&theta0.perturbed(i, step[i]).perturbed(j, step[j]))?;
                    let vpm = cost(&theta0.perturbed(i, step[i]).perturbed(j, -step[j]))?;
                    let vmp = cost(&theta0.perturbed(i, -step[i]).perturbed(j, step[j]))?;
                    let vmm = cost(&theta0.perturbed(i, -step[i]).perturbed(j, -step[j]))?;
                    let v = (vpp - vpm - vmp + vmm) / (4.0 * step[i] * step[j]);
                    h[(i, j)] = v;
                    h[(j, i)] = v;
                }
            }
            h
        }
    };
    let scale = hessian.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let min_eig = hessian
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    // the finite-difference route carries O(eps^2) truncation noise, so its
    // convexity floor is wider than the exact route's
    let floor = match method {
        HessianMethod::ClosedForm => -1e-8 * scale,
        HessianMethod::FiniteDifference => -1e-6 * scale,
    };
    if min_eig < floor {
        return Err(Error::NotLocallyConvex(min_eig));
    }
    Ok(hessian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::h2_variance;
    use crate::spectrum::frequency_grid;
    use approx::assert_abs_diff_eq;

    fn fir1_theta(b: f64, h: f64) -> ThetaVector {
        ModelStructure::fir1().theta(&[b, h]).unwrap()
    }

    #[test]
    fn design_min_phase_coefficients() {
        let ff = design_ff(&fir1_theta(0.5, 0.3), &ModelStructure::fir1()).unwrap();
        let (c0, c1, a0) = ff.fir_coefficients().unwrap();
        assert_abs_diff_eq!(c0, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c1, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(a0, 0.5, epsilon = 1e-12);
        assert!(ff.filter().is_stable());
    }

    #[test]
    fn design_non_min_phase_coefficients() {
        let ff = design_ff(&fir1_theta(2.0, 0.5), &ModelStructure::fir1()).unwrap();
        let (c0, c1, a0) = ff.fir_coefficients().unwrap();
        assert_abs_diff_eq!(c0, 0.4375, epsilon = 1e-12);
        assert_abs_diff_eq!(c1, 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(a0, 0.5, epsilon = 1e-12);
        assert!(ff.filter().is_stable());
    }

    #[test]
    fn design_shared_pole_constant() {
        let s = ModelStructure::shared_pole();
        let theta = s.theta(&[1.0, 0.3, -0.5]).unwrap();
        let ff = design_ff(&theta, &s).unwrap();
        assert_abs_diff_eq!(ff.filter().constant_gain().unwrap(), -0.3, epsilon = 1e-12);
    }

    #[test]
    fn design_rejects_margin_and_zero_gain() {
        assert!(matches!(
            design_ff(&fir1_theta(1.0, 0.3), &ModelStructure::fir1()),
            Err(Error::StabilityMargin)
        ));
        let s = ModelStructure::shared_pole();
        let theta = s.theta(&[0.0, 0.3, -0.5]).unwrap();
        assert!(matches!(design_ff(&theta, &s), Err(Error::ZeroPlantGain)));
    }

    #[test]
    fn min_phase_cancellation_on_grid() {
        let s = ModelStructure::fir1();
        let theta0 = fir1_theta(0.5, 0.3);
        let ff = design_ff(&theta0, &s).unwrap();
        let loop_filter = s
            .h(&theta0)
            .unwrap()
            .add(&s.g(&theta0).unwrap().mul(ff.filter()));
        for &w in &frequency_grid() {
            assert!(loop_filter.freq_response(w).norm() < 1e-10);
        }
    }

    #[test]
    fn v_app_zero_at_truth() {
        let s = ModelStructure::fir1();
        let noise = NoiseSpec::white(1.0, 1.0).unwrap();
        let theta0 = fir1_theta(0.5, 0.3);
        assert_abs_diff_eq!(
            v_app(&theta0, &theta0, &s, &noise).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // non-minimum phase: zero after V_min subtraction
        let theta0 = fir1_theta(2.0, 0.5);
        assert_abs_diff_eq!(
            v_app(&theta0, &theta0, &s, &noise).unwrap(),
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn v_app_matches_closed_form() {
        // V_app = (c^2 + d^2 - 2 c d b)/(1 - b^2) lambda_v
        let s = ModelStructure::fir1();
        let noise = NoiseSpec::white(1.0, 1.0).unwrap();
        let theta0 = fir1_theta(0.5, 0.3);
        let theta = fir1_theta(0.5, 0.4);
        let (b0, h0, b, h) = (0.5, 0.3, 0.5, 0.4);
        let c = h0 - h + b - b0;
        let d = h0 * b - b0 * h;
        let expect = (c * c + d * d - 2.0 * c * d * b) / (1.0 - b * b);
        let got = v_app(&theta, &theta0, &s, &noise).unwrap();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
        // cross-check against the certified impulse route
        let ff = design_ff(&theta, &s).unwrap();
        let lf = s
            .h(&theta0)
            .unwrap()
            .add(&s.g(&theta0).unwrap().mul(ff.filter()));
        assert_abs_diff_eq!(got, h2_variance(&lf, 1.0).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn v_min_values() {
        let noise = NoiseSpec::white(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            v_min(&fir1_theta(2.0, 0.5), &noise).unwrap(),
            0.421875,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(v_min(&fir1_theta(2.0, 2.0), &noise).unwrap(), 0.0);
        let noise2 = NoiseSpec::white(1.0, 2.0).unwrap();
        assert_abs_diff_eq!(
            v_min(&fir1_theta(-2.0, 0.5), &noise2).unwrap(),
            2.34375,
            epsilon = 1e-12
        );
        assert!(v_min(&fir1_theta(0.5, 0.3), &noise).is_err());
    }

    #[test]
    fn v_min_consistent_with_variance_at_truth() {
        // the mirrored controller's residual variance equals V_min
        let s = ModelStructure::fir1();
        let noise = NoiseSpec::white(1.0, 1.0).unwrap();
        let theta0 = fir1_theta(2.0, 0.5);
        let ff = design_ff(&theta0, &s).unwrap();
        let lf = s
            .h(&theta0)
            .unwrap()
            .add(&s.g(&theta0).unwrap().mul(ff.filter()));
        let var = stationary_variance_exact(&lf, 1.0).unwrap();
        assert_abs_diff_eq!(var, v_min(&theta0, &noise).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn hessian_closed_form_values() {
        let s = ModelStructure::fir1();
        let noise = NoiseSpec::white(1.0, 1.0).unwrap();
        // b0 = h0 = 0.5 -> p = 1
        let h =
            v_app_hessian(&fir1_theta(0.5, 0.5), &s, &noise, HessianMethod::ClosedForm).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(0, 1)], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(1, 1)], 2.0, epsilon = 1e-12);
        // b0 = 0.5, h0 = 0.3 -> p = 1.053333...
        let h =
            v_app_hessian(&fir1_theta(0.5, 0.3), &s, &noise, HessianMethod::ClosedForm).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 2.0 * 0.79 / 0.75, epsilon = 1e-10);
    }

    #[test]
    fn hessian_finite_difference_matches_closed_form() {
        let s = ModelStructure::fir1();
        let noise = NoiseSpec::white(1.0, 1.0).unwrap();
        for &(b0, h0) in &[(0.5, 0.3), (0.0, 0.8), (-0.7, -0.2), (0.9, 0.9)] {
            let theta0 = fir1_theta(b0, h0);
            let hc = v_app_hessian(&theta0, &s, &noise, HessianMethod::ClosedForm).unwrap();
            let hf = v_app_hessian(&theta0, &s, &noise, HessianMethod::FiniteDifference).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(
                        hf[(i, j)],
                        hc[(i, j)],
                        epsilon = 1e-4 * hc[(i, j)].abs().max(1e-6)
                    );
                }
            }
        }
    }

    #[test]
    fn hessian_shared_pole_zero_b_row() {
        let s = ModelStructure::shared_pole();
        let noise = NoiseSpec::white(1.0, 3.0).unwrap();
        let theta0 = s.theta(&[1.0, 0.3, -0.5]).unwrap();
        let h = v_app_hessian(&theta0, &s, &noise, HessianMethod::FiniteDifference).unwrap();
        // V'' = 2 lambda_v/(1-b0^2) grad (k2/k1 slope) outer product; b row zero
        let scale = 2.0 * 3.0 / (1.0 - 0.25);
        assert_abs_diff_eq!(h[(0, 0)], scale * 0.09, epsilon = 1e-4);
        assert_abs_diff_eq!(h[(0, 1)], -scale * 0.3, epsilon = 1e-4);
        assert_abs_diff_eq!(h[(1, 1)], scale, epsilon = 1e-4);
        for i in 0..3 {
            assert_abs_diff_eq!(h[(i, 2)], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(h[(2, i)], 0.0, epsilon = 1e-9);
        }
    }
}
