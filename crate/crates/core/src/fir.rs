//! Closed-form optimal input design for first-order FIR subsystems.
//!
//! Correlations are expressed per-sample: r_u(0) is the input power and
//! r_uv(0) the input/disturbance cross covariance. The application LMI reads
//! N/(lambda_e kappa) [[r_u(0), r_uv(0)], [r_uv(0), lambda_v]] >= gamma lambda_v [[p, -1], [-1, 1]],
//! i.e. gamma/2 times the application Hessian on the right.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::ffctrl::fir1_p;
use crate::model::{ApplicationSpec, NoiseSpec, ThetaVector};

/// Band around |b0| = 1 in which both closed-form regimes blow up.
const REGIME_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    MinPhase,
    NonMinPhase,
    WhiteBaseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirDesignResult {
    pub r_u0: f64,
    pub r_uv0: f64,
    pub feasible: bool,
    pub regime: Regime,
    /// N minus the feasibility threshold gamma lambda_e kappa (times the
    /// non-minimum-phase factor where applicable); positive when feasible.
    pub feasibility_margin: f64,
    pub kappa: f64,
    pub lambda_v: f64,
}

impl FirDesignResult {
    /// Minimum eigenvalue of the application LMI slack at (r_u0, r_uv0).
    pub fn lmi_slack(
        &self,
        vhalf: &Matrix2<f64>,
        spec: &ApplicationSpec,
        noise: &NoiseSpec,
    ) -> f64 {
        lmi_slack_min_eig(
            self.r_u0,
            self.r_uv0,
            vhalf,
            spec.n_samples as f64,
            noise.lambda_e,
            self.kappa,
            spec.gamma,
            self.lambda_v,
        )
    }
}

/// Identification-time realization u_t = K v_t + r_t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirRealization {
    pub k_gain: f64,
    pub lambda_r: f64,
}

#[allow(clippy::too_many_arguments)]
fn lmi_slack_min_eig(
    r_u0: f64,
    r_uv0: f64,
    vhalf: &Matrix2<f64>,
    n: f64,
    lambda_e: f64,
    kappa: f64,
    gamma: f64,
    lambda_v: f64,
) -> f64 {
    let scale = n / (lambda_e * kappa);
    let info = Matrix2::new(r_u0, r_uv0, r_uv0, lambda_v) * scale;
    let slack = info - vhalf * gamma;
    slack
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Guard: the returned correlations satisfy the LMI and flipping the sign of
/// r_uv(0) never does better.
fn sign_guard(
    result: &FirDesignResult,
    vhalf: &Matrix2<f64>,
    spec: &ApplicationSpec,
    noise: &NoiseSpec,
) -> Result<()> {
    if !result.feasible {
        return Ok(());
    }
    let neg = result.lmi_slack(vhalf, spec, noise);
    let scale = vhalf.amax().max(1.0) * spec.gamma;
    if neg < -1e-9 * scale {
        return Err(Error::Inconsistency(format!(
            "closed-form solution violates the application LMI (slack {neg:.3e})"
        )));
    }
    if result.r_uv0 != 0.0 {
        let flipped = FirDesignResult {
            r_uv0: -result.r_uv0,
            ..result.clone()
        }
        .lmi_slack(vhalf, spec, noise);
        if flipped > neg + 1e-9 * scale {
            return Err(Error::Inconsistency(
                "sign-flipped cross covariance improves the LMI slack".into(),
            ));
        }
    }
    Ok(())
}

fn common(spec: &ApplicationSpec, noise: &NoiseSpec) -> Result<(f64, f64, f64, f64, f64)> {
    spec.validate()?;
    noise.require_positive()?;
    let kappa = spec.kappa(2)?;
    let n = spec.n_samples as f64;
    // correlation scale gamma lambda_e kappa / N
    let t = spec.gamma * noise.lambda_e * kappa / n;
    Ok((kappa, n, t, noise.lambda_e, noise.lambda_v))
}

/// Optimal correlations for a minimum-phase plant (|b0| < 1):
/// r_u(0) = gamma lambda_e lambda_v kappa p / N,
/// r_uv(0) = -gamma lambda_e lambda_v kappa / N.
pub fn solve_min_phase(
    theta0: &ThetaVector,
    spec: &ApplicationSpec,
    noise: &NoiseSpec,
) -> Result<FirDesignResult> {
    let b0 = theta0.get(0);
    if b0.abs() >= 1.0 - REGIME_BAND {
        return Err(Error::WrongRegime(format!(
            "minimum-phase solution needs |b0| < 1, got b0 = {b0}"
        )));
    }
    let (kappa, n, t, lambda_e, lambda_v) = common(spec, noise)?;
    let p = fir1_p(theta0);
    let result = FirDesignResult {
        r_u0: t * lambda_v * p,
        r_uv0: -t * lambda_v,
        feasible: n / (lambda_e * kappa) - spec.gamma > 0.0,
        regime: Regime::MinPhase,
        feasibility_margin: n - spec.gamma * lambda_e * kappa,
        kappa,
        lambda_v,
    };
    let vhalf = Matrix2::new(p, -1.0, -1.0, 1.0) * lambda_v;
    sign_guard(&result, &vhalf, spec, noise)?;
    Ok(result)
}

/// The non-minimum-phase input-power constant p2.
pub fn fir1_p2(theta0: &ThetaVector) -> f64 {
    let (b0, h0) = (theta0.get(0), theta0.get(1));
    let b2 = b0 * b0;
    let b3 = b2 * b0;
    let b4 = b2 * b2;
    let b5 = b4 * b0;
    let b6 = b4 * b2;
    (h0 * h0 * (b6 + 16.0 * b2 - 6.0 * b4 - 10.0)
        + h0 * (4.0 * b5 - 18.0 * b3 + 12.0 * b0)
        + 4.0 * b4
        - 3.0 * b2)
        / (b6 * (b2 - 1.0))
}

/// Cross-covariance coefficient of the non-minimum-phase optimum:
/// r_uv(0) = -(gamma lambda_e lambda_v kappa / N) * this.
pub fn fir1_cross_coefficient(theta0: &ThetaVector) -> f64 {
    let (b0, h0) = (theta0.get(0), theta0.get(1));
    let b2 = b0 * b0;
    let b3 = b2 * b0;
    let b4 = b2 * b2;
    let b5 = b4 * b0;
    (h0 * (b4 - 3.0 * b2 + 4.0) + 2.0 * b3 - 3.0 * b0) / b5
}

/// Feasibility factor (b0^4 - b0^2 + 1)/b0^4 of the non-minimum-phase case.
pub fn fir1_nmp_factor(theta0: &ThetaVector) -> f64 {
    let b2 = theta0.get(0) * theta0.get(0);
    let b4 = b2 * b2;
    (b4 - b2 + 1.0) / b4
}

/// Optimal correlations for a non-minimum-phase plant (|b0| > 1).
pub fn solve_non_min_phase(
    theta0: &ThetaVector,
    spec: &ApplicationSpec,
    noise: &NoiseSpec,
) -> Result<FirDesignResult> {
    let b0 = theta0.get(0);
    if b0.abs() <= 1.0 + REGIME_BAND {
        return Err(Error::WrongRegime(format!(
            "non-minimum-phase solution needs |b0| > 1, got b0 = {b0}"
        )));
    }
    let (kappa, n, t, lambda_e, lambda_v) = common(spec, noise)?;
    let p2 = fir1_p2(theta0);
    let cross = fir1_cross_coefficient(theta0);
    let factor = fir1_nmp_factor(theta0);
    let result = FirDesignResult {
        r_u0: t * lambda_v * p2,
        r_uv0: -t * lambda_v * cross,
        feasible: n / (lambda_e * kappa) - spec.gamma * factor >= 0.0,
        regime: Regime::NonMinPhase,
        feasibility_margin: n - spec.gamma * lambda_e * kappa * factor,
        kappa,
        lambda_v,
    };
    let vhalf = Matrix2::new(p2, -cross, -cross, factor) * lambda_v;
    sign_guard(&result, &vhalf, spec, noise)?;
    Ok(result)
}

/// Optimal white input uncorrelated with the disturbance (|b0| < 1):
/// r_uv(0) = 0 and
/// r_u(0) = gamma lambda_e lambda_v kappa p / N
///        + gamma^2 lambda_e^2 kappa^2 lambda_v p / (N (N - gamma lambda_e kappa)).
pub fn solve_white_baseline(
    theta0: &ThetaVector,
    spec: &ApplicationSpec,
    noise: &NoiseSpec,
) -> Result<FirDesignResult> {
    let b0 = theta0.get(0);
    if b0.abs() >= 1.0 - REGIME_BAND {
        return Err(Error::WrongRegime(format!(
            "white baseline needs |b0| < 1, got b0 = {b0}"
        )));
    }
    let (kappa, n, t, lambda_e, lambda_v) = common(spec, noise)?;
    let p = fir1_p(theta0);
    let glk = spec.gamma * lambda_e * kappa;
    let feasible = n > glk;
    let excess = if feasible {
        glk * glk * lambda_v * p / (n * (n - glk))
    } else {
        f64::INFINITY
    };
    Ok(FirDesignResult {
        r_u0: t * lambda_v * p + excess,
        r_uv0: 0.0,
        feasible,
        regime: Regime::WhiteBaseline,
        feasibility_margin: n - glk,
        kappa,
        lambda_v,
    })
}

/// Converts optimal correlations into the experiment u_t = K v_t + r_t with
/// K = r_uv(0)/lambda_v and lambda_r = r_u(0) - K^2 lambda_v.
pub fn realize_fir(result: &FirDesignResult, noise: &NoiseSpec) -> Result<FirRealization> {
    if !result.feasible {
        return Err(Error::Infeasible(format!(
            "cannot realize an infeasible design (margin {:.3})",
            result.feasibility_margin
        )));
    }
    let lambda_v = noise.lambda_v;
    let k_gain = if lambda_v > 0.0 {
        result.r_uv0 / lambda_v
    } else {
        0.0
    };
    let lambda_r = result.r_u0 - k_gain * k_gain * lambda_v;
    if lambda_r < -1e-12 {
        return Err(Error::Inconsistency(format!(
            "negative reference variance {lambda_r:.3e}"
        )));
    }
    Ok(FirRealization {
        k_gain,
        lambda_r: lambda_r.max(0.0),
    })
}
