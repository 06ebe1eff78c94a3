//! Experiment configuration and result-file schemas.
//!
//! Configs and results are JSON with a schema_version field; polynomials
//! serialize as ascending coefficient lists. Unknown fields are rejected so
//! that typos fail loudly instead of silently using defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::RationalFilter;
use crate::fir::{FirDesignResult, Regime};
use crate::model::{ApplicationSpec, ModelStructure, NoiseSpec, StructureKind, ThetaVector};
use crate::moments::{DesignObjective, MomentDesign, MomentSequence, ValidityReport};
use crate::poly::Polynomial;
use crate::realization::ExperimentRealization;
use crate::sdp::SolveStatus;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    pub kind: StructureKind,
    pub theta0: Vec<f64>,
    #[serde(default = "identity_coeffs")]
    pub m_num: Vec<f64>,
    #[serde(default = "identity_coeffs")]
    pub m_den: Vec<f64>,
}

fn identity_coeffs() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveConfig {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub floor: f64,
    pub master_seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trials: 500,
            floor: 0.93,
            master_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub structure: StructureConfig,
    pub noise: NoiseSpec,
    pub application: ApplicationConfig,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let structure = self.model_structure()?;
        if self.structure.theta0.len() != structure.theta_dim() {
            return Err(Error::Config(format!(
                "theta0 has {} entries, structure needs {}",
                self.structure.theta0.len(),
                structure.theta_dim()
            )));
        }
        self.application_spec()?.validate()?;
        NoiseSpec::new(
            self.noise.lambda_e,
            self.noise.lambda_s,
            self.noise.lambda_v,
        )?;
        if !(self.monte_carlo.floor >= 0.0 && self.monte_carlo.floor <= 1.0) {
            return Err(Error::Config("monte_carlo.floor must lie in [0, 1]".into()));
        }
        if self.monte_carlo.trials == 0 {
            return Err(Error::Config("monte_carlo.trials must be >= 1".into()));
        }
        Ok(())
    }

    pub fn model_structure(&self) -> Result<ModelStructure> {
        let m = RationalFilter::from_coeffs(&self.structure.m_num, &self.structure.m_den)?;
        ModelStructure::new(self.structure.kind, m)
    }

    pub fn theta0(&self) -> Result<ThetaVector> {
        self.model_structure()?.theta(&self.structure.theta0)
    }

    pub fn application_spec(&self) -> Result<ApplicationSpec> {
        let mut spec = ApplicationSpec::new(
            self.application.gamma,
            self.application.alpha,
            self.application.n_samples,
        )?;
        spec.kappa_override = self.application.kappa;
        spec.dof_override = self.application.dof;
        Ok(spec)
    }

    pub fn design_objective(&self) -> DesignObjective {
        match self.objective {
            ObjectiveConfig::Input => DesignObjective::InputPower,
            ObjectiveConfig::Output => DesignObjective::OutputPower,
        }
    }
}

fn status_str(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::NumericalFailure => "numerical_failure",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentEntry {
    pub k: usize,
    pub m: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidityOut {
    pub cond1_max_violation: f64,
    pub cond2_max_violation: f64,
    pub toeplitz_min_eig: f64,
    pub valid: bool,
}

impl From<ValidityReport> for ValidityOut {
    fn from(v: ValidityReport) -> Self {
        Self {
            cond1_max_violation: v.cond1_max_violation,
            cond2_max_violation: v.cond2_max_violation,
            toeplitz_min_eig: v.toeplitz_min_eig,
            valid: v.valid,
        }
    }
}

/// design.json: either the FIR closed form or the moment SDP output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum DesignFile {
    FirClosedForm {
        schema_version: u32,
        status: String,
        feasible: bool,
        regime: String,
        feasibility_margin: f64,
        kappa: f64,
        lambda_v: f64,
        r_u0: f64,
        r_uv0: f64,
        objective_value: f64,
    },
    MomentSdp {
        schema_version: u32,
        status: String,
        objective: ObjectiveConfig,
        objective_value: f64,
        kappa: f64,
        order: usize,
        d_coeffs: Vec<f64>,
        lambda_s: f64,
        moments: Vec<MomentEntry>,
        validity: ValidityOut,
        lmi_min_eig: f64,
        fixed_channel_margin: f64,
    },
}

impl DesignFile {
    pub fn from_fir(result: &FirDesignResult) -> Self {
        let regime = match result.regime {
            Regime::MinPhase => "min_phase",
            Regime::NonMinPhase => "non_min_phase",
            Regime::WhiteBaseline => "white_baseline",
        };
        DesignFile::FirClosedForm {
            schema_version: SCHEMA_VERSION,
            status: if result.feasible {
                "optimal"
            } else {
                "infeasible"
            }
            .into(),
            feasible: result.feasible,
            regime: regime.into(),
            feasibility_margin: result.feasibility_margin,
            kappa: result.kappa,
            lambda_v: result.lambda_v,
            r_u0: result.r_u0,
            r_uv0: result.r_uv0,
            objective_value: result.r_u0,
        }
    }

    pub fn from_moments(
        design: &MomentDesign,
        objective: ObjectiveConfig,
        d_coeffs: &[f64],
        lambda_s: f64,
    ) -> Self {
        DesignFile::MomentSdp {
            schema_version: SCHEMA_VERSION,
            status: status_str(design.status).into(),
            objective,
            objective_value: design.objective_value,
            kappa: design.kappa,
            order: design.moments.order(),
            d_coeffs: d_coeffs.to_vec(),
            lambda_s,
            moments: design
                .moments
                .mats()
                .iter()
                .enumerate()
                .map(|(k, m)| MomentEntry {
                    k,
                    m: [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]],
                })
                .collect(),
            validity: design.validity.into(),
            lmi_min_eig: design.lmi_min_eig,
            fixed_channel_margin: design.fixed_channel_margin,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("design file: {e}")))
    }

    /// Moment sequence of a moment-SDP design file.
    pub fn moment_sequence(&self) -> Result<MomentSequence> {
        match self {
            DesignFile::MomentSdp { moments, .. } => {
                let mats = moments
                    .iter()
                    .map(|e| nalgebra::Matrix2::new(e.m[0][0], e.m[0][1], e.m[1][0], e.m[1][1]))
                    .collect();
                MomentSequence::new(mats)
            }
            DesignFile::FirClosedForm { .. } => Err(Error::Config(
                "design file holds FIR correlations, not moments".into(),
            )),
        }
    }

    pub fn is_feasible(&self) -> bool {
        match self {
            DesignFile::FirClosedForm { feasible, .. } => *feasible,
            DesignFile::MomentSdp { status, .. } => status == "optimal",
        }
    }
}

/// realization.json: the identification-time experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationFile {
    pub schema_version: u32,
    pub k_num: Vec<f64>,
    pub k_den: Vec<f64>,
    pub a_max: f64,
    pub d_coeffs: Vec<f64>,
}

impl RealizationFile {
    pub fn from_realization(r: &ExperimentRealization) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            k_num: r.k_filter.numerator().coeffs().to_vec(),
            k_den: r.k_filter.denominator().coeffs().to_vec(),
            a_max: r.a_max,
            d_coeffs: r.d.coeffs().to_vec(),
        }
    }

    pub fn to_realization(&self) -> Result<ExperimentRealization> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} in realization file",
                self.schema_version
            )));
        }
        Ok(ExperimentRealization {
            k_filter: RationalFilter::from_coeffs(&self.k_num, &self.k_den)?,
            a_max: self.a_max,
            d: Polynomial::new(&self.d_coeffs),
            null_multiplicity: 1,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("realization serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("realization file: {e}")))
    }
}
