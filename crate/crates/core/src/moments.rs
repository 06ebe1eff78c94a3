//! Optimal input design over generalized moments of the joint input and
//! disturbance spectrum.
//!
//! The decision variables are 2x2 moment matrices m_0..m_n of the joint
//! spectrum weighted by 1/|d|^2, where d clears the denominators of the
//! predictor gradient. The information matrix is affine in the moments, so
//! the design becomes a small SDP: minimize a linear power functional
//! subject to the application LMI and the realizability conditions
//!   1. the disturbance channel m_{k,22} is pinned to its autocovariance,
//!   2. sum_l d_l m_{k-l,21} = 0 for k = 1..n (causality of the coupling),
//!   3. the block-Toeplitz matrix T_n of the moments is PSD.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};
use crate::ffctrl::{v_app_hessian, HessianMethod};
use crate::filter::RationalFilter;
use crate::model::{ApplicationSpec, ModelStructure, NoiseSpec, StructureKind, ThetaVector};
use crate::poly::Polynomial;
use crate::sdp::{ConicProblem, PsdBlock, SolveStatus};

/// Tolerance for the three validity conditions.
pub const VALIDITY_TOL: f64 = 1e-7;

/// Moment weight denominator d(z) with all roots strictly outside the closed
/// unit disc.
#[derive(Debug, Clone, PartialEq)]
pub struct DenominatorSpec {
    d: Polynomial,
}

impl DenominatorSpec {
    pub fn new(d: Polynomial) -> Result<Self> {
        if d.is_zero() || d.coeff(0) == 0.0 {
            return Err(Error::DegenerateDenominator(
                "moment weight d must have a nonzero constant term".into(),
            ));
        }
        for root in d.roots() {
            if root.norm() <= 1.0 + 1e-9 {
                return Err(Error::DegenerateDenominator(format!(
                    "root {root} of d not strictly outside the unit disc"
                )));
            }
        }
        Ok(Self { d })
    }

    /// Least common denominator of the predictor gradients at theta0.
    pub fn for_structure(structure: &ModelStructure, theta0: &ThetaVector) -> Result<Self> {
        match structure.kind() {
            StructureKind::Fir1 => Self::new(Polynomial::one()),
            StructureKind::SharedPole => {
                let b = theta0.get(2);
                let lin = Polynomial::new(&[1.0, b]);
                Self::new(lin.mul(&lin))
            }
        }
    }

    pub fn poly(&self) -> &Polynomial {
        &self.d
    }

    pub fn degree(&self) -> usize {
        self.d.degree()
    }
}

/// Real coefficient matrices N_i with F_0(e^{-jw}) d(e^{-jw}) = sum_i N_i e^{-jiw}
/// (after stripping any delay common to every entry, which leaves the
/// information integral unchanged).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientNumerators {
    mats: Vec<DMatrix<f64>>,
    theta_dim: usize,
}

impl GradientNumerators {
    pub fn compute(
        structure: &ModelStructure,
        theta0: &ThetaVector,
        d: &DenominatorSpec,
    ) -> Result<Self> {
        if !structure.m_filter().is_identity() {
            return Err(Error::Unsupported(
                "moment assembly requires white measured disturbance (M = 1)".into(),
            ));
        }
        let grads = structure.gradient_filters(theta0)?;
        let nt = grads.len();
        let mut entries: Vec<[Polynomial; 2]> = Vec::with_capacity(nt);
        for (dg, dh) in &grads {
            let col0 = clear_denominator(dg, d)?;
            let col1 = clear_denominator(dh, d)?;
            entries.push([col0, col1]);
        }
        // strip a delay common to every nonzero entry
        let mut common = usize::MAX;
        for row in &entries {
            for p in row {
                if !p.is_zero() {
                    let low = p.coeffs().iter().position(|&c| c != 0.0).unwrap_or(0);
                    common = common.min(low);
                }
            }
        }
        if common == usize::MAX {
            return Err(Error::InvalidArgument(
                "all predictor gradients vanish at theta0".into(),
            ));
        }
        if common > 0 {
            for row in entries.iter_mut() {
                for p in row.iter_mut() {
                    if !p.is_zero() {
                        *p = Polynomial::new(&p.coeffs()[common..]);
                    }
                }
            }
        }
        let degree = entries
            .iter()
            .flat_map(|row| row.iter())
            .filter(|p| !p.is_zero())
            .map(|p| p.degree())
            .max()
            .unwrap_or(0);
        let mut mats = vec![DMatrix::<f64>::zeros(nt, 2); degree + 1];
        for (row, cols) in entries.iter().enumerate() {
            for (col, p) in cols.iter().enumerate() {
                for (i, mat) in mats.iter_mut().enumerate() {
                    mat[(row, col)] = p.coeff(i);
                }
            }
        }
        Ok(Self {
            mats,
            theta_dim: nt,
        })
    }

    pub fn degree(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }
}

/// (filter.num * d) / filter.den, requiring exact division.
fn clear_denominator(filter: &RationalFilter, d: &DenominatorSpec) -> Result<Polynomial> {
    if filter.numerator().is_zero() {
        return Ok(Polynomial::zero());
    }
    let prod = filter.numerator().mul(d.poly());
    let (quot, rem) = prod.div_rem(filter.denominator())?;
    let scale = prod.coeffs().iter().fold(1.0f64, |m, c| m.max(c.abs()));
    if rem.coeffs().iter().any(|c| c.abs() > 1e-10 * scale) {
        return Err(Error::InvalidArgument(
            "d is not a common denominator of the gradients".into(),
        ));
    }
    Ok(quot)
}

/// Sequence m_0..m_n of real 2x2 moment matrices; m_{-k} is m_k transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSequence {
    mats: Vec<Matrix2<f64>>,
}

impl MomentSequence {
    pub fn new(mats: Vec<Matrix2<f64>>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::InvalidArgument("empty moment sequence".into()));
        }
        let m0 = &mats[0];
        let scale = mats
            .iter()
            .flat_map(|m| m.iter())
            .fold(1.0f64, |s, &v| s.max(v.abs()));
        if (m0[(0, 1)] - m0[(1, 0)]).abs() > 1e-9 * scale {
            return Err(Error::InvalidArgument("m_0 must be symmetric".into()));
        }
        if mats.iter().flat_map(|m| m.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite moment entry".into()));
        }
        Ok(Self { mats })
    }

    pub fn order(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn mat(&self, k: usize) -> &Matrix2<f64> {
        &self.mats[k]
    }

    pub fn mats(&self) -> &[Matrix2<f64>] {
        &self.mats
    }

    /// Entry of m_k for signed k; negative lags transpose.
    pub fn entry(&self, k: i64, row: usize, col: usize) -> f64 {
        if k >= 0 {
            self.mats[k as usize][(row, col)]
        } else {
            self.mats[(-k) as usize][(col, row)]
        }
    }

    /// Block-Toeplitz matrix T_n; PSD exactly when the sequence extends to a
    /// valid joint spectrum.
    pub fn toeplitz(&self) -> DMatrix<f64> {
        let n = self.order();
        let size = 2 * (n + 1);
        let mut t = DMatrix::<f64>::zeros(size, size);
        for bi in 0..=n {
            for bj in 0..=n {
                let k = bi as i64 - bj as i64;
                for r in 0..2 {
                    for c in 0..2 {
                        t[(2 * bi + r, 2 * bj + c)] = self.entry(k, r, c);
                    }
                }
            }
        }
        t
    }
}

/// Autocovariance sequence of white noise (variance lambda_s) filtered by
/// 1/d(q^-1), i.e. the pinned values of m_{k,22} for k = 0..n.
pub fn fixed_second_channel(d: &DenominatorSpec, lambda_s: f64, n: usize) -> Result<Vec<f64>> {
    if !lambda_s.is_finite() || lambda_s < 0.0 {
        return Err(Error::InvalidArgument(
            "lambda_s must be finite and nonnegative".into(),
        ));
    }
    let filter = RationalFilter::new(Polynomial::one(), d.poly().clone())?;
    let (g, _) = filter.impulse_until_tail(1e-14)?;
    let mut f = vec![0.0; n + 1];
    for (k, fk) in f.iter_mut().enumerate() {
        let mut acc = 0.0;
        for t in 0..g.len().saturating_sub(k) {
            acc += g[t] * g[t + k];
        }
        *fk = lambda_s * acc;
    }
    Ok(f)
}

/// Information matrix P^-1 = (1/lambda_e) sum_{i,j} N_i m_{j-i} N_j'.
pub fn information_matrix(
    numerators: &GradientNumerators,
    moments: &MomentSequence,
    lambda_e: f64,
) -> Result<DMatrix<f64>> {
    if moments.order() < numerators.degree() {
        return Err(Error::OrderMismatch {
            order: moments.order(),
            degree: numerators.degree(),
        });
    }
    if !lambda_e.is_finite() || lambda_e <= 0.0 {
        return Err(Error::InvalidArgument("lambda_e must be positive".into()));
    }
    let nt = numerators.theta_dim();
    let mats = numerators.mats();
    let mut pinv = DMatrix::<f64>::zeros(nt, nt);
    for (a, na) in mats.iter().enumerate() {
        for (b, nb) in mats.iter().enumerate() {
            let shift = b as i64 - a as i64;
            let mut mid = Matrix2::<f64>::zeros();
            for r in 0..2 {
                for c in 0..2 {
                    mid[(r, c)] = moments.entry(shift, r, c);
                }
            }
            for i in 0..nt {
                for j in 0..nt {
                    let mut acc = 0.0;
                    for r in 0..2 {
                        for c in 0..2 {
                            acc += na[(i, r)] * mid[(r, c)] * nb[(j, c)];
                        }
                    }
                    pinv[(i, j)] += acc / lambda_e;
                }
            }
        }
    }
    Ok(pinv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignObjective {
    /// Input signal energy (1/2pi) integral of Phi_u.
    InputPower,
    /// Output variance during the experiment, excluding the lambda_e term.
    OutputPower,
}

/// Outcome of the three validity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReport {
    pub cond1_max_violation: f64,
    pub cond2_max_violation: f64,
    pub toeplitz_min_eig: f64,
    pub valid: bool,
}

/// Reports the worst violation of each validity condition.
pub fn moment_validity(
    moments: &MomentSequence,
    d: &DenominatorSpec,
    lambda_s: f64,
) -> Result<ValidityReport> {
    let n = moments.order();
    let f = fixed_second_channel(d, lambda_s, n)?;
    let mut cond1: f64 = 0.0;
    for (k, fk) in f.iter().enumerate() {
        cond1 = cond1.max((moments.mat(k)[(1, 1)] - fk).abs());
    }
    let mut cond2: f64 = 0.0;
    for k in 1..=n as i64 {
        let mut acc = 0.0;
        for (l, dl) in d.poly().coeffs().iter().enumerate() {
            acc += dl * moments.entry(k - l as i64, 1, 0);
        }
        cond2 = cond2.max(acc.abs());
    }
    let min_eig = moments
        .toeplitz()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let valid = cond1 <= VALIDITY_TOL && cond2 <= VALIDITY_TOL && min_eig >= -VALIDITY_TOL;
    Ok(ValidityReport {
        cond1_max_violation: cond1,
        cond2_max_violation: cond2,
        toeplitz_min_eig: min_eig,
        valid,
    })
}

/// Variable layout over the free moment entries: m_{k,22} are pinned and
/// m_{0,21} = m_{0,12}, leaving 2 + 3n scalars.
#[derive(Debug, Clone, Copy)]
struct VarLayout {
    order: usize,
}

impl VarLayout {
    fn count(&self) -> usize {
        2 + 3 * self.order
    }

    fn m11(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            2 + 3 * (k - 1)
        }
    }

    fn m12(&self, k: usize) -> usize {
        if k == 0 {
            1
        } else {
            2 + 3 * (k - 1) + 1
        }
    }

    fn m21(&self, k: usize) -> usize {
        if k == 0 {
            1
        } else {
            2 + 3 * (k - 1) + 2
        }
    }
}

/// Affine scalar in the layout variables.
#[derive(Debug, Clone)]
struct Affine {
    w: Vec<f64>,
    c: f64,
}

struct Assembly<'a> {
    layout: VarLayout,
    fixed: &'a [f64],
}

impl Assembly<'_> {
    fn entry(&self, k: i64, row: usize, col: usize) -> Affine {
        let (k, row, col) = if k >= 0 {
            (k as usize, row, col)
        } else {
            ((-k) as usize, col, row)
        };
        let mut w = vec![0.0; self.layout.count()];
        let mut c = 0.0;
        match (row, col) {
            (1, 1) => c = self.fixed[k],
            (0, 0) => w[self.layout.m11(k)] = 1.0,
            (0, 1) => w[self.layout.m12(k)] = 1.0,
            (1, 0) => w[self.layout.m21(k)] = 1.0,
            _ => unreachable!(),
        }
        Affine { w, c }
    }
}

/// The assembled design problem, ready to solve or dump.
#[derive(Debug, Clone)]
pub struct MomentProblem {
    pub structure_kind: StructureKind,
    pub d: DenominatorSpec,
    pub numerators: GradientNumerators,
    pub order: usize,
    pub fixed_channel: Vec<f64>,
    pub vhalf: DMatrix<f64>,
    pub kappa: f64,
    pub objective: DesignObjective,
    conic: ConicProblem,
    layout: VarLayout,
    lambda_e: f64,
    lambda_s: f64,
    gamma: f64,
    n_samples: f64,
    /// N minus the N needed to satisfy the disturbance-only information
    /// requirement; negative means infeasible regardless of the input.
    pub fixed_channel_margin: f64,
}

#[derive(Debug, Clone)]
pub struct MomentDesign {
    pub moments: MomentSequence,
    pub objective_value: f64,
    pub status: SolveStatus,
    pub validity: ValidityReport,
    /// Minimum eigenvalue of (N/kappa) P^-1 - (gamma/2) V''.
    pub lmi_min_eig: f64,
    pub information: DMatrix<f64>,
    pub kappa: f64,
    pub solver_status: String,
    pub fixed_channel_margin: f64,
}

/// Builds the SDP for the given structure, nominal parameters and objective.
pub fn assemble(
    structure: &ModelStructure,
    theta0: &ThetaVector,
    spec: &ApplicationSpec,
    noise: &NoiseSpec,
    objective: DesignObjective,
) -> Result<MomentProblem> {
    spec.validate()?;
    noise.require_positive()?;
    if !structure.m_filter().is_identity() {
        return Err(Error::Unsupported(
            "moment assembly requires white measured disturbance (M = 1)".into(),
        ));
    }
    let d = DenominatorSpec::for_structure(structure, theta0)?;
    let numerators = GradientNumerators::compute(structure, theta0, &d)?;
    let order = numerators.degree().max(d.degree());
    let fixed = fixed_second_channel(&d, noise.lambda_s, order)?;
    let kappa = spec.kappa(structure.theta_dim())?;

    let hess_method = match structure.kind() {
        StructureKind::Fir1 if theta0.get(0).abs() < 1.0 => HessianMethod::ClosedForm,
        _ => HessianMethod::FiniteDifference,
    };
    let vhalf = v_app_hessian(theta0, structure, noise, hess_method)? * 0.5;

    let layout = VarLayout { order };
    let nvars = layout.count();
    let asm = Assembly {
        layout,
        fixed: &fixed,
    };
    let nt = numerators.theta_dim();

    // application LMI block: (N/kappa) P^-1(x) - gamma Vhalf >= 0
    let scale = spec.n_samples as f64 / (kappa * noise.lambda_e);
    let mut lmi_const = vhalf.clone() * (-spec.gamma);
    let mut lmi_coeffs = vec![DMatrix::<f64>::zeros(nt, nt); nvars];
    let mats = numerators.mats();
    for (a, na) in mats.iter().enumerate() {
        for (b, nb) in mats.iter().enumerate() {
            let shift = b as i64 - a as i64;
            for r in 0..2 {
                for c in 0..2 {
                    let aff = asm.entry(shift, r, c);
                    // scale * N_a e_r e_c' N_b' contribution
                    let mut outer = DMatrix::<f64>::zeros(nt, nt);
                    for i in 0..nt {
                        for j in 0..nt {
                            outer[(i, j)] = na[(i, r)] * nb[(j, c)] * scale;
                        }
                    }
                    if aff.c != 0.0 {
                        lmi_const += &outer * aff.c;
                    }
                    for (v, &wv) in aff.w.iter().enumerate() {
                        if wv != 0.0 {
                            lmi_coeffs[v] += &outer * wv;
                        }
                    }
                }
            }
        }
    }

    // Toeplitz block
    let tsize = 2 * (order + 1);
    let mut t_const = DMatrix::<f64>::zeros(tsize, tsize);
    let mut t_coeffs = vec![DMatrix::<f64>::zeros(tsize, tsize); nvars];
    for bi in 0..=order {
        for bj in 0..=order {
            let k = bi as i64 - bj as i64;
            for r in 0..2 {
                for c in 0..2 {
                    let aff = asm.entry(k, r, c);
                    t_const[(2 * bi + r, 2 * bj + c)] += aff.c;
                    for (v, &wv) in aff.w.iter().enumerate() {
                        if wv != 0.0 {
                            t_coeffs[v][(2 * bi + r, 2 * bj + c)] += wv;
                        }
                    }
                }
            }
        }
    }

    // condition 2 equalities
    let mut equalities = Vec::new();
    for k in 1..=order as i64 {
        let mut row = vec![0.0; nvars];
        for (l, dl) in d.poly().coeffs().iter().enumerate() {
            let aff = asm.entry(k - l as i64, 1, 0);
            for (v, &wv) in aff.w.iter().enumerate() {
                row[v] += dl * wv;
            }
        }
        equalities.push((row, 0.0));
    }

    // objective
    let mut obj = vec![0.0; nvars];
    let mut obj_const = 0.0;
    match objective {
        DesignObjective::InputPower => {
            let delta = d.poly().conj_product()?;
            obj[layout.m11(0)] += delta.coeff(0);
            for k in 1..=order {
                obj[layout.m11(k)] += 2.0 * delta.coeff(k as i64);
            }
        }
        DesignObjective::OutputPower => {
            if structure.kind() != StructureKind::SharedPole {
                return Err(Error::Unsupported(
                    "output-power objective is defined for the shared-pole structure".into(),
                ));
            }
            let (k1, k2) = (theta0.get(0), theta0.get(1));
            let beta = Polynomial::new(&[1.0, theta0.get(2)]).conj_product()?;
            for k in 0..=beta.max_lag().min(order) {
                let mult = if k == 0 {
                    beta.coeff(0)
                } else {
                    2.0 * beta.coeff(k as i64)
                };
                let quad = [
                    (k1 * k1, asm.entry(k as i64, 0, 0)),
                    (k1 * k2, asm.entry(k as i64, 0, 1)),
                    (k1 * k2, asm.entry(k as i64, 1, 0)),
                    (k2 * k2, asm.entry(k as i64, 1, 1)),
                ];
                for (gain, aff) in quad {
                    obj_const += mult * gain * aff.c;
                    for (v, &wv) in aff.w.iter().enumerate() {
                        if wv != 0.0 {
                            obj[v] += mult * gain * wv;
                        }
                    }
                }
            }
        }
    }

    // disturbance-only feasibility margin along the direction the input
    // cannot excite (the parameter entering H alone); the information there
    // is pinned by condition 1, so the LMI along it caps the reachable N
    let fixed_dir = 1usize;
    let mut p_fixed = 0.0;
    for (a, na) in mats.iter().enumerate() {
        for (b, nb) in mats.iter().enumerate() {
            let lag = (b as i64 - a as i64).unsigned_abs() as usize;
            p_fixed += na[(fixed_dir, 1)] * fixed[lag] * nb[(fixed_dir, 1)] / noise.lambda_e;
        }
    }
    let rhs = spec.gamma * vhalf[(fixed_dir, fixed_dir)];
    let fixed_channel_margin = if rhs <= 0.0 {
        f64::INFINITY
    } else if p_fixed <= 0.0 {
        f64::NEG_INFINITY
    } else {
        spec.n_samples as f64 - kappa * rhs / p_fixed
    };

    let conic = ConicProblem {
        num_vars: nvars,
        objective: obj,
        objective_constant: obj_const,
        equalities,
        psd_blocks: vec![
            PsdBlock {
                size: tsize,
                constant: t_const,
                coeffs: t_coeffs,
            },
            PsdBlock {
                size: nt,
                constant: lmi_const,
                coeffs: lmi_coeffs,
            },
        ],
    };

    Ok(MomentProblem {
        structure_kind: structure.kind(),
        d,
        numerators,
        order,
        fixed_channel: fixed,
        vhalf,
        kappa,
        objective,
        conic,
        layout,
        lambda_e: noise.lambda_e,
        lambda_s: noise.lambda_s,
        gamma: spec.gamma,
        n_samples: spec.n_samples as f64,
        fixed_channel_margin,
    })
}

impl MomentProblem {
    /// Plain-text dump of the assembled SDP for solver cross-validation.
    pub fn debug_dump(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "moment design: order {}, kappa {:.6}, gamma {:.6}, N {}\n",
            self.order, self.kappa, self.gamma, self.n_samples
        ));
        s.push_str(&format!("d coefficients: {:?}\n", self.d.poly().coeffs()));
        s.push_str(&format!("fixed channel m_k22: {:?}\n", self.fixed_channel));
        s.push_str(&self.conic.debug_dump());
        s
    }

    pub fn conic(&self) -> &ConicProblem {
        &self.conic
    }

    fn moments_from_x(&self, x: &[f64]) -> Result<MomentSequence> {
        let mut mats = Vec::with_capacity(self.order + 1);
        for k in 0..=self.order {
            let m11 = x[self.layout.m11(k)];
            let m12 = x[self.layout.m12(k)];
            let m21 = x[self.layout.m21(k)];
            mats.push(Matrix2::new(m11, m12, m21, self.fixed_channel[k]));
        }
        MomentSequence::new(mats)
    }

    /// Solves the assembled problem and post-checks validity and the LMI.
    pub fn solve(&self) -> Result<MomentDesign> {
        if self.fixed_channel_margin < -1e-9 * self.n_samples.max(1.0) {
            return Err(Error::Infeasible(format!(
                "disturbance-channel information too small for the requirement: \
                 margin {:.6} samples (N = {})",
                self.fixed_channel_margin, self.n_samples
            )));
        }
        let sol = self.conic.solve()?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible(format!(
                "design SDP infeasible ({}); fixed-channel margin {:.6}",
                sol.solver_status, self.fixed_channel_margin
            )));
        }
        let moments = self.moments_from_x(&sol.x)?;
        let validity = moment_validity(&moments, &self.d, self.lambda_s)?;
        let information = information_matrix(&self.numerators, &moments, self.lambda_e)?;
        let lmi = &information * (self.n_samples / self.kappa) - &self.vhalf * self.gamma;
        let lmi_min_eig = lmi
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Ok(MomentDesign {
            moments,
            objective_value: sol.objective_value,
            status: sol.status,
            validity,
            lmi_min_eig,
            information,
            kappa: self.kappa,
            solver_status: sol.solver_status,
            fixed_channel_margin: self.fixed_channel_margin,
        })
    }
}

/// Assembles and solves the moment design in one call.
pub fn assemble_and_solve(
    structure: &ModelStructure,
    theta0: &ThetaVector,
    spec: &ApplicationSpec,
    noise: &NoiseSpec,
    objective: DesignObjective,
) -> Result<MomentDesign> {
    assemble(structure, theta0, spec, noise, objective)?.solve()
}
