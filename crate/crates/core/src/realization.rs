//! Converts an optimal moment sequence into an implementable experiment:
//! a reference spectrum Phi_r = |d|^2 a_max and the identification-time
//! feed-forward filter K = -q(z)/(p(z) M(z)) built from a null vector of
//! T_n - diag(a_max, 0, ..., a_max, 0).

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::RationalFilter;
use crate::moments::{DenominatorSpec, MomentSequence};
use crate::poly::Polynomial;

/// An implementable experiment: u_t = K v_t + r_t where r_t is white noise of
/// variance a_max filtered by the reversed-coefficient d polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRealization {
    pub k_filter: RationalFilter,
    pub a_max: f64,
    pub d: Polynomial,
    /// Dimension of the (near-)null space used for extraction.
    pub null_multiplicity: usize,
}

impl ExperimentRealization {
    /// Reference shaping filter d*(z): white noise of variance a_max pushed
    /// through the polynomial with reversed d coefficients.
    pub fn reference_filter(&self) -> RationalFilter {
        RationalFilter::new(self.d.reversed(), Polynomial::one())
            .expect("reversed d is a valid FIR filter")
    }

    /// A constant-gain experiment (covers the FIR closed forms).
    pub fn constant(k_gain: f64, lambda_r: f64) -> Self {
        Self {
            k_filter: RationalFilter::constant(k_gain),
            a_max: lambda_r,
            d: Polynomial::one(),
            null_multiplicity: 1,
        }
    }
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn subtract_reference(t: &DMatrix<f64>, a: f64) -> DMatrix<f64> {
    let mut out = t.clone();
    let mut i = 0;
    while i < t.nrows() {
        out[(i, i)] -= a;
        i += 2;
    }
    out
}

/// Largest a >= 0 with T_n - diag(a, 0, ..., a, 0) still PSD, by bisection on
/// the minimum eigenvalue (absolute tolerance 1e-10).
pub fn compute_a_max(toeplitz: &DMatrix<f64>) -> Result<f64> {
    if toeplitz.nrows() != toeplitz.ncols() || !toeplitz.nrows().is_multiple_of(2) {
        return Err(Error::InvalidMomentMatrix(
            "T_n must be square with 2x2 blocks".into(),
        ));
    }
    let scale = toeplitz.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    if min_eig(toeplitz) < -1e-9 * scale {
        return Err(Error::InvalidMomentMatrix(format!(
            "T_n indefinite: min eigenvalue {:.3e}",
            min_eig(toeplitz)
        )));
    }
    // upper bound: smallest diagonal entry in the a positions
    let mut hi = f64::INFINITY;
    let mut i = 0;
    while i < toeplitz.nrows() {
        hi = hi.min(toeplitz[(i, i)]);
        i += 2;
    }
    let hi_cap = hi.max(0.0) + 1e-12;
    if min_eig(&subtract_reference(toeplitz, 0.0)) < 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = hi_cap;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if min_eig(&subtract_reference(toeplitz, mid)) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Builds the identification feed-forward filter from the null vector
/// v = (p_n, q_n, ..., p_0, q_0) of T_n - T_n^r(a_max).
pub fn extract_controller(
    toeplitz: &DMatrix<f64>,
    a_max: f64,
    d: &DenominatorSpec,
    m_filter: &RationalFilter,
) -> Result<ExperimentRealization> {
    let reduced = subtract_reference(toeplitz, a_max);
    let scale = toeplitz.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let eig = reduced.clone().symmetric_eigen();
    // eigenvector of the algebraically smallest eigenvalue
    let mut idx = 0;
    for i in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[idx] {
            idx = i;
        }
    }
    let smallest = eig.eigenvalues[idx];
    if smallest > 1e-6 * scale {
        return Err(Error::InvalidMomentMatrix(format!(
            "T_n - T_n^r(a_max) not singular (min eigenvalue {smallest:.3e}); \
             a_max is not at the boundary"
        )));
    }
    let null_multiplicity = eig
        .eigenvalues
        .iter()
        .filter(|&&e| e <= 1e-9 * scale)
        .count()
        .max(1);
    let v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();

    let blocks = toeplitz.nrows() / 2;
    let order = blocks - 1;
    // v = (p_n, q_n, p_{n-1}, q_{n-1}, ..., p_0, q_0)
    let mut p = vec![0.0; blocks];
    let mut q = vec![0.0; blocks];
    for l in 0..blocks {
        p[l] = v[2 * (order - l)];
        q[l] = v[2 * (order - l) + 1];
    }
    let vnorm = v.norm();
    // components at eigenvector-noise level are zeros of the exact problem
    for c in p.iter_mut().chain(q.iter_mut()) {
        if c.abs() <= 1e-8 * vnorm {
            *c = 0.0;
        }
    }
    let p_scale = p.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    if p_scale <= 1e-9 * vnorm {
        return Err(Error::DegenerateNullVector);
    }
    // normalize so p_0 = 1 when possible (K is scale invariant)
    let (p, q) = if p[0].abs() > 1e-9 * vnorm {
        let s = p[0];
        (
            p.iter().map(|c| c / s).collect::<Vec<_>>(),
            q.iter().map(|c| c / s).collect::<Vec<_>>(),
        )
    } else {
        (p, q)
    };
    let p_poly = Polynomial::new(&p);
    let q_poly = Polynomial::new(&q);
    // K = -q/(p M)
    let num = q_poly.scale(-1.0).mul(m_filter.denominator());
    let den = p_poly.mul(m_filter.numerator());
    let (num, den) = cancel_common_roots(&num, &den, 1e-8);
    let (num, den) = (trim_crumbs(&num), trim_crumbs(&den));
    // normalize the causal denominator to unit constant term
    let (num, den) = if den.coeff(0) != 0.0 {
        (num.scale(1.0 / den.coeff(0)), den.scale(1.0 / den.coeff(0)))
    } else {
        (num, den)
    };
    let k_filter = RationalFilter::new(num, den)?;
    if !k_filter.is_stable() {
        return Err(Error::UnstableRealization(format!(
            "extracted K has poles outside the stability margin: {:?}",
            k_filter.poles()?
        )));
    }
    Ok(ExperimentRealization {
        k_filter,
        a_max,
        d: d.poly().clone(),
        null_multiplicity,
    })
}

/// Zeroes coefficients below 1e-9 of the polynomial's largest one; the
/// root-cancelling rebuild leaves eigenvector-noise crumbs at that level.
fn trim_crumbs(p: &Polynomial) -> Polynomial {
    let scale = p.coeffs().iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    if scale == 0.0 {
        return p.clone();
    }
    let coeffs: Vec<f64> = p
        .coeffs()
        .iter()
        .map(|&c| if c.abs() <= 1e-9 * scale { 0.0 } else { c })
        .collect();
    Polynomial::new(&coeffs)
}

/// Cancels numerator/denominator roots that agree within tol and rebuilds
/// real polynomials from the survivors.
fn cancel_common_roots(num: &Polynomial, den: &Polynomial, tol: f64) -> (Polynomial, Polynomial) {
    if num.is_zero() || num.degree() == 0 || den.degree() == 0 {
        return (num.clone(), den.clone());
    }
    let nroots = num.roots();
    let droots = den.roots();
    let mut den_used = vec![false; droots.len()];
    let mut num_keep = Vec::new();
    for nr in &nroots {
        let mut cancelled = false;
        for (i, dr) in droots.iter().enumerate() {
            if !den_used[i] && (nr - dr).norm() <= tol * (1.0 + nr.norm()) {
                den_used[i] = true;
                cancelled = true;
                break;
            }
        }
        if !cancelled {
            num_keep.push(*nr);
        }
    }
    let den_keep: Vec<Complex<f64>> = droots
        .iter()
        .zip(&den_used)
        .filter(|(_, used)| !**used)
        .map(|(r, _)| *r)
        .collect();
    if den_keep.len() == droots.len() {
        return (num.clone(), den.clone());
    }
    let num_lead = *num.coeffs().last().unwrap();
    let den_lead = *den.coeffs().last().unwrap();
    (
        poly_from_roots(&num_keep, num_lead),
        poly_from_roots(&den_keep, den_lead),
    )
}

/// Real polynomial with the given roots (conjugates paired) and leading
/// coefficient, returned in the ascending layout used by RationalFilter:
/// the roots are roots of the REVERSED polynomial, matching Polynomial::roots
/// on filter numerators/denominators read as q^{-1} series. Here we rebuild
/// in the plain x domain: roots r of p(x), leading coefficient fixed.
fn poly_from_roots(roots: &[Complex<f64>], lead: f64) -> Polynomial {
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i] -= c * r;
            next[i + 1] += c;
        }
        coeffs = next;
    }
    let real: Vec<f64> = coeffs.iter().map(|c| c.re * lead).collect();
    Polynomial::new(&real)
}

/// Outcome of the analytic round-trip check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizationCheck {
    pub max_deviation: f64,
    pub pass: bool,
}

/// Recomputes the moments of the realized experiment by quadrature over a
/// dense grid and compares with the target sequence (pass at 1e-4).
pub fn verify_realization(
    realization: &ExperimentRealization,
    d: &DenominatorSpec,
    lambda_s: f64,
    target: &MomentSequence,
) -> Result<RealizationCheck> {
    if !realization.k_filter.is_stable() {
        return Err(Error::UnstableRealization(
            "cannot verify an unstable K".into(),
        ));
    }
    let n = target.order();
    let grid = 4096usize;
    let mut max_dev: f64 = 0.0;
    // km(w) = K(e^{-jw}) M(e^{-jw}) so that m_{k,12} = r_us(k)
    for k in 0..=n {
        let mut m11 = 0.0;
        let mut m12 = 0.0;
        let mut m21 = 0.0;
        let mut m22 = 0.0;
        for i in 0..grid {
            let w = 2.0 * std::f64::consts::PI * i as f64 / grid as f64;
            let z = Complex::new(w.cos(), w.sin());
            let dmod = d.poly().eval_complex(z).norm_sqr();
            let km = realization.k_filter.freq_response(w);
            let phi_r = realization.a_max * dmod;
            let phi_u = km.norm_sqr() * lambda_s + phi_r;
            let phi_us = km * lambda_s;
            let e = Complex::new((k as f64 * w).cos(), (k as f64 * w).sin());
            m11 += phi_u * e.re / dmod;
            m12 += (phi_us * e).re / dmod;
            m21 += (phi_us.conj() * e).re / dmod;
            m22 += lambda_s * e.re / dmod;
        }
        let g = grid as f64;
        let got = [m11 / g, m12 / g, m21 / g, m22 / g];
        let want = [
            target.mat(k)[(0, 0)],
            target.mat(k)[(0, 1)],
            target.mat(k)[(1, 0)],
            target.mat(k)[(1, 1)],
        ];
        for (a, b) in got.iter().zip(&want) {
            max_dev = max_dev.max((a - b).abs());
        }
    }
    Ok(RealizationCheck {
        max_deviation: max_dev,
        pass: max_dev <= 1e-4,
    })
}

/// End-to-end: a_max, null vector, K; verified against the input moments.
pub fn realize_moments(
    moments: &MomentSequence,
    d: &DenominatorSpec,
    m_filter: &RationalFilter,
    lambda_s: f64,
) -> Result<(ExperimentRealization, RealizationCheck)> {
    let t = moments.toeplitz();
    let a_max = compute_a_max(&t)?;
    let realization = extract_controller(&t, a_max, d, m_filter)?;
    let check = verify_realization(&realization, d, lambda_s, moments)?;
    Ok((realization, check))
}
