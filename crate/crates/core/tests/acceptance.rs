//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::Instant;

use ffdesign::ffctrl::{fir1_p, v_app_hessian, HessianMethod};
use ffdesign::filter::{h2_variance, RationalFilter};
use ffdesign::fir::{
    fir1_cross_coefficient, fir1_p2, solve_min_phase, solve_non_min_phase, solve_white_baseline,
};
use ffdesign::model::{ApplicationSpec, ModelStructure, NoiseSpec, ThetaVector};
use ffdesign::moments::{
    assemble, assemble_and_solve, moment_validity, DenominatorSpec, DesignObjective, MomentDesign,
    VALIDITY_TOL,
};
use ffdesign::realization::realize_moments;
use ffdesign::sdp::SolveStatus;
use ffdesign::spectrum::frequency_grid;
use ffdesign::stats::chi2_quantile;
use ffdesign::sysid::{monte_carlo, simulate_experiment, substream};
use ffdesign::Error;
use rand::Rng;

fn report(criterion: usize, desc: &str, result: Result<(), String>) {
    match &result {
        Ok(()) => println!("criterion {criterion}: PASS - {desc}"),
        Err(e) => println!("criterion {criterion}: FAIL - {desc}: {e}"),
    }
    if let Err(e) = result {
        panic!("criterion {criterion} failed: {e}");
    }
}

fn house() -> (ModelStructure, ThetaVector, NoiseSpec, ApplicationSpec) {
    let s = ModelStructure::shared_pole();
    let theta0 = s.theta(&[1.0, 0.3, -0.5]).unwrap();
    let noise = NoiseSpec::white(1.0, 3.0).unwrap();
    let spec = ApplicationSpec::new(100.0, 0.95, 1000)
        .unwrap()
        .with_kappa(5.99);
    (s, theta0, noise, spec)
}

fn check_solver_output(
    design: &MomentDesign,
    structure: &ModelStructure,
    theta0: &ThetaVector,
    lambda_s: f64,
) -> Result<(), String> {
    let d = DenominatorSpec::for_structure(structure, theta0).map_err(|e| e.to_string())?;
    let validity = moment_validity(&design.moments, &d, lambda_s).map_err(|e| e.to_string())?;
    if !validity.valid {
        return Err(format!("moment validity violated: {validity:?}"));
    }
    let (_, check) = realize_moments(&design.moments, &d, structure.m_filter(), lambda_s)
        .map_err(|e| e.to_string())?;
    if !check.pass {
        return Err(format!(
            "realization round trip deviation {:.3e} > 1e-4",
            check.max_deviation
        ));
    }
    Ok(())
}

/// 1. Closed-form/SDP equivalence on 25 random feasible minimum-phase
///    instances, 1e-6 relative, under 10 s.
#[test]
fn criterion_1_min_phase_sdp_equivalence() {
    let start = Instant::now();
    let result = (|| -> Result<(), String> {
        let s = ModelStructure::fir1();
        let mut rng = substream(101, 0, 0);
        for i in 0..25 {
            let b0: f64 = rng.gen_range(-0.9..0.9);
            let h0: f64 = rng.gen_range(-0.9..0.9);
            let gamma: f64 = rng.gen_range(40.0..140.0);
            let theta0 = s.theta(&[b0, h0]).map_err(|e| e.to_string())?;
            let noise = NoiseSpec::white(1.0, 1.0).map_err(|e| e.to_string())?;
            let spec = ApplicationSpec::new(gamma, 0.95, 1000)
                .map_err(|e| e.to_string())?
                .with_kappa(5.99);
            let closed = solve_min_phase(&theta0, &spec, &noise).map_err(|e| e.to_string())?;
            if !closed.feasible {
                return Err(format!("instance {i} unexpectedly infeasible"));
            }
            let design =
                assemble_and_solve(&s, &theta0, &spec, &noise, DesignObjective::InputPower)
                    .map_err(|e| e.to_string())?;
            if design.status != SolveStatus::Optimal {
                return Err(format!("instance {i}: solver status {:?}", design.status));
            }
            let m0 = design.moments.mat(0);
            let ru = m0[(0, 0)];
            let ruv = m0[(0, 1)];
            if (ru - closed.r_u0).abs() > 1e-6 * closed.r_u0.abs() {
                return Err(format!(
                    "instance {i} (b0 {b0:.3}, h0 {h0:.3}): r_u(0) {ru} vs {}",
                    closed.r_u0
                ));
            }
            if (ruv - closed.r_uv0).abs() > 1e-6 * closed.r_uv0.abs() {
                return Err(format!("instance {i}: r_uv(0) {ruv} vs {}", closed.r_uv0));
            }
        }
        let elapsed = start.elapsed();
        if elapsed.as_secs_f64() > 10.0 {
            return Err(format!("runtime {elapsed:?} exceeds 10 s"));
        }
        Ok(())
    })();
    report(
        1,
        "25 random feasible minimum-phase designs match the closed form at 1e-6",
        result,
    );
}

/// 2. Non-minimum-phase equivalence against the p2 formulas on 10 instances,
///    1e-5 relative.
#[test]
fn criterion_2_non_min_phase_sdp_equivalence() {
    let result = (|| -> Result<(), String> {
        let s = ModelStructure::fir1();
        let mut rng = substream(202, 0, 0);
        for i in 0..10 {
            let mag: f64 = rng.gen_range(1.2..5.0);
            let b0 = if rng.gen::<bool>() { mag } else { -mag };
            let h0: f64 = rng.gen_range(-0.9..0.9);
            let theta0 = s.theta(&[b0, h0]).map_err(|e| e.to_string())?;
            let noise = NoiseSpec::white(1.0, 1.0).map_err(|e| e.to_string())?;
            let spec = ApplicationSpec::new(100.0, 0.95, 1000)
                .map_err(|e| e.to_string())?
                .with_kappa(5.99);
            let closed = solve_non_min_phase(&theta0, &spec, &noise).map_err(|e| e.to_string())?;
            if !closed.feasible {
                return Err(format!("instance {i} unexpectedly infeasible"));
            }
            let design =
                assemble_and_solve(&s, &theta0, &spec, &noise, DesignObjective::InputPower)
                    .map_err(|e| e.to_string())?;
            let m0 = design.moments.mat(0);
            let (ru, ruv) = (m0[(0, 0)], m0[(0, 1)]);
            if (ru - closed.r_u0).abs() > 1e-5 * closed.r_u0.abs() {
                return Err(format!(
                    "instance {i} (b0 {b0:.3}, h0 {h0:.3}): r_u(0) {ru} vs {} (p2 {})",
                    closed.r_u0,
                    fir1_p2(&theta0)
                ));
            }
            if (ruv - closed.r_uv0).abs() > 1e-5 * closed.r_uv0.abs().max(1e-3) {
                return Err(format!(
                    "instance {i}: r_uv(0) {ruv} vs {} (coef {})",
                    closed.r_uv0,
                    fir1_cross_coefficient(&theta0)
                ));
            }
        }
        Ok(())
    })();
    report(
        2,
        "10 non-minimum-phase designs match the p2 closed form at 1e-5",
        result,
    );
}

/// 3. Finite-difference Hessian vs 2 lambda_v [[p, -1], [-1, 1]] on 20
///    instances at 1e-4 relative.
#[test]
fn criterion_3_hessian_check() {
    let result = (|| -> Result<(), String> {
        let s = ModelStructure::fir1();
        let mut rng = substream(303, 0, 0);
        for i in 0..20 {
            let b0: f64 = rng.gen_range(-0.9..0.9);
            let h0: f64 = rng.gen_range(-0.9..0.9);
            let lambda_v: f64 = rng.gen_range(0.3..3.0);
            let theta0 = s.theta(&[b0, h0]).map_err(|e| e.to_string())?;
            let noise = NoiseSpec::white(1.0, lambda_v).map_err(|e| e.to_string())?;
            let fd = v_app_hessian(&theta0, &s, &noise, HessianMethod::FiniteDifference)
                .map_err(|e| e.to_string())?;
            let p = fir1_p(&theta0);
            let expect = [
                [2.0 * lambda_v * p, -2.0 * lambda_v],
                [-2.0 * lambda_v, 2.0 * lambda_v],
            ];
            for r in 0..2 {
                for c in 0..2 {
                    let want = expect[r][c];
                    if (fd[(r, c)] - want).abs() > 1e-4 * want.abs() {
                        return Err(format!(
                            "instance {i} (b0 {b0:.3}, h0 {h0:.3}): H[{r}{c}] {} vs {want}",
                            fd[(r, c)]
                        ));
                    }
                }
            }
        }
        Ok(())
    })();
    report(
        3,
        "finite-difference Hessians match the closed form at 1e-4 on 20 instances",
        result,
    );
}

/// 4. House-heating reproduction: output objective gives a_max <= 1e-6 and
///    |K| = 0.3 within 1e-3 everywhere; input objective gives a lowpass K.
#[test]
fn criterion_4_house_heating_reproduction() {
    let start = Instant::now();
    let result = (|| -> Result<(), String> {
        let (s, theta0, noise, spec) = house();
        let d = DenominatorSpec::for_structure(&s, &theta0).map_err(|e| e.to_string())?;

        let output = assemble_and_solve(&s, &theta0, &spec, &noise, DesignObjective::OutputPower)
            .map_err(|e| e.to_string())?;
        let (real_out, check_out) =
            realize_moments(&output.moments, &d, s.m_filter(), noise.lambda_s)
                .map_err(|e| e.to_string())?;
        if real_out.a_max > 1e-6 {
            return Err(format!("output objective a_max {} > 1e-6", real_out.a_max));
        }
        for &w in &frequency_grid() {
            let mag = real_out.k_filter.freq_response(w).norm();
            if (mag - 0.3).abs() > 1e-3 {
                return Err(format!("output objective |K({w:.3})| = {mag}"));
            }
        }
        if !check_out.pass {
            return Err(format!("output realization round trip: {check_out:?}"));
        }

        let input = assemble_and_solve(&s, &theta0, &spec, &noise, DesignObjective::InputPower)
            .map_err(|e| e.to_string())?;
        let (real_in, check_in) = realize_moments(&input.moments, &d, s.m_filter(), noise.lambda_s)
            .map_err(|e| e.to_string())?;
        let dc = real_in.k_filter.freq_response(0.0).norm();
        let nyquist = real_in.k_filter.freq_response(std::f64::consts::PI).norm();
        if dc <= nyquist {
            return Err(format!(
                "input objective K not lowpass: |K(0)| {dc} <= |K(pi)| {nyquist}"
            ));
        }
        if !check_in.pass {
            return Err(format!("input realization round trip: {check_in:?}"));
        }
        let elapsed = start.elapsed();
        if elapsed.as_secs_f64() > 30.0 {
            return Err(format!("runtime {elapsed:?} exceeds 30 s"));
        }
        Ok(())
    })();
    report(
        4,
        "house-heating: constant |K| = 0.3 with a_max = 0 (output) and lowpass K (input)",
        result,
    );
}

/// 5. Monte Carlo guarantee: 500 trials at the house-heating configuration
///    succeed at a rate of at least 0.93, under 2 minutes.
#[test]
fn criterion_5_monte_carlo_guarantee() {
    let start = Instant::now();
    let result = (|| -> Result<(), String> {
        let (s, theta0, noise, spec) = house();
        let d = DenominatorSpec::for_structure(&s, &theta0).map_err(|e| e.to_string())?;
        let design = assemble_and_solve(&s, &theta0, &spec, &noise, DesignObjective::InputPower)
            .map_err(|e| e.to_string())?;
        let (real, _) = realize_moments(&design.moments, &d, s.m_filter(), noise.lambda_s)
            .map_err(|e| e.to_string())?;
        let report = monte_carlo(&theta0, &s, &real, &noise, &spec, 500, 20260808)
            .map_err(|e| e.to_string())?;
        if report.empirical_rate < 0.93 {
            return Err(format!(
                "empirical rate {:.4} below 0.93 ({})",
                report.empirical_rate,
                report.summary_line()
            ));
        }
        let elapsed = start.elapsed();
        if elapsed.as_secs_f64() > 120.0 {
            return Err(format!("runtime {elapsed:?} exceeds 2 min"));
        }
        Ok(())
    })();
    report(5, "500-trial Monte Carlo success rate >= 0.93", result);
}

/// 6. Feasibility flips exactly at N = gamma lambda_e kappa, checked one
///    sample on either side, in both the closed form and the SDP.
#[test]
fn criterion_6_feasibility_threshold() {
    let result = (|| -> Result<(), String> {
        let s = ModelStructure::fir1();
        let theta0 = s.theta(&[0.5, 0.3]).map_err(|e| e.to_string())?;
        let noise = NoiseSpec::white(1.0, 1.0).map_err(|e| e.to_string())?;
        // gamma lambda_e kappa = 599 exactly
        let threshold = (100.0f64 * 1.0 * 5.99).ceil() as usize;
        let below = ApplicationSpec::new(100.0, 0.95, threshold - 1)
            .map_err(|e| e.to_string())?
            .with_kappa(5.99);
        let above = ApplicationSpec::new(100.0, 0.95, threshold + 1)
            .map_err(|e| e.to_string())?
            .with_kappa(5.99);
        let r_below = solve_min_phase(&theta0, &below, &noise).map_err(|e| e.to_string())?;
        let r_above = solve_min_phase(&theta0, &above, &noise).map_err(|e| e.to_string())?;
        if r_below.feasible {
            return Err(format!("N = {} should be infeasible", threshold - 1));
        }
        if !r_above.feasible {
            return Err(format!("N = {} should be feasible", threshold + 1));
        }
        // the SDP route agrees on both sides
        match assemble(&s, &theta0, &below, &noise, DesignObjective::InputPower)
            .map_err(|e| e.to_string())?
            .solve()
        {
            Err(Error::Infeasible(_)) => {}
            other => return Err(format!("SDP below threshold returned {other:?}")),
        }
        let sdp_above =
            assemble_and_solve(&s, &theta0, &above, &noise, DesignObjective::InputPower)
                .map_err(|e| e.to_string())?;
        if sdp_above.status != SolveStatus::Optimal {
            return Err(format!("SDP above threshold: {:?}", sdp_above.status));
        }
        Ok(())
    })();
    report(
        6,
        "feasible/infeasible flip at N = ceil(gamma lambda_e kappa) +/- 1",
        result,
    );
}

/// 7. White-baseline excess equals the closed form exactly and decays as
///    1/N^2 at large N.
#[test]
fn criterion_7_white_baseline_excess() {
    let result = (|| -> Result<(), String> {
        let s = ModelStructure::fir1();
        let theta0 = s.theta(&[0.5, 0.3]).map_err(|e| e.to_string())?;
        let noise = NoiseSpec::white(1.0, 1.0).map_err(|e| e.to_string())?;
        let p = fir1_p(&theta0);
        let kappa = 5.99;
        let t_threshold = 100.0 * 1.0 * kappa;

        for &n in &[1000usize, 5000, 100_000] {
            let spec = ApplicationSpec::new(100.0, 0.95, n)
                .map_err(|e| e.to_string())?
                .with_kappa(kappa);
            let base = solve_min_phase(&theta0, &spec, &noise).map_err(|e| e.to_string())?;
            let white = solve_white_baseline(&theta0, &spec, &noise).map_err(|e| e.to_string())?;
            let nf = n as f64;
            let expect = t_threshold * t_threshold * p / (nf * (nf - t_threshold));
            let excess = white.r_u0 - base.r_u0;
            if (excess - expect).abs() > 1e-10 {
                return Err(format!("N = {n}: excess {excess} vs {expect}"));
            }
        }

        // decay check at N = 1e5 vs 4e5: the ratio matches the exact
        // 4(4N - T)/(N - T) and stays within 10% of the pure 1/N^2 value 16
        let excess_at = |n: usize| -> Result<f64, String> {
            let spec = ApplicationSpec::new(100.0, 0.95, n)
                .map_err(|e| e.to_string())?
                .with_kappa(kappa);
            let base = solve_min_phase(&theta0, &spec, &noise).map_err(|e| e.to_string())?;
            let white = solve_white_baseline(&theta0, &spec, &noise).map_err(|e| e.to_string())?;
            Ok(white.r_u0 - base.r_u0)
        };
        let n = 100_000f64;
        let ratio = excess_at(100_000)? / excess_at(400_000)?;
        let exact = 4.0 * (4.0 * n - t_threshold) / (n - t_threshold);
        if (ratio - exact).abs() > 1e-6 * exact {
            return Err(format!("excess ratio {ratio} vs exact {exact}"));
        }
        if (ratio - 16.0).abs() > 0.1 * 16.0 {
            return Err(format!("excess ratio {ratio} not within 10% of 16"));
        }
        Ok(())
    })();
    report(
        7,
        "white-baseline excess matches the closed form and decays as 1/N^2",
        result,
    );
}

/// 8. Every solver output in the suite passes moment validity at 1e-7 and
///    the realization round trip at 1e-4.
#[test]
fn criterion_8_validity_and_round_trip() {
    let result = (|| -> Result<(), String> {
        let (s, theta0, noise, spec) = house();
        for objective in [DesignObjective::InputPower, DesignObjective::OutputPower] {
            let design = assemble_and_solve(&s, &theta0, &spec, &noise, objective)
                .map_err(|e| e.to_string())?;
            check_solver_output(&design, &s, &theta0, noise.lambda_s)?;
            if design.validity.cond1_max_violation > VALIDITY_TOL
                || design.validity.cond2_max_violation > VALIDITY_TOL
                || design.validity.toeplitz_min_eig < -VALIDITY_TOL
            {
                return Err(format!("{objective:?}: {:?}", design.validity));
            }
        }
        // FIR reductions across a parameter sweep
        let fir = ModelStructure::fir1();
        let fir_noise = NoiseSpec::white(1.0, 1.0).map_err(|e| e.to_string())?;
        for &(b0, h0) in &[(0.5, 0.3), (-0.6, 0.2), (2.0, 0.5)] {
            let theta0 = fir.theta(&[b0, h0]).map_err(|e| e.to_string())?;
            let design = assemble_and_solve(
                &fir,
                &theta0,
                &spec,
                &fir_noise,
                DesignObjective::InputPower,
            )
            .map_err(|e| e.to_string())?;
            check_solver_output(&design, &fir, &theta0, fir_noise.lambda_s)?;
        }
        Ok(())
    })();
    report(
        8,
        "all solver outputs pass validity (1e-7) and realization round trip (1e-4)",
        result,
    );
}

/// 9. Numerical core: h2_variance within 2% of a 10^6-sample simulation and
///    chi2_quantile(2, 0.95) = 5.991 +/- 1e-3.
#[test]
fn criterion_9_numerical_core() {
    let result = (|| -> Result<(), String> {
        let f =
            RationalFilter::from_coeffs(&[1.0, 0.3], &[1.0, -0.5]).map_err(|e| e.to_string())?;
        let analytic = h2_variance(&f, 3.0).map_err(|e| e.to_string())?;
        // drive the filter with 10^6 white samples
        let n = 1_000_000usize;
        let mut rng = substream(909, 0, 0);
        let noise: Vec<f64> = (0..n)
            .map(|_| {
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * 3.0f64.sqrt()
            })
            .collect();
        let out = f.filter_signal(&noise).map_err(|e| e.to_string())?;
        let skip = 100;
        let mean = out[skip..].iter().sum::<f64>() / (n - skip) as f64;
        let var = out[skip..]
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / (n - skip) as f64;
        if (var - analytic).abs() > 0.02 * analytic {
            return Err(format!("sample variance {var} vs analytic {analytic}"));
        }
        let q = chi2_quantile(2, 0.95).map_err(|e| e.to_string())?;
        if (q - 5.991).abs() > 1e-3 {
            return Err(format!("chi2 quantile {q} vs 5.991"));
        }
        Ok(())
    })();
    report(
        9,
        "h2_variance within 2% of a 1e6-sample simulation; chi2(2, 0.95) = 5.991",
        result,
    );
}

/// Determinism of the simulation path backing the Monte Carlo criterion.
#[test]
fn monte_carlo_determinism_cross_check() {
    let (s, theta0, noise, _) = house();
    let real = ffdesign::realization::ExperimentRealization::constant(-0.3, 0.2);
    let a = simulate_experiment(&theta0, &s, &real, &noise, 512, 7).unwrap();
    let b = simulate_experiment(&theta0, &s, &real, &noise, 512, 7).unwrap();
    assert_eq!(a, b);
}
