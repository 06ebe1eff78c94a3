//! Command-line front end: parse an experiment config, run design ->
//! realization -> simulation -> Monte Carlo validation, and write
//! machine-readable results.
//!
//! Exit codes: 0 success, 1 threshold failure, 2 infeasible design,
//! 3 invalid input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ffdesign::config::{DesignFile, ExperimentConfig, ObjectiveConfig, RealizationFile};
use ffdesign::error::Error as CoreError;
use ffdesign::fir::{realize_fir, solve_min_phase, solve_non_min_phase, FirDesignResult, Regime};
use ffdesign::model::StructureKind;
use ffdesign::moments::{assemble, DenominatorSpec};
use ffdesign::realization::{realize_moments, ExperimentRealization};
use ffdesign::spectrum::frequency_grid;
use ffdesign::sysid::{monte_carlo, simulate_experiment};

#[derive(Parser)]
#[command(
    name = "ffdesign",
    about = "Optimal identification input design for feed-forward disturbance rejection",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for result files
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the master seed recorded in the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ObjectiveArg {
    Input,
    Output,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the input design (FIR closed forms or the moment SDP)
    Design {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the objective from the config
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
    },
    /// Convert a design into an implementable experiment (K, a_max)
    Realize {
        #[command(flatten)]
        common: CommonArgs,
        /// design.json produced by the design command
        #[arg(long)]
        design: PathBuf,
    },
    /// Simulate one identification experiment
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// realization.json produced by the realize command
        #[arg(long)]
        realization: PathBuf,
    },
    /// Monte Carlo validation of the realized design
    Montecarlo {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        realization: PathBuf,
        /// Override the trial count from the config
        #[arg(long)]
        trials: Option<usize>,
        /// Override the success-rate floor from the config
        #[arg(long)]
        floor: Option<f64>,
    },
    /// Run design, realize, simulate and montecarlo in sequence
    Pipeline {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        floor: Option<f64>,
    },
}

enum CliError {
    /// exit 3
    Invalid(String),
    /// exit 2
    Infeasible(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Infeasible(msg) => CliError::Infeasible(msg),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(CliError::from)
}

fn write_out(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Invalid(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::Invalid(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn apply_objective(cfg: &mut ExperimentConfig, objective: Option<ObjectiveArg>) {
    if let Some(obj) = objective {
        cfg.objective = match obj {
            ObjectiveArg::Input => ObjectiveConfig::Input,
            ObjectiveArg::Output => ObjectiveConfig::Output,
        };
    }
}

fn fir_design(cfg: &ExperimentConfig) -> CliResult<FirDesignResult> {
    let theta0 = cfg.theta0()?;
    let spec = cfg.application_spec()?;
    let result = if theta0.get(0).abs() < 1.0 {
        solve_min_phase(&theta0, &spec, &cfg.noise)?
    } else {
        solve_non_min_phase(&theta0, &spec, &cfg.noise)?
    };
    Ok(result)
}

/// Runs the design and writes design.json plus a human-readable summary.
/// Returns the design file and the exit code (2 when infeasible).
fn cmd_design(cfg: &ExperimentConfig, out: &Path) -> CliResult<(DesignFile, u8)> {
    match cfg.structure.kind {
        StructureKind::Fir1 => {
            let result = fir_design(cfg)?;
            let file = DesignFile::from_fir(&result);
            write_out(out, "design.json", &file.to_json())?;
            let summary = format!(
                "fir closed-form design\nregime: {:?}\nfeasible: {} (margin {:.6} samples)\n\
                 kappa: {:.6}\nr_u(0): {:.9}\nr_uv(0): {:.9}\n",
                result.regime,
                result.feasible,
                result.feasibility_margin,
                result.kappa,
                result.r_u0,
                result.r_uv0
            );
            write_out(out, "design_summary.txt", &summary)?;
            if !result.feasible {
                eprintln!(
                    "infeasible: margin {:.6} samples (N = {} vs threshold {:.3})",
                    result.feasibility_margin,
                    cfg.application.n_samples,
                    cfg.application.n_samples as f64 - result.feasibility_margin
                );
                return Ok((file, 2));
            }
            println!("design written to {}", out.join("design.json").display());
            Ok((file, 0))
        }
        StructureKind::SharedPole => {
            let structure = cfg.model_structure()?;
            let theta0 = cfg.theta0()?;
            let spec = cfg.application_spec()?;
            let problem = assemble(
                &structure,
                &theta0,
                &spec,
                &cfg.noise,
                cfg.design_objective(),
            )?;
            write_out(out, "sdp_dump.txt", &problem.debug_dump())?;
            match problem.solve() {
                Ok(design) => {
                    let file = DesignFile::from_moments(
                        &design,
                        cfg.objective,
                        problem.d.poly().coeffs(),
                        cfg.noise.lambda_s,
                    );
                    write_out(out, "design.json", &file.to_json())?;
                    let objective_note = match cfg.objective {
                        ObjectiveConfig::Output => " (excludes the lambda_e term)",
                        ObjectiveConfig::Input => "",
                    };
                    let summary = format!(
                        "moment design (order {})\nstatus: {}\nobjective ({:?}): {:.9}{}\n\
                         kappa: {:.6}\nvalidity: {:?}\nlmi min eig: {:.3e}\n",
                        design.moments.order(),
                        design.solver_status,
                        cfg.objective,
                        design.objective_value,
                        objective_note,
                        design.kappa,
                        design.validity,
                        design.lmi_min_eig
                    );
                    write_out(out, "design_summary.txt", &summary)?;
                    println!("design written to {}", out.join("design.json").display());
                    Ok((file, 0))
                }
                Err(CoreError::Infeasible(msg)) => {
                    write_out(out, "design_summary.txt", &format!("infeasible: {msg}\n"))?;
                    Err(CliError::Infeasible(msg))
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

/// Builds the experiment realization from a design file.
fn realize_design(cfg: &ExperimentConfig, design: &DesignFile) -> CliResult<ExperimentRealization> {
    match design {
        DesignFile::FirClosedForm {
            feasible,
            regime,
            feasibility_margin,
            kappa,
            lambda_v,
            r_u0,
            r_uv0,
            ..
        } => {
            let result = FirDesignResult {
                r_u0: *r_u0,
                r_uv0: *r_uv0,
                feasible: *feasible,
                regime: match regime.as_str() {
                    "non_min_phase" => Regime::NonMinPhase,
                    "white_baseline" => Regime::WhiteBaseline,
                    _ => Regime::MinPhase,
                },
                feasibility_margin: *feasibility_margin,
                kappa: *kappa,
                lambda_v: *lambda_v,
            };
            let fir_real = realize_fir(&result, &cfg.noise)?;
            Ok(ExperimentRealization::constant(
                fir_real.k_gain,
                fir_real.lambda_r,
            ))
        }
        DesignFile::MomentSdp { .. } => {
            if !design.is_feasible() {
                return Err(CliError::Infeasible(
                    "cannot realize a non-optimal design".into(),
                ));
            }
            let structure = cfg.model_structure()?;
            let theta0 = cfg.theta0()?;
            let moments = design.moment_sequence()?;
            let d = DenominatorSpec::for_structure(&structure, &theta0)?;
            let (real, check) =
                realize_moments(&moments, &d, structure.m_filter(), cfg.noise.lambda_s)?;
            if !check.pass {
                return Err(CliError::Invalid(format!(
                    "realization round-trip check failed: deviation {:.3e}",
                    check.max_deviation
                )));
            }
            Ok(real)
        }
    }
}

fn cmd_realize(cfg: &ExperimentConfig, design_path: &Path, out: &Path) -> CliResult<u8> {
    let text = fs::read_to_string(design_path)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", design_path.display())))?;
    let design = DesignFile::from_json(&text)?;
    if !design.is_feasible() {
        return Err(CliError::Infeasible(
            "design file is marked infeasible".into(),
        ));
    }
    let real = realize_design(cfg, &design)?;
    write_out(
        out,
        "realization.json",
        &RealizationFile::from_realization(&real).to_json(),
    )?;
    write_out(out, "kfreq.csv", &kfreq_csv(cfg, &real)?)?;
    println!(
        "realization written to {}",
        out.join("realization.json").display()
    );
    Ok(0)
}

/// Frequency response table: omega, |K|, arg K, |H0| on the shared grid.
fn kfreq_csv(cfg: &ExperimentConfig, real: &ExperimentRealization) -> CliResult<String> {
    let structure = cfg.model_structure()?;
    let theta0 = cfg.theta0()?;
    let h0 = structure.h(&theta0)?;
    let mut csv = String::from("omega,k_mag,k_arg,h0_mag\n");
    for w in frequency_grid() {
        let k = real.k_filter.freq_response(w);
        let h = h0.freq_response(w);
        csv.push_str(&format!(
            "{:.9},{:.9e},{:.9e},{:.9e}\n",
            w,
            k.norm(),
            k.arg(),
            h.norm()
        ));
    }
    Ok(csv)
}

fn read_realization(path: &Path) -> CliResult<ExperimentRealization> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    Ok(RealizationFile::from_json(&text)?.to_realization()?)
}

fn cmd_simulate(
    cfg: &ExperimentConfig,
    real: &ExperimentRealization,
    out: &Path,
    seed: Option<u64>,
) -> CliResult<u8> {
    let structure = cfg.model_structure()?;
    let theta0 = cfg.theta0()?;
    let seed = seed.unwrap_or(cfg.monte_carlo.master_seed);
    let data = simulate_experiment(
        &theta0,
        &structure,
        real,
        &cfg.noise,
        cfg.application.n_samples,
        seed,
    )?;
    let mut csv = String::from("t,u,v,y\n");
    for t in 0..data.u.len() {
        csv.push_str(&format!(
            "{t},{:.12e},{:.12e},{:.12e}\n",
            data.u[t], data.v[t], data.y[t]
        ));
    }
    write_out(out, "dataset.csv", &csv)?;
    write_out(
        out,
        "dataset_meta.json",
        &format!(
            "{{\n  \"schema_version\": 1,\n  \"master_seed\": {seed},\n  \"n_samples\": {}\n}}\n",
            data.u.len()
        ),
    )?;
    println!(
        "dataset ({} samples, seed {seed}) written to {}",
        data.u.len(),
        out.join("dataset.csv").display()
    );
    Ok(0)
}

fn cmd_montecarlo(
    cfg: &ExperimentConfig,
    real: &ExperimentRealization,
    out: &Path,
    trials: Option<usize>,
    floor: Option<f64>,
    seed: Option<u64>,
) -> CliResult<u8> {
    let structure = cfg.model_structure()?;
    let theta0 = cfg.theta0()?;
    let spec = cfg.application_spec()?;
    let trials = trials.unwrap_or(cfg.monte_carlo.trials);
    let floor = floor.unwrap_or(cfg.monte_carlo.floor);
    let seed = seed.unwrap_or(cfg.monte_carlo.master_seed);
    let report = monte_carlo(&theta0, &structure, real, &cfg.noise, &spec, trials, seed)?;
    write_out(out, "mc.csv", &report.to_csv(&structure.labels()))?;
    let mut summary = report.summary_line();
    summary.push('\n');
    let est_fail_rate = report.estimator_failures as f64 / report.trials as f64;
    if est_fail_rate > 0.10 {
        summary.push_str(&format!(
            "warning: estimator failure rate {:.1}% exceeds 10%\n",
            100.0 * est_fail_rate
        ));
    }
    summary.push_str(&format!("floor: {floor:.4}\n"));
    write_out(out, "mc_summary.txt", &summary)?;
    println!("{}", report.summary_line());
    if report.empirical_rate >= floor {
        Ok(0)
    } else {
        eprintln!(
            "empirical rate {:.4} below floor {floor:.4}",
            report.empirical_rate
        );
        Ok(1)
    }
}

fn run() -> CliResult<u8> {
    let cli = Cli::parse();
    match cli.command {
        Command::Design { common, objective } => {
            let mut cfg = read_config(&common.config)?;
            apply_objective(&mut cfg, objective);
            let (_, code) = cmd_design(&cfg, &common.out)?;
            Ok(code)
        }
        Command::Realize { common, design } => {
            let cfg = read_config(&common.config)?;
            cmd_realize(&cfg, &design, &common.out)
        }
        Command::Simulate {
            common,
            realization,
        } => {
            let cfg = read_config(&common.config)?;
            let real = read_realization(&realization)?;
            cmd_simulate(&cfg, &real, &common.out, common.seed)
        }
        Command::Montecarlo {
            common,
            realization,
            trials,
            floor,
        } => {
            let cfg = read_config(&common.config)?;
            let real = read_realization(&realization)?;
            cmd_montecarlo(&cfg, &real, &common.out, trials, floor, common.seed)
        }
        Command::Pipeline {
            common,
            objective,
            trials,
            floor,
        } => {
            let mut cfg = read_config(&common.config)?;
            apply_objective(&mut cfg, objective);
            let (design, code) = cmd_design(&cfg, &common.out)?;
            if code != 0 {
                return Ok(code);
            }
            let real = realize_design(&cfg, &design)?;
            write_out(
                &common.out,
                "realization.json",
                &RealizationFile::from_realization(&real).to_json(),
            )?;
            write_out(&common.out, "kfreq.csv", &kfreq_csv(&cfg, &real)?)?;
            cmd_simulate(&cfg, &real, &common.out, common.seed)?;
            cmd_montecarlo(&cfg, &real, &common.out, trials, floor, common.seed)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Infeasible(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
