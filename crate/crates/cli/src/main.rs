mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use kwflow_core::flow::{self, Termination};
use kwflow_core::functionals::{self, Diagnostics, Weight};
use kwflow_core::green::{self, ConditionReport};
use kwflow_core::stationary;
use kwflow_core::verify::{self, Level};
use kwflow_core::{kwf, ScalarField, Surface};
use serde::Serialize;

use config::{Overrides, RunConfig};

/// Mean-field flow of the Kazdan-Warner equation on conformally flat tori.
///
/// Every command reads an optional TOML config (`--config`); flags override file
/// values. Set RAYON_NUM_THREADS to limit the number of worker threads.
#[derive(Parser)]
#[command(name = "kwflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config file; all tables and keys are optional
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow. Exit 0 converged, 2 blow-up suspected, 3 budget exhausted, 1 error.
    Run(Common),
    /// Green function at a pole with its regular-part fit
    Green {
        #[command(flatten)]
        common: Common,
        /// Pole node as `i,j` [default: 0,0]
        #[arg(long, value_parser = parse_pole)]
        pole: Option<(usize, usize)>,
        /// Also write the Green function as a KWF1 file
        #[arg(long)]
        dump: bool,
    },
    /// Evaluate the convergence condition at the maximum of A + 2 ln h. Exit 0 satisfied, 4 not.
    Check(Common),
    /// Newton solve of the stationary equation from the configured initial data
    Stationary(Common),
    /// Construct initial data with J below C0
    Seed(Common),
    /// Run the invariant self-checks. Exit 0 iff every check passes.
    Verify {
        #[arg(long, value_enum, default_value_t = LevelArg::Quick)]
        level: LevelArg,
        /// Print the report as JSON instead of a table
        #[arg(long)]
        json: bool,
        /// Flip the sign of the flat Laplacian used by the checks (fault injection)
        #[arg(long, hide = true)]
        corrupt_laplacian: bool,
        /// Config file; only `rng_seed` is read
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Offset for the random check inputs [default: rng_seed from the config, else 0]
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

fn parse_pole(s: &str) -> Result<(usize, usize)> {
    let (i, j) = s.split_once(',').context("pole must be written as i,j")?;
    Ok((i.trim().parse()?, j.trim().parse()?))
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(&common.overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    kwf::write(path, field).with_context(|| format!("cannot write {}", path.display()))
}

fn snapshot_name(t: f64) -> String {
    format!("u_t{t:.6}.kwf")
}

fn initial_data(cfg: &RunConfig, surface: &Surface, weight: &Weight) -> Result<ScalarField> {
    match cfg.initial_field()? {
        Some(u) => Ok(u),
        None => {
            let (_, seed) = stationary::subcritical_seed(surface, weight, cfg.geometry, &cfg.seed)?;
            Ok(seed.u0)
        }
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    termination: Termination,
    t: f64,
    steps: usize,
    rejected_steps: usize,
    mass0: f64,
    final_diagnostics: &'a Diagnostics,
    weighted_mass_bound: f64,
    #[serde(rename = "C0")]
    c0: Option<f64>,
    condition: Option<&'a ConditionReport>,
    condition_error: Option<String>,
    blowup: Option<&'a kwflow_core::blowup::BlowupReport>,
    failure: Option<&'a str>,
    config: &'a RunConfig,
}

fn cmd_run(common: &Common) -> Result<ExitCode> {
    let cfg = resolve(common)?;
    let surface = cfg.surface()?;
    let weight = cfg.weight()?;
    let u0 = initial_data(&cfg, &surface, &weight)?;
    let dir = out_dir(&cfg)?;
    // The condition is a diagnostic here; a grid too coarse for the fit annulus
    // should not stop the run.
    let mut condition_error = None;
    let condition = if cfg.output.condition {
        match green::check_condition(&surface, &weight, cfg.geometry) {
            Ok(r) => Some(r),
            Err(e) => {
                eprintln!("warning: condition not evaluated: {e}");
                condition_error = Some(e.to_string());
                None
            }
        }
    } else {
        None
    };

    let interval = cfg.output.snapshot_interval;
    let mut next_snapshot = 0.0;
    let result = flow::run_with_observer(&surface, &weight, u0, &cfg.flow, |state| {
        if state.step_index == 0 || (interval > 0.0 && state.t >= next_snapshot) {
            kwf::write(dir.join(snapshot_name(state.t)), &state.u)?;
            while interval > 0.0 && next_snapshot <= state.t {
                next_snapshot += interval;
            }
        }
        Ok(())
    })?;
    let last = dir.join(snapshot_name(result.final_state.t));
    if !last.exists() {
        write_field(&last, &result.final_state.u)?;
    }

    let mut csv = String::from(Diagnostics::CSV_HEADER);
    csv.push('\n');
    for d in &result.series {
        csv.push_str(&d.csv_row());
        csv.push('\n');
    }
    fs::write(dir.join("series.csv"), csv).context("cannot write series.csv")?;
    if let Some(report) = &result.blowup {
        write_json(&dir.join("blowup.json"), report)?;
    }
    let summary = RunSummary {
        termination: result.termination,
        t: result.final_state.t,
        steps: result.final_state.step_index,
        rejected_steps: result.final_state.rejected,
        mass0: result.final_state.mass0,
        final_diagnostics: &result.final_diagnostics,
        weighted_mass_bound: result.weighted_mass_bound,
        c0: condition.as_ref().map(|c| c.c0),
        condition: condition.as_ref(),
        condition_error,
        blowup: result.blowup.as_ref(),
        failure: result.failure.as_deref(),
        config: &cfg,
    };
    write_json(&dir.join("summary.json"), &summary)?;

    let d = &result.final_diagnostics;
    println!(
        "{:?} at t = {:.6} after {} steps: residual {:.3e}, J {:.8}, mass drift {:.2e}",
        result.termination,
        result.final_state.t,
        result.final_state.step_index,
        d.residual_l2,
        d.j_value,
        (d.mass - result.final_state.mass0).abs() / result.final_state.mass0
    );
    Ok(ExitCode::from(match result.termination {
        Termination::Converged => 0,
        Termination::BlowupSuspected => 2,
        Termination::BudgetExhausted => 3,
        Termination::NumericalFailure => {
            eprintln!("numerical failure: {}", result.failure.as_deref().unwrap_or("unknown"));
            1
        }
    }))
}

fn cmd_green(common: &Common, pole: (usize, usize), dump: bool) -> Result<ExitCode> {
    let cfg = resolve(common)?;
    let surface = cfg.surface()?;
    let n = cfg.grid.n;
    anyhow::ensure!(pole.0 < n && pole.1 < n, "pole {pole:?} is off the {n}x{n} grid");
    let data = green::green_data(&surface, pole, cfg.geometry.annulus)?;
    let dir = out_dir(&cfg)?;
    write_json(&dir.join("green.json"), &data)?;
    if dump {
        write_field(&dir.join("green.kwf"), &data.g)?;
    }
    println!("{}", serde_json::to_string_pretty(&data)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(common: &Common) -> Result<ExitCode> {
    let cfg = resolve(common)?;
    let report = green::check_condition(&cfg.surface()?, &cfg.weight()?, cfg.geometry)?;
    let dir = out_dir(&cfg)?;
    write_json(&dir.join("condition.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::from(if report.satisfied { 0 } else { 4 }))
}

#[derive(Serialize)]
struct StationarySummary<'a> {
    newton: &'a stationary::NewtonResult,
    #[serde(rename = "J")]
    j_value: f64,
    config: &'a RunConfig,
}

fn cmd_stationary(common: &Common) -> Result<ExitCode> {
    let cfg = resolve(common)?;
    let surface = cfg.surface()?;
    let weight = cfg.weight()?;
    let u0 = initial_data(&cfg, &surface, &weight)?;
    let res = stationary::newton_solve(&surface, &weight, cfg.rho.0, &u0, cfg.newton.tol, cfg.newton.max_iter)?;
    let dir = out_dir(&cfg)?;
    write_field(&dir.join("u_star.kwf"), &res.u)?;
    let summary = StationarySummary {
        newton: &res,
        j_value: functionals::functional_j(&surface, &weight, cfg.rho.0, &res.u)?,
        config: &cfg,
    };
    write_json(&dir.join("newton.json"), &summary)?;
    println!(
        "newton: converged {} after {} iterations, residual {:.3e}, J {:.8}",
        res.converged, res.iterations, res.residual, summary.j_value
    );
    if let Some(f) = &res.failure {
        eprintln!("{f}");
    }
    Ok(ExitCode::from(if res.converged { 0 } else { 3 }))
}

#[derive(Serialize)]
struct SeedSummary<'a> {
    seed: &'a stationary::SeedResult,
    condition: &'a ConditionReport,
    config: &'a RunConfig,
}

fn cmd_seed(common: &Common) -> Result<ExitCode> {
    let cfg = resolve(common)?;
    let surface = cfg.surface()?;
    let weight = cfg.weight()?;
    let (condition, seed) = stationary::subcritical_seed(&surface, &weight, cfg.geometry, &cfg.seed)?;
    let dir = out_dir(&cfg)?;
    write_field(&dir.join("u0.kwf"), &seed.u0)?;
    write_json(
        &dir.join("seed.json"),
        &SeedSummary {
            seed: &seed,
            condition: &condition,
            config: &cfg,
        },
    )?;
    println!(
        "seed: eps {:.4e}, J0 {:.6}, C0 {:.6}, margin {:.6}, condition satisfied {}",
        seed.eps, seed.j0, seed.c0, seed.margin, condition.satisfied
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(level: LevelArg, json: bool, corrupt: bool, config: Option<&Path>, seed: Option<u64>) -> Result<ExitCode> {
    let level = match level {
        LevelArg::Quick => Level::Quick,
        LevelArg::Full => Level::Full,
    };
    let seed = match seed {
        Some(s) => s,
        None => RunConfig::load(config)?.rng_seed,
    };
    let report = verify::run(level, corrupt, seed);
    let mut out = std::io::stdout().lock();
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write!(out, "{}", report.table())?;
    }
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failing checks: {}", report.failing().join(", "));
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Green { common, pole, dump } => cmd_green(common, pole.unwrap_or((0, 0)), *dump),
        Command::Check(c) => cmd_check(c),
        Command::Stationary(c) => cmd_stationary(c),
        Command::Seed(c) => cmd_seed(c),
        Command::Verify {
            level,
            json,
            corrupt_laplacian,
            config,
            seed,
        } => cmd_verify(*level, *json, *corrupt_laplacian, config.as_deref(), *seed),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
