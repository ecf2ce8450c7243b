use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use aest::control::{condition_residual_with_tol, PulseShape, DEFAULT_CONDITION_TOL};
use aest::lab::{self, Scenario, ScenarioName};
use aest::Result;

#[derive(Parser)]
#[command(name = "aest", version, about = "Controlled state transfer through uniform spin chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectory CSVs with JSON sidecars.
    Run {
        #[arg(long)]
        scenario: String,
        /// Only this chain length.
        #[arg(long)]
        n: Option<usize>,
        /// JSON config with EvolutionSpec fields; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Skip the pulse condition checks.
        #[arg(long)]
        allow_off_condition: bool,
        /// Run variants one at a time.
        #[arg(long)]
        serial: bool,
    },
    /// Run a scenario's parameter sweeps and report the peaks.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        serial: bool,
    },
    /// Fit the weak end coupling for a chain length and transfer time.
    Calibrate {
        #[arg(long)]
        n: usize,
        #[arg(long = "T", alias = "t")]
        total_time: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the condition report of a pulse as JSON.
    CheckPulse {
        #[arg(long, value_enum)]
        shape: Shape,
        #[arg(long = "I", alias = "intensity")]
        intensity: f64,
        #[arg(long)]
        tau: f64,
        /// Integration window, defaults to tau.
        #[arg(long)]
        window: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_CONDITION_TOL)]
        tol: f64,
    },
    /// Local maxima of a sweep CSV.
    Peaks {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Rect,
    Sine,
    Bb,
}

fn scenario(name: &str, n: Option<usize>, config: Option<&PathBuf>) -> Result<Scenario> {
    let name: ScenarioName = name.parse()?;
    let mut sc = match config {
        Some(path) => Scenario::from_config_file(name, path)?,
        None => Scenario::named(name),
    };
    if let Some(n) = n {
        sc = sc.with_chain_length(n);
    }
    Ok(sc)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aest: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            scenario: name,
            n,
            config,
            out,
            allow_off_condition,
            serial,
        } => {
            let mut sc = scenario(&name, n, config.as_ref())?;
            if allow_off_condition {
                sc.enforce_conditions = false;
            }
            let rec = lab::run_with(&sc, &out, !serial)?;
            for r in &rec.runs {
                println!(
                    "{}\tF(T)={:.6}\tmax_norm_drift={:.1e}\tsteps={}\t{}",
                    r.id,
                    r.final_fidelity,
                    r.max_norm_drift,
                    r.steps,
                    r.csv.display()
                );
            }
            for s in &rec.sweeps {
                println!("{}\tpeaks={}\t{}", s.id, s.peaks.len(), s.csv.display());
            }
            for c in &rec.calibrations {
                println!(
                    "calibration n={}\tj0={:.10}\tF_wc={:.6}",
                    c.calibration.n, c.calibration.j0, c.calibration.fidelity
                );
            }
            for b in &rec.bose_peaks {
                println!("bose n={}\tt={:.6}\tF={:.6}", b.n, b.t, b.fidelity);
            }
            println!("record {} -> {}", rec.id, rec.record_path.display());
            Ok(())
        }
        Command::Sweep {
            scenario: name,
            n,
            config,
            out,
            serial,
        } => {
            let sc = scenario(&name, n, config.as_ref())?;
            let plan = sc.plan()?;
            if plan.sweeps.is_empty() {
                return Err(aest::Error::Config(format!(
                    "scenario {name} has no sweep; add one with --config"
                )));
            }
            let rec = lab::execute_plan(&plan, &out, !serial)?;
            for s in &rec.sweeps {
                println!("{}\tgrid_step={:.6e}\t{}", s.id, s.grid_step, s.csv.display());
                for p in &s.peaks {
                    println!("  peak {}={:.8}\tF={:.6}", s.sweep.parameter.as_str(), p.value, p.fidelity);
                }
            }
            println!("record {} -> {}", rec.id, rec.record_path.display());
            Ok(())
        }
        Command::Calibrate { n, total_time, out } => {
            let cal = lab::calibrate_j0(n, total_time)?;
            let csv = lab::write_calibration(&cal, &out, "")?;
            print_json(&json!({
                "n": cal.n,
                "total_time": cal.total_time,
                "j0": cal.j0,
                "fidelity": cal.fidelity,
                "grid_best": cal.grid_best,
                "csv": csv,
            }));
            Ok(())
        }
        Command::CheckPulse {
            shape,
            intensity,
            tau,
            window,
            tol,
        } => {
            let pulse = match shape {
                Shape::Rect => PulseShape::rectangular(intensity, tau),
                Shape::Sine => PulseShape::sine(intensity, PI / tau),
                Shape::Bb => PulseShape::bang_bang(intensity, tau),
            };
            pulse.validate()?;
            let report = condition_residual_with_tol(&pulse, window.unwrap_or(tau), 64, tol)?;
            print_json(&report);
            Ok(())
        }
        Command::Peaks { input } => {
            let data = lab::read_sweep_csv(&input)?;
            print_json(&lab::find_peaks(&data));
            Ok(())
        }
    }
}
