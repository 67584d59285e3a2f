use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, warn};

use locomanip::export::check_export;
use locomanip::pipeline::{compare, run_offline, run_receding, RunReport};
use locomanip::scenario::{parse_scenario, ExportFormat, Scenario, PRESETS};
use locomanip::transcription::PlannerMode;

#[derive(Parser)]
#[command(name = "locomanip", version, about = "Payload-aware motion planning for a quadruped with two arms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the whole motion in one problem.
    Plan(RunArgs),
    /// Receding-horizon planning over the motion.
    Mpc {
        #[command(flatten)]
        run: RunArgs,
        /// Start every window from a zero guess.
        #[arg(long)]
        cold: bool,
        /// Also solve each warm-started window cold and record its statistics.
        #[arg(long)]
        cold_reference: bool,
    },
    /// Plan the scenario in both modes and compare the exports.
    Compare(RunArgs),
    /// Recompute the margins of an export directory against its report.
    Check {
        dir: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// List the built-in scenarios.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file or preset name.
    scenario: String,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PayloadAware,
    LocomotionOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl RunArgs {
    fn scenario(&self) -> Result<Scenario, Box<dyn std::error::Error>> {
        let mut s = parse_scenario(&self.scenario)?;
        if let Some(m) = self.mode {
            s.mode = match m {
                Mode::PayloadAware => PlannerMode::PayloadAware,
                Mode::LocomotionOnly => PlannerMode::LocomotionOnly,
            };
        }
        if let Some(f) = self.format {
            s.export.format = match f {
                Format::Csv => ExportFormat::Csv,
                Format::Json => ExportFormat::Json,
            };
        }
        Ok(s)
    }
}

fn summarize(r: &RunReport) -> bool {
    for w in &r.warnings {
        warn!("{w}");
    }
    println!(
        "{}: {:?} in {} windows, {} iterations, {:.2} s",
        r.scenario.name,
        r.status,
        r.windows.len(),
        r.total_iterations,
        r.wall_time
    );
    if !r.complete {
        println!("halted before the end of the motion");
    }
    if let Some(d) = r.ik.divergence {
        println!("tracking diverged from t = {:.2} s (error {:.3e} m)", d.first_time, d.max_error);
    }
    for v in r.margins.violations(1e-6) {
        println!("violation: {v}");
    }
    for f in &r.files {
        println!("wrote {}", f.display());
    }
    r.success()
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Plan(a) => Ok(summarize(&run_offline(&a.scenario()?, &a.out)?)),
        Command::Mpc { run, cold, cold_reference } => {
            let mut s = run.scenario()?;
            if cold {
                s.horizon.warm_start = false;
            }
            let report = run_receding(&s, &run.out, cold_reference)?;
            let pairs: Vec<_> =
                report.windows.iter().filter_map(|w| w.cold_stats.as_ref().map(|c| (w.stats.iterations, c.iterations))).collect();
            if !pairs.is_empty() {
                let fewer = pairs.iter().filter(|(w, c)| w < c).count();
                println!("warm start needed fewer iterations on {fewer} of {} windows", pairs.len());
            }
            Ok(summarize(&report))
        }
        Command::Compare(a) => {
            let c = compare(&a.scenario()?, &a.out)?;
            let legs = ["FL", "FR", "RL", "RR"];
            println!("{:<4} {:>14} {:>14}", "leg", "payload-aware", "locomotion");
            for (i, leg) in legs.iter().enumerate() {
                println!(
                    "{:<4} {:>14.5} {:>14.5}",
                    leg, c.payload_aware.min_swing_manipulability[i], c.locomotion_only.min_swing_manipulability[i]
                );
            }
            println!(
                "iterations {} / {}, variables {} / {}",
                c.payload_aware_iterations, c.locomotion_only_iterations, c.payload_aware_vars, c.locomotion_only_vars
            );
            println!("wrote {}", a.out.join("compare.json").display());
            Ok(c.success())
        }
        Command::Check { dir, tol } => {
            let c = check_export(&dir, tol)?;
            println!("{}: {}", c.knots_file.display(), if c.reproduces_report { "margins reproduce the report" } else { "margins differ from the report" });
            for v in &c.violations {
                println!("violation: {v}");
            }
            Ok(c.passed())
        }
        Command::Presets => {
            for name in PRESETS {
                let s = Scenario::preset(name).expect("built-in preset");
                println!("{name:<12} {}", s.description);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
