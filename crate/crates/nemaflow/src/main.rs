//! Command-line entry point. Thin argument parsing over the library
//! drivers; every subcommand writes its artifacts under an output
//! directory and prints a short report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nemaflow::config::RunConfig;
use nemaflow::driver;
use nemaflow::mms::StudyMode;
use nemaflow::output::{write_atomic, write_json};
use nemaflow::stepper::Scheme;
use nemaflow::Result;

#[derive(Parser)]
#[command(
    name = "nemaflow",
    version,
    about = "Finite-element solver for nematic liquid crystal flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured simulation and write energy, field and summary files.
    Run(RunArgs),
    /// Refinement study against the manufactured solution.
    Mms(MmsArgs),
    /// Mesh-and-step refinement study of the smooth benchmark.
    Cauchy(CauchyArgs),
    /// Wall-clock comparison of the two schemes on the same problem.
    CpuCompare(CpuArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured scheme.
    #[arg(long)]
    scheme: Option<String>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    /// Halve the time step on a fixed mesh.
    Temporal,
    /// Refine the mesh at a fixed small time step.
    Spatial,
}

#[derive(Args)]
struct MmsArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value = "pcsav")]
    scheme: String,
    /// Number of refinement levels; the study default when omitted.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CauchyArgs {
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value = "pcsav")]
    scheme: String,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CpuArgs {
    #[arg(long, default_value_t = 48)]
    nx: usize,
    #[arg(long, default_value_t = 2.5e-3)]
    dt: f64,
    #[arg(long, default_value_t = 0.1)]
    t_final: f64,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let mut config = RunConfig::from_file(&args.config)?;
            if let Some(scheme) = args.scheme {
                config.scheme = scheme;
            }
            if let Some(out) = args.out {
                config.output.dir = out;
            }
            config.validate()?;
            let report = driver::run(&config)?;
            let s = &report.summary;
            println!(
                "{} example, {} scheme: {} steps of dt={} in {:.2}s",
                match s.example {
                    nemaflow::config::ExampleKind::Mms => "manufactured",
                    nemaflow::config::ExampleKind::Smooth => "smooth",
                    nemaflow::config::ExampleKind::Defects => "defects",
                },
                s.scheme,
                s.steps,
                s.dt,
                s.wall_seconds
            );
            println!(
                "final energy W={:.6e}, modified energy W_tilde={:.6e}, s={:.6e}",
                s.final_energy.w, s.final_energy.w_tilde, s.final_s
            );
            if s.audited {
                println!(
                    "energy audit: {} violations, max residual {:.3e}",
                    s.audit_violations, s.max_audit_residual
                );
            }
            println!("artifacts in {}", config.output.dir.display());
            Ok(())
        }
        Command::Mms(args) => {
            let scheme = Scheme::from_name(&args.scheme)?;
            let (mode, default_levels) = match args.mode {
                Mode::Temporal => (StudyMode::Temporal, 4),
                Mode::Spatial => (StudyMode::Spatial, 3),
            };
            let levels = args.levels.unwrap_or(default_levels);
            let table = driver::mms_study(mode, scheme, levels, &args.out)?;
            print!("{}", table.csv());
            Ok(())
        }
        Command::Cauchy(args) => {
            let scheme = Scheme::from_name(&args.scheme)?;
            let table = driver::cauchy_study(scheme, args.levels, args.eps)?;
            write_atomic(
                &args.out.join(format!("cauchy_{}.csv", scheme.name())),
                &table.csv(),
            )?;
            print!("{}", table.csv());
            Ok(())
        }
        Command::CpuCompare(args) => {
            let report = driver::cpu_compare(args.nx, args.dt, args.t_final, args.eps)?;
            write_json(&args.out.join("cpu_compare.json"), &report)?;
            println!(
                "pcsav {:.3}s, pcsav-ect {:.3}s over {} timed steps: ratio {:.3}",
                report.pcsav_seconds, report.ect_seconds, report.timed_steps, report.ratio
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
