use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ding_cli::commands::{cmd_ablation, cmd_bias_scan, cmd_run, cmd_validate, CliError};
use ding_cli::Overrides;

#[derive(Parser)]
#[command(name = "ding", version, about = "Inpainting guidance experiments on analytic priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method and seed; write results.csv and manifest.json.
    Run(Common),
    /// Compare DPS and DInG transition moments over a range of eta.
    BiasScan(Common),
    /// Run one method under several eta schedules.
    Ablation(Common),
    /// Lint the config and check schedule invariants.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Fill the runtime_ms column (breaks byte-identical reruns).
    #[arg(long)]
    timings: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, out: self.out.clone(), workers: self.workers, timings: self.timings }
    }
}

fn report_flags(flags: &[String]) {
    for flag in flags {
        eprintln!("warning: {flag}");
    }
}

fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run(c) => {
            let out = cmd_run(&c.config, &c.overrides())?;
            report_flags(&out.manifest.flags);
            println!("wrote {} ({} rows)", out.csv_path.display(), out.results.len());
            println!("wrote {}", out.manifest_path.display());
        }
        Command::Ablation(c) => {
            let out = cmd_ablation(&c.config, &c.overrides())?;
            report_flags(&out.manifest.flags);
            println!("wrote {} ({} rows)", out.csv_path.display(), out.results.len());
            println!("wrote {}", out.manifest_path.display());
        }
        Command::BiasScan(c) => {
            let out = cmd_bias_scan(&c.config, &c.overrides())?;
            report_flags(&out.flags);
            for (i, inst) in out.instances.iter().enumerate() {
                if let Some((mean, cov)) = inst.slopes {
                    println!("instance {i} (d = {}): mean slope {mean:.3}, cov slope {cov:.3}", inst.d);
                }
            }
            println!("wrote {}", out.csv_path.display());
        }
        Command::Validate(c) => {
            let out = cmd_validate(&c.config, &c.overrides())?;
            if !out.problems.is_empty() {
                for p in &out.problems {
                    eprintln!("{p}");
                }
                return Ok(ExitCode::from(1));
            }
            println!("ok");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
