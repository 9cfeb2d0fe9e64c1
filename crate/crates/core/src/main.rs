use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dsrc_backoff::allocator::{allocation_pmf, build_chain_for_category, build_transition_matrix};
use dsrc_backoff::analysis::analyze;
use dsrc_backoff::experiment::acceptance::{run_acceptance, Tolerances};
use dsrc_backoff::experiment::config::{apply_override, default_scenario, defaults_text, parse_config, ConfigFile};
use dsrc_backoff::experiment::sweep::{run_config, write_irt_csv, write_sweep_csv};
use dsrc_backoff::risk::Allocation;
use dsrc_backoff::sim::{compare_report, simulate, write_outcome_log, CompareTolerances};
use dsrc_backoff::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dsrc-backoff",
    version,
    about = "Risk-adaptive DSRC backoff: analytic engine and slot simulator"
)]
struct Cli {
    /// Configuration file (`key = value` with [scenario] and [sweep] sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a key, e.g. `--set cw=31` or `--set sweep.values=0:50:500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Branch {
    Flat,
    Decreasing,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the analytic model and print the report as JSON.
    Analyze,
    /// Run the simulator and print the pooled report as JSON.
    Simulate {
        /// Write the per-period outcome log here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also print the deviation table against the analytic engine.
        #[arg(long)]
        compare: bool,
    },
    /// Run the configured sweep and write CSV.
    Sweep {
        /// Main table; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// IRT sidecar; defaults to `<out stem>_irt.csv` next to `--out`.
        #[arg(long)]
        irt: Option<PathBuf>,
    },
    /// Run an acceptance suite; exits nonzero on any failure.
    Accept {
        #[arg(long, default_value = "quick")]
        suite: String,
        /// Write the machine-readable report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Set every tolerance to zero (harness self-test).
        #[arg(long)]
        zero_tolerances: bool,
    },
    /// Print the dense transition matrix of the backoff chain.
    DumpChain {
        /// Busy-slot probability used for the transitions.
        #[arg(long)]
        p_b: f64,
        /// Risk category; selects the branch through the division rule.
        #[arg(long, conflicts_with = "branch")]
        category: Option<u32>,
        #[arg(long, value_enum, default_value = "flat")]
        branch: Branch,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every configuration key with its default.
    PrintDefaults,
}

fn load(cli: &Cli) -> Result<ConfigFile> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => ConfigFile {
            scenario: default_scenario()?,
            sweep: None,
        },
    };
    for o in &cli.overrides {
        apply_override(&mut cfg, o)?;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    out.with_file_name(format!("{stem}_irt.csv"))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serialises")
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let stdout = io::stdout();
    match &cli.command {
        Command::PrintDefaults => {
            print!("{}", defaults_text());
        }
        Command::Analyze => {
            let cfg = load(cli)?;
            println!("{}", json(&analyze(&cfg.scenario)?));
        }
        Command::Simulate { log, compare } => {
            let cfg = load(cli)?;
            let (report, logs) = simulate(&cfg.scenario)?;
            if let Some(path) = log {
                let mut w = create(path)?;
                write_outcome_log(&mut w, &logs.concat())?;
                w.flush()?;
            }
            println!("{}", json(&report));
            if *compare {
                let a = analyze(&cfg.scenario)?;
                print!("{}", compare_report(&a, &report, &CompareTolerances::default())?);
            }
        }
        Command::Sweep { out, irt } => {
            let cfg = load(cli)?;
            let table = run_config(&cfg)?;
            match out {
                Some(path) => {
                    let mut w = create(path)?;
                    write_sweep_csv(&mut w, &table)?;
                    w.flush()?;
                    let side = irt.clone().unwrap_or_else(|| sidecar_path(path));
                    let mut w = create(&side)?;
                    write_irt_csv(&mut w, &table)?;
                    w.flush()?;
                    eprintln!("wrote {} and {}", path.display(), side.display());
                }
                None => {
                    write_sweep_csv(stdout.lock(), &table)?;
                    if let Some(side) = irt {
                        let mut w = create(side)?;
                        write_irt_csv(&mut w, &table)?;
                        w.flush()?;
                    }
                }
            }
        }
        Command::Accept {
            suite,
            json: json_path,
            zero_tolerances,
        } => {
            let tol = if *zero_tolerances {
                Tolerances::zeroed()
            } else {
                Tolerances::default()
            };
            let report = run_acceptance(suite, &tol)?;
            for r in &report.results {
                println!("{r}");
            }
            if let Some(path) = json_path {
                let mut w = create(path)?;
                writeln!(w, "{}", report.to_json())?;
                w.flush()?;
            }
            let failed = report.results.iter().filter(|r| !r.pass).count();
            println!(
                "{} of {} criteria passed",
                report.results.len() - failed,
                report.results.len()
            );
            if !report.pass {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::DumpChain {
            p_b,
            category,
            branch,
            out,
        } => {
            let cfg = load(cli)?;
            let s = &cfg.scenario;
            let chain = match category {
                Some(k) => build_chain_for_category(*k, *p_b, &s.mac, &s.risk, s.division_rule)?,
                None => {
                    let b = match branch {
                        Branch::Flat => Allocation::Flat,
                        Branch::Decreasing => Allocation::Decreasing,
                    };
                    build_transition_matrix(&allocation_pmf(b, &s.mac), *p_b, &s.mac)?
                }
            };
            match out {
                Some(path) => {
                    let mut w = create(path)?;
                    chain.write_dense(&mut w)?;
                    w.flush()?;
                }
                None => chain.write_dense(BufWriter::new(stdout.lock()))?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
