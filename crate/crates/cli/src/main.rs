//! `widthlab`: certificate suites, sweepout tightening, the bubble example,
//! Ricci-flow width bounds and calibration sweeps.
//!
//! Exit codes: 0 all checks passed, 2 a check failed, 3 config or input
//! error, 4 a required solve did not converge, 1 anything else.

mod config;
mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use manifest::Outputs;
use run::CliError;

#[derive(Debug, Parser)]
#[command(name = "widthlab", version, about = "Min-max widths of 2-spheres: tightening, certificates and Ricci-flow bounds")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (else $WIDTHLAB_OUT, else the config, else ./widthlab-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent instances.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a certificate suite (or `all`) and write its JSON report.
    Verify { suite: String },
    /// Build a fixture sweepout, tighten it and report the width per iteration.
    Width {
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        slices: Option<usize>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Energies, areas and varifold distances of the degree-two bubble sequence.
    Bubble {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Round-sphere extinction and integration of the width bound.
    Ricci {
        #[arg(long)]
        r0: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
    },
    /// Empirical calibration of the small-energy thresholds.
    Calibrate {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Plot-ready .dat files and gnuplot stubs from the CSVs in a directory.
    Plots {
        /// Directory holding width.csv, ricci.csv or bubble.csv.
        #[arg(long)]
        input: PathBuf,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Verify { .. } => "verify",
            Cmd::Width { .. } => "width",
            Cmd::Bubble { .. } => "bubble",
            Cmd::Ricci { .. } => "ricci",
            Cmd::Calibrate { .. } => "calibrate",
            Cmd::Plots { .. } => "plots",
        }
    }

    fn apply(&self, c: &mut Config) {
        match self {
            Cmd::Width { fixture, n, slices, max_iters } => {
                if let Some(f) = fixture {
                    c.width.fixture = f.clone();
                }
                if let Some(n) = n {
                    c.grid.n = *n;
                }
                if let Some(s) = slices {
                    c.grid.slices = *s;
                }
                if let Some(m) = max_iters {
                    c.tighten.max_iters = *m;
                }
            }
            Cmd::Bubble { n: Some(n) } => c.grid.n = *n,
            Cmd::Ricci { r0, dt, c: cc } => {
                if let Some(v) = r0 {
                    c.ricci.r0 = *v;
                }
                if let Some(v) = dt {
                    c.ricci.dt = *v;
                }
                if let Some(v) = cc {
                    c.ricci.c = *v;
                }
            }
            Cmd::Calibrate { n: Some(n) } => c.calibrate.n = *n,
            _ => {}
        }
    }
}

fn real_main(cli: Cli) -> Result<i32, CliError> {
    let mut cfg = Config::load(cli.config.as_deref()).map_err(CliError::Config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cli.cmd.apply(&mut cfg);
    cfg.validate().map_err(CliError::Config)?;
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let dir = cfg.output_dir(cli.out.as_deref());
    let mut out = Outputs::new(&dir)?;
    let outcome = match &cli.cmd {
        Cmd::Verify { suite } => run::verify(&cfg, suite, cli.jobs, &mut out)?,
        Cmd::Width { .. } => run::width(&cfg, &mut out)?,
        Cmd::Bubble { .. } => run::bubble(&cfg, cli.jobs, &mut out)?,
        Cmd::Ricci { .. } => run::ricci(&cfg, &mut out)?,
        Cmd::Calibrate { .. } => run::calibrate(&cfg, cli.jobs, &mut out)?,
        Cmd::Plots { input } => run::plots(input, &mut out)?,
    };
    out.finish(cli.cmd.name(), &cfg)?;
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("widthlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
