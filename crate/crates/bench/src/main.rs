use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twolmm_bench::{cmd_generate, cmd_sweep, cmd_unmix, BenchError, ExperimentConfig, Method, Result};

#[derive(Parser)]
#[command(name = "twolmm", version, about = "Hyperspectral unmixing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated methods: lmm, slmm, als2lmm, lbfgs2lmm
    #[arg(long, global = true)]
    methods: Option<String>,
    /// Endmember source: file, vca or truth
    #[arg(long = "em-source", global = true)]
    em_source: Option<String>,
    /// Scaling bounds as lo,hi
    #[arg(long, global = true)]
    bounds: Option<String>,
    /// Scene noise level in dB (`inf` for none)
    #[arg(long, global = true)]
    snr: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene with its ground truth and a manifest
    Generate,
    /// Unmix a scene with every configured method
    Unmix,
    /// Repeat the unmixing over a list of bound or noise settings
    Sweep {
        /// bounds_alpha or snr
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated sweep values
        #[arg(long)]
        values: Option<String>,
    },
    /// Print the resolved configuration and the available methods
    Info,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p).map_err(|e| match e {
            BenchError::Io { path, source } => BenchError::Config(format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(m) = &cli.methods {
        cfg.set("experiment.methods", m)?;
    }
    if let Some(s) = &cli.em_source {
        cfg.set("experiment.em_source", s)?;
    }
    if let Some(b) = &cli.bounds {
        let (lo, hi) = b.split_once(',').ok_or_else(|| BenchError::Config(format!("--bounds {b:?}: expected lo,hi")))?;
        cfg.set("solver.lower", lo.trim())?;
        cfg.set("solver.upper", hi.trim())?;
    }
    if let Some(s) = &cli.snr {
        cfg.set("scene.snr_db", s)?;
    }
    if let Command::Sweep { kind, values } = &cli.command {
        if let Some(k) = kind {
            cfg.set("sweep.kind", k)?;
        }
        if let Some(v) = values {
            cfg.set("sweep.values", v)?;
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Generate => {
            for p in cmd_generate(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Unmix => {
            let exp = cmd_unmix(&cfg)?;
            print!("{}", twolmm_bench::report::results_csv(&exp.rows()));
            let failed = exp.failures();
            if failed > 0 {
                return Err(BenchError::MethodsFailed { failed, total: exp.runs.len() });
            }
        }
        Command::Sweep { .. } => {
            let rows = cmd_sweep(&cfg)?;
            print!("{}", twolmm_bench::report::sweep_csv(&rows));
            let failed = rows.iter().filter(|r| r.row.error.is_some()).count();
            if failed > 0 {
                return Err(BenchError::MethodsFailed { failed, total: rows.len() });
            }
        }
        Command::Info => {
            cfg.validate()?;
            println!("twolmm {}", env!("CARGO_PKG_VERSION"));
            println!("methods: {}", Method::ALL.map(Method::name).join(", "));
            println!("exit codes: 0 ok, 1 config error, 2 solver error, 3 I/O error");
            println!();
            print!("{}", cfg.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors count as configuration errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
