use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atomret::config::ExperimentConfig;
use atomret::retrieval::{run_retrieval, RetrievalReport, Status};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atomret", version, about = "Primal retrieval from dual iterates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write report.json and trace.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides output.dir; default ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
}

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, max_iter, quiet } => run(&config, out, seed, max_iter, quiet),
    }
}

fn run(path: &Path, out: Option<PathBuf>, seed: Option<u64>, max_iter: Option<usize>, quiet: bool) -> ExitCode {
    let cfg = match load(path, seed, max_iter) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let inst = match cfg.instance() {
        Ok(i) => i,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let report = match run_retrieval(&inst.spec, cfg.solver.oracle, &cfg.solver.limits()) {
        Ok(r) => r,
        // the spectral eps_tol requirement is a configuration problem
        Err(atomret::error::Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("solver error: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    let dir = out.or_else(|| cfg.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    if let Err(msg) = write_outputs(&dir, &report) {
        eprintln!("cannot write outputs: {msg}");
        return ExitCode::from(EXIT_FAILED);
    }
    if !quiet {
        println!(
            "status {:?} after {} iterations: f = {}, alpha + eps = {:.6e}, card = {}, nMat = {}, ||b|| = {:.6e}",
            report.status,
            report.iterations,
            report.f_value.map_or("n/a".to_string(), |f| format!("{f:.6e}")),
            report.alpha + report.eps_tol,
            report.card,
            report.nmat,
            report.b_norm,
        );
        println!("wrote {}", dir.display());
    }
    if report.status == Status::FeasibleFound {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

fn load(path: &Path, seed: Option<u64>, max_iter: Option<usize>) -> Result<ExperimentConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(|e| e.to_string())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = max_iter {
        cfg.solver.max_iter = m;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn write_outputs(dir: &Path, report: &RetrievalReport) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    fs::write(dir.join("report.json"), json + "\n").map_err(|e| e.to_string())?;
    let csv = report.trace_csv().map_err(|e| e.to_string())?;
    fs::write(dir.join("trace.csv"), csv).map_err(|e| e.to_string())?;
    Ok(())
}
