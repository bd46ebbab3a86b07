use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::warn;

use shiftex::config::RunConfig;
use shiftex::harness::{calibrate, run_experiment};
use shiftex::optimizer::{optimality_gap, AssignmentProblem};

#[derive(Parser)]
#[command(
    name = "shiftex",
    version,
    about = "Shift-aware federated mixture-of-experts simulation lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method and write metrics, summaries and registry snapshots.
    Run(RunArgs),
    /// Bootstrap, calibrate detection thresholds and write thresholds.json.
    Calibrate(RunArgs),
    /// Compare exact and greedy assignment objectives over a problem corpus.
    Gap {
        /// JSON file holding one problem or an array of problems, or a directory of such files.
        corpus: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Dotted `key=value` override; repeatable.
    #[arg(long = "override", value_name = "K=V")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> shiftex::Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Library errors caused by bad input map to exit code 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|c| {
        c.downcast_ref::<shiftex::Error>()
            .is_some_and(shiftex::Error::is_usage)
    });
    if usage {
        2
    } else {
        1
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let log = run_experiment(&cfg)?;
    for path in log.write(&cfg.out_dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_calibrate(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let report = calibrate(&cfg)?;
    println!(
        "delta_cov   {:.6}  (p = {})",
        report.delta_cov, report.p_value
    );
    println!("delta_label {:.6}", report.delta_label);
    for (name, s) in [
        ("null mmd2", report.null_cov),
        ("null jsd", report.null_label),
    ] {
        println!(
            "{name:<10} n={} min={:.6} mean={:.6} median={:.6} max={:.6}",
            s.n, s.min, s.mean, s.median, s.max
        );
    }
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let path = cfg.out_dir.join("thresholds.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("{}", path.display());
    Ok(())
}

fn read_problems(path: &Path) -> Result<Vec<AssignmentProblem>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(shiftex::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        single => vec![single],
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v)
                .map_err(|e| shiftex::Error::Config {
                    path: format!("{}[{i}]", path.display()),
                    message: e.to_string(),
                })
                .map_err(anyhow::Error::from)
        })
        .collect()
}

fn load_corpus(path: &Path) -> Result<Vec<AssignmentProblem>> {
    if !path.exists() {
        return Err(shiftex::Error::Config {
            path: path.display().to_string(),
            message: "no such file or directory".into(),
        }
        .into());
    }
    if !path.is_dir() {
        return read_problems(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "json"));
    files.sort();
    let mut all = Vec::new();
    for f in files {
        all.extend(read_problems(&f)?);
    }
    Ok(all)
}

fn cmd_gap(corpus: &Path) -> Result<()> {
    let problems = load_corpus(corpus)?;
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for (i, p) in problems.iter().enumerate() {
        if !p.within_exact_envelope() {
            println!(
                "instance {i}: skipped, {} parties and {} options exceed the exact solver",
                p.parties.len(),
                p.n_options()
            );
            skipped += 1;
            continue;
        }
        let gap = optimality_gap(p).with_context(|| format!("instance {i}"))?;
        println!(
            "instance {i}: exact {:.6} greedy {:.6} ratio {:.6}",
            gap.exact,
            gap.greedy,
            gap.ratio()
        );
        ratios.push(gap.ratio());
    }
    if skipped > 0 {
        warn!("{skipped} oversized instances skipped");
    }
    if ratios.is_empty() {
        println!("0 instances");
        return Ok(());
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{} instances, {skipped} skipped, mean gap {mean:.6}, max gap {max:.6}",
        ratios.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SHIFTEX_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Gap { corpus } => cmd_gap(corpus),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
