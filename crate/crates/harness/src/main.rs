use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oed_core::Vector;
use oed_harness::commands::{self, RunOptions};
use oed_harness::output::{ensure_dir, trace_file, write_contour, write_json, write_trace};
use oed_harness::{presets, ExperimentConfig, HarnessError};

/// Bayesian optimal experimental design with stochastic gradients.
#[derive(Parser)]
#[command(name = "oed", version)]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Experiment file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Shipped preset; see `oed presets list`.
    #[arg(long)]
    preset: Option<String>,
    /// Seed; defaults to the one in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the expected information gain at one design.
    Estimate {
        #[command(flatten)]
        source: Source,
        /// Design, comma separated; defaults to `xi0`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xi: Option<Vec<f64>>,
    },
    /// Run seeded optimizations and report their cost.
    Optimize {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        replications: Option<usize>,
        /// Model-call cap per replication.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Compare gradient estimators at given designs.
    Gradcheck {
        #[command(flatten)]
        source: Source,
        /// Design to check, comma separated; repeatable. Defaults to the configured list.
        #[arg(long, allow_hyphen_values = true)]
        xi: Vec<String>,
    },
    /// Evaluate the information gain on a design grid.
    Contour {
        #[command(flatten)]
        source: Source,
    },
    /// Shipped presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// Print preset names and descriptions.
    List,
    /// Print a preset's configuration file.
    Show { name: String },
}

fn load(source: &Source) -> Result<(ExperimentConfig, u64), HarnessError> {
    let cfg = match (&source.config, &source.preset) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Some(name)) => presets::load(name)?,
        (None, None) => return Err(HarnessError::Config("pass --config or --preset".into())),
    };
    let seed = source.seed.unwrap_or(cfg.seed);
    Ok((cfg, seed))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn parse_design(text: &str) -> Result<Vector, HarnessError> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map(Vector::from_vec)
        .map_err(|e| HarnessError::Config(format!("bad design `{text}`: {e}")))
}

fn out_dir(path: &Option<PathBuf>) -> Result<Option<PathBuf>, HarnessError> {
    path.as_deref().map(ensure_dir).transpose()
}

fn estimate(source: &Source, xi: &Option<Vec<f64>>) -> Result<(), HarnessError> {
    let (cfg, seed) = load(source)?;
    let r = commands::estimate(&cfg, xi.clone().map(Vector::from_vec), seed)?;
    println!(
        "{:?} at {}: {:.6} ± {:.6} (NCFM {})",
        r.estimator,
        fmt_vec(&r.xi),
        r.value,
        r.std_error,
        r.ncfm
    );
    if let Some(a) = r.analytic {
        println!("closed form: {a:.6}");
    }
    if let Some(dir) = out_dir(&source.out)? {
        write_json(&dir.join("estimate.json"), &r)?;
    }
    Ok(())
}

fn optimize(source: &Source, replications: Option<usize>, budget: Option<u64>) -> Result<bool, HarnessError> {
    let (cfg, seed) = load(source)?;
    let opts = RunOptions {
        seed,
        replications,
        budget,
    };
    let (report, traces) = commands::optimize(&cfg, opts)?;
    for r in &report.replications {
        println!(
            "run {:>3}: {:?} after {} iterations, NCFM {}, xi {}",
            r.index,
            r.status,
            r.iterations,
            r.ncfm,
            fmt_vec(&r.final_xi)
        );
    }
    let a = &report.aggregate;
    println!(
        "mean NCFM {:.4e}, median NCFM {:.4e}, converged {}/{}",
        a.mean_ncfm,
        a.median_ncfm,
        a.converged,
        report.replications.len()
    );
    if let Some(dir) = out_dir(&source.out)? {
        for (i, t) in traces.iter().enumerate() {
            write_trace(&trace_file(&dir, i), t)?;
        }
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(a.failed == 0)
}

fn gradcheck(source: &Source, xi: &[String]) -> Result<(), HarnessError> {
    let (cfg, seed) = load(source)?;
    let designs = xi.iter().map(|t| parse_design(t)).collect::<Result<Vec<_>, _>>()?;
    let r = commands::gradcheck(&cfg, &designs, seed)?;
    for p in &r.points {
        println!("xi {}", fmt_vec(&p.xi));
        println!("  SG_LA mean       {}  |.| {:.3e}", fmt_vec(&p.sg_la), p.norm_sg_la);
        println!("  DLMCIS gradient  {}  |.| {:.3e}", fmt_vec(&p.dlmcis), p.norm_dlmcis);
        println!("  FD of MCLA       {}", fmt_vec(&p.fd_mcla));
        println!("  max relative discrepancy {:.3e} (NCFM {})", p.max_rel_discrepancy, p.ncfm);
    }
    if let Some(dir) = out_dir(&source.out)? {
        write_json(&dir.join("gradcheck.json"), &r)?;
    }
    Ok(())
}

fn contour(source: &Source) -> Result<(), HarnessError> {
    let (cfg, seed) = load(source)?;
    let points = commands::contour(&cfg, seed)?;
    match out_dir(&source.out)? {
        Some(dir) => {
            write_contour(&dir.join("contour.csv"), &points)?;
            println!("{} grid points written to {}", points.len(), dir.join("contour.csv").display());
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["xi1", "xi2", "eig", "std_error"])?;
            for p in &points {
                w.write_record([
                    p.xi1.to_string(),
                    p.xi2.map_or(String::new(), |v| v.to_string()),
                    p.eig.to_string(),
                    p.std_error.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn presets_cmd(action: &PresetAction) -> Result<(), HarnessError> {
    match action {
        PresetAction::List => {
            for name in presets::names() {
                let cfg = presets::load(name)?;
                println!("{name:<24} {}", cfg.description.unwrap_or_default());
            }
        }
        PresetAction::Show { name } => {
            let text = presets::source(name)
                .ok_or_else(|| HarnessError::Config(format!("unknown preset `{name}`")))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool, HarnessError> {
    match &cli.command {
        Command::Estimate { source, xi } => estimate(source, xi).map(|_| true),
        Command::Optimize {
            source,
            replications,
            budget,
        } => optimize(source, *replications, *budget),
        Command::Gradcheck { source, xi } => gradcheck(source, xi).map(|_| true),
        Command::Contour { source } => contour(source).map(|_| true),
        Command::Presets { action } => presets_cmd(action).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.workers {
        Some(0) => Err(HarnessError::Config("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Runtime(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some runs failed; see the report");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
