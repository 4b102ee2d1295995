use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mts_core::dag::MarkedDag;
use mts_core::error::{Error, Result};
use mts_core::experiment::{
    build_pipeline, gnuplot_script, invariant_suite, load_metric, plot_text, run_experiment, CostInput,
    ExperimentConfig, RunConfig, SuiteOptions, ThetaRule,
};

#[derive(Parser)]
#[command(name = "mts", version, about = "Mirror descent for metrical task systems on hierarchical-net DAGs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the net DAG of a metric and print its statistics.
    BuildDag(BuildArgs),
    /// Run the dynamics against a cost sequence and compare with the offline optimum.
    Run(RunArgs),
    /// Run the invariant battery on a DAG file.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// `gen:uniform:N`, `gen:path:N`, `gen:euclid:N[:DIM]`, `gen:expander:N` or a CSV distance matrix.
    #[arg(long)]
    metric: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_compress: bool,
    #[arg(long, default_value = "balls")]
    theta: ThetaRule,
    /// DAG JSON destination (stdout by default).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Net levels and ball counts.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with the run settings; replaces the input flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "metric")]
    dag: Option<PathBuf>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    no_compress: bool,
    #[arg(long, default_value = "balls")]
    theta: ThetaRule,
    /// `adversary:greedy_mass[:m]`, `adversary:random_spike[:m]`, `adversary:block_uniform[:m]` or a CSV file.
    #[arg(long)]
    costs: Option<String>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    exact_w1: bool,
    /// Check the per-step inequalities on every sub-step.
    #[arg(long)]
    verify: bool,
    /// JSON-lines trace destination.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Report destination (stdout by default).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Writes `PREFIX.dat` and `PREFIX.gp`.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Adds wall time to the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    dag: PathBuf,
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_invariant_failure() { 1 } else { 2 };
        let message = match &e {
            Error::InvalidDag(v) => format!("FAIL {}", v),
            other => format!("error: {other}"),
        };
        Failure { code, message }
    }
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_dag(path: &PathBuf) -> Result<MarkedDag> {
    MarkedDag::from_json(&fs::read_to_string(path)?)
}

fn build_dag(a: BuildArgs) -> Result<(), Failure> {
    let m = load_metric(&a.metric, a.seed)?;
    let p = build_pipeline(&m, !a.no_compress, a.theta)?;
    let s = &p.stats;
    eprintln!(
        "n={} K={} nodes={} arcs={} paths={} depth0={} info_depth={:.6} (3 ln n = {:.6}) expanding={}",
        s.n,
        s.levels,
        s.nodes,
        s.arcs,
        s.paths,
        s.depth0,
        s.info_depth,
        3.0 * (s.n as f64).ln(),
        s.expanding_constant.map_or("n/a".to_string(), |e| format!("{e:.6}")),
    );
    let mut json = p.dag.to_json()?;
    json.push('\n');
    write_out(a.out.as_ref(), &json)?;
    if let Some(path) = &a.sidecar {
        fs::write(path, serde_json::to_string_pretty(&p.net.sidecar()).map_err(Error::from)?)
            .map_err(Error::from)?;
    }
    let failed: Vec<_> = s.builder_checks().into_iter().filter(|c| !c.passed).collect();
    if let Some(first) = failed.first() {
        return Err(Failure {
            code: 1,
            message: first.line(),
        });
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let cfg = match &a.config {
        Some(path) => serde_json::from_str::<ExperimentConfig>(&fs::read_to_string(path).map_err(Error::from)?)
            .map_err(Error::from)?,
        None => ExperimentConfig {
            metric: a.metric.clone(),
            dag: a.dag.as_ref().map(|p| p.display().to_string()),
            costs: a
                .costs
                .clone()
                .ok_or_else(|| Error::Parse("--costs is required".into()))?,
            t: a.t.ok_or_else(|| Error::Parse("--T is required".into()))?,
            kappa: a.kappa,
            seed: a.seed,
            exact_w1: a.exact_w1,
            verify: a.verify,
            compress: !a.no_compress,
            theta: a.theta,
        },
    };
    let (dag, stats) = match (&cfg.dag, &cfg.metric) {
        (Some(path), _) => (load_dag(&PathBuf::from(path))?, None),
        (None, Some(src)) => {
            let p = build_pipeline(&load_metric(src, cfg.seed)?, cfg.compress, cfg.theta)?;
            (p.dag, Some(p.stats))
        }
        (None, None) => return Err(Error::Parse("one of --dag or --metric is required".into()).into()),
    };
    let exp = run_experiment(
        &dag,
        &RunConfig {
            costs: CostInput::parse(&cfg.costs)?,
            t: cfg.t,
            kappa: cfg.kappa,
            seed: cfg.seed,
            exact_w1: cfg.exact_w1,
            verify: cfg.verify,
        },
    )?;
    let mut report = exp.report;
    report.dag = stats;
    if a.timing {
        report.wall_time_ms = Some(start.elapsed().as_millis() as u64);
    }
    if let Some(path) = &a.trace {
        let file = fs::File::create(path).map_err(Error::from)?;
        exp.trace.write_jsonl(std::io::BufWriter::new(file))?;
    }
    if let Some(prefix) = &a.plot {
        let dat = prefix.with_extension("dat");
        fs::write(&dat, plot_text(&exp.plot)).map_err(Error::from)?;
        let name = dat.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        fs::write(prefix.with_extension("gp"), gnuplot_script(&name)).map_err(Error::from)?;
    }
    let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    text.push('\n');
    write_out(a.report.as_ref(), &text)?;
    if report.checks.failed > 0 {
        return Err(Failure {
            code: 1,
            message: format!("{} step checks failed", report.checks.failed),
        });
    }
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<(), Failure> {
    let dag = load_dag(&a.dag)?;
    let report = invariant_suite(
        &dag,
        &SuiteOptions {
            full: a.full,
            seed: a.seed,
        },
    )?;
    for c in &report.checks {
        println!("{}", c.line());
    }
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: "invariant battery failed".into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildDag(a) => build_dag(a),
        Command::Run(a) => run(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message);
            if f.message.starts_with("FAIL") {
                println!("{}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
