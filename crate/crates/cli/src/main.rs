use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcmdrkf::estimator::solve_static_estimator_from;
use mcmdrkf::sim::demo::demo_set;
use mcmdrkf::sim::harness::{
    with_threads, write_gamma_surface, write_trajectory, MseTable,
};
use mcmdrkf::sim::{
    run_comparison, simulate_trajectory, static_demo, tune_gamma, write_comparison,
    DemoOptions, ExperimentConfig,
};
use mcmdrkf::solver::SolverConfig;
use mcmdrkf::Error;
use serde_json::json;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

/// Distributionally robust multi-sensor Kalman filtering.
#[derive(Debug, Parser)]
#[command(name = "mcmdrkf", version)]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for Monte-Carlo runs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the scalar static instance and check the saddle-point property.
    StaticDemo(DemoArgs),
    /// Simulate one run and write the trajectory of every method.
    Simulate {
        /// Run index to simulate.
        #[arg(long, default_value_t = 0)]
        run: u64,
    },
    /// Monte-Carlo comparison of the configured methods.
    Compare,
    /// Grid search of the robust filter's band on held-out runs.
    TuneGamma,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 1.0)]
    gamma1: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma2: f64,
    #[arg(long, default_value_t = 2)]
    sensors: usize,
    /// Random samples per saddle-point check.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Write the estimator as JSON to this file.
    #[arg(long)]
    estimator: Option<PathBuf>,
    /// Write the solver trace CSV to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn summary_json(table: &MseTable) -> serde_json::Value {
    let rows: Vec<_> = table
        .methods
        .iter()
        .enumerate()
        .flat_map(|(mi, m)| {
            table.components.iter().enumerate().map(move |(c, comp)| {
                json!({
                    "method": m,
                    "component": comp,
                    "mse": table.time_average[mi][c],
                    "std_error": table.time_average_std_error[mi][c],
                })
            })
        })
        .collect();
    json!(rows)
}

fn print_summary(table: &MseTable) {
    print!("{:<10}", "method");
    for c in &table.components {
        print!(" {c:>14}");
    }
    println!();
    for (mi, m) in table.methods.iter().enumerate() {
        print!("{m:<10}");
        for c in 0..table.components.len() {
            print!(" {:>14.6}", table.time_average[mi][c]);
        }
        println!();
    }
}

fn demo(cli: &Cli, args: &DemoArgs) -> Result<(), Failure> {
    let opts = DemoOptions {
        gamma1: args.gamma1,
        gamma2: args.gamma2,
        sensors: args.sensors,
        samples: args.samples,
        seed: cli.seed.unwrap_or(0),
    };
    let report = static_demo(&opts)?;
    if let Some(path) = &args.estimator {
        fs::write(path, serde_json::to_string_pretty(&report.estimator).expect("serializable"))?;
    }
    if let Some(path) = &args.trace {
        let set = demo_set(opts.gamma1, opts.gamma2, opts.sensors)?;
        let (_, solver) = solve_static_estimator_from(&set, None, &SolverConfig::default())?;
        solver.write_trace_csv(fs::File::create(path)?)?;
    }
    if cli.json {
        print_json(&serde_json::to_value(&report).expect("serializable"));
    } else {
        println!(
            "sensors {}  band [{}, {}]",
            report.sensors, report.gamma1, report.gamma2
        );
        println!("nominal MSE     {:.9}", report.nominal_mse);
        println!("worst-case MSE  {:.9}", report.worst_case_mse);
        if let Some(o) = report.oracle_mse {
            println!("grid oracle     {o:.9}");
        }
        println!("A* = {:?}", report.estimator.a);
        println!("b* = {:?}", report.estimator.b);
        for c in &report.checks {
            println!("[{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
        }
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Numerical("static demo checks failed".into()))
    }
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path, Failure> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(&cfg.output_dir)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Command::StaticDemo(args) = &cli.command {
        return demo(cli, args);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::StaticDemo(_) => unreachable!(),
        Command::Simulate { run } => {
            let dump = with_threads(cli.threads, || simulate_trajectory(&cfg, *run))??;
            let path = output_dir(&cfg)?.join("trajectory.csv");
            write_trajectory(&dump, &path)?;
            if cli.json {
                print_json(&json!({ "trajectory": path, "steps": dump.truth.len() }));
            } else {
                println!("wrote {}", path.display());
            }
        }
        Command::Compare => {
            let table = with_threads(cli.threads, || run_comparison(&cfg))??;
            let dir = output_dir(&cfg)?;
            write_comparison(&table, dir)?;
            if cli.json {
                print_json(&json!({ "output_dir": dir, "summary": summary_json(&table) }));
            } else {
                print_summary(&table);
                println!("wrote results.csv, summary.csv, plot.gp to {}", dir.display());
            }
        }
        Command::TuneGamma => {
            let tuning = with_threads(cli.threads, || tune_gamma(&cfg))??;
            let dir = output_dir(&cfg)?;
            write_gamma_surface(&tuning.surface, &dir.join("gamma_surface.csv"))?;
            write_comparison(&tuning.table, dir)?;
            if cli.json {
                print_json(&json!({
                    "best": tuning.best,
                    "surface": tuning.surface,
                    "summary": summary_json(&tuning.table),
                }));
            } else {
                println!(
                    "best band [{}, {}]",
                    tuning.best.gamma1, tuning.best.gamma2
                );
                print_summary(&tuning.table);
                println!("wrote gamma_surface.csv and results to {}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
