use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use embcomp::budget::Method;
use embcomp::eval::grid::{render_text, RenderOptions};
use embcomp::{Error, Result};
use embcomp_cli::{commands, RunConfig};

#[derive(Parser)]
#[command(name = "embcomp", version, about = "Compressed embedding table benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or ingest) a dataset and write it with a skew summary.
    GenData(RunArgs),
    /// Train every method at every budget and write the grid.
    BenchTrain(RunArgs),
    /// Compress a frozen matrix with every codec at every budget.
    BenchPosttrain {
        #[command(flatten)]
        run: RunArgs,
        /// Matrix file (checkpoint or raw f32 with a `.shape` sidecar).
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Compress one matrix with one codec.
    Compress {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        method: String,
        /// Fraction or percentage of the uncompressed size.
        #[arg(long, value_parser = parse_budget)]
        budget: f64,
    },
    /// Print a checkpoint's type, metadata and payload size.
    Inspect { files: Vec<PathBuf> },
    /// Render JSON-lines reports as a grid.
    Render {
        file: PathBuf,
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        no_timing: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (output file for `compress`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated budgets, e.g. `50%,10%` or `0.5,0.1`.
    #[arg(long, value_delimiter = ',', value_parser = parse_budget)]
    budgets: Option<Vec<f64>>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_budget(s: &str) -> std::result::Result<f64, String> {
    let (num, scale) = match s.strip_suffix('%') {
        Some(n) => (n, 0.01),
        None => (s, 1.0),
    };
    num.trim()
        .parse::<f64>()
        .map(|v| v * scale)
        .map_err(|e| format!("bad budget {s:?}: {e}"))
}

impl RunArgs {
    /// Config file, then environment, then flags.
    fn load(&self, posttrain: bool) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(m) = &self.methods {
            if posttrain {
                cfg.posttrain.methods = m.clone();
            } else {
                cfg.methods = m.clone();
            }
        }
        if let Some(b) = &self.budgets {
            cfg.budgets = b.clone();
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        Ok(cfg)
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializes"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => {
            let out = commands::gen_data(&args.load(false)?)?;
            print_json(&out);
        }
        Command::BenchTrain(args) => {
            let cells = commands::bench_train(&args.load(false)?)?;
            print!("{}", render_text(&cells, RenderOptions::default()));
        }
        Command::BenchPosttrain { run, matrix } => {
            let mut cfg = run.load(true)?;
            if matrix.is_some() {
                cfg.posttrain.matrix = matrix;
            }
            let cells = commands::bench_posttrain(&cfg)?;
            print!("{}", render_text(&cells, RenderOptions::default()));
        }
        Command::Compress {
            run,
            matrix,
            method,
            budget,
        } => {
            let cfg = run.load(true)?;
            let method = Method::parse_post_training(&method)?;
            let out = run
                .out
                .clone()
                .ok_or_else(|| Error::Config("compress needs --out FILE".into()))?;
            print_json(&commands::compress(&matrix, method, budget, &cfg, &out)?);
        }
        Command::Inspect { files } => {
            for f in files {
                println!("{}", commands::inspect(&f)?);
            }
        }
        Command::Render {
            file,
            csv,
            no_timing,
        } => {
            let opts = RenderOptions {
                include_timing: !no_timing,
            };
            print!("{}", commands::render(&file, csv, opts)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
