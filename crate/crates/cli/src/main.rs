use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use percolymer::estimate::DecayKind;
use percolymer::ExtendedBeta;
use percolymer_cli::summarize::{summarize, write_summary};
use percolymer_cli::{render_table, run, threads_from_env, CliError, Command, EventMode, RunConfig, SinkMode};

#[derive(Parser)]
#[command(name = "percolymer", version, about = "Monte Carlo experiments for oriented percolation and directed polymers")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Free energy a_n/n on a doubling ladder.
    FreeEnergy(RunArgs),
    /// Tail frequency of |log Z - mean| beyond n^(1/2+delta).
    Concentration(RunArgs),
    /// Slope of log Var(log Z) against log n.
    Variance(RunArgs),
    /// Superadditivity and doubling defects.
    Additivity(RunArgs),
    /// Coupled scan over inverse temperatures, including inf.
    LimitBeta(RunArgs),
    /// Coupled scan over p at fixed inverse temperature.
    Continuity(RunArgs),
    /// Failure frequencies against scale with a log-linear fit.
    Decay(RunArgs),
    /// Repair events or martingale differences on random instances.
    VerifyEvents(RunArgs),
    /// Bisection for the survival midpoint at a finite horizon.
    Critical(RunArgs),
    /// Recursion against brute-force enumeration.
    OracleCheck(RunArgs),
    /// Merge result files into one row per parameter point.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output stem; writes STEM.csv and STEM.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    /// Worker threads (falls back to PERCOLYMER_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    /// Inverse temperature, a number or "inf".
    #[arg(long)]
    beta: Option<ExtendedBeta>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    m: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    p_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    beta_list: Option<Vec<ExtendedBeta>>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<u64>>,
    /// finite-cluster, coupled-zone, large-initial or good-event.
    #[arg(long)]
    kind: Option<DecayKind>,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<u64>>,
    #[arg(long)]
    buffer: Option<u64>,
    #[arg(long)]
    v: Option<f64>,
    /// repair or martingale.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<EventMode>,
    #[arg(long)]
    ell: Option<u64>,
    #[arg(long)]
    slab: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<u64>>,
    #[arg(long)]
    outer: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_work: Option<f64>,
    /// Fail instead of appending when the output files exist.
    #[arg(long)]
    fresh: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Result CSV files.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Write the merged table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<EventMode, String> {
    match s {
        "repair" => Ok(EventMode::Repair),
        "martingale" => Ok(EventMode::Martingale),
        _ => Err(format!("unknown mode {s:?}")),
    }
}

impl RunArgs {
    fn into_config(self) -> Result<(RunConfig, SinkMode), CliError> {
        let file = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            d: self.d,
            p: self.p,
            p_list: self.p_list,
            beta: self.beta,
            beta_list: self.beta_list,
            n: self.n,
            n_list: self.n_list,
            m: self.m,
            samples: self.samples,
            seed: self.seed,
            out: self.out,
            threads: self.threads,
            max_work: self.max_work,
            delta: self.delta,
            buffer: self.buffer,
            kind: self.kind,
            scales: self.scales,
            v: self.v,
            mode: self.mode,
            ell: self.ell,
            slab: self.slab,
            k_list: self.k_list,
            outer: self.outer,
            tol: self.tol,
            ..RunConfig::default()
        };
        let mut config = file.overlay(flags);
        if config.threads.is_none() {
            config.threads = threads_from_env();
        }
        Ok((config, if self.fresh { SinkMode::CreateNew } else { SinkMode::Append }))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (command, args) = match cli.command {
        Cmd::FreeEnergy(a) => (Command::FreeEnergy, a),
        Cmd::Concentration(a) => (Command::Concentration, a),
        Cmd::Variance(a) => (Command::Variance, a),
        Cmd::Additivity(a) => (Command::Additivity, a),
        Cmd::LimitBeta(a) => (Command::LimitBeta, a),
        Cmd::Continuity(a) => (Command::Continuity, a),
        Cmd::Decay(a) => (Command::Decay, a),
        Cmd::VerifyEvents(a) => (Command::VerifyEvents, a),
        Cmd::Critical(a) => (Command::Critical, a),
        Cmd::OracleCheck(a) => (Command::OracleCheck, a),
        Cmd::Summarize(a) => {
            let summary = summarize(&a.files)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            match a.out {
                Some(path) => write_summary(&summary, std::fs::File::create(path)?)?,
                None => write_summary(&summary, std::io::stdout().lock())?,
            }
            return Ok(());
        }
    };
    let (config, mode) = args.into_config()?;
    let outcome = run(command, config, mode)?;
    let mut out = std::io::stdout().lock();
    out.write_all(render_table(&outcome).as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
