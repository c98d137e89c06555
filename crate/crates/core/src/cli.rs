//! Command-line entry point: `sweep`, `select`, `oracle` and `all`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dgp::ScenarioKind;
use crate::error::{Error, Result};
use crate::study;
use crate::table::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "fsm-design", version, about = "Monte Carlo workbench for covariate-adaptive designs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the design sweep and write records.csv and curves.csv
    Sweep(CommonArgs),
    /// Run the sweep and write selection.csv
    Select(CommonArgs),
    /// Validate the Monte Carlo engine against exact enumeration and write oracle.csv
    Oracle(CommonArgs),
    /// Sweep, select and oracle in one run
    All(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; every key is optional
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; does not affect outputs
    #[arg(long)]
    pub workers: Option<usize>,
    /// Restrict to one scenario
    #[arg(long)]
    pub scenario: Option<String>,
    /// Restrict to one sample size
    #[arg(long)]
    pub n: Option<usize>,
    /// Replications per cell
    #[arg(long)]
    pub r: Option<usize>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(name) = &self.scenario {
            cfg.scenarios = vec![ScenarioKind::parse(name)?];
        }
        if let Some(n) = self.n {
            cfg.sample_sizes = vec![n];
            cfg.robustness_sample_sizes = vec![n];
        }
        if let Some(r) = self.r {
            cfg.replications = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    write_atomic(&dir.join(name), contents)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<study::SweepOutput> {
    let sweep = study::run_sweep(cfg)?;
    let dir = &cfg.output_dir;
    write(dir, "records.csv", &sweep.records_table().render())?;
    write(dir, "curves.csv", &sweep.curves_table().render())?;
    write(dir, "run-manifest.json", &study::manifest(cfg, "sweep"))?;
    Ok(sweep)
}

fn write_selection(cfg: &RunConfig, sweep: &study::SweepOutput) -> Result<Vec<study::SelectionRow>> {
    let rows = study::run_selection(cfg, sweep)?;
    write(&cfg.output_dir, "selection.csv", &study::selection_table(&rows).render())?;
    Ok(rows)
}

pub fn cmd_select(cfg: &RunConfig) -> Result<Vec<study::SelectionRow>> {
    let sweep = study::run_sweep(cfg)?;
    let rows = write_selection(cfg, &sweep)?;
    write(&cfg.output_dir, "run-manifest.json", &study::manifest(cfg, "select"))?;
    Ok(rows)
}

/// Writes oracle.csv and oracle-summary.txt. Fails when Monte Carlo and exact values disagree.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<study::OracleOutput> {
    let out = study::run_oracle(cfg)?;
    let summary = study::oracle_summary(&out);
    write(&cfg.output_dir, "oracle.csv", &study::oracle_table(&out).render())?;
    write(&cfg.output_dir, "oracle-summary.txt", &summary)?;
    print!("{summary}");
    if !out.agreement() || !out.report.accept_monotone {
        return Err(Error::Contract("oracle validation failed; see oracle-summary.txt".into()));
    }
    Ok(out)
}

pub fn cmd_all(cfg: &RunConfig) -> Result<()> {
    let sweep = cmd_sweep(cfg)?;
    write_selection(cfg, &sweep)?;
    cmd_oracle(cfg)?;
    write(&cfg.output_dir, "run-manifest.json", &study::manifest(cfg, "all"))?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let (args, command) = match &cli.command {
        Command::Sweep(a) => (a, "sweep"),
        Command::Select(a) => (a, "select"),
        Command::Oracle(a) => (a, "oracle"),
        Command::All(a) => (a, "all"),
    };
    let cfg = args.resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match command {
        "sweep" => cmd_sweep(&cfg).map(|_| ()),
        "select" => cmd_select(&cfg).map(|_| ()),
        "oracle" => cmd_oracle(&cfg).map(|_| ()),
        _ => cmd_all(&cfg),
    })
}
