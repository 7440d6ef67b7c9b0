//! Benchmark CLI: trains elliptic PDE networks from a TOML experiment
//! config, sweeps hyperparameter grids, and probes loss landscapes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use pdelab::harness::emit::{
    read_checkpoint, write_checkpoint, write_heatmap_svg, write_landscape_csv, write_report_csv,
};
use pdelab::harness::{
    aggregate_cell, error_field, loss_landscape, sweep, train, Experiment, ExperimentConfig,
    Report, RunResult, SweepAxis,
};
use pdelab::net::ParamVector;

#[derive(Parser)]
#[command(
    name = "pdelab",
    about = "Neural-network solvers for second-order elliptic PDEs: PINN and deep Ritz training, hyperparameter sweeps, loss-landscape probes."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config's seed list, e.g. `0,1,2,3,4`.
    #[arg(long)]
    seeds: Option<String>,
    /// Override the config's epoch budget.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one configuration and emit report, fields, and
    /// checkpoints.
    Run(CommonArgs),
    /// Train the cartesian product of one or more axes over all seeds.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Axis spec `key=v1,v2,...`; repeatable. Keys: wB, wI, wC, nG,
        /// sampler, formulation, boundary, activation, balance, optimizer,
        /// problem, ansatz.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
    },
    /// Evaluate the loss on a 2D random slice around a trained checkpoint.
    Landscape {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter checkpoint produced by `run`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid points per axis.
        #[arg(long, default_value_t = 51)]
        grid: usize,
        /// Half-width of the (alpha, beta) range.
        #[arg(long, default_value_t = 1.0)]
        range: f64,
        #[arg(long = "direction-seed", default_value_t = 0)]
        direction_seed: u64,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    if let Some(seeds) = &common.seeds {
        config.run.seeds = seeds
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .context("parsing --seeds")?;
        if config.run.seeds.is_empty() {
            bail!("--seeds must name at least one seed");
        }
    }
    if let Some(epochs) = common.epochs {
        config.optimizer.epochs = epochs;
        if let Some(switch) = config.optimizer.switch_epoch {
            if switch >= epochs {
                config.optimizer.switch_epoch = Some(epochs.saturating_sub(1).max(1));
            }
        }
    }
    config.validate()?;
    Ok(config)
}

fn print_report(report: &Report) {
    println!("cell-id\tmean_rel_l2\tstd_rel_l2\tconverged\twall_mean_s");
    for cell in &report.cells {
        let mean = cell
            .mean_rel_l2
            .map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
        let std = cell
            .std_rel_l2
            .map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
        let marker = if cell.best { " *" } else { "" };
        println!(
            "{}\t{}\t{}\t{}/{}\t{:.1}{marker}",
            cell.id, mean, std, cell.n_converged, cell.n_seeds, cell.wall_mean_s
        );
    }
}

fn run_command(common: &CommonArgs) -> Result<()> {
    let config = load_config(common)?;
    let out = &common.out;
    fs::create_dir_all(out)?;

    let runs: Vec<(RunResult, ParamVector, Experiment)> = config
        .run
        .seeds
        .par_iter()
        .map(|seed| -> Result<_> {
            let experiment = Experiment::build(&config, *seed)?;
            let (result, params) = train(&experiment)?;
            Ok((result, params, experiment))
        })
        .collect::<Result<Vec<_>>>()?;

    for (result, params, experiment) in &runs {
        let seed = result.seed;
        write_checkpoint(&out.join(format!("checkpoint_{seed}.bin")), &params.values)?;
        let field = error_field(
            &experiment.net,
            params,
            &experiment.problem,
            experiment.test_resolution(),
        )?;
        let title = match &experiment.problem.exact {
            Some(_) => format!("|U - u*|  {}  seed {seed}", config.problem),
            None => format!("|U|  {}  seed {seed}", config.problem),
        };
        write_heatmap_svg(&out.join(format!("field_{seed}.svg")), &field, &title)?;
        let status = if result.diverged { "diverged" } else { "ok" };
        let eigen = result
            .eigen_estimate
            .map_or(String::new(), |e| format!("  eigenvalue {e:.6}"));
        println!(
            "seed {seed}: rel_l2 {:.3e}  best@{} ({status}, {:.1}s){eigen}",
            result.rel_l2, result.best_epoch, result.wall_seconds
        );
    }

    let results: Vec<RunResult> = runs.iter().map(|(r, _, _)| r.clone()).collect();
    let mut cell = aggregate_cell("run", &results);
    cell.best = true;
    let report = Report { cells: vec![cell] };
    write_report_csv(&out.join("report.csv"), &report)?;
    print_report(&report);
    println!("wrote {}", out.join("report.csv").display());
    Ok(())
}

fn sweep_command(common: &CommonArgs, axes: &[String]) -> Result<()> {
    let config = load_config(common)?;
    let axes = axes
        .iter()
        .map(|a| SweepAxis::parse(a))
        .collect::<pdelab::Result<Vec<_>>>()?;
    let (report, _) = sweep(&config, &axes)?;
    fs::create_dir_all(&common.out)?;
    write_report_csv(&common.out.join("report.csv"), &report)?;
    print_report(&report);
    println!("wrote {}", common.out.join("report.csv").display());
    Ok(())
}

fn landscape_command(
    common: &CommonArgs,
    checkpoint: &Path,
    grid: usize,
    range: f64,
    direction_seed: u64,
) -> Result<()> {
    let config = load_config(common)?;
    let seed = config.run.seeds.first().copied().unwrap_or(0);
    let experiment = Experiment::build(&config, seed)?;
    let values = read_checkpoint(checkpoint)?;
    if values.len() != experiment.net.param_count() {
        bail!(
            "checkpoint has {} parameters but the configured network needs {}",
            values.len(),
            experiment.net.param_count()
        );
    }
    let params = ParamVector {
        values,
        layout: experiment.net.layout().clone(),
    };
    let landscape = loss_landscape(&experiment, &params, (grid, grid), range, direction_seed)?;
    fs::create_dir_all(&common.out)?;
    write_landscape_csv(&common.out.join("landscape.csv"), &landscape)?;
    // render the loss surface on a log scale
    let log_loss = landscape.loss.mapv(|v| if v > 0.0 { v.log10() } else { -16.0 });
    write_heatmap_svg(
        &common.out.join("landscape.svg"),
        &log_loss,
        &format!("log10 loss  {}", config.problem),
    )?;
    println!(
        "wrote {} and {}",
        common.out.join("landscape.csv").display(),
        common.out.join("landscape.svg").display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(common) => run_command(common),
        Command::Sweep { common, axes } => sweep_command(common, axes),
        Command::Landscape {
            common,
            checkpoint,
            grid,
            range,
            direction_seed,
        } => landscape_command(common, checkpoint, *grid, *range, *direction_seed),
    }
}
