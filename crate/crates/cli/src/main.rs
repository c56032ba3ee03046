//! Batch frontend: ingest GPS logs, run protected releases, sweep parameter
//! grids, and generate synthetic walk data.
//!
//! Exit codes: 0 success, 2 config or input error, 3 infeasible release.

mod commands;
mod util;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ptppm", version, about = "Personalized trajectory privacy engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a GPS log, filter to the map, and write a cell trajectory CSV.
    Ingest {
        /// T-Drive CSV or Geolife .plt file.
        #[arg(long)]
        input: PathBuf,
        /// Input format: tdrive or geolife.
        #[arg(long, default_value = "tdrive")]
        format: String,
        /// Map definition TOML.
        #[arg(long)]
        map_config: PathBuf,
        /// Output trajectory CSV; a `.report.json` lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Release one trajectory through the protection pipeline.
    Run {
        /// Normalized trajectory CSV (`t,cell_index`).
        #[arg(long)]
        trajectory: PathBuf,
        /// Full scenario TOML; flags below override its fields.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Map definition TOML (required without --scenario).
        #[arg(long)]
        map_config: Option<PathBuf>,
        /// Road-graph edge list; 4-adjacency grid when absent.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Transition-probability CSV; built from history when absent.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Extra history trajectory CSVs for the mobility model and budgets.
        #[arg(long)]
        history: Vec<PathBuf>,
        /// Comma-separated sensitive cell indices.
        #[arg(long)]
        sensitive: Option<String>,
        #[arg(long)]
        epsilon_s: Option<f64>,
        /// Expected-inference-error bound in meters.
        #[arg(long)]
        e_m: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// pf, exp, or uniform.
        #[arg(long)]
        mechanism: Option<String>,
        /// optimal or bayesian.
        #[arg(long)]
        attack_mode: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON-lines of release records; a `.summary.json` lands
        /// next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a parameter grid and emit the metrics CSV plus a manifest.
    Sweep {
        /// Sweep TOML listing grids, trials, seeds, and scenarios.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Worker threads; 0 uses the rayon default.
        #[arg(long, default_value_t = 0)]
        parallel: usize,
    },
    /// Generate biased random-walk trajectories on the map's road graph.
    Gen {
        #[arg(long)]
        map_config: PathBuf,
        /// Road-graph edge list; 4-adjacency grid when absent.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        steps: u32,
        #[arg(long, default_value_t = 1)]
        count: u32,
        /// Probability of drifting toward the target instead of moving
        /// uniformly.
        #[arg(long, default_value_t = 0.0)]
        bias: f64,
        /// Drift target cell; the map center when absent.
        #[arg(long)]
        target: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest {
            input,
            format,
            map_config,
            out,
        } => commands::ingest(&input, &format, &map_config, &out),
        Command::Run {
            trajectory,
            scenario,
            map_config,
            graph,
            matrix,
            history,
            sensitive,
            epsilon_s,
            e_m,
            delta,
            mechanism,
            attack_mode,
            seed,
            out,
        } => commands::run(commands::RunArgs {
            trajectory,
            scenario,
            map_config,
            graph,
            matrix,
            history,
            sensitive,
            epsilon_s,
            e_m,
            delta,
            mechanism,
            attack_mode,
            seed,
            out,
        }),
        Command::Sweep {
            config,
            out_dir,
            parallel,
        } => commands::sweep(&config, &out_dir, parallel),
        Command::Gen {
            map_config,
            graph,
            steps,
            count,
            bias,
            target,
            seed,
            out_dir,
        } => commands::gen(&map_config, graph.as_deref(), steps, count, bias, target, seed, &out_dir),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(util::exit_code(&err));
    }
}
