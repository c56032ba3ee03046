//! Subcommand implementations.

use crate::util::{create_file, fingerprint, open_reader, read_file, TOOL_VERSION};
use ptppm_core::adversary::AttackMode;
use ptppm_core::grid::{CellId, GridMap, MapConfig};
use ptppm_core::ingest::{
    self, discretize, parse_geolife_lenient, parse_tdrive_lenient, LogFormat,
};
use ptppm_core::mech::MechanismTag;
use ptppm_core::metrics::{write_sweep_csv, SweepFailure, SweepGridPoint, SweepRow};
use ptppm_core::mobility::Trajectory;
use ptppm_core::pipeline::{run_pipeline, summarize_run};
use ptppm_core::scenario::{generate_walks, run_sweep, Scenario, ScenarioConfig};
use ptppm_core::{Error, Result};
use serde::Deserialize;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn ingest(input: &Path, format: &str, map_config: &Path, out: &Path) -> Result<()> {
    let format: LogFormat = format.parse()?;
    let map_text = read_file(map_config)?;
    let map = map_from_text(&map_text)?;
    let user_id = file_stem(input);
    let reader = open_reader(input)?;
    let (records, report) = match format {
        LogFormat::Tdrive => parse_tdrive_lenient(reader)?,
        LogFormat::Geolife => parse_geolife_lenient(reader, &user_id)?,
    };

    let trajectory = if records.is_empty() {
        None
    } else {
        Some(discretize(&records, &map)?)
    };
    let report_path = sibling(out, "report.json");
    let report_json = json!({
        "tool_version": TOOL_VERSION,
        "map_config_sha256": fingerprint(&map_text),
        "input": input.display().to_string(),
        "format": format,
        "parsed": report.parsed,
        "dropped": report.issues.len(),
        "issues": report.issues,
        "user_id": user_id,
        "steps_written": trajectory.as_ref().map_or(0, |t| t.len()),
    });
    let mut w = create_file(&report_path)?;
    serde_json::to_writer_pretty(&mut w, &report_json)?;
    writeln!(w)?;

    match trajectory {
        Some(trajectory) => {
            let mut w = create_file(out)?;
            ingest::write_normalized_csv(&trajectory, &mut w)?;
            println!(
                "ingested {} fixes ({} dropped) -> {} steps at {}",
                report.parsed,
                report.issues.len(),
                trajectory.len(),
                out.display()
            );
            Ok(())
        }
        None => Err(Error::EmptyInput("no valid records in the input")),
    }
}

pub struct RunArgs {
    pub trajectory: PathBuf,
    pub scenario: Option<PathBuf>,
    pub map_config: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub history: Vec<PathBuf>,
    pub sensitive: Option<String>,
    pub epsilon_s: Option<f64>,
    pub e_m: Option<f64>,
    pub delta: Option<f64>,
    pub mechanism: Option<String>,
    pub attack_mode: Option<String>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run(args: RunArgs) -> Result<()> {
    let (mut cfg, base_dir) = match &args.scenario {
        Some(path) => {
            let cfg = ScenarioConfig::from_toml_str(&read_file(path)?)?;
            let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            (cfg, base)
        }
        None => {
            let map_path = args.map_config.as_deref().ok_or_else(|| {
                Error::Config("--map-config is required without --scenario".into())
            })?;
            let map_cfg: MapConfig = toml::from_str(&read_file(map_path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", map_path.display())))?;
            let cfg = ScenarioConfig {
                name: file_stem(&args.trajectory),
                map: map_cfg,
                graph: Default::default(),
                mobility: Default::default(),
                privacy: ptppm_core::scenario::PrivacyConfig {
                    epsilon_s: 1.0,
                    e_m: 0.0, // patched below once the map is known
                    delta: 0.1,
                    epsilon_default: 1.0,
                    e_m_decay: 0.8,
                    e_m_max_retries: 5,
                    cap_adjacent_at_sensitive: false,
                    weights: Default::default(),
                    sensitive_cells: vec![],
                    semantic_classes: Default::default(),
                    class_threshold: None,
                    window: None,
                },
                attack: Default::default(),
                mechanism: MechanismTag::Pf,
            };
            (cfg, PathBuf::from("."))
        }
    };
    if cfg.privacy.e_m <= 0.0 {
        cfg.privacy.e_m = cfg.map.cell_size_m / 2.0;
    }

    // flag overrides
    if let Some(path) = &args.graph {
        cfg.graph.edge_list = Some(absolute(path));
    }
    if let Some(path) = &args.matrix {
        cfg.mobility.matrix_csv = Some(absolute(path));
    }
    if let Some(list) = &args.sensitive {
        cfg.privacy.sensitive_cells = parse_cell_list(list)?;
    }
    if let Some(v) = args.epsilon_s {
        cfg.privacy.epsilon_s = v;
    }
    if let Some(v) = args.e_m {
        cfg.privacy.e_m = v;
    }
    if let Some(v) = args.delta {
        cfg.privacy.delta = v;
    }
    if let Some(m) = &args.mechanism {
        cfg.mechanism = m.parse()?;
    }
    if let Some(a) = &args.attack_mode {
        cfg.attack.mode = a.parse::<AttackMode>()?;
    }

    let trajectory = load_trajectory(&args.trajectory)?;
    let mut history = Vec::new();
    for path in &args.history {
        history.push(load_trajectory(path)?);
    }
    if !history.is_empty() && !args.history.contains(&args.trajectory) {
        history.insert(0, trajectory.clone());
    }

    let scenario = Scenario::build(&cfg, trajectory, history, &base_dir)?;
    let budgets = scenario.budgets(scenario.epsilon_s)?;
    let ctx = scenario.context(&budgets, &scenario.base_point());
    let records = run_pipeline(&scenario.trajectory, &ctx, args.seed)?;

    let mut w = create_file(&args.out)?;
    for record in &records {
        serde_json::to_writer(&mut w, record)?;
        writeln!(w)?;
    }
    drop(w);

    let summary = summarize_run(&records, &ctx)?;
    let effective = serde_json::to_string(&cfg)?;
    let summary_json = json!({
        "tool_version": TOOL_VERSION,
        "config_sha256": fingerprint(&effective),
        "scenario": scenario.name,
        "seed": args.seed,
        "mechanism": scenario.mechanism,
        "pls_stage": scenario.mechanism != MechanismTag::Uniform,
        "records_file": args.out.display().to_string(),
        "summary": summary,
    });
    let summary_path = sibling(&args.out, "summary.json");
    let mut w = create_file(&summary_path)?;
    serde_json::to_writer_pretty(&mut w, &summary_json)?;
    writeln!(w)?;

    println!(
        "released {} steps (mechanism {}, seed {}) -> {}",
        records.len(),
        scenario.mechanism,
        args.seed,
        args.out.display()
    );
    println!(
        "total budget {:.6}, privacy cost {:.6} (2 epsilon per release)",
        summary.total_epsilon, summary.total_privacy_cost
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    trials: u32,
    seeds: Vec<u64>,
    epsilon_s: Vec<f64>,
    e_m: Vec<f64>,
    delta: Vec<f64>,
    scenarios: Vec<SweepScenarioRef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepScenarioRef {
    config: PathBuf,
    trajectory: PathBuf,
    #[serde(default)]
    history: Vec<PathBuf>,
}

pub fn sweep(config_path: &Path, out_dir: &Path, parallel: usize) -> Result<()> {
    let config_text = read_file(config_path)?;
    let cfg: SweepConfig =
        toml::from_str(&config_text).map_err(|e| Error::Config(e.to_string()))?;
    if cfg.trials == 0 || cfg.seeds.is_empty() {
        return Err(Error::Config("trials and seeds must be nonempty".into()));
    }
    let base = config_path.parent().unwrap_or(Path::new("."));

    let mut grid = Vec::new();
    for &epsilon_s in &cfg.epsilon_s {
        for &e_m in &cfg.e_m {
            for &delta in &cfg.delta {
                grid.push(SweepGridPoint {
                    epsilon_s,
                    e_m,
                    delta,
                });
            }
        }
    }
    if grid.is_empty() {
        return Err(Error::Config("empty parameter grid".into()));
    }

    let mut scenarios = Vec::new();
    for entry in &cfg.scenarios {
        let scn_path = base.join(&entry.config);
        let scn_cfg = ScenarioConfig::from_toml_str(&read_file(&scn_path)?)?;
        let scn_base = scn_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let trajectory = load_trajectory(&base.join(&entry.trajectory))?;
        let mut history = Vec::new();
        for h in &entry.history {
            history.push(load_trajectory(&base.join(h))?);
        }
        scenarios.push(Scenario::build(&scn_cfg, trajectory, history, &scn_base)?);
    }

    let work = || -> (Vec<SweepRow>, Vec<SweepFailure>) {
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for scenario in &scenarios {
            let (mut r, mut f) = run_sweep(scenario, &grid, cfg.trials, &cfg.seeds);
            rows.append(&mut r);
            failures.append(&mut f);
        }
        (rows, failures)
    };
    let (rows, failures) = if parallel > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)
    } else {
        work()
    };

    let stem = file_stem(config_path);
    let config_sha = fingerprint(&config_text);
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let comments = vec![
        format!("ptppm {TOOL_VERSION}"),
        format!("config_sha256 {config_sha}"),
    ];
    let mut w = create_file(&csv_path)?;
    write_sweep_csv(&rows, &comments, &mut w)?;
    drop(w);

    let manifest = json!({
        "tool_version": TOOL_VERSION,
        "config_sha256": config_sha,
        "config": config_path.display().to_string(),
        "trials": cfg.trials,
        "seeds": cfg.seeds,
        "grid_points": grid.len(),
        "scenarios": scenarios.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
        "rows_written": rows.len(),
        "failures": failures,
        "csv": csv_path.display().to_string(),
    });
    let manifest_path = out_dir.join(format!("{stem}.manifest.json"));
    let mut w = create_file(&manifest_path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;

    println!(
        "swept {} grid points x {} seeds x {} scenarios: {} rows, {} failures -> {}",
        grid.len(),
        cfg.seeds.len(),
        scenarios.len(),
        rows.len(),
        failures.len(),
        csv_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn gen(
    map_config: &Path,
    graph: Option<&Path>,
    steps: u32,
    count: u32,
    bias: f64,
    target: Option<u32>,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let map_text = read_file(map_config)?;
    let map = map_from_text(&map_text)?;
    let graph = match graph {
        Some(path) => ptppm_core::graph::RoadGraph::load_edge_list(path, &map)?,
        None => ptppm_core::graph::RoadGraph::grid4(&map),
    };
    let walks = generate_walks(&map, &graph, steps, count, bias, target.map(CellId), seed)?;

    let mut files = Vec::new();
    for walk in &walks {
        let path = out_dir.join(format!("{}.csv", walk.user_id()));
        let mut w = create_file(&path)?;
        ingest::write_normalized_csv(walk, &mut w)?;
        files.push(path.display().to_string());
    }
    let manifest = json!({
        "tool_version": TOOL_VERSION,
        "map_config_sha256": fingerprint(&map_text),
        "steps": steps,
        "count": count,
        "bias": bias,
        "target": target,
        "seed": seed,
        "files": files,
    });
    let mut w = create_file(&out_dir.join("gen.manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;

    println!("generated {count} walks of {steps} steps -> {}", out_dir.display());
    Ok(())
}

fn map_from_text(text: &str) -> Result<GridMap> {
    let cfg: MapConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    GridMap::from_config(&cfg)
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    ingest::read_normalized_csv(open_reader(path)?, &file_stem(path))
}

fn parse_cell_list(list: &str) -> Result<Vec<u32>> {
    list.split(',')
        .filter(|tok| !tok.trim().is_empty())
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad cell index `{tok}`")))
        })
        .collect()
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    name.push('.');
    name.push_str(suffix);
    path.with_file_name(name)
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}
