//! Command-line entry point for the local-forgetting replay testbed.
//!
//! Subcommands:
//! * `train-locality` — collect random-policy data, train the contrastive
//!   embedding, write a snapshot file.
//! * `run` — run a full two-phase experiment across seeds and write
//!   per-seed artifacts plus an aggregate learning curve.
//! * `sweep` — cartesian parameter grid of runs with an aggregated CSV.
//! * `oracle` — print the dynamic-programming optimal return for a task.
//! * `export` — render a histogram/heatmap CSV as a PGM image.
//!
//! Configuration precedence: preset or config file as the base, then
//! command-line flags override individual fields. Artifacts land under
//! `<out-root>/<name>/<seed>/`; the output root comes from `--out-dir`,
//! falling back to `$LOFO_OUT_ROOT`, then `./out`.
//!
//! Exit codes: 0 success, 1 configuration/validation error, 2 runtime
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use lofo_core::config::{
    preset, BufferConfig, ExperimentConfig, LocalityConfig, SeedArtifacts, PRESET_NAMES,
};
use lofo_core::env::Phase;
use lofo_core::loca::{
    aggregate_curves, curve_csv, grid_optimal_values, heatmap_csv, histogram_csv,
    mc_optimal_return, OracleMethod,
};
use lofo_core::locality::EmbeddingSnapshot;

#[derive(Parser)]
#[command(name = "lofo", version, about = "Local-forgetting replay buffer testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the contrastive locality embedding and write a snapshot
    TrainLocality(TrainLocalityArgs),
    /// Run a two-phase experiment across seeds
    Run(RunArgs),
    /// Run a cartesian grid of experiments
    Sweep(SweepArgs),
    /// Print the optimal evaluation return for an environment/phase
    Oracle(OracleArgs),
    /// Render a CSV artifact as a grayscale PGM image
    Export(ExportArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Preset name (mountaincar-full, mountaincar-lite, minigrid-full, minigrid-lite)
    #[arg(long)]
    preset: Option<String>,
    /// Config JSON file (mutually exclusive with --preset)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment name override (names the artifact directory)
    #[arg(long)]
    name: Option<String>,
    /// Buffer kind: fifo | reservoir | lofo
    #[arg(long)]
    buffer: Option<String>,
    /// FIFO/reservoir capacity
    #[arg(long)]
    capacity: Option<usize>,
    /// Neighbourhood radius for the lofo buffer
    #[arg(long)]
    d_local: Option<f64>,
    /// Per-neighbourhood cap for the lofo buffer
    #[arg(long)]
    n_local: Option<usize>,
    /// Locality source: learned | handcrafted
    #[arg(long)]
    locality: Option<String>,
    /// Embedding snapshot to reuse (implies learned locality)
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Comma-separated seed list, e.g. 0,1,2
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    phase1_steps: Option<u64>,
    #[arg(long)]
    phase2_steps: Option<u64>,
    #[arg(long)]
    eval_period: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<u32>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Random-policy steps collected for embedding training
    #[arg(long)]
    collect_steps: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(_), Some(_)) => bail!("--preset and --config are mutually exclusive"),
            (Some(name), None) => preset(name)
                .ok_or_else(|| anyhow!("unknown preset {name}; known: {PRESET_NAMES:?}"))?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_json(&text)?
            }
            (None, None) => bail!("one of --preset or --config is required"),
        };
        if let Some(name) = &self.name {
            cfg.name = name.clone();
        }
        match self.buffer.as_deref() {
            None => {
                if let BufferConfig::Lofo { d_local, n_local } = cfg.buffer {
                    cfg.buffer = BufferConfig::Lofo {
                        d_local: self.d_local.unwrap_or(d_local),
                        n_local: self.n_local.unwrap_or(n_local),
                    };
                }
            }
            Some("fifo") => {
                cfg.buffer = BufferConfig::Fifo {
                    capacity: self
                        .capacity
                        .ok_or_else(|| anyhow!("--buffer fifo requires --capacity"))?,
                }
            }
            Some("reservoir") => {
                cfg.buffer = BufferConfig::Reservoir {
                    capacity: self
                        .capacity
                        .ok_or_else(|| anyhow!("--buffer reservoir requires --capacity"))?,
                }
            }
            Some("lofo") => {
                let (d0, n0) = match cfg.buffer {
                    BufferConfig::Lofo { d_local, n_local } => (d_local, n_local),
                    _ => (0.005, 1),
                };
                cfg.buffer = BufferConfig::Lofo {
                    d_local: self.d_local.unwrap_or(d0),
                    n_local: self.n_local.unwrap_or(n0),
                }
            }
            Some(other) => bail!("unknown buffer kind {other}"),
        }
        match self.locality.as_deref() {
            None => {}
            Some("learned") => cfg.locality = LocalityConfig::Learned { snapshot: None },
            Some("handcrafted") => cfg.locality = LocalityConfig::Handcrafted,
            Some(other) => bail!("unknown locality source {other}"),
        }
        if let Some(path) = &self.snapshot {
            cfg.locality = LocalityConfig::Learned {
                snapshot: Some(path.clone()),
            };
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<Result<_, _>>()
                .context("parsing --seeds")?;
        }
        if let Some(v) = self.phase1_steps {
            cfg.schedule.phase1_steps = v;
        }
        if let Some(v) = self.phase2_steps {
            cfg.schedule.phase2_steps = v;
        }
        if let Some(v) = self.eval_period {
            cfg.schedule.eval_period = v;
        }
        if let Some(v) = self.eval_episodes {
            cfg.schedule.eval_episodes = v;
        }
        if let Some(v) = self.warmup_steps {
            cfg.agent.warmup_steps = v;
        }
        if let Some(v) = self.epsilon {
            cfg.agent.epsilon = v;
        }
        if let Some(v) = self.collect_steps {
            cfg.embedding.collect_steps = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainLocalityArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Snapshot output path (default <out-root>/<name>/embedding.json)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data-collection and training seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for seed parallelism (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Seed used if the embedding has to be trained on the fly
    #[arg(long, default_value_t = 0)]
    embedding_seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    embedding_seed: u64,
    /// Sweep axis as key=v1,v2,... (repeatable; cartesian product).
    /// Keys: n_local, d_local, capacity, epsilon
    #[arg(long = "sweep")]
    sweeps: Vec<String>,
}

#[derive(Args)]
struct OracleArgs {
    /// mountaincar | minigrid
    #[arg(long)]
    env: String,
    /// a | b
    #[arg(long)]
    phase: String,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// MountainCar discretization resolution
    #[arg(long, default_value_t = 200)]
    x_bins: usize,
    #[arg(long, default_value_t = 200)]
    v_bins: usize,
}

#[derive(Args)]
struct ExportArgs {
    /// Input CSV (bin_x,bin_y,count or bin_x,bin_y,value)
    #[arg(long)]
    input: PathBuf,
    /// Output PGM path
    #[arg(long)]
    output: PathBuf,
}

fn out_root(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("LOFO_OUT_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Load or train the embedding a config needs.
fn ensure_embedding(
    cfg: &ExperimentConfig,
    seed: u64,
) -> anyhow::Result<Option<EmbeddingSnapshot>> {
    let needs = matches!(cfg.buffer, BufferConfig::Lofo { .. })
        && matches!(cfg.locality, LocalityConfig::Learned { .. });
    if !needs {
        return Ok(None);
    }
    eprintln!("preparing locality embedding...");
    Ok(lofo_core::config::prepare_embedding(cfg, seed)?)
}

fn write_seed_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    artifacts: &[SeedArtifacts],
) -> anyhow::Result<()> {
    for a in artifacts {
        let seed_dir = dir.join(a.seed.to_string());
        write(&seed_dir.join("curve.csv"), &curve_csv(&a.curve))?;
        if let Some(p1) = &a.phase1 {
            write(&seed_dir.join("hist_p1.csv"), &histogram_csv(&p1.histogram))?;
            write(&seed_dir.join("reward_p1.csv"), &heatmap_csv(&p1.heatmap))?;
        }
        if let Some(p2) = &a.phase2 {
            write(&seed_dir.join("hist_p2.csv"), &histogram_csv(&p2.histogram))?;
            write(&seed_dir.join("reward_p2.csv"), &heatmap_csv(&p2.heatmap))?;
        }
        write(&seed_dir.join("config.json"), &cfg.to_json())?;
    }
    let curves: Vec<_> = artifacts.iter().map(|a| a.curve.clone()).collect();
    write(&dir.join("curve.csv"), &curve_csv(&aggregate_curves(&curves)))?;
    Ok(())
}

fn install_pool(workers: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    Ok(builder.build()?)
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let dir = out_root(&args.out_dir).join(&cfg.name);
    let snapshot = ensure_embedding(&cfg, args.embedding_seed)?;
    if let Some(s) = &snapshot {
        s.save(&dir.join("embedding.json"))
            .map_err(anyhow::Error::from)?;
    }
    let embedding = snapshot.as_ref().map(|s| s.embedding()).transpose()?;
    let pool = install_pool(args.workers)?;
    let artifacts = pool.install(|| lofo_core::config::run_experiment(&cfg, embedding.as_ref()))?;
    write_seed_artifacts(&dir, &cfg, &artifacts)?;
    let curves: Vec<_> = artifacts.iter().map(|a| a.curve.clone()).collect();
    if let Some(last) = aggregate_curves(&curves).last() {
        println!(
            "{}: {} seeds, final eval return {:.4} +- {:.4}",
            cfg.name,
            artifacts.len(),
            last.mean_return,
            last.stderr
        );
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_train_locality(args: &TrainLocalityArgs) -> anyhow::Result<()> {
    let mut cfg = args.config.resolve()?;
    // Train fresh even if the config points at an existing snapshot.
    cfg.locality = LocalityConfig::Learned { snapshot: None };
    let snapshot = lofo_core::config::prepare_embedding(&cfg, args.seed)?
        .expect("learned locality always yields a snapshot");
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| out_root(&args.out_dir).join(&cfg.name).join("embedding.json"));
    snapshot.save(&path).map_err(anyhow::Error::from)?;
    println!("embedding snapshot written to {}", path.display());
    Ok(())
}

fn apply_sweep_value(cfg: &mut ExperimentConfig, key: &str, value: &str) -> anyhow::Result<()> {
    match key {
        "n_local" => {
            let n: usize = value.parse()?;
            match cfg.buffer {
                BufferConfig::Lofo { d_local, .. } => {
                    cfg.buffer = BufferConfig::Lofo {
                        d_local,
                        n_local: n,
                    }
                }
                _ => bail!("n_local sweep requires a lofo buffer"),
            }
        }
        "d_local" => {
            let d: f64 = value.parse()?;
            match cfg.buffer {
                BufferConfig::Lofo { n_local, .. } => {
                    cfg.buffer = BufferConfig::Lofo {
                        d_local: d,
                        n_local,
                    }
                }
                _ => bail!("d_local sweep requires a lofo buffer"),
            }
        }
        "capacity" => {
            let c: usize = value.parse()?;
            match cfg.buffer {
                BufferConfig::Fifo { .. } => cfg.buffer = BufferConfig::Fifo { capacity: c },
                BufferConfig::Reservoir { .. } => {
                    cfg.buffer = BufferConfig::Reservoir { capacity: c }
                }
                _ => bail!("capacity sweep requires a fifo or reservoir buffer"),
            }
        }
        "epsilon" => cfg.agent.epsilon = value.parse()?,
        other => bail!("unknown sweep key {other}"),
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let base = args.config.resolve()?;
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for spec in &args.sweeps {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("sweep spec must be key=v1,v2,..."))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.is_empty() {
            bail!("sweep axis {key} has no values");
        }
        axes.push((key.to_string(), values));
    }
    if axes.is_empty() {
        println!("empty sweep grid; nothing to do");
        return Ok(());
    }

    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for v in values {
                let mut c = cell.clone();
                c.push((key.clone(), v.clone()));
                next.push(c);
            }
        }
        cells = next;
    }

    let dir = out_root(&args.out_dir).join(&base.name);
    let snapshot = ensure_embedding(&base, args.embedding_seed)?;
    if let Some(s) = &snapshot {
        s.save(&dir.join("embedding.json"))
            .map_err(anyhow::Error::from)?;
    }
    let embedding = snapshot.as_ref().map(|s| s.embedding()).transpose()?;
    let pool = install_pool(args.workers)?;

    let mut summary = String::from("cell,step,phase,mean_return,stderr,n_runs\n");
    let mut failures = Vec::new();
    for cell in &cells {
        let mut cfg = base.clone();
        let cell_name: Vec<String> = cell.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let cell_name = cell_name.join(",");
        let mut ok = true;
        for (k, v) in cell {
            if let Err(e) = apply_sweep_value(&mut cfg, k, v) {
                failures.push((cell_name.clone(), e.to_string()));
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        cfg.name = format!("{}/{}", base.name, cell_name.replace(['=', ','], "_"));
        eprintln!("sweep cell: {cell_name}");
        match pool.install(|| lofo_core::config::run_experiment(&cfg, embedding.as_ref())) {
            Ok(artifacts) => {
                let cell_dir = out_root(&args.out_dir).join(&cfg.name);
                write_seed_artifacts(&cell_dir, &cfg, &artifacts)?;
                let curves: Vec<_> = artifacts.iter().map(|a| a.curve.clone()).collect();
                for p in aggregate_curves(&curves) {
                    let phase = match p.phase {
                        Phase::A => 1,
                        Phase::B => 2,
                    };
                    summary.push_str(&format!(
                        "\"{}\",{},{},{:.6},{:.6},{}\n",
                        cell_name, p.step, phase, p.mean_return, p.stderr, p.n
                    ));
                }
            }
            Err(e) => failures.push((cell_name.clone(), e.to_string())),
        }
    }
    write(&dir.join("sweep.csv"), &summary)?;
    println!("sweep summary in {}", dir.join("sweep.csv").display());
    if !failures.is_empty() {
        eprintln!("{} sweep cell(s) failed:", failures.len());
        for (cell, err) in &failures {
            eprintln!("  {cell}: {err}");
        }
        bail!("sweep finished with failures");
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> anyhow::Result<()> {
    let phase = match args.phase.to_lowercase().as_str() {
        "a" => Phase::A,
        "b" => Phase::B,
        other => bail!("unknown phase {other}; use a or b"),
    };
    let (value, method) = match args.env.as_str() {
        "minigrid" => {
            let env = lofo_core::env::MiniGrid::default();
            let (_, oracle) = grid_optimal_values(&env, phase, args.gamma)?;
            (oracle.value, oracle.method)
        }
        "mountaincar" => {
            let env = lofo_core::env::MountainCar::default();
            let oracle = mc_optimal_return(&env, phase, args.gamma, args.x_bins, args.v_bins)?;
            (oracle.value, oracle.method)
        }
        other => bail!("unknown env {other}; use mountaincar or minigrid"),
    };
    let method = match method {
        OracleMethod::ExactDp => "exact-dp".to_string(),
        OracleMethod::DiscretizedDp { x_bins, v_bins } => {
            format!("discretized-dp-{x_bins}x{v_bins}")
        }
    };
    println!(
        "env={} phase={} gamma={} optimal_return={:.6} method={}",
        args.env, args.phase, args.gamma, value, method
    );
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            bail!(
                "line {} of {} is not bin_x,bin_y,value",
                i + 1,
                args.input.display()
            );
        }
        rows.push((
            fields[0].trim().parse()?,
            fields[1].trim().parse()?,
            fields[2].trim().parse()?,
        ));
    }
    if rows.is_empty() {
        bail!("no data rows in {}", args.input.display());
    }
    let width = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let height = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let mut values = vec![0.0f64; width * height];
    for (x, y, v) in rows {
        values[y * width + x] = v;
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut pgm = format!("P2\n{width} {height}\n255\n");
    for y in 0..height {
        let row: Vec<String> = (0..width)
            .map(|x| format!("{}", ((values[y * width + x] - lo) * scale).round() as u32))
            .collect();
        pgm.push_str(&row.join(" "));
        pgm.push('\n');
    }
    write(&args.output, &pgm)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn is_validation_error(e: &anyhow::Error) -> bool {
    use lofo_core::CoreError;
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return matches!(
                core,
                CoreError::InvalidParam(_) | CoreError::Snapshot(_) | CoreError::Dataset(_)
            );
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return false;
        }
    }
    // Remaining failures come from argument/config resolution.
    true
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::TrainLocality(args) => cmd_train_locality(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Export(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_validation_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
