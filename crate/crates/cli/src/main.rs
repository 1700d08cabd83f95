use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rcforecast::dynsys::{DynSystem, TrajectoryBuffer};
use rcforecast::experiment::{evaluate, plan_for, train_model, Dataset, ExperimentConfig};
use rcforecast::lyapunov::{max_lyapunov_with, stability_map, LyapunovOptions};
use rcforecast::metrics::{count_oscillations, error_field, horizon, write_error_field_csv};
use rcforecast::reservoir::ReservoirModel;
use rcforecast::sweep::{run_sweep_with, SweepGrid};

#[derive(Parser)]
#[command(name = "rcforecast", version, about = "Reservoir-computing prediction of chaotic systems with sparse state updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Results root; files go to `<out>/<config hash>/`.
    #[arg(short, long, default_value = "results")]
    out: PathBuf,
    /// Replace all seeds in the config by values derived from this one.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth data (training rows followed by the evaluation window).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Also estimate the maximum Lyapunov exponent over this many steps.
        #[arg(long)]
        lyapunov: Option<usize>,
    },
    /// Train the reservoir and write a model snapshot.
    Train {
        #[command(flatten)]
        common: Common,
        /// Trajectory file from `simulate` (generated from the config if absent).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Closed-loop prediction over the evaluation window.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Model snapshot from `train` (trained from scratch if absent).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Ignore the config's update schedule.
        #[arg(long)]
        no_schedule: bool,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// δe over the grid of update schedules in the `sweep` table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Transverse Lyapunov exponents over the grid in the `stability` table.
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for config and parameter errors, 3 for numerical divergence, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use rcforecast::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::Config(_) | E::InvalidParameter(_) | E::GridNotPowerOfTwo(_)) => 2,
        Some(E::Diverged { .. } | E::BlowUp { .. } | E::SolveFailed { .. }) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, format, lyapunov } => simulate(&common, format, lyapunov),
        Command::Train { common, data } => train(&common, data.as_deref()),
        Command::Predict { common, model, data, no_schedule, format } => {
            predict(&common, model.as_deref(), data.as_deref(), no_schedule, format)
        }
        Command::Sweep { common, workers } => sweep(&common, workers),
        Command::Stability { common, workers } => stability(&common, workers),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = common.seed {
        cfg.seeds.override_with(seed);
    }
    Ok(cfg)
}

/// Creates the run directory and writes the resolved config into it.
fn run_dir(common: &Common, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = common.out.join(cfg.short_hash());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_trajectory(dir: &Path, stem: &str, traj: &TrajectoryBuffer, format: Format) -> Result<PathBuf> {
    let path = match format {
        Format::Csv => dir.join(format!("{stem}.csv")),
        Format::Bin => dir.join(format!("{stem}.bin")),
    };
    let mut w = create(&path)?;
    match format {
        Format::Csv => traj.write_csv(&mut w)?,
        Format::Bin => traj.write_bin(&mut w)?,
    }
    w.flush()?;
    Ok(path)
}

fn read_trajectory(path: &Path, dt: f64) -> Result<TrajectoryBuffer> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let traj = if path.extension().is_some_and(|e| e == "bin") {
        TrajectoryBuffer::read_bin(r)?
    } else {
        TrajectoryBuffer::read_csv(r, dt)?
    };
    Ok(traj)
}

fn dataset(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Dataset> {
    let Some(path) = data else {
        return Ok(Dataset::generate(cfg)?);
    };
    let system = cfg.system.build()?;
    let all = read_trajectory(path, system.dt())?;
    let needed = cfg.training.steps + cfg.evaluation.prediction_steps(system.dt());
    if all.dim() != system.channels() || all.len() < needed {
        bail!(rcforecast::Error::Config(format!(
            "{} has {} rows of {} channels, config needs {needed} rows of {}",
            path.display(),
            all.len(),
            all.dim(),
            system.channels()
        )));
    }
    Ok(Dataset::split(system, &all, cfg.training.steps, cfg.evaluation.warmup))
}

fn simulate(common: &Common, format: Format, lyapunov: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = run_dir(common, &cfg)?;
    let system = cfg.system.build()?;
    let n = cfg.training.steps + cfg.evaluation.prediction_steps(system.dt());
    let transient = cfg.system.transient.unwrap_or_else(|| system.default_transient());
    let traj = system.generate(cfg.seeds.data, n, transient)?;
    let path = write_trajectory(&dir, "trajectory", &traj, format)?;
    println!("wrote {} ({} steps x {} channels)", path.display(), traj.len(), traj.dim());
    if let Some(steps) = lyapunov {
        let mut opts = LyapunovOptions::new(steps);
        opts.seed = cfg.seeds.data;
        opts.transient = Some(transient);
        let est = max_lyapunov_with(&system, &opts)?;
        println!(
            "maximum Lyapunov exponent {:.5} (halves {:.5} / {:.5}{})",
            est.exponent,
            est.first_half,
            est.second_half,
            if est.converged { "" } else { ", NOT converged" }
        );
        write_json(&dir.join("lyapunov.json"), &serde_json::to_value(est)?)?;
    }
    Ok(())
}

fn train(common: &Common, data: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = run_dir(common, &cfg)?;
    let data = dataset(&cfg, data)?;
    let (model, report) = train_model(&cfg, &data)?;
    let path = dir.join("model.bin");
    let mut w = create(&path)?;
    model.save(&mut w)?;
    w.flush()?;
    write_json(&dir.join("train_report.json"), &serde_json::to_value(&report)?)?;
    let worst = report.residual_rms.iter().copied().fold(0.0, f64::max);
    println!("wrote {} (max one-step residual rms {worst:.3e})", path.display());
    Ok(())
}

fn predict(common: &Common, model: Option<&Path>, data: Option<&Path>, no_schedule: bool, format: Format) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = run_dir(common, &cfg)?;
    let data = dataset(&cfg, data)?;
    let mut model = match model {
        Some(p) => {
            let r = BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?);
            let m = ReservoirModel::load(r)?;
            if m.params().inputs != data.system.channels() {
                bail!(rcforecast::Error::Config("model and system channel counts differ".into()));
            }
            m
        }
        None => train_model(&cfg, &data)?.0,
    };
    let plan = if no_schedule { None } else { plan_for(&cfg, &data.system)? };
    let (pred, series) = evaluate(&cfg, &mut model, &data, plan.as_ref())?;
    let truth = data.truth.slice_rows(0, pred.len());

    let stem = if plan.is_some() { "prediction" } else { "prediction_free" };
    write_trajectory(&dir, stem, &pred, format)?;
    series.write_csv(create(&dir.join(format!("{stem}_error.csv")))?)?;
    let field = error_field(&pred, &truth, data.system.channels_per_site())?;
    write_error_field_csv(&field, create(&dir.join(format!("{stem}_error_field.csv")))?)?;

    let ev = &cfg.evaluation;
    let h = horizon(&series, ev.tolerance, ev.confirm);
    let h_time = series.horizon_time(ev.tolerance, ev.confirm);
    let mut summary = json!({
        "config_hash": cfg.hash(),
        "schedule": plan.is_some(),
        "prediction_steps": pred.len(),
        "delta_e": series.delta_e,
        "horizon_lyapunov_times": if h.is_finite() { json!(h) } else { json!("inf") },
        "horizon_time": if h_time.is_finite() { json!(h_time) } else { json!("inf") },
    });
    if let (DynSystem::Ode(_), true) = (data.system, h_time.is_finite()) {
        let steps = (h_time / data.system.dt()).round() as usize;
        let ch = oscillation_channel(&cfg);
        summary["oscillations_before_horizon"] = json!(count_oscillations(truth.slice_rows(0, steps.max(1)).column(ch)));
    }
    write_json(&dir.join(format!("{stem}_summary.json")), &summary)?;
    println!(
        "delta_e {:.4e}, horizon {} Lyapunov times; results in {}",
        series.delta_e,
        if h.is_finite() { format!("{h:.2}") } else { "inf (never exceeded)".into() },
        dir.display()
    );
    Ok(())
}

/// Channel whose maxima mark one oscillation: x for Rössler and Hindmarsh-Rose, z for
/// Lorenz (one maximum per loop) and for the food web (predator bursts).
fn oscillation_channel(cfg: &ExperimentConfig) -> usize {
    use rcforecast::experiment::SystemName as S;
    match cfg.system.name {
        S::Lorenz | S::FoodWeb => 2,
        _ => 0,
    }
}

fn write_grid(dir: &Path, stem: &str, grid: &SweepGrid, log: bool) -> Result<()> {
    grid.write_csv(create(&dir.join(format!("{stem}.csv")))?)?;
    grid.write_json(create(&dir.join(format!("{stem}.json")))?)?;
    grid.write_ppm(create(&dir.join(format!("{stem}.ppm")))?, log)?;
    Ok(())
}

fn sweep(common: &Common, workers: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let Some(sw) = cfg.sweep.clone() else {
        bail!(rcforecast::Error::Config("config has no [sweep] table".into()));
    };
    let dir = run_dir(common, &cfg)?;
    let data = Dataset::generate(&cfg)?;
    let (model, _) = train_model(&cfg, &data)?;
    let grid = run_sweep_with(&cfg, &sw, &data, &model, workers)?;
    write_grid(&dir, "sweep", &grid, true)?;
    let flagged = grid.flagged.iter().filter(|&&f| f).count();
    println!("{} cells ({flagged} clamped); results in {}", grid.cells.len(), dir.display());
    Ok(())
}

fn stability(common: &Common, workers: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let Some(st) = cfg.stability.clone() else {
        bail!(rcforecast::Error::Config("config has no [stability] table".into()));
    };
    let DynSystem::Ode(system) = cfg.system.build()? else {
        bail!(rcforecast::Error::Config("stability maps need a flow system".into()));
    };
    let dir = run_dir(common, &cfg)?;
    let mut mask = [false; 3];
    st.channels.iter().for_each(|&c| mask[c] = true);
    let mut opts = LyapunovOptions::new((st.time / system.dt).ceil() as usize);
    opts.seed = cfg.seeds.data;
    let mut grid = stability_map(&system, st.c, &st.active, &st.period, mask, &opts, workers)?;
    grid.metadata.insert("config_hash".into(), cfg.hash().into());
    write_grid(&dir, "stability", &grid, false)?;
    let negative = grid.cells.iter().flatten().filter(|&&v| v < 0.0).count();
    println!("{negative} of {} cells synchronise; results in {}", grid.cells.iter().flatten().count(), dir.display());
    Ok(())
}
