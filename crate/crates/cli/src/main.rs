use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use splatfield::densify::splats_from_points;
use splatfield::field::checkpoint::load_field;
use splatfield::field::ColorMode;
use splatfield::geometry::Vec3;
use splatfield::io::manifest::{load_dataset, parse_manifest};
use splatfield::io::points::load_points;
use splatfield::io::splatfile::load_splats;
use splatfield::io::synth::{generate_synthetic, load_spec, write_synthetic, SyntheticSceneSpec};
use splatfield::train::config::TrainConfig;
use splatfield::train::eval::{evaluate, render_view};
use splatfield::train::{load_views, run, trainer_for_dataset};

#[derive(Parser)]
#[command(name = "splatfield", version, about = "Gaussian splats trained jointly with a hash-grid radiance field")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with the reference ray tracer.
    Synth(SynthArgs),
    /// Train splats and field on a dataset.
    Train(TrainArgs),
    /// Render trained splats at the cameras of a manifest or a single pose record.
    Render(RenderArgs),
    /// Score trained splats on the held-out frames of a dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (TOML).
    #[arg(long, required_unless_present = "toy", conflicts_with = "toy")]
    spec: Option<PathBuf>,
    /// Use the built-in toy scene instead of a spec file.
    #[arg(long)]
    toy: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with training settings; flags below override it.
    #[arg(long, conflicts_with = "toy")]
    config: Option<PathBuf>,
    /// Start from the scaled-down toy-scene settings.
    #[arg(long)]
    toy: bool,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Comma-separated harvest iterations.
    #[arg(long, value_delimiter = ',')]
    harvest: Option<Vec<usize>>,
    #[arg(long)]
    no_warp: bool,
    #[arg(long)]
    no_harvest: bool,
    #[arg(long)]
    color_mode: Option<ColorMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: bool,
    /// ASCII point list (x y z per line, or ASCII PLY) used as initial splats.
    #[arg(long)]
    init_points: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    field: PathBuf,
    /// Manifest, or a file holding a single manifest record.
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0, 1.0])]
    background: Vec<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Metrics table; written as JSON when the name ends in `.json`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0, 1.0])]
    background: Vec<f64>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => load_spec(p)?,
        None => SyntheticSceneSpec::toy(a.seed),
    };
    let scene = generate_synthetic(&spec)?;
    let manifest = write_synthetic(&scene, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p).map_err(anyhow::Error::msg)?,
        None if a.toy => TrainConfig::toy(),
        None => TrainConfig::default(),
    };
    if let Some(v) = a.iters {
        cfg.iterations = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.lambda1 {
        cfg.lambda1 = v;
    }
    if let Some(v) = a.tau {
        cfg.densify.tau = v;
    }
    if let Some(v) = &a.harvest {
        cfg.densify.harvest_iterations = v.clone();
    }
    if let Some(v) = a.color_mode {
        cfg.color_mode = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.warp &= !a.no_warp;
    cfg.harvest &= !a.no_harvest;
    cfg.deterministic |= a.deterministic;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let dataset = load_dataset(&a.data)?;
    let initial = match &a.init_points {
        Some(p) => {
            let points = load_points(p).with_context(|| format!("reading {}", p.display()))?;
            Some(splats_from_points(
                &points,
                &dataset.scene_frame(),
                cfg.initial_opacity,
                cfg.densify.neighbors,
            ))
        }
        None => None,
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml().map_err(anyhow::Error::msg)?)?;
    let (mut trainer, test) = trainer_for_dataset(cfg, &dataset, initial)?;
    info!(
        "training on {} views ({} held out), {} initial splats",
        trainer.views.len(),
        test.len(),
        trainer.splats.len()
    );
    run(&mut trainer, &a.out)?;
    if !test.is_empty() {
        let report = evaluate(&trainer.splats, &trainer.field, &test, &trainer.background());
        fs::write(a.out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
        print!("{}", report.to_table());
    }
    Ok(())
}

fn background(v: &[f64]) -> Result<Vec3> {
    if v.len() != 3 {
        bail!("background needs three components");
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

fn render(a: RenderArgs) -> Result<()> {
    let splats = load_splats(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let field = load_field(&a.field).with_context(|| format!("reading {}", a.field.display()))?;
    let text = fs::read_to_string(&a.camera).with_context(|| format!("reading {}", a.camera.display()))?;
    let base = a.camera.parent().unwrap_or(Path::new("."));
    let cameras = parse_manifest(&text, base, false)?;
    let bg = background(&a.background)?;
    fs::create_dir_all(&a.out)?;
    for f in &cameras.frames {
        let img = render_view(&splats, &field, &f.camera, &bg);
        let path = a.out.join(format!("{:04}.png", f.index));
        img.save_png(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let splats = load_splats(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let field = load_field(&a.field).with_context(|| format!("reading {}", a.field.display()))?;
    let dataset = load_dataset(&a.data)?;
    let (_, test) = load_views(&dataset)?;
    if test.is_empty() {
        bail!("{} has no held-out frames", a.data.display());
    }
    let report = evaluate(&splats, &field, &test, &background(&a.background)?);
    let text = if a.report.extension().is_some_and(|e| e == "json") {
        serde_json::to_string_pretty(&report)?
    } else {
        report.to_table()
    };
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.report, text)?;
    print!("{}", report.to_table());
    Ok(())
}
