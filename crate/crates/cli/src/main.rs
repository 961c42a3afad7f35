use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgs_core::eval::{evaluate_model, facing_normals};
use sgs_core::io::checkpoint::{read_checkpoint, write_checkpoint};
use sgs_core::io::dataset::{load_dataset, Dataset};
use sgs_core::io::{write_depth, write_normal_png, write_png};
use sgs_core::mlp::bench::{bench, write_bench_csv};
use sgs_core::raster::render;
use sgs_core::synth::{write_scene, Occluder, SynthScene};
use sgs_core::train::{initialize, TrainConfig, Trainer};
use sgs_core::Network;

#[derive(Parser)]
#[command(
    name = "sgs",
    version,
    about = "Surfel splatting reconstruction of deforming scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic deforming scene in the dataset layout.
    Synth(SynthArgs),
    /// Build the initial surfel cloud and write it as a checkpoint.
    Init(InitArgs),
    /// Optimize from the initial cloud; writes checkpoints and log.csv.
    Train(TrainArgs),
    /// Render color, normal and depth maps from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint on the held-out frames.
    Eval(EvalArgs),
    /// Throughput of the fused and reference network paths as CSV.
    BenchMlp(BenchArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value file of training options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one option, e.g. `--set lambda_normal=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed-order reductions so repeated runs are bit-identical.
    #[arg(long)]
    deterministic: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in {}", p.display()))?;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Deformation amplitude; 0 gives a static plane.
    #[arg(long, default_value_t = 0.1)]
    amplitude: f64,
    #[arg(long)]
    no_occluder: bool,
    /// Texture seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Write an all-zero network instead of a random one.
    #[arg(long)]
    zero_network: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoints, log.csv and config.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Output directory for color.png, normal.png and depth.sgsd.
    #[arg(long)]
    out: PathBuf,
    /// Normalized timestamp in [0, 1].
    #[arg(long, conflicts_with = "frame")]
    t: Option<f64>,
    /// Frame index; uses that frame's timestamp and needs --data.
    #[arg(long, requires = "data")]
    frame: Option<usize>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Render the canonical surfels without deformation.
    #[arg(long, conflicts_with_all = ["t", "frame"])]
    canonical: bool,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 1024, 4096])]
    batches: Vec<usize>,
    /// Minimum wall time per measurement in milliseconds.
    #[arg(long, default_value_t = 500)]
    min_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn synth(a: &SynthArgs) -> Result<()> {
    let scene = SynthScene {
        width: a.width,
        height: a.height,
        frames: a.frames,
        focal: a.width as f64,
        amplitude: a.amplitude,
        texture_seed: a.seed,
        occluder: (!a.no_occluder).then(Occluder::default),
        ..SynthScene::default()
    };
    if scene.width == 0 || scene.height == 0 || scene.frames == 0 {
        bail!("width, height and frames must be positive");
    }
    write_scene(&scene, &a.out)?;
    info!("wrote {} frames to {}", scene.frames, a.out.display());
    Ok(())
}

fn load(data: &Path) -> Result<Dataset<f32>> {
    load_dataset(data).with_context(|| format!("loading dataset {}", data.display()))
}

fn init(a: &InitArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let data = load(&a.data)?;
    let mut model = initialize(&data, &cfg)?;
    if a.zero_network {
        model.network = Network::zeros();
    }
    write_checkpoint(&a.out, &model, &data.camera, 0)?;
    println!("{} surfels written to {}", model.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.cfg.load()?;
    if let Some(n) = a.iters {
        cfg.iterations = n;
    }
    let data = load(&a.data)?;
    let model = match &a.ckpt {
        Some(p) => {
            read_checkpoint(p)
                .with_context(|| format!("reading checkpoint {}", p.display()))?
                .model
        }
        None => initialize(&data, &cfg)?,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("config.txt"), cfg.to_text())?;
    let log_path = a.out.join("log.csv");
    let mut log = BufWriter::new(
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    let start = Instant::now();
    let mut trainer = Trainer::new(model, &data, cfg)?;
    let rows = trainer.run(Some(&a.out), &mut log)?;
    let psnr = rows
        .last()
        .map_or_else(|| trainer.holdout_psnr(), |r| r.psnr_holdout);
    println!(
        "{} iterations in {:.1} s, {} surfels, held-out PSNR {psnr:.3} dB",
        trainer.iteration,
        start.elapsed().as_secs_f64(),
        trainer.model.len()
    );
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    let ck = read_checkpoint::<f32>(&a.ckpt)
        .with_context(|| format!("reading checkpoint {}", a.ckpt.display()))?;
    let settings = TrainConfig {
        deterministic: a.deterministic,
        ..TrainConfig::default()
    }
    .render_settings();
    let cam = &ck.camera;
    let out = if a.canonical {
        render(&ck.model.surfels, cam, &settings)
    } else {
        let t = match (a.t, a.frame) {
            (Some(t), _) => t,
            (None, Some(i)) => {
                let data = load(a.data.as_deref().expect("clap enforces --data"))?;
                data.frames
                    .get(i)
                    .with_context(|| format!("frame {i} out of range ({} frames)", data.len()))?
                    .timestamp as f64
            }
            (None, None) => bail!("render needs --t, --frame or --canonical"),
        };
        if !(0.0..=1.0).contains(&t) {
            bail!("--t must lie in [0, 1], got {t}");
        }
        ck.model.render_at(cam, t as f32, &settings)
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_png(&a.out.join("color.png"), &out.color)?;
    write_normal_png(&a.out.join("normal.png"), &facing_normals(&out, cam))?;
    write_depth(&a.out.join("depth.sgsd"), &out.depth)?;
    println!(
        "wrote color.png, normal.png and depth.sgsd to {}",
        a.out.display()
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ck = read_checkpoint::<f32>(&a.ckpt)
        .with_context(|| format!("reading checkpoint {}", a.ckpt.display()))?;
    let data = load(&a.data)?;
    let settings = TrainConfig {
        deterministic: a.deterministic,
        ..TrainConfig::default()
    }
    .render_settings();
    let clean = data
        .root
        .join("clean")
        .is_dir()
        .then(|| data.load_clean())
        .transpose()?;
    let normals = data
        .root
        .join("normals")
        .is_dir()
        .then(|| data.load_normals())
        .transpose()?;
    let report = evaluate_model(
        &ck.model,
        &data,
        &settings,
        clean.as_deref(),
        normals.as_deref(),
    );
    let mut text = format!(
        "checkpoint {} at iteration {}\n",
        a.ckpt.display(),
        ck.iteration
    );
    text += &report.table();
    text += &format!("psnr={:.4}\nssim={:.6}\n", report.psnr, report.ssim);
    print!("{text}");
    if let Some(p) = &a.out {
        fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn bench_mlp(a: &BenchArgs) -> Result<()> {
    if a.batches.contains(&0) {
        bail!("batch sizes must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let net = Network::init(&Network::default_widths(), &mut rng);
    let rows = bench(&net, &a.batches, Duration::from_millis(a.min_ms));
    match &a.out {
        Some(p) => write_bench_csv(&rows, BufWriter::new(fs::File::create(p)?))?,
        None => write_bench_csv(&rows, std::io::stdout().lock())?,
    }
    for &b in &a.batches {
        let rate = |path: &str| {
            rows.iter()
                .find(|r| r.batch == b && r.path == path)
                .map_or(f64::NAN, |r| r.evals_per_sec)
        };
        eprintln!(
            "batch {b}: fused/reference forward {:.2}x, train {:.2}x",
            rate("fused") / rate("reference"),
            rate("fused_train") / rate("reference_train")
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth(&a),
        Command::Init(a) => init(&a),
        Command::Train(a) => train(&a),
        Command::Render(a) => render_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::BenchMlp(a) => bench_mlp(&a),
    }
}
