use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{anyhow, Context};
use bsann_core::acoustic::HrtfConfig;
use bsann_core::dataset::{
    default_scene, ear_reference_atf, generate_dataset_with_progress, read_dataset, write_dataset, AtfMode,
    SceneConfig, SceneRanges,
};
use bsann_core::eval::{evaluate, export_curves, impulse_response, sidecar_path, MetricConfig};
use bsann_core::nn::{forward, load_checkpoint, save_checkpoint, PoseInput, NUM_PROGRAMS};
use bsann_core::spectral::FrequencyGrid;
use bsann_core::training::{prepare_scenes, train_psz, train_xtc, Stage, TrainConfig};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const CONFIG_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "bsann", version, about = "Neural personal-sound-zone and crosstalk filter design")]
struct Cli {
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true, env = "BSANN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of randomised scenes.
    GenDataset {
        /// Run configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long)]
        count: usize,
        /// Transfer-function model.
        #[arg(long, value_enum, default_value = "physically-informed")]
        mode: ModeArg,
        /// Base seed; scene i derives its own seed from it.
        #[arg(long, default_value_t = bsann_core::dataset::DEFAULT_SEED)]
        seed: u64,
    },
    /// Train stage 1 (psz) or stage 2 (xtc, needs a teacher).
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Dataset written by gen-dataset.
        #[arg(long)]
        dataset: PathBuf,
        /// Output checkpoint; the log goes to <out>.log.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Stage-1 checkpoint to start from and anchor to (xtc only).
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Run configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one scene at the ear reference points.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Scene configuration (JSON).
        #[arg(long, conflicts_with = "default_scene", required_unless_present = "default_scene")]
        scene: Option<PathBuf>,
        /// Evaluate on the built-in two-listener scene.
        #[arg(long)]
        default_scene: bool,
        /// Output directory for metrics.csv and its summary.
        #[arg(long)]
        out: PathBuf,
        /// Plant model used for evaluation.
        #[arg(long, value_enum, default_value = "physically-informed")]
        mode: ModeArg,
        /// Run configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the filter impulse responses for one pose as a WAV file.
    ExportFilters {
        #[arg(long)]
        ckpt: PathBuf,
        /// Listener head positions "x1,y1,x2,y2" in metres, relative to the array centre.
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        pose: PoseInput,
        /// Output WAV; metadata is written next to it with a .json extension.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PointSource,
    PhysicallyInformed,
}

impl From<ModeArg> for AtfMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PointSource => AtfMode::PointSource,
            ModeArg::PhysicallyInformed => AtfMode::PhysicallyInformed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Psz,
    Xtc,
}

fn parse_pose(s: &str) -> Result<PoseInput, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != 4 || v.iter().any(|x| !x.is_finite()) {
        return Err(format!("expected four finite numbers x1,y1,x2,y2, got {s:?}"));
    }
    Ok(PoseInput {
        listener1_xy_m: [v[0], v[1]],
        listener2_xy_m: [v[2], v[3]],
    })
}

/// Every tunable setting of a run. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    version: u32,
    #[serde(default)]
    grid: FrequencyGrid,
    #[serde(default)]
    hrtf: HrtfConfig,
    #[serde(default)]
    ranges: SceneRanges,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    metrics: MetricConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            grid: FrequencyGrid::default(),
            hrtf: HrtfConfig::default(),
            ranges: SceneRanges::default(),
            train: TrainConfig::default(),
            metrics: MetricConfig::default(),
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<bsann_core::BsannError> for Failure {
    fn from(e: bsann_core::BsannError) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    require_file(path, "config")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
    if cfg.version != CONFIG_VERSION {
        return Err(usage(format!(
            "config version {} is not supported (expected {CONFIG_VERSION})",
            cfg.version
        )));
    }
    cfg.grid.validate().map_err(|e| usage(e.to_string()))?;
    cfg.ranges.validate().map_err(|e| usage(e.to_string()))?;
    cfg.train.weights.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    tool_version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    options: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

fn write_manifest(
    path: &Path,
    command: &'static str,
    config: &RunConfig,
    options: serde_json::Value,
    inputs: &[&Path],
    outputs: &[&Path],
) -> anyhow::Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    let manifest = Manifest {
        tool: "bsann",
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        options,
        inputs: hashes,
        outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen_dataset(config: Option<PathBuf>, out: PathBuf, count: usize, mode: ModeArg, seed: u64) -> CmdResult {
    let cfg = load_config(config.as_deref())?;
    let mode = AtfMode::from(mode);
    write_manifest(
        &with_suffix(&out, ".manifest.json"),
        "gen-dataset",
        &cfg,
        serde_json::json!({ "count": count, "mode": mode, "seed": seed }),
        &config.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
        &[&out],
    )?;
    let done = AtomicUsize::new(0);
    let dataset = generate_dataset_with_progress(count, seed, &cfg.ranges, &cfg.grid, &cfg.hrtf, mode, |i| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!("scene {k}/{count} (index {i})");
    })?;
    write_dataset(&out, &dataset)?;
    println!("wrote {} scenes to {} (sha256 {})", count, out.display(), sha256_file(&out)?);
    Ok(())
}

/// The training settings that define the result; output paths excluded so
/// identical runs into different directories produce identical checkpoints.
fn portable(train: &TrainConfig) -> TrainConfig {
    TrainConfig {
        teacher_checkpoint: None,
        checkpoint_path: None,
        log_path: None,
        ..train.clone()
    }
}

fn train(stage: StageArg, dataset: PathBuf, out: PathBuf, teacher: Option<PathBuf>, config: Option<PathBuf>) -> CmdResult {
    let mut cfg = load_config(config.as_deref())?;
    cfg.train.stage = match stage {
        StageArg::Psz => Stage::Psz,
        StageArg::Xtc => Stage::Xtc,
    };
    if cfg.train.stage == Stage::Xtc && teacher.is_none() {
        return Err(usage("the xtc stage needs --teacher"));
    }
    require_file(&dataset, "dataset")?;
    if let Some(t) = &teacher {
        require_file(t, "teacher checkpoint")?;
    }
    let log_path = with_suffix(&out, ".log.jsonl");
    cfg.train.teacher_checkpoint = teacher.clone();
    cfg.train.checkpoint_path = Some(out.clone());
    cfg.train.log_path = Some(log_path.clone());
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;

    let mut inputs: Vec<&Path> = vec![&dataset];
    inputs.extend(teacher.as_deref());
    inputs.extend(config.as_deref());
    write_manifest(
        &with_suffix(&out, ".manifest.json"),
        "train",
        &cfg,
        serde_json::json!({ "stage": cfg.train.stage }),
        &inputs,
        &[&out, &log_path],
    )?;

    let data = read_dataset(&dataset)?;
    if data.samples.is_empty() {
        return Err(usage(format!("dataset {} has no scenes", dataset.display())));
    }
    let scenes = prepare_scenes(&data, &cfg.hrtf)?;
    let outcome = match cfg.train.stage {
        Stage::Psz => train_psz(&scenes, &cfg.train, None)?,
        Stage::Xtc => {
            let (teacher_params, _) = load_checkpoint(teacher.as_ref().expect("checked above"))?;
            if teacher_params.grid != data.grid || teacher_params.speakers != scenes[0].atf.dims.speakers {
                return Err(usage("teacher checkpoint does not match the dataset's grid or driver count"));
            }
            train_xtc(&scenes, &teacher_params, &cfg.train)?
        }
    };
    save_checkpoint(&out, &outcome.params, serde_json::to_value(portable(&cfg.train)).map_err(anyhow::Error::from)?)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} epochs (best {}), final validation {:.6e}",
            outcome.history.len(),
            outcome.best_epoch,
            last.validation
        );
    }
    println!("wrote {} (sha256 {})", out.display(), sha256_file(&out)?);
    Ok(())
}

fn eval(
    ckpt: PathBuf,
    scene: Option<PathBuf>,
    out: PathBuf,
    mode: ModeArg,
    config: Option<PathBuf>,
) -> CmdResult {
    let cfg = load_config(config.as_deref())?;
    require_file(&ckpt, "checkpoint")?;
    let scene_cfg: SceneConfig = match &scene {
        Some(path) => {
            require_file(path, "scene")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid scene {}: {e}", path.display())))?
        }
        None => default_scene(),
    };
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let csv = out.join("metrics.csv");
    let mut inputs: Vec<&Path> = vec![&ckpt];
    inputs.extend(scene.as_deref());
    inputs.extend(config.as_deref());
    write_manifest(
        &out.join("manifest.json"),
        "eval",
        &cfg,
        serde_json::json!({ "mode": AtfMode::from(mode), "default_scene": scene.is_none() }),
        &inputs,
        &[&csv, &sidecar_path(&csv)],
    )?;

    let (params, _) = load_checkpoint(&ckpt)?;
    if params.speakers != scene_cfg.drivers.len() {
        return Err(usage(format!(
            "checkpoint drives {} loudspeakers, scene has {}",
            params.speakers,
            scene_cfg.drivers.len()
        )));
    }
    let atf = ear_reference_atf(&scene_cfg, &params.grid, &cfg.hrtf, mode.into())?;
    let bank = forward(&params, &scene_cfg.pose())?;
    let curves = evaluate(&atf, &bank, &cfg.metrics)?;
    export_curves(&curves, &csv)?;
    let m = curves.means()?;
    println!(
        "IZI {:.2}/{:.2} dB  IPI {:.2}/{:.2} dB  XTC {:.2}/{:.2} dB",
        m.izi1_db, m.izi2_db, m.ipi1_db, m.ipi2_db, m.xtc1_db, m.xtc2_db
    );
    println!("wrote {}", csv.display());
    Ok(())
}

#[derive(Serialize)]
struct FilterMetadata {
    pose: PoseInput,
    grid: FrequencyGrid,
    taps: usize,
    /// `channels[c] = (loudspeaker, program)`.
    channels: Vec<(usize, usize)>,
}

fn export_filters(ckpt: PathBuf, pose: PoseInput, out: PathBuf) -> CmdResult {
    require_file(&ckpt, "checkpoint")?;
    let (params, _) = load_checkpoint(&ckpt)?;
    let bank = forward(&params, &pose)?;
    let taps = params.grid.fft_size;
    let mut channels = Vec::new();
    let mut irs = Vec::new();
    for l in 0..bank.speakers {
        for p in 0..NUM_PROGRAMS {
            channels.push((l, p));
            irs.push(impulse_response(&bank, l, p));
        }
    }
    let count = u16::try_from(channels.len()).map_err(|_| anyhow!("too many channels for WAV"))?;
    let spec = hound::WavSpec {
        channels: count,
        sample_rate: params.grid.sample_rate_hz.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&out, spec).with_context(|| format!("creating {}", out.display()))?;
    for t in 0..taps {
        for ir in &irs {
            w.write_sample(ir[t] as f32).map_err(anyhow::Error::from)?;
        }
    }
    w.finalize().map_err(anyhow::Error::from)?;
    let meta = FilterMetadata {
        pose,
        grid: params.grid,
        taps,
        channels,
    };
    let meta_path = out.with_extension("json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).map_err(anyhow::Error::from)?)
        .with_context(|| format!("writing {}", meta_path.display()))?;
    println!("wrote {} ({} channels, {taps} taps)", out.display(), count);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        bsann_core::par::init_threads(n);
    }
    let result = match cli.command {
        Command::GenDataset {
            config,
            out,
            count,
            mode,
            seed,
        } => gen_dataset(config, out, count, mode, seed),
        Command::Train {
            stage,
            dataset,
            out,
            teacher,
            config,
        } => train(stage, dataset, out, teacher, config),
        Command::Eval {
            ckpt,
            scene,
            default_scene: _,
            out,
            mode,
            config,
        } => eval(ckpt, scene, out, mode, config),
        Command::ExportFilters { ckpt, pose, out } => export_filters(ckpt, pose, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
