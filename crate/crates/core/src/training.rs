//! Stage 1 (zone pretraining) and Stage 2 (teacher-protected crosstalk
//! cancellation) training loops, plus a per-scene filter optimiser that
//! bypasses the network and bounds what it can reach.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::{AtfTensor, HrtfConfig};
use crate::dataset::{bright_zone_targets, Dataset};
use crate::error::{BsannError, Result};
use crate::losses::{psz_objective, total_objective, CompactnessConfig, LossWeights, TargetSpec, XtcTargets};
use crate::nn::{
    adam_step, adam_update, backward_batch, forward, forward_batch, save_checkpoint, AdamHyper, AdamState,
    FilterBank, NetworkConfig, NetworkParams, PoseInput,
};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Psz,
    Xtc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub adam: AdamHyper,
    /// Share of scenes held out for early stopping.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    /// Epochs without a validation improvement before stopping.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub teacher_checkpoint: Option<PathBuf>,
    /// Receives the last good parameters if training diverges.
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(default)]
    pub log_path: Option<PathBuf>,
}

fn default_holdout() -> f64 {
    0.1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Psz,
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            weights: LossWeights::default(),
            network: NetworkConfig::default(),
            adam: AdamHyper::default(),
            holdout_fraction: default_holdout(),
            patience: Some(30),
            teacher_checkpoint: None,
            checkpoint_path: None,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(BsannError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(BsannError::Config("learning_rate must be finite and nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(BsannError::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if self.stage == Stage::Xtc && self.teacher_checkpoint.is_none() {
            return Err(BsannError::Config("the xtc stage needs a teacher checkpoint".into()));
        }
        Ok(())
    }
}

/// A scene ready for training: its plant, targets and pose.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingScene {
    pub atf: AtfTensor,
    pub targets: TargetSpec,
    pub pose: PoseInput,
}

/// Attaches bright-zone targets to every dataset sample.
pub fn prepare_scenes(dataset: &Dataset, hrtf: &HrtfConfig) -> Result<Vec<TrainingScene>> {
    par::try_map_indexed(dataset.samples.len(), |i| {
        let s = &dataset.samples[i];
        par::sequential(|| {
            Ok(TrainingScene {
                atf: s.atf.clone(),
                targets: bright_zone_targets(&s.config, &dataset.grid, hrtf, s.mode)?,
                pose: s.pose,
            })
        })
    })
}

/// One epoch's mean losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    /// Mean component losses over the training scenes.
    pub train: BTreeMap<String, f64>,
    /// Mean objective over the held-out scenes.
    pub validation: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation objective.
    pub params: NetworkParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Stage-specific per-scene objective: component values and filter gradient.
trait Objective: Sync {
    fn eval(&self, scene: usize, bank: &FilterBank) -> Result<(BTreeMap<String, f64>, f64, FilterBank)>;
}

struct PszObjective<'a> {
    scenes: &'a [TrainingScene],
    compact: CompactnessConfig,
    weights: LossWeights,
}

impl Objective for PszObjective<'_> {
    fn eval(&self, i: usize, bank: &FilterBank) -> Result<(BTreeMap<String, f64>, f64, FilterBank)> {
        let s = &self.scenes[i];
        let (t, grad) = psz_objective(&s.atf, bank, &s.targets, &self.compact, &self.weights)?;
        let map = BTreeMap::from([
            ("bright".to_string(), t.bright),
            ("dark".to_string(), t.dark),
            ("gain".to_string(), t.gain),
            ("compact".to_string(), t.compact),
            ("total".to_string(), t.total),
        ]);
        Ok((map, t.total, grad))
    }
}

struct XtcObjective<'a> {
    scenes: &'a [TrainingScene],
    teacher_banks: Vec<FilterBank>,
    xtc_targets: Vec<XtcTargets>,
    compact: CompactnessConfig,
    weights: LossWeights,
}

impl Objective for XtcObjective<'_> {
    fn eval(&self, i: usize, bank: &FilterBank) -> Result<(BTreeMap<String, f64>, f64, FilterBank)> {
        let s = &self.scenes[i];
        let (t, grad) = total_objective(
            &s.atf,
            bank,
            &s.targets,
            &self.xtc_targets[i],
            &self.teacher_banks[i],
            &self.compact,
            &self.weights,
        )?;
        let map = BTreeMap::from([
            ("off".to_string(), t.off),
            ("diag".to_string(), t.diag),
            ("reg".to_string(), t.reg),
            ("xtc".to_string(), t.xtc),
            ("bright".to_string(), t.bright),
            ("dark".to_string(), t.dark),
            ("gain".to_string(), t.gain),
            ("compact".to_string(), t.compact),
            ("teach".to_string(), t.teach),
            ("total".to_string(), t.total),
        ]);
        Ok((map, t.total, grad))
    }
}

/// Splits scene indices into (train, holdout). The holdout is a seeded random
/// tenth; with fewer than two scenes everything trains and validates.
pub fn split_holdout(count: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    let held = ((count as f64 * fraction).round() as usize).min(count.saturating_sub(1));
    if held == 0 {
        return (idx.clone(), idx);
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x4f1d_b00c));
    let holdout = idx.split_off(count - held);
    (idx, holdout)
}

fn diverged(epoch: usize, err: BsannError) -> BsannError {
    match err {
        BsannError::NonFiniteLoss(reason) => BsannError::Diverged { epoch, reason },
        other => other,
    }
}

/// Mean objective over `indices` without updating anything.
fn mean_objective(params: &NetworkParams, scenes: &[TrainingScene], indices: &[usize], obj: &dyn Objective) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let poses: Vec<PoseInput> = indices.iter().map(|&i| scenes[i].pose).collect();
    let (banks, _) = forward_batch(params, &poses)?;
    let values = par::try_map_indexed(indices.len(), |j| obj.eval(indices[j], &banks[j]).map(|r| r.1))?;
    Ok(values.iter().sum::<f64>() / indices.len() as f64)
}

fn run(
    mut params: NetworkParams,
    scenes: &[TrainingScene],
    config: &TrainConfig,
    obj: &dyn Objective,
) -> Result<TrainOutcome> {
    if scenes.is_empty() {
        return Err(BsannError::Config("training needs at least one scene".into()));
    }
    let (train_idx, holdout) = split_holdout(scenes.len(), config.holdout_fraction, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(&params);
    let mut history = Vec::with_capacity(config.epochs);
    let mut log = match &config.log_path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let start = Instant::now();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut order = train_idx.clone();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for batch in order.chunks(config.batch_size) {
            let poses: Vec<PoseInput> = batch.iter().map(|&i| scenes[i].pose).collect();
            let (banks, cache) = forward_batch(&params, &poses).map_err(|e| diverged(epoch, e))?;
            let results = par::try_map_indexed(batch.len(), |j| obj.eval(batch[j], &banks[j]))
                .map_err(|e| diverged(epoch, e));
            let results = match results {
                Ok(r) => r,
                Err(e) => {
                    if let Some(path) = &config.checkpoint_path {
                        save_checkpoint(path, &params, serde_json::to_value(config)?)?;
                    }
                    return Err(e);
                }
            };
            let scale = 1.0 / batch.len() as f64;
            let mut grads = Vec::with_capacity(batch.len());
            for (map, _, g) in results {
                for (k, v) in map {
                    *sums.entry(k).or_insert(0.0) += v;
                }
                grads.push(g.scaled(num_complex::Complex64::new(scale, 0.0)));
            }
            let grads = backward_batch(&params, &cache, &grads)?;
            adam_step(&mut params, &grads, &mut state, config.learning_rate, &config.adam);
        }
        let train: BTreeMap<String, f64> = sums.into_iter().map(|(k, v)| (k, v / order.len() as f64)).collect();
        let validation = mean_objective(&params, scenes, &holdout, obj).map_err(|e| diverged(epoch, e))?;
        let record = EpochRecord {
            epoch,
            stage: if train.contains_key("teach") { Stage::Xtc } else { Stage::Psz },
            train,
            validation,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if let Some(w) = log.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
        }
        log::info!("epoch {epoch}: validation {validation:.6}");
        history.push(record);
        if validation < best.0 {
            best = (validation, params.clone(), epoch);
        } else if let Some(p) = config.patience {
            if epoch - best.2 >= p {
                break;
            }
        }
    }
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    // With no improvement ever recorded (e.g. zero epochs) keep the final state.
    let (params, best_epoch) = if best.0.is_finite() { (best.1, best.2) } else { (params, 0) };
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

/// Stage 1: minimises the mean zone loss. Starts from `init` or a fresh
/// network seeded by `config.seed`.
pub fn train_psz(scenes: &[TrainingScene], config: &TrainConfig, init: Option<NetworkParams>) -> Result<TrainOutcome> {
    config.weights.validate()?;
    let first = scenes
        .first()
        .ok_or_else(|| BsannError::Config("training needs at least one scene".into()))?;
    let grid = first.atf.grid;
    let params = match init {
        Some(p) => p,
        None => NetworkParams::init(&config.network, &grid, first.atf.dims.speakers, config.seed)?,
    };
    let obj = PszObjective {
        scenes,
        compact: CompactnessConfig::for_grid(&grid),
        weights: config.weights,
    };
    run(params, scenes, config, &obj)
}

/// Stage 2: starts from the teacher and minimises the compound objective,
/// with diagonal targets captured from the frozen teacher per scene.
pub fn train_xtc(scenes: &[TrainingScene], teacher: &NetworkParams, config: &TrainConfig) -> Result<TrainOutcome> {
    config.weights.validate()?;
    let first = scenes
        .first()
        .ok_or_else(|| BsannError::Config("training needs at least one scene".into()))?;
    let grid = first.atf.grid;
    let poses: Vec<PoseInput> = scenes.iter().map(|s| s.pose).collect();
    let (teacher_banks, _) = forward_batch(teacher, &poses)?;
    let xtc_targets = par::try_map_indexed(scenes.len(), |i| {
        XtcTargets::capture(&scenes[i].atf, &teacher_banks[i], config.weights.epsilon)
    })?;
    let obj = XtcObjective {
        scenes,
        teacher_banks,
        xtc_targets,
        compact: CompactnessConfig::for_grid(&grid),
        weights: config.weights,
    };
    run(teacher.clone(), scenes, config, &obj)
}

/// Settings for [`direct_filter_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adam: AdamHyper,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.02,
            seed: 0,
            adam: AdamHyper::default(),
        }
    }
}

/// Optimises one scene's filter bank directly with Adam on the zone loss.
/// Starts from `init` or small seeded noise; returns the bank and its loss.
pub fn direct_filter_oracle(
    atf: &AtfTensor,
    targets: &TargetSpec,
    weights: &LossWeights,
    cfg: &OracleConfig,
    init: Option<FilterBank>,
) -> Result<(FilterBank, f64)> {
    let grid = atf.grid;
    let compact = CompactnessConfig::for_grid(&grid);
    let mut bank = init.unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut b = FilterBank::zeros(atf.dims.speakers, &grid);
        for v in &mut b.values {
            *v = num_complex::Complex64::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01));
        }
        b.project_real();
        b
    });
    let len = 2 * bank.values.len();
    let (mut m, mut v) = (vec![0.0; len], vec![0.0; len]);
    let mut flat = vec![0.0; len];
    let mut gflat = vec![0.0; len];
    for step in 1..=cfg.steps {
        let (_, mut grad) = psz_objective(atf, &bank, targets, &compact, weights)?;
        grad.project_real();
        for (i, (z, g)) in bank.values.iter().zip(&grad.values).enumerate() {
            flat[2 * i] = z.re;
            flat[2 * i + 1] = z.im;
            gflat[2 * i] = g.re;
            gflat[2 * i + 1] = g.im;
        }
        adam_update(&mut flat, &gflat, &mut m, &mut v, step as u64, cfg.learning_rate, &cfg.adam);
        for (i, z) in bank.values.iter_mut().enumerate() {
            *z = num_complex::Complex64::new(flat[2 * i], flat[2 * i + 1]);
        }
        bank.project_real();
    }
    let (terms, _) = psz_objective(atf, &bank, targets, &compact, weights)?;
    Ok((bank, terms.total))
}

/// Filter banks of a network for a list of poses.
pub fn banks_for(params: &NetworkParams, poses: &[PoseInput]) -> Result<Vec<FilterBank>> {
    poses.iter().map(|p| forward(params, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_split_is_a_seeded_tenth() {
        let (train, hold) = split_holdout(50, 0.1, 3);
        assert_eq!(hold.len(), 5);
        assert_eq!(train.len(), 45);
        let mut all: Vec<usize> = train.iter().chain(&hold).cloned().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_holdout(50, 0.1, 3), (train, hold));
        let (t, h) = split_holdout(1, 0.1, 0);
        assert_eq!((t, h), (vec![0], vec![0]));
    }

    #[test]
    fn xtc_stage_requires_teacher() {
        let cfg = TrainConfig {
            stage: Stage::Xtc,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            teacher_checkpoint: Some("t.ckpt".into()),
            ..cfg
        };
        assert!(cfg.validate().is_ok());
    }
}
