//! Mini-batch training with Adam over curriculum-ordered or shuffled batches.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::curriculum::{
    build_plan, score_samples, CountProxy, CurriculumPlan, DifficultyScore, FileOracle, TeacherError,
};
use crate::dataio::{apply_draw, draw_augmentation, AugmentationConfig, Sample};
use crate::error::{Error, Result};
use crate::groundtruth::{downscale_target, render_density, DensityConfig};
use crate::metrics::{game, mae, GridSetting};
use crate::model::{ModelParams, INIT_STD};
use crate::numerics::{adam_step, AdamConfig, AdamState, Tensor};

/// Pixel-wise squared error summed over pixels and averaged over
/// `n_batch` images, with its gradient `2 (pred - target) / n_batch`.
pub fn loss(pred: &Tensor, target: &Tensor, n_batch: usize) -> Result<(f64, Tensor)> {
    pred.expect_same_shape(target)?;
    if n_batch == 0 {
        return Err(Error::config("loss needs a batch of at least one image"));
    }
    let inv = 1.0 / n_batch as f64;
    let value: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    let grad = pred.zip_map(target, |p, t| 2.0 * (p - t) * inv)?;
    Ok((value * inv, grad))
}

/// Where curriculum scores come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Curriculum {
    /// Batches reshuffled every epoch.
    Off,
    /// Ascending annotated count.
    #[default]
    CountProxy,
    /// Ascending absolute count error of a teacher model.
    Teacher(ModelParams),
    /// Precomputed `sample_id -> score` table.
    Scores(HashMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optional hard cap on optimiser steps across all epochs.
    pub max_steps: Option<usize>,
    /// Evaluate every this many steps (and after the final step); 0 only
    /// evaluates at the end.
    pub eval_every: usize,
    pub seed: u64,
    pub curriculum: Curriculum,
    /// `None` trains on the raw samples.
    pub augmentation: Option<AugmentationConfig>,
    pub density: DensityConfig,
    pub init_std: f64,
    /// Width of the non-overlapping windows whose mean losses must not rise.
    pub loss_window: usize,
    pub grid: GridSetting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 4,
            max_epochs: 100,
            max_steps: None,
            eval_every: 100,
            seed: 0,
            curriculum: Curriculum::CountProxy,
            augmentation: Some(AugmentationConfig::default()),
            density: DensityConfig::default(),
            init_std: INIT_STD,
            loss_window: 200,
            grid: GridSetting::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(Error::config("init std must be finite and non-negative"));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        self.density.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch_id: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    pub mae: f64,
    pub game: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Human-readable warnings, such as a rising smoothed loss.
    pub flagged: Vec<String>,
    pub plan: Option<CurriculumPlan>,
    /// Step after which the returned parameters were taken (0 = initial).
    pub best_step: usize,
    pub best_mae: Option<f64>,
}

impl TrainLog {
    /// `step,epoch,batch_id,loss,lr,wall_ms` rows with a header.
    pub fn render_steps(&self) -> String {
        let mut out = String::from("step,epoch,batch_id,loss,lr,wall_ms\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{},{:?},{:?},{:.3}", s.step, s.epoch, s.batch_id, s.loss, s.lr, s.wall_ms);
        }
        out
    }

    pub fn render_evals(&self) -> String {
        let mut out = String::from("step,epoch,mae,game\n");
        for e in &self.evals {
            let _ = writeln!(out, "{},{},{:?},{:?}", e.step, e.epoch, e.mae, e.game);
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Training targets of one sample: half-resolution maps for the original
/// and the mirrored annotations.
struct Targets {
    plain: Tensor,
    flipped: Option<Tensor>,
}

fn prepare_targets(samples: &[Sample], config: &TrainConfig) -> Result<Vec<Targets>> {
    let need_flip = config.augmentation.is_some_and(|a| a.horizontal_flip_prob > 0.0);
    samples
        .par_iter()
        .map(|s| {
            let plain = downscale_target(&render_density(&s.dots, &config.density)?)?;
            let flipped = if need_flip {
                Some(downscale_target(&render_density(&s.dots.flipped(), &config.density)?)?)
            } else {
                None
            };
            Ok(Targets { plain, flipped })
        })
        .collect()
}

/// Mean absolute count error and mean GAME of `params` on `samples`.
pub fn evaluate_counts(
    params: &ModelParams,
    samples: &[Sample],
    targets: &[Tensor],
    grid: GridSetting,
) -> Result<(f64, f64)> {
    let rows: Vec<(f64, f64, f64)> = samples
        .par_iter()
        .zip(targets)
        .map(|(s, t)| {
            let pred = params.forward(&s.image)?;
            let grid = clamp_grid(grid, t);
            Ok((pred.sum(), t.sum(), game(&pred, t, grid)?))
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<_> = rows.iter().map(|r| (r.0, r.1)).collect();
    let g = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    Ok((mae(&pairs)?, g))
}

fn clamp_grid(grid: GridSetting, map: &Tensor) -> GridSetting {
    let (h, w) = (map.shape()[map.ndim() - 2], map.shape()[map.ndim() - 1]);
    let (r, c) = grid.dims();
    if r <= h && c <= w {
        grid
    } else {
        GridSetting::Explicit { rows: r.min(h), cols: c.min(w) }
    }
}

fn scores_for(config: &TrainConfig, samples: &[Sample]) -> Result<Option<Vec<DifficultyScore>>> {
    Ok(Some(match &config.curriculum {
        Curriculum::Off => return Ok(None),
        Curriculum::CountProxy => score_samples(&CountProxy, samples)?,
        Curriculum::Teacher(t) => score_samples(&TeacherError { teacher: t.clone() }, samples)?,
        Curriculum::Scores(table) => score_samples(&FileOracle::from_scores(table.clone()), samples)?,
    }))
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17)
}

/// Trains from a fresh initialisation (seeded by `config.seed`).
pub fn train(
    samples: &[Sample],
    config: &TrainConfig,
    validation: Option<&[Sample]>,
) -> Result<(ModelParams, TrainLog)> {
    let init = ModelParams::init(crate::model::ArchitectureManifest::lcdnet(), config.seed, config.init_std);
    train_from(init, samples, config, validation)
}

/// Trains starting from `params`. Returns the parameters with the best
/// evaluation MAE (on `validation`, or on the training samples when absent).
pub fn train_from(
    mut params: ModelParams,
    samples: &[Sample],
    config: &TrainConfig,
    validation: Option<&[Sample]>,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut log = TrainLog::default();
    if config.max_epochs == 0 || config.max_steps == Some(0) {
        return Ok((params, log));
    }

    let uniform = samples.iter().all(|s| s.image.shape() == samples[0].image.shape());
    let batch_size = if uniform { config.batch_size } else { 1 };
    if !uniform && config.batch_size > 1 {
        log::warn!("images differ in size; training with batch size 1");
        log.flagged.push("mixed image sizes: batch size forced to 1".into());
    }

    let targets = prepare_targets(samples, config)?;
    let eval_set = validation.unwrap_or(samples);
    let eval_targets: Vec<Tensor> = if validation.is_some() {
        eval_set
            .par_iter()
            .map(|s| downscale_target(&render_density(&s.dots, &config.density)?))
            .collect::<Result<_>>()?
    } else {
        targets.iter().map(|t| t.plain.clone()).collect()
    };

    let index: HashMap<&str, usize> = samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let plan = match scores_for(config, samples)? {
        Some(scores) => Some(build_plan(&scores, batch_size, config.seed)?),
        None => None,
    };
    let plan_batches: Option<Vec<Vec<usize>>> =
        plan.as_ref().map(|p| p.batches.iter().map(|b| b.iter().map(|id| index[id.as_str()]).collect()).collect());
    log.plan = plan;

    let mut adam = AdamState::new(&params, AdamConfig { lr: config.lr, ..AdamConfig::default() });
    let mut best = params.clone();
    let (mut best_mae, _) = evaluate_counts(&params, eval_set, &eval_targets, config.grid)?;
    log.best_mae = Some(best_mae);
    let start = Instant::now();
    let mut step = 0usize;

    'epochs: for epoch in 0..config.max_epochs {
        let batches = match &plan_batches {
            Some(b) => b.clone(),
            None => {
                let mut order: Vec<usize> = (0..samples.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, 0)));
                order.chunks(batch_size).map(<[usize]>::to_vec).collect()
            }
        };
        for (batch_id, batch) in batches.iter().enumerate() {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let n = batch.len();
            let results: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let (image, target) = match &config.augmentation {
                        Some(aug) => {
                            let draw = draw_augmentation(aug, mix(0, epoch as u64, i as u64));
                            let (img, _) = apply_draw(&s.image, &s.dots, draw)?;
                            let t = if draw.flip {
                                targets[i].flipped.as_ref().expect("prepared")
                            } else {
                                &targets[i].plain
                            };
                            (std::borrow::Cow::Owned(img), t)
                        }
                        None => (std::borrow::Cow::Borrowed(&s.image), &targets[i].plain),
                    };
                    let (pred, cache) = params.forward_with_cache(&image)?;
                    let (l, g) = loss(&pred, target, n)?;
                    Ok((l, params.backward(&cache, &g)?))
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::Training(msg) => {
                        log::error!("step {step}: {msg}");
                        Error::NonFiniteLoss { step, batch_ids: batch.iter().map(|&i| samples[i].id.clone()).collect() }
                    }
                    other => other,
                })?;

            let mut total = 0.0;
            let mut grads: Option<ModelParams> = None;
            for (l, g) in results {
                total += l;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.accumulate(&g)?,
                }
            }
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    batch_ids: batch.iter().map(|&i| samples[i].id.clone()).collect(),
                });
            }
            adam_step(&mut params, grads.as_ref().expect("non-empty batch"), &mut adam)?;
            step += 1;
            log.steps.push(StepRecord {
                step,
                epoch,
                batch_id,
                loss: total,
                lr: config.lr,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });

            let last =
                config.max_steps == Some(step) || (epoch + 1 == config.max_epochs && batch_id + 1 == batches.len());
            if last || (config.eval_every > 0 && step.is_multiple_of(config.eval_every)) {
                let (m, g) = evaluate_counts(&params, eval_set, &eval_targets, config.grid)?;
                log::info!("step {step} epoch {epoch}: loss {total:.6} eval MAE {m:.4} GAME {g:.4}");
                log.evals.push(EvalRecord { step, epoch, mae: m, game: g });
                if m < best_mae {
                    best_mae = m;
                    best = params.clone();
                    log.best_step = step;
                    log.best_mae = Some(m);
                }
            }
        }
    }
    flag_rising_loss(&mut log, config.loss_window);
    Ok((best, log))
}

fn flag_rising_loss(log: &mut TrainLog, window: usize) {
    if window == 0 {
        return;
    }
    let means: Vec<f64> =
        log.steps.chunks_exact(window).map(|c| c.iter().map(|s| s.loss).sum::<f64>() / window as f64).collect();
    for (i, pair) in means.windows(2).enumerate() {
        if pair[1] > pair[0] {
            log.flagged.push(format!(
                "mean loss rose from {:.6} (steps {}-{}) to {:.6} (steps {}-{})",
                pair[0],
                i * window + 1,
                (i + 1) * window,
                pair[1],
                (i + 1) * window + 1,
                (i + 2) * window
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::SynthSpec;
    use crate::numerics::relative_error;

    #[test]
    fn loss_identity_and_offset() {
        let t = Tensor::from_fn(vec![1, 1, 3, 5], |i| i as f64 * 0.1).unwrap();
        let (l, g) = loss(&t, &t, 1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let shifted = t.map(|v| v + 0.5);
        let (l, _) = loss(&shifted, &t, 1).unwrap();
        assert!((l - 0.25 * 15.0).abs() < 1e-12);
        assert!(loss(&t, &Tensor::zeros(vec![1, 1, 3, 4]).unwrap(), 1).is_err());
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let p = Tensor::from_fn(vec![2, 1, 2, 3], |i| (i as f64 * 0.7).sin()).unwrap();
        let t = Tensor::from_fn(vec![2, 1, 2, 3], |i| (i as f64 * 0.3).cos()).unwrap();
        let (_, g) = loss(&p, &t, 2).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.clone();
            up.data_mut()[i] += h;
            let mut dn = p.clone();
            dn.data_mut()[i] -= h;
            let fd = (loss(&up, &t, 2).unwrap().0 - loss(&dn, &t, 2).unwrap().0) / (2.0 * h);
            assert!(relative_error(g.data()[i], fd, 1e-12) < 1e-8);
        }
    }

    fn tiny_set(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                SynthSpec { width: 16, height: 16, n_objects: 1 + i, seed: i as u64, ..SynthSpec::default() }
                    .sample(format!("s{i}"))
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_init() {
        let data = tiny_set(2);
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let (p, log) = train(&data, &cfg, None).unwrap();
        assert_eq!(p, crate::model::init_params(cfg.seed));
        assert!(log.steps.is_empty() && log.evals.is_empty());
    }

    #[test]
    fn step_count_and_curriculum_order() {
        let data = tiny_set(5);
        let cfg = TrainConfig { max_epochs: 3, batch_size: 2, eval_every: 0, ..TrainConfig::default() };
        let (_, log) = train(&data, &cfg, None).unwrap();
        assert_eq!(log.steps.len(), 9);
        let plan = log.plan.unwrap();
        assert_eq!(plan.batches[0], vec!["s0", "s1"]);
        assert_eq!(log.evals.len(), 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let data = tiny_set(3);
        let cfg = TrainConfig { max_epochs: 2, batch_size: 2, curriculum: Curriculum::Off, ..TrainConfig::default() };
        let (a, la) = train(&data, &cfg, None).unwrap();
        let (b, lb) = train(&data, &cfg, None).unwrap();
        assert_eq!(a, b);
        let la: Vec<_> = la.steps.iter().map(|s| s.loss).collect();
        let lb: Vec<_> = lb.steps.iter().map(|s| s.loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn rising_loss_is_flagged() {
        let mut log = TrainLog::default();
        for (i, l) in [1.0, 1.0, 0.5, 0.5, 2.0, 2.0].iter().enumerate() {
            log.steps.push(StepRecord { step: i + 1, epoch: 0, batch_id: 0, loss: *l, lr: 1e-4, wall_ms: 0.0 });
        }
        flag_rising_loss(&mut log, 2);
        assert_eq!(log.flagged.len(), 1);
    }
}
