//! Losses, optimizer, augmentation, the training loop and gradient checks.

pub mod augment;
pub mod gradcheck;
pub mod loss;
pub mod optim;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, AugmentConfig, Transform};
pub use gradcheck::{check_parameters, gradcheck, gradcheck_all, GradcheckReport, ParamCheck};
pub use loss::{dice, softmax, softmax_ce, total_loss, LossWeights, DICE_EPSILON};
pub use optim::{adam_step, poly_lr, AdamConfig, OptimizerState};

use crate::autodiff::Tape;
use crate::checkpoint::Checkpoint;
use crate::data::SegmentationSample;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::network::{parse_bool, parse_num, Model};
use crate::tensor::{LabelMap, RealTensor4};

pub const LOG_FILE: &str = "train.log";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub poly_power: f64,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Number of best-validation checkpoints retained.
    pub keep_top: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            epochs: 200,
            batch_size: 8,
            poly_power: 0.9,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            keep_top: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            bad.push(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.poly_power > 0.0) {
            bad.push(format!("poly_power {} must be positive", self.poly_power));
        }
        if self.epochs == 0 {
            bad.push("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be at least 1".into());
        }
        for (name, p) in [("hflip", self.augment.hflip), ("vflip", self.augment.vflip), ("rot90", self.augment.rot90)] {
            if !(0.0..=1.0).contains(&p) {
                bad.push(format!("{name} probability {p} must lie in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            bad.push("adam betas must lie in [0, 1)".into());
        }
        if self.adam.weight_decay < 0.0 {
            bad.push("weight_decay must be non-negative".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr0" | "lr" => self.lr0 = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "poly_power" => self.poly_power = parse_num(key, value)?,
            "beta1" => self.adam.beta1 = parse_num(key, value)?,
            "beta2" => self.adam.beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam.eps = parse_num(key, value)?,
            "weight_decay" => self.adam.weight_decay = parse_num(key, value)?,
            "dice_epsilon" => self.loss.dice_epsilon = parse_num(key, value)?,
            "w_ce" => self.loss.ce = parse_num(key, value)?,
            "w_dice" => self.loss.dice = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "hflip" => self.augment.hflip = parse_num(key, value)?,
            "vflip" => self.augment.vflip = parse_num(key, value)?,
            "rot90" => self.augment.rot90 = parse_num(key, value)?,
            "max_angle" => {
                self.augment.max_angle = if value == "none" { None } else { Some(parse_num(key, value)?) }
            }
            "augment" => {
                if !parse_bool(key, value)? {
                    self.augment = AugmentConfig::none();
                }
            }
            "keep_top" => self.keep_top = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown train key {other:?}"))),
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dsc: f64,
    pub val_iou: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.lr, self.train_loss, self.val_dsc, self.val_iou
        )
    }
}

/// A retained checkpoint, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranked {
    pub epoch: usize,
    pub val_iou: f64,
    pub path: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best: Vec<Ranked>,
    pub optimizer: OptimizerState,
    pub iterations: usize,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for l in &self.log {
            let _ = writeln!(s, "{}", l.line());
        }
        s
    }
}

pub fn best_path(dir: &Path, rank: usize) -> PathBuf {
    dir.join(format!("best_{rank}.sfun"))
}

/// Insert the current model into the ranking, shifting lower-ranked files
/// down on disk and dropping anything beyond `keep`.
fn retain_best(
    best: &mut Vec<Ranked>,
    keep: usize,
    epoch: usize,
    iou: f64,
    model: &Model,
    state: &OptimizerState,
    out: Option<&Path>,
) -> Result<()> {
    let rank = best.iter().position(|r| iou > r.val_iou).unwrap_or(best.len());
    if rank >= keep {
        return Ok(());
    }
    best.insert(
        rank,
        Ranked {
            epoch,
            val_iou: iou,
            path: None,
        },
    );
    best.truncate(keep);
    if let Some(dir) = out {
        for j in (rank + 1..best.len()).rev() {
            let (from, to) = (best_path(dir, j), best_path(dir, j + 1));
            fs::rename(&from, &to).map_err(|e| Error::io(&from, e))?;
            best[j].path = Some(to);
        }
        let path = best_path(dir, rank + 1);
        let mut ckpt = Checkpoint::from_model(model);
        ckpt.optimizer = Some(state.to_table(&model.registry));
        ckpt.write(&path)?;
        best[rank].path = Some(path);
    }
    Ok(())
}

fn batch(samples: &[&SegmentationSample]) -> Result<(RealTensor4, LabelMap)> {
    let images: Vec<RealTensor4> = samples.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<LabelMap> = samples.iter().map(|s| s.label.clone()).collect();
    Ok((RealTensor4::stack(&images)?, LabelMap::stack(&labels)?))
}

/// Train `model` in place. Each epoch shuffles, augments and steps through
/// `train` in minibatches with a per-iteration poly learning rate, then
/// scores `val`. With `out` set, `train.log` and the top checkpoints
/// `best_{1..}.sfun` are written there. `on_epoch` sees each log line.
pub fn train_loop(
    model: &mut Model,
    train: &[&SegmentationSample],
    val: &[&SegmentationSample],
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let max_iter = cfg.epochs * per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new(&model.registry);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut log_text = String::new();
    let mut best = Vec::new();
    let mut iter = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let epoch_lr = poly_lr(iter, max_iter, cfg.lr0, cfg.poly_power)?;
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = poly_lr(iter, max_iter, cfg.lr0, cfg.poly_power)?;
            let augmented: Vec<SegmentationSample> =
                chunk.iter().map(|&i| augment(train[i], &cfg.augment, &mut rng)).collect();
            let refs: Vec<&SegmentationSample> = augmented.iter().collect();
            let (images, labels) = batch(&refs)?;
            let mut tape = Tape::new();
            let x = tape.constant(images);
            let logits = model.forward(&mut tape, &x)?;
            let loss = total_loss(&mut tape, &logits, &labels, &cfg.loss)?;
            let value = loss.value().item()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {value} at epoch {epoch}, iteration {}",
                    iter + 1
                )));
            }
            loss_sum += value * chunk.len() as f64;
            model.registry.zero_grad();
            tape.backward(&loss, &mut model.registry)?;
            drop(tape);
            adam_step(&mut model.registry, &mut state, &cfg.adam, lr)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, iteration {}: {e}", iter + 1)))?;
            model.round_to_precision();
            iter += 1;
        }
        model.registry.zero_grad();
        let report = evaluate(model, val)?;
        let entry = EpochLog {
            epoch,
            lr: epoch_lr,
            train_loss: loss_sum / train.len() as f64,
            val_dsc: report.mean_dsc,
            val_iou: report.mean_iou,
        };
        on_epoch(&entry);
        let _ = writeln!(log_text, "{}", entry.line());
        if let Some(dir) = out {
            let p = dir.join(LOG_FILE);
            fs::write(&p, &log_text).map_err(|e| Error::io(&p, e))?;
        }
        retain_best(&mut best, cfg.keep_top, epoch, entry.val_iou, model, &state, out)?;
        log.push(entry);
    }
    Ok(TrainOutcome {
        log,
        best,
        optimizer: state,
        iterations: iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_keys_and_validation() {
        let mut c = TrainConfig::default();
        c.set("lr0", "0.001").unwrap();
        c.set("augment", "false").unwrap();
        assert_eq!(c.lr0, 1e-3);
        assert_eq!(c.augment, AugmentConfig::none());
        assert!(c.set("momentum", "0.9").is_err());
        c.lr0 = 0.0;
        c.augment.hflip = 1.5;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("lr0") && msg.contains("hflip"));
    }

    #[test]
    fn ranking_keeps_best_three() {
        let model = Model::build(&crate::network::ModelConfig::toy(2)).unwrap();
        let state = OptimizerState::new(&model.registry);
        let mut best = Vec::new();
        for (epoch, iou) in [(1, 0.2), (2, 0.5), (3, 0.1), (4, 0.5), (5, 0.3)] {
            retain_best(&mut best, 3, epoch, iou, &model, &state, None).unwrap();
        }
        let epochs: Vec<usize> = best.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![2, 4, 5]);
    }
}
