use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::optim::Adadelta;
use super::schedule::Schedule;
use crate::data::{augment, sample_seed, AugmentConfig, Dataset, GrayImage};
use crate::error::{Error, Result};
use crate::model::{Cstr, LossKind, ModelConfig};
use crate::params::ParameterStore;
use crate::tensor::Tensor;
use crate::text::{ctc::min_frames, metrics, Metrics};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "step,lr_scale,train_loss,eval_word_acc,eval_edit_dist,wall_seconds";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

const SAMPLER_STREAM: u64 = 11;
const AUGMENT_STREAM: u64 = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    /// `schedule.total` is the number of optimizer steps.
    pub schedule: Schedule,
    pub smoothing: f64,
    pub seed: u64,
    /// On-the-fly augmentation of training images; `None` trains on clean images.
    pub augment: Option<AugmentConfig>,
    pub eval_every: u64,
    /// Extra checkpoint interval (0: milestones and the end only).
    pub checkpoint_every: u64,
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    /// Stop at the first evaluation reaching this word accuracy.
    pub target_accuracy: Option<f64>,
}

impl TrainConfig {
    /// Toy CE + SPPN run with the given step budget.
    pub fn toy(steps: u64) -> Self {
        TrainConfig {
            model: ModelConfig::toy(),
            batch_size: 32,
            schedule: Schedule::scaled(steps),
            smoothing: 0.1,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            eval_every: 100,
            checkpoint_every: 0,
            rho: 0.95,
            eps: 1e-6,
            lr: 1.0,
            target_accuracy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing {} outside [0, 1]", self.smoothing)));
        }
        if !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 || self.lr <= 0.0 {
            return Err(Error::Config("need 0 ≤ rho < 1, eps > 0, lr > 0".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Per-run controls that are not part of the configuration fingerprint.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub resume: Option<PathBuf>,
    /// Stop (and checkpoint) after this step even if the schedule continues.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub step: u64,
    pub last_eval: Option<Metrics>,
    pub reached_target: bool,
    pub wall_seconds: f64,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lr_scale: f64,
    pub train_loss: f64,
    pub eval_word_acc: f64,
    pub eval_edit_dist: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.3}",
            self.step, self.lr_scale, self.train_loss, self.eval_word_acc, self.eval_edit_dist, self.wall_seconds
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Dataset(format!("malformed metrics row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(MetricsRow {
            step: f[0].parse().map_err(|_| bad())?,
            lr_scale: num(f[1])?,
            train_loss: num(f[2])?,
            eval_word_acc: num(f[3])?,
            eval_edit_dist: num(f[4])?,
            wall_seconds: num(f[5])?,
        })
    }
}

/// Reads `metrics.csv` rows (header skipped).
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().skip(1).filter(|l| !l.is_empty()).map(MetricsRow::parse).collect()
}

/// Dataset indices of every sample in the batch that completes `step`.
/// Each epoch visits samples in a permutation seeded by `(seed, epoch)`.
pub struct Sampler {
    seed: u64,
    len: usize,
    batch: usize,
    epoch: Option<(u64, Vec<usize>)>,
}

impl Sampler {
    pub fn new(seed: u64, len: usize, batch: usize) -> Self {
        Sampler {
            seed,
            len,
            batch,
            epoch: None,
        }
    }

    pub fn batch(&mut self, step: u64) -> Vec<usize> {
        let start = (step - 1) * self.batch as u64;
        (0..self.batch as u64)
            .map(|j| {
                let pos = start + j;
                let epoch = pos / self.len as u64;
                if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..self.len).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(self.seed, SAMPLER_STREAM, epoch));
                    perm.shuffle(&mut rng);
                    self.epoch = Some((epoch, perm));
                }
                self.epoch.as_ref().expect("set above").1[(pos % self.len as u64) as usize]
            })
            .collect()
    }
}

/// Eval-mode predictions over a whole dataset, in batches.
pub fn predict_dataset(model: &Cstr, store: &ParameterStore<f32>, data: &Dataset, batch: usize) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(batch.max(1)) {
        let end = (start + batch).min(data.len());
        let imgs: Vec<&GrayImage> = (start..end).map(|i| data.image(i)).collect();
        out.extend(model.predict(store, &data.batch::<f32>(&imgs)?)?);
    }
    Ok(out)
}

pub fn evaluate(model: &Cstr, store: &ParameterStore<f32>, data: &Dataset, batch: usize) -> Result<Metrics> {
    let preds = predict_dataset(model, store, data, batch)?;
    Ok(metrics(&preds, data.labels()))
}

/// Rejects labels the model cannot represent.
pub fn check_labels(model: &Cstr, labels: &[String]) -> Result<()> {
    let positions = model.positions();
    for w in labels {
        let encoded = model.alphabet().encode(w)?;
        let needed = match model.config().loss {
            LossKind::Ce => encoded.len(),
            LossKind::Ctc => min_frames(&encoded),
        };
        if encoded.is_empty() || needed > positions {
            return Err(Error::Dataset(format!(
                "label {w:?} needs {needed} output positions, model has {positions}"
            )));
        }
    }
    Ok(())
}

pub struct Trainer {
    config: TrainConfig,
    config_text: String,
    model: Cstr,
}

impl Trainer {
    /// `config_text` is stored in checkpoints and must match on resume.
    pub fn new(config: TrainConfig, config_text: String) -> Result<Self> {
        config.validate()?;
        let model = Cstr::new(config.model)?;
        Ok(Trainer {
            config,
            config_text,
            model,
        })
    }

    pub fn model(&self) -> &Cstr {
        &self.model
    }

    pub fn initial_params(&self) -> Result<ParameterStore<f32>> {
        self.model.init_params(self.config.seed)
    }

    fn optimizer(&self, store: &ParameterStore<f32>) -> Result<Adadelta<f32>> {
        let mut opt = Adadelta::new(self.config.rho, self.config.eps, self.config.lr);
        opt.init(store)?;
        Ok(opt)
    }

    fn train_batch(&self, data: &Dataset, indices: &[usize], step: u64) -> Result<Tensor<f32>> {
        let imgs: Vec<GrayImage> = indices
            .iter()
            .enumerate()
            .map(|(j, &i)| match &self.config.augment {
                Some(cfg) => {
                    let pos = (step - 1) * self.config.batch_size as u64 + j as u64;
                    augment(data.image(i), cfg, sample_seed(self.config.seed, AUGMENT_STREAM, pos))
                }
                None => data.image(i).clone(),
            })
            .collect();
        data.batch(&imgs.iter().collect::<Vec<_>>())
    }

    /// Trains (or resumes) and writes `latest.ckpt`, milestone checkpoints and
    /// `metrics.csv` into `out_dir`.
    pub fn run(&self, train: &Dataset, eval: Option<&Dataset>, out_dir: &Path, opts: &RunOptions) -> Result<TrainOutcome> {
        let cfg = &self.config;
        if train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        check_labels(&self.model, train.labels())?;
        if let Some(e) = eval {
            check_labels(&self.model, e.labels())?;
        }
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let clock = Instant::now();

        let mut store = self.initial_params()?;
        let mut opt = self.optimizer(&store)?;
        let (mut step, mut window) = (0u64, (0.0f64, 0u64));
        if let Some(path) = &opts.resume {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config != self.config_text {
                return Err(Error::Checkpoint(format!(
                    "{} was written by a different configuration",
                    path.display()
                )));
            }
            ckpt.restore(&mut store, &mut opt)?;
            step = ckpt.step;
            if let Some(w) = ckpt.trainer_record("loss_window") {
                window = (f64::from(w.data()[0]), w.data()[1] as u64);
            }
        }
        let metrics_path = out_dir.join(METRICS_FILE);
        self.prepare_metrics(&metrics_path, step)?;

        let total = cfg.schedule.total;
        let last = opts.stop_after.map_or(total, |s| s.min(total));
        let mut sampler = Sampler::new(cfg.seed, train.len(), cfg.batch_size);
        let mut last_eval = None;
        let mut reached_target = false;
        let (m1, m2) = cfg.schedule.milestones;
        while step < last {
            step += 1;
            let lr_scale = cfg.schedule.lr_at(step);
            let indices = sampler.batch(step);
            let images = self.train_batch(train, &indices, step)?;
            let words: Vec<&str> = indices.iter().map(|&i| train.label(i)).collect();
            let (loss, grads) = self.model.loss_and_grads(&mut store, &images, &words, cfg.smoothing)?;
            opt.step(&mut store, &grads, lr_scale)?;
            // Stored as f32 in checkpoints; accumulate the same precision.
            window.0 = f64::from((window.0 + loss) as f32);
            window.1 += 1;

            if step % cfg.eval_every == 0 || step == total {
                let m = match eval {
                    Some(e) => Some(evaluate(&self.model, &store, e, 64)?),
                    None => None,
                };
                let row = MetricsRow {
                    step,
                    lr_scale,
                    train_loss: window.0 / window.1 as f64,
                    eval_word_acc: m.map_or(f64::NAN, |m| m.word_accuracy),
                    eval_edit_dist: m.map_or(f64::NAN, |m| m.mean_normalized_edit_distance),
                    wall_seconds: clock.elapsed().as_secs_f64(),
                };
                append_line(&metrics_path, &row.to_csv())?;
                log::info!(
                    "step {step}/{total} lr {lr_scale:.4} loss {:.4} acc {:.4}",
                    row.train_loss,
                    row.eval_word_acc
                );
                window = (0.0, 0);
                last_eval = m;
                if let (Some(target), Some(m)) = (cfg.target_accuracy, m) {
                    if m.word_accuracy >= target {
                        reached_target = true;
                    }
                }
            }
            let milestone = step == m1 || step == m2;
            let periodic = cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0;
            if milestone {
                self.checkpoint(step, &store, &opt, window)?.save(&out_dir.join(format!("step-{step:06}.ckpt")))?;
            }
            if periodic || milestone {
                self.checkpoint(step, &store, &opt, window)?.save(&out_dir.join(LATEST_CHECKPOINT))?;
            }
            if reached_target {
                break;
            }
        }
        let path = out_dir.join(LATEST_CHECKPOINT);
        self.checkpoint(step, &store, &opt, window)?.save(&path)?;
        Ok(TrainOutcome {
            step,
            last_eval,
            reached_target,
            wall_seconds: clock.elapsed().as_secs_f64(),
            checkpoint: path,
        })
    }

    fn checkpoint(&self, step: u64, store: &ParameterStore<f32>, opt: &Adadelta<f32>, window: (f64, u64)) -> Result<Checkpoint> {
        let w = Tensor::new(&[2], vec![window.0 as f32, window.1 as f32])?;
        Ok(Checkpoint::capture(
            step,
            self.config_text.clone(),
            store,
            opt,
            vec![("loss_window".into(), w)],
        ))
    }

    /// Fresh runs start a new file; resumed runs keep rows up to `step`.
    fn prepare_metrics(&self, path: &Path, step: u64) -> Result<()> {
        let mut text = format!("{METRICS_HEADER}\n");
        if step > 0 && path.exists() {
            for row in read_metrics(path)? {
                if row.step <= step {
                    text.push_str(&row.to_csv());
                    text.push('\n');
                }
            }
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint into freshly declared parameters of `model`.
pub fn load_params(model: &Cstr, path: &Path) -> Result<(Checkpoint, ParameterStore<f32>)> {
    let ckpt = Checkpoint::load(path)?;
    let mut store = model.init_params(0)?;
    let mut opt = Adadelta::standard();
    ckpt.restore(&mut store, &mut opt)?;
    Ok((ckpt, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch_once() {
        let mut s = Sampler::new(3, 10, 4);
        let mut seen: Vec<usize> = (1..=5).flat_map(|t| s.batch(t)).collect();
        let first: Vec<usize> = seen.drain(..10).collect();
        let mut sorted = first.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        let mut again = Sampler::new(3, 10, 4);
        assert_eq!(again.batch(2), Sampler::new(3, 10, 4).batch(2));
    }

    #[test]
    fn metrics_row_round_trip() {
        let r = MetricsRow {
            step: 5,
            lr_scale: 0.1,
            train_loss: 1.25,
            eval_word_acc: 0.5,
            eval_edit_dist: 0.25,
            wall_seconds: 3.0,
        };
        assert_eq!(MetricsRow::parse(&r.to_csv()).unwrap(), r);
    }
}
