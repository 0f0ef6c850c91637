use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamState};
use super::config::{lr_at, TrainConfig};
use super::loss::{combined_loss, rmse, smooth_l1};
use crate::dataset::{batch_input, batch_targets, SequenceSample};
use crate::error::{Error, Result};
use crate::imaging::augment::{apply_draw, AugmentDraw};
use crate::imaging::AugmentPolicy;
use crate::model::{checkpoint, Model};
use crate::rng::derive_rng;
use crate::tensor::{Graph, Tensor};

pub const METRICS_HEADER: [&str; 5] = ["epoch", "split", "loss_angle", "loss_speed", "lr"];

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

/// Epoch-mean losses of one split; `speed` is present for models with a speed head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitLoss {
    pub angle: f64,
    pub speed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    /// 0-based.
    pub epoch: usize,
    pub lr: f64,
    pub train: SplitLoss,
    pub val: Option<SplitLoss>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochReport>,
    pub stopped_early: bool,
    pub final_checkpoint: Option<PathBuf>,
}

/// Loss values of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub angle: f64,
    pub speed: Option<f64>,
}

/// Forward and backward pass over one batch; returns the losses and one
/// gradient per parameter tensor (zeros for parameters the loss ignores).
pub fn batch_gradients(
    model: &Model,
    samples: &[&SequenceSample],
    cfg: &TrainConfig,
) -> Result<(BatchLoss, Vec<Tensor>)> {
    let mc = model.config();
    let input = batch_input(samples, mc)?;
    let (angle_t, speed_t) = batch_targets(samples, mc)?;
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, true);
    let fv = model.forward(&mut g, &p, &input)?;
    let loss = combined_loss(
        &mut g,
        &fv,
        &angle_t,
        Some(&speed_t),
        cfg.speed_loss_weight,
        cfg.smooth_l1_beta,
    )?;
    let speed = match fv.speed {
        Some(s) => Some(smooth_l1(
            g.value(s).data(),
            speed_t.data(),
            cfg.smooth_l1_beta,
        )?),
        None => None,
    };
    let values = BatchLoss {
        total: g.value(loss.total).item(),
        angle: g.value(loss.angle).item(),
        speed,
    };
    g.backward(loss.total)?;
    let grads = p
        .iter()
        .zip(model.params().tensors())
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    Ok((values, grads))
}

/// Batch-size-weighted mean losses of `model` over `samples`, no augmentation.
pub fn evaluate_loss(
    model: &Model,
    samples: &[SequenceSample],
    batch_size: usize,
    beta: f64,
) -> Result<SplitLoss> {
    let mc = model.config();
    let (mut angle, mut speed, mut n) = (0.0, 0.0, 0usize);
    let mut has_speed = false;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SequenceSample> = chunk.iter().collect();
        let out = model.predict(&batch_input(&refs, mc)?)?;
        let (at, st) = batch_targets(&refs, mc)?;
        angle += rmse(out.angle.data(), at.data())? * chunk.len() as f64;
        if let Some(s) = &out.speed {
            has_speed = true;
            speed += smooth_l1(s.data(), st.data(), beta)? * chunk.len() as f64;
        }
        n += chunk.len();
    }
    if n == 0 {
        return Err(Error::contract("evaluate_loss on an empty set"));
    }
    Ok(SplitLoss {
        angle: angle / n as f64,
        speed: has_speed.then(|| speed / n as f64),
    })
}

/// One draw shared by every frame of a sequence. RGB frames get the full
/// draw; flow images get only its geometric part.
fn augment_sample(
    sample: &SequenceSample,
    policy: &AugmentPolicy,
    seed: u64,
    epoch: usize,
    index: usize,
) -> SequenceSample {
    let mut rng = derive_rng(seed, &[AUGMENT_STREAM, epoch as u64, index as u64]);
    let draw = AugmentDraw::sample(policy, sample.frames[0].width(), &mut rng);
    let geometric = AugmentDraw {
        brightness: 1.0,
        shadow: None,
        blur: false,
        ..draw
    };
    let mut out = sample.clone();
    for (f, a) in out.frames.iter_mut().zip(out.angles.iter_mut()) {
        let (nf, na) = apply_draw(f, *a, &draw, policy);
        *f = nf;
        *a = na;
    }
    for f in &mut out.flow_images {
        *f = apply_draw(f, 0.0, &geometric, policy).0;
    }
    out
}

struct MetricsLog {
    writer: csv::Writer<fs::File>,
    path: PathBuf,
}

impl MetricsLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = fs::File::create(&path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut log = MetricsLog {
            writer: csv::Writer::from_writer(file),
            path,
        };
        log.row(METRICS_HEADER.map(String::from))?;
        Ok(log)
    }

    fn row(&mut self, fields: [String; 5]) -> Result<()> {
        let err = |e: std::io::Error| Error::io(format!("writing {}", self.path.display()), e);
        self.writer
            .write_record(&fields)
            .map_err(|e| err(e.into()))?;
        self.writer.flush().map_err(err)
    }

    fn split(&mut self, epoch: usize, split: &str, loss: &SplitLoss, lr: f64) -> Result<()> {
        self.row([
            epoch.to_string(),
            split.to_owned(),
            loss.angle.to_string(),
            loss.speed.map(|s| s.to_string()).unwrap_or_default(),
            lr.to_string(),
        ])
    }
}

/// Runs the epoch loop, updating `model` in place.
///
/// With `out_dir`, writes `metrics.csv`, periodic
/// `checkpoints/epoch_NNNN.ckpt` files and `final.ckpt`. The callback sees
/// every epoch report and may stop training early.
pub fn train<F>(
    model: &mut Model,
    train_set: &[SequenceSample],
    val_set: &[SequenceSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut callback: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochReport, &Model) -> Control,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    // fail fast on size mismatches
    batch_input(&[&train_set[0]], model.config())?;
    if let Some(v) = val_set.first() {
        batch_input(&[v], model.config())?;
    }

    let mut metrics = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            Some(MetricsLog::create(dir.join("metrics.csv"))?)
        }
        None => None,
    };
    let mut state = AdamState::new(model.params().tensors());
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut derive_rng(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));

        let (mut angle_sum, mut speed_sum, mut has_speed) = (0.0, 0.0, false);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<SequenceSample>;
            let refs: Vec<&SequenceSample> = match &cfg.augment {
                Some(policy) => {
                    augmented = chunk
                        .iter()
                        .map(|&i| augment_sample(&train_set[i], policy, cfg.seed, epoch, i))
                        .collect();
                    augmented.iter().collect()
                }
                None => chunk.iter().map(|&i| &train_set[i]).collect(),
            };
            let (loss, grads) = batch_gradients(model, &refs, cfg)?;
            let finite = loss.total.is_finite() && grads.iter().all(Tensor::all_finite);
            if !finite {
                return Err(Error::Numeric {
                    epoch,
                    batch: b,
                    detail: format!(
                        "loss_total={} loss_angle={} loss_speed={:?}{}",
                        loss.total,
                        loss.angle,
                        loss.speed,
                        if loss.total.is_finite() {
                            " (non-finite gradient)"
                        } else {
                            ""
                        }
                    ),
                });
            }
            adam_step(
                model.params_mut().tensors_mut(),
                &grads,
                &mut state,
                &cfg.adam,
                lr,
            )?;
            angle_sum += loss.angle * chunk.len() as f64;
            if let Some(s) = loss.speed {
                has_speed = true;
                speed_sum += s * chunk.len() as f64;
            }
        }
        let n = train_set.len() as f64;
        let report = EpochReport {
            epoch,
            lr,
            train: SplitLoss {
                angle: angle_sum / n,
                speed: has_speed.then(|| speed_sum / n),
            },
            val: if val_set.is_empty() {
                None
            } else {
                Some(evaluate_loss(
                    model,
                    val_set,
                    cfg.batch_size,
                    cfg.smooth_l1_beta,
                )?)
            },
        };
        log::info!(
            "epoch {epoch}: lr {lr:e} train angle {:.5} val angle {}",
            report.train.angle,
            report.val.map_or("-".into(), |v| format!("{:.5}", v.angle))
        );
        if let (Some(m), Some(dir)) = (metrics.as_mut(), out_dir) {
            m.split(epoch, "train", &report.train, lr)?;
            if let Some(v) = &report.val {
                m.split(epoch, "val", v, lr)?;
            }
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let ck = dir.join("checkpoints");
                fs::create_dir_all(&ck)
                    .map_err(|e| Error::io(format!("creating {}", ck.display()), e))?;
                checkpoint::save(model, ck.join(format!("epoch_{:04}.ckpt", epoch + 1)))?;
            }
        }
        let control = callback(&report, model);
        history.push(report);
        if control == Control::Stop {
            stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }

    let final_checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join("final.ckpt");
            checkpoint::save(model, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        history,
        stopped_early,
        final_checkpoint,
    })
}
