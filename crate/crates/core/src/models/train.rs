use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{mean_class_accuracy_n, FocalLossConfig};
use crate::nn::{cosine_lr, Network, Sample, Sgd, Tensor};
use crate::voxcore::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Final learning rate as a fraction of the initial one.
    pub lr_floor: f32,
    pub gamma: f64,
    pub class_weights: Vec<f64>,
    /// Random flips and transposes of square inputs.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_floor: 0.05,
            gamma: 0.0,
            class_weights: vec![1.0; NUM_CLASSES],
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn focal(&self) -> Result<FocalLossConfig> {
        FocalLossConfig::new(self.gamma, self.class_weights.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        self.focal().map(|_| ()).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f32,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_meanacc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,learning_rate,train_loss,val_loss,val_meanacc\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{},{}",
                r.epoch,
                r.learning_rate,
                r.train_loss,
                opt(r.val_loss),
                opt(r.val_meanacc)
            );
        }
        s
    }
}

/// Flip / transpose of the (h, w) axes; `k` in 0..8 indexes the dihedral group.
fn dihedral(t: &Tensor, k: u8) -> Tensor {
    let [c, d, h, w] = t.shape;
    let mut out = Tensor::zeros(t.shape);
    for ci in 0..c {
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let (mut sy, mut sx) = if k & 4 != 0 { (x, y) } else { (y, x) };
                    if k & 1 != 0 {
                        sy = h - 1 - sy;
                    }
                    if k & 2 != 0 {
                        sx = w - 1 - sx;
                    }
                    out.data[((ci * d + z) * h + y) * w + x] = t.data[((ci * d + z) * h + sy) * w + sx];
                }
            }
        }
    }
    out
}

fn augment(sample: &Sample, net: &Network, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let [_, _, h, w] = sample.input.shape;
    let k: u8 = if h == w { rng.gen_range(0..8) } else { rng.gen_range(0..4) };
    if k == 0 {
        return Ok(sample.clone());
    }
    let input = dihedral(&sample.input, k);
    let out = net.output_shape_for(sample.input.shape)?;
    let targets = if out[2] == 1 && out[3] == 1 {
        sample.targets.clone()
    } else {
        let codes: Vec<f32> = sample
            .targets
            .iter()
            .map(|t| t.map_or(-1.0, |v| v as f32))
            .collect();
        let grid = Tensor::from_vec([1, out[1], out[2], out[3]], codes)?;
        dihedral(&grid, k)
            .data
            .iter()
            .map(|&v| (v >= 0.0).then_some(v as u8))
            .collect()
    };
    Ok(Sample { input, targets })
}

/// Mean loss and mean class accuracy over all labelled positions.
pub fn evaluate(net: &Network, samples: &[Sample], focal: &FocalLossConfig) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut n = 0usize;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for s in samples {
        let probs = net.predict(&s.input)?;
        for (pos, t) in s.targets.iter().enumerate() {
            let Some(t) = t else { continue };
            let col = probs.column(pos);
            let (l, _) = crate::losses::focal_loss_softmax(&col, *t as usize, focal);
            loss += l;
            n += 1;
            pred.push(argmax(&col));
            truth.push(*t as usize);
        }
    }
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((loss / n as f64, mean_class_accuracy_n(&pred, &truth, NUM_CLASSES)?))
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains `net` with momentum SGD and a cosine schedule. When validation
/// samples are given, the weights of the epoch with the best validation mean
/// class accuracy are restored at the end.
pub fn train(net: &mut Network, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training {
            epoch: 0,
            message: "no training samples".into(),
        });
    }
    let focal = cfg.focal()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(&net.params, cfg.momentum, cfg.weight_decay);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, f64, crate::nn::ParamStore)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = cfg.learning_rate;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = if cfg.augment {
                chunk
                    .iter()
                    .map(|&i| augment(&train[i], net, &mut rng))
                    .collect::<Result<_>>()?
            } else {
                chunk.iter().map(|&i| train[i].clone()).collect()
            };
            let refs: Vec<&Sample> = batch.iter().collect();
            let (loss, grads) = net.loss_and_grads(&refs, &focal)?;
            if !loss.is_finite() || !grads.norm().is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite loss or gradient at step {step}"),
                });
            }
            lr = cosine_lr(cfg.learning_rate, step, total_steps, cfg.lr_floor);
            opt.step(&mut net.params, &grads, lr);
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let (val_loss, val_meanacc) = if val.is_empty() {
            (None, None)
        } else {
            let (l, m) = evaluate(net, val, &focal)?;
            (Some(l), Some(m))
        };
        log::debug!("epoch {epoch}: train loss {train_loss:.4}, val {val_loss:?} / {val_meanacc:?}");
        if let (Some(l), Some(m)) = (val_loss, val_meanacc) {
            let better = match &best {
                None => true,
                Some((bm, bl, _)) => m > *bm || (m == *bm && l < *bl),
            };
            if better {
                best = Some((m, l, net.params.clone()));
                history.best_epoch = epoch;
            }
        } else {
            history.best_epoch = epoch;
        }
        history.records.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            val_loss,
            val_meanacc,
        });
    }
    if let Some((_, _, params)) = best {
        net.params = params;
    }
    Ok(history)
}
