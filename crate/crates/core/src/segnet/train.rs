use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{ce_from_logits, Network, TensorStore};
use super::ops::Tensor;
use crate::data::{LabelMap, RgbdFrame};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Random left-right and up-down flips, each with probability 0.5.
    pub augment: bool,
    /// `(food, plate)` loss weights.
    pub loss_weights: (f64, f64),
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 4,
            max_epochs: 80,
            early_stop_patience: 10,
            augment: true,
            loss_weights: (1.0, 1.0),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            bn_momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.early_stop_patience > 0
            && self.loss_weights.0 >= 0.0
            && self.loss_weights.1 >= 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && (0.0..1.0).contains(&self.bn_momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid training config {self:?}")))
        }
    }
}

/// One network input with its two ground-truth maps.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub input: Tensor,
    pub food: Vec<u8>,
    pub plate: Vec<u8>,
}

impl TrainSample {
    pub fn new(net: &Network, frame: &RgbdFrame, food: &LabelMap, plate: &LabelMap) -> Result<Self> {
        let input = net.frame_tensor(frame)?;
        if food.labels.len() != input.h * input.w || plate.labels.len() != input.h * input.w {
            return Err(Error::Dimension("annotation does not match network input".into()));
        }
        Ok(Self {
            input,
            food: food.labels.clone(),
            plate: plate.labels.clone(),
        })
    }

    /// Mirrors the input and both label maps.
    pub fn flipped(&self, lr: bool, ud: bool) -> Self {
        if !lr && !ud {
            return self.clone();
        }
        let (h, w) = (self.input.h, self.input.w);
        let src = |y: usize, x: usize| {
            let sy = if ud { h - 1 - y } else { y };
            let sx = if lr { w - 1 - x } else { x };
            sy * w + sx
        };
        let mut input = self.input.clone();
        let mut food = self.food.clone();
        let mut plate = self.plate.clone();
        for y in 0..h {
            for x in 0..w {
                let (d, s) = (y * w + x, src(y, x));
                for c in 0..self.input.c {
                    input.data[c * h * w + d] = self.input.data[c * h * w + s];
                }
                food[d] = self.food[s];
                plate[d] = self.plate[s];
            }
        }
        Self { input, food, plate }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Patience-based early stopping on validation loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Records a validation loss; returns `(improved, stop)`.
    pub fn observe(&mut self, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &TensorStore, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut TensorStore, grads: &[Vec<f64>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .values
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Loss and parameter gradients on one batch in training mode.
pub(crate) fn batch_loss_and_grads(
    net: &Network,
    batch: &[&TrainSample],
    weights: (f64, f64),
) -> (f64, Vec<Vec<f64>>, super::network::ForwardPass) {
    let inputs: Vec<Tensor> = batch.iter().map(|s| s.input.clone()).collect();
    let x = Tensor::stack(&inputs);
    let pass = net.forward_pass(&x, true);
    let food_t: Vec<&[u8]> = batch.iter().map(|s| s.food.as_slice()).collect();
    let plate_t: Vec<&[u8]> = batch.iter().map(|s| s.plate.as_slice()).collect();
    let (lf, df) = ce_from_logits(&pass.food_logits, &food_t, weights.0);
    let (lp, dp) = ce_from_logits(&pass.plate_logits, &plate_t, weights.1);
    let grads = net.backward(&pass, &df, &dp);
    (lf + lp, grads, pass)
}

/// Mean weighted loss over `samples` in inference mode.
pub fn evaluate_loss(net: &Network, samples: &[TrainSample], weights: (f64, f64), batch_size: usize) -> f64 {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let inputs: Vec<Tensor> = chunk.iter().map(|s| s.input.clone()).collect();
        let pass = net.forward_pass(&Tensor::stack(&inputs), false);
        let food_t: Vec<&[u8]> = chunk.iter().map(|s| s.food.as_slice()).collect();
        let plate_t: Vec<&[u8]> = chunk.iter().map(|s| s.plate.as_slice()).collect();
        let (lf, _) = ce_from_logits(&pass.food_logits, &food_t, weights.0);
        let (lp, _) = ce_from_logits(&pass.plate_logits, &plate_t, weights.1);
        total += (lf + lp) * chunk.len() as f64;
    }
    total / samples.len() as f64
}

/// Per-head pixel accuracy `(food, plate)` in inference mode.
pub fn pixel_accuracy(net: &Network, samples: &[TrainSample]) -> (f64, f64) {
    let (mut hits_f, mut hits_p, mut total) = (0usize, 0usize, 0usize);
    for s in samples {
        let out = &net.forward(&s.input).expect("sample matches network")[0];
        let f = out.food.argmax(crate::data::LabelDomain::Food);
        let p = out.plate.argmax(crate::data::LabelDomain::Plate);
        hits_f += f.labels.iter().zip(&s.food).filter(|(a, b)| a == b).count();
        hits_p += p.labels.iter().zip(&s.plate).filter(|(a, b)| a == b).count();
        total += s.food.len();
    }
    (hits_f as f64 / total as f64, hits_p as f64 / total as f64)
}

/// Trains with Adam and early stopping on validation loss, returning the
/// parameters of the best validation epoch.
pub fn train(
    mut net: Network,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Invalid("training and validation sets must be non-empty".into()));
    }
    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 {
        warn!("max_epochs is 0; returning the initialized network untrained");
        return Ok((net, history));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(&net.params, cfg);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best = (net.params.clone(), net.buffers.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainSample> = chunk
                .iter()
                .map(|&i| {
                    let (lr, ud) = if cfg.augment {
                        (rng.gen_bool(0.5), rng.gen_bool(0.5))
                    } else {
                        (false, false)
                    };
                    train_set[i].flipped(lr, ud)
                })
                .collect();
            let refs: Vec<&TrainSample> = batch.iter().collect();
            let (loss, grads, pass) = batch_loss_and_grads(&net, &refs, cfg.loss_weights);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            net.update_running_stats(&pass, cfg.bn_momentum);
            adam.update(&mut net.params, &grads);
            epoch_loss += loss * chunk.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = evaluate_loss(&net, val_set, cfg.loss_weights, cfg.batch_size);
        if !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        info!("epoch {epoch}: train loss {train_loss:.5}, val loss {val_loss:.5}");
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        let (improved, stop) = stopper.observe(val_loss);
        if improved {
            best = (net.params.clone(), net.buffers.clone());
            history.best_epoch = epoch;
        }
        if stop {
            history.stopped_early = true;
            info!("early stop at epoch {epoch}; best epoch {}", history.best_epoch);
            break;
        }
    }
    net.params = best.0;
    net.buffers = best.1;
    Ok((net, history))
}
