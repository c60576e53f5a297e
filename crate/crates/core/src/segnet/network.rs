use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, BnCache, ConvGeom, Tensor};
use crate::data::{ClassProbs, LabelMap, ProbabilityMaps, RgbdFrame, FOOD_CLASSES, PLATE_CLASSES};
use crate::error::{Error, Result};

/// Encoder strides; the last stage keeps resolution and acts as bottleneck.
pub const ENCODER_STRIDES: [usize; 6] = [2, 2, 2, 2, 2, 1];
/// Full-width encoder filters.
pub const TABLE_FILTERS: [usize; 6] = [16, 32, 64, 128, 256, 512];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// `(height, width)`, both multiples of 32.
    pub input_size: (usize, usize),
    /// RGB + depth.
    pub input_channels: usize,
    pub base_filters: [usize; 6],
    pub food_classes: usize,
    pub plate_classes: usize,
    pub kernel_size: usize,
    /// Depth (meters) is divided by this before entering the network.
    pub depth_norm_m: f64,
}

impl Default for NetworkConfig {
    /// Desk-scale network: 96×128 input (a fifth of a 480×640 capture) at a
    /// quarter of the full widths.
    fn default() -> Self {
        Self {
            input_size: (96, 128),
            ..Self::full_width().with_width_factor(0.25)
        }
    }
}

impl NetworkConfig {
    pub fn full_width() -> Self {
        Self {
            input_size: (64, 64),
            input_channels: 4,
            base_filters: TABLE_FILTERS,
            food_classes: FOOD_CLASSES,
            plate_classes: PLATE_CLASSES,
            kernel_size: 3,
            depth_norm_m: 1.0,
        }
    }

    pub fn with_width_factor(mut self, factor: f64) -> Self {
        self.base_filters = TABLE_FILTERS.map(|f| ((f as f64 * factor).round() as usize).max(1));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Invalid(format!(
                "network input size {h}x{w} must be a positive multiple of 32"
            )));
        }
        if self.base_filters.contains(&0) || self.input_channels == 0 {
            return Err(Error::Invalid("filter and channel counts must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Invalid("kernel size must be odd".into()));
        }
        if self.food_classes < 2 || self.plate_classes < 2 {
            return Err(Error::Invalid("each head needs at least two classes".into()));
        }
        if !(self.depth_norm_m > 0.0) {
            return Err(Error::Invalid("depth_norm_m must be positive".into()));
        }
        Ok(())
    }

    /// Decoder output widths, deepest first.
    pub fn decoder_filters(&self) -> [usize; 5] {
        let f = self.base_filters;
        [f[5], f[4], f[3], f[2], f[1]]
    }
}

/// Named tensors addressed by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorStore {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl TensorStore {
    fn push(&mut self, name: String, value: Vec<f64>) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.values[i].as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|v| vec![0.0; v.len()]).collect()
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    weight: usize,
    bias: Option<usize>,
    out_c: usize,
    geom: ConvGeom,
    transposed: bool,
}

#[derive(Clone, Debug)]
struct BnLayer {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

/// conv/deconv → batch norm → ReLU
#[derive(Clone, Debug)]
struct Block {
    conv: ConvLayer,
    bn: BnLayer,
}

#[derive(Clone, Debug)]
struct Stage {
    up: Block,
    /// Encoder stage whose output is concatenated before `Block`.
    skip: Option<(usize, Block)>,
}

#[derive(Clone, Debug)]
struct Decoder {
    stages: Vec<Stage>,
    head: ConvLayer,
}

/// Multi-task encoder-decoder: one shared encoder, a food decoder and a
/// plate decoder, each with U-Net style skips.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    pub seed: u64,
    pub params: TensorStore,
    /// Batch-norm running statistics.
    pub buffers: TensorStore,
    encoder: Vec<Block>,
    food: Decoder,
    plate: Decoder,
}

struct Builder {
    params: TensorStore,
    buffers: TensorStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn normal(&mut self, n: usize, std: f64) -> Vec<f64> {
        let dist = Normal::new(0.0, std).expect("finite std");
        (0..n).map(|_| dist.sample(&mut self.rng)).collect()
    }

    fn block(&mut self, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, transposed: bool) -> Block {
        let fan_in = if transposed {
            (in_c * k * k) as f64 / (stride * stride) as f64
        } else {
            (in_c * k * k) as f64
        };
        let w = self.normal(in_c * out_c * k * k, (2.0 / fan_in).sqrt());
        let weight = self.params.push(format!("{name}.conv.weight"), w);
        let gamma = self.params.push(format!("{name}.bn.gamma"), vec![1.0; out_c]);
        let beta = self.params.push(format!("{name}.bn.beta"), vec![0.0; out_c]);
        let mean = self.buffers.push(format!("{name}.bn.running_mean"), vec![0.0; out_c]);
        let var = self.buffers.push(format!("{name}.bn.running_var"), vec![1.0; out_c]);
        Block {
            conv: ConvLayer {
                weight,
                bias: None,
                out_c,
                geom: ConvGeom {
                    k,
                    stride,
                    pad: k / 2,
                },
                transposed,
            },
            bn: BnLayer {
                gamma,
                beta,
                mean,
                var,
            },
        }
    }

    fn head(&mut self, name: &str, in_c: usize, out_c: usize) -> ConvLayer {
        let w = self.normal(in_c * out_c, (1.0 / in_c as f64).sqrt());
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = self.params.push(format!("{name}.bias"), vec![0.0; out_c]);
        ConvLayer {
            weight,
            bias: Some(bias),
            out_c,
            geom: ConvGeom {
                k: 1,
                stride: 1,
                pad: 0,
            },
            transposed: false,
        }
    }

    fn decoder(&mut self, name: &str, cfg: &NetworkConfig, classes: usize) -> Decoder {
        let k = cfg.kernel_size;
        let enc = cfg.base_filters;
        let dec = cfg.decoder_filters();
        let mut in_c = enc[5];
        let mut stages = Vec::with_capacity(5);
        for (i, &f) in dec.iter().enumerate() {
            let up = self.block(&format!("{name}.{i}.up"), in_c, f, k, 2, true);
            // Decoder stage i runs at input/2^(4-i); encoder stage j at
            // input/2^(j+1), so the matching feature is j = 3 - i.
            let skip = (i < 4).then(|| {
                let j = 3 - i;
                (j, self.block(&format!("{name}.{i}.skip"), f + enc[j], f, k, 1, false))
            });
            stages.push(Stage { up, skip });
            in_c = f;
        }
        let head = self.head(&format!("{name}.head"), in_c, classes);
        Decoder { stages, head }
    }
}

/// Activations of one block kept for the backward pass.
struct BlockCache {
    input: Tensor,
    bn: Option<BnCache>,
    output: Tensor,
}

struct DecoderCache {
    /// Per stage: up-block cache, skip-block cache.
    stages: Vec<(BlockCache, Option<BlockCache>)>,
    head_input: Tensor,
}

/// Everything produced by one forward pass.
pub(crate) struct ForwardPass {
    encoder: Vec<BlockCache>,
    food: DecoderCache,
    plate: DecoderCache,
    pub food_logits: Tensor,
    pub plate_logits: Tensor,
}

impl ForwardPass {
    /// Which ReLU outputs are positive, over every block in pass order.
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        let mut add = |c: &BlockCache| out.extend(c.output.data.iter().map(|v| *v > 0.0));
        self.encoder.iter().for_each(&mut add);
        for d in [&self.food, &self.plate] {
            for (u, s) in &d.stages {
                add(u);
                if let Some(s) = s {
                    add(s);
                }
            }
        }
        out
    }
}

impl Network {
    /// Deterministic He-initialized network.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: TensorStore::default(),
            buffers: TensorStore::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let k = config.kernel_size;
        let mut in_c = config.input_channels;
        let mut encoder = Vec::with_capacity(6);
        for (j, (&f, &s)) in config.base_filters.iter().zip(&ENCODER_STRIDES).enumerate() {
            encoder.push(b.block(&format!("encoder.{j}"), in_c, f, k, s, false));
            in_c = f;
        }
        let food = b.decoder("food", &config, config.food_classes);
        let plate = b.decoder("plate", &config, config.plate_classes);
        Ok(Self {
            config,
            seed,
            params: b.params,
            buffers: b.buffers,
            encoder,
            food,
            plate,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Output widths of the encoder stages.
    pub fn encoder_filters(&self) -> Vec<usize> {
        self.encoder.iter().map(|b| b.conv.out_c).collect()
    }

    /// Parameter names of both 1×1 heads.
    pub const HEAD_PARAMS: [&'static str; 4] = [
        "food.head.weight",
        "food.head.bias",
        "plate.head.weight",
        "plate.head.bias",
    ];

    /// Converts a frame into the 4-channel input (RGB in [0,1], depth
    /// divided by `depth_norm_m`, invalid depth as 0).
    pub fn frame_tensor(&self, frame: &RgbdFrame) -> Result<Tensor> {
        frame_tensor(&self.config, frame)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (h, w) = self.config.input_size;
        if x.c != self.config.input_channels || x.h != h || x.w != w || x.n == 0 {
            return Err(Error::Dimension(format!(
                "network expects batches of {}x{h}x{w}, got {}x{}x{}x{}",
                self.config.input_channels, x.n, x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    /// Inference with running batch-norm statistics.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<ProbabilityMaps>> {
        self.check_input(x)?;
        let pass = self.forward_pass(x, false);
        Ok(to_prob_maps(&pass.food_logits, &pass.plate_logits))
    }

    pub fn forward_frames(&self, frames: &[&RgbdFrame]) -> Result<Vec<ProbabilityMaps>> {
        let tensors = frames
            .iter()
            .map(|f| self.frame_tensor(f))
            .collect::<Result<Vec<_>>>()?;
        self.forward(&Tensor::stack(&tensors))
    }

    fn conv(&self, layer: &ConvLayer, x: &Tensor) -> Tensor {
        let w = &self.params.values[layer.weight];
        let b = layer.bias.map(|i| self.params.values[i].as_slice());
        if layer.transposed {
            ops::deconv_forward(x, w, b, layer.out_c, layer.geom)
        } else {
            ops::conv_forward(x, w, b, layer.out_c, layer.geom)
        }
    }

    fn block_forward(&self, block: &Block, x: Tensor, train: bool) -> BlockCache {
        let z = self.conv(&block.conv, &x);
        let p = &self.params.values;
        let (gamma, beta) = (&p[block.bn.gamma], &p[block.bn.beta]);
        let (mut y, bn) = if train {
            let (y, c) = ops::bn_forward_train(&z, gamma, beta);
            (y, Some(c))
        } else {
            let b = &self.buffers.values;
            (ops::bn_forward_eval(&z, gamma, beta, &b[block.bn.mean], &b[block.bn.var]), None)
        };
        ops::relu(&mut y);
        BlockCache {
            input: x,
            bn,
            output: y,
        }
    }

    fn decoder_forward(&self, dec: &Decoder, enc: &[BlockCache], train: bool) -> (DecoderCache, Tensor) {
        let mut h = enc[5].output.clone();
        let mut stages = Vec::with_capacity(dec.stages.len());
        for st in &dec.stages {
            let up = self.block_forward(&st.up, h, train);
            let (skip, next) = match &st.skip {
                Some((j, blk)) => {
                    let cat = ops::concat(&up.output, &enc[*j].output);
                    let c = self.block_forward(blk, cat, train);
                    let out = c.output.clone();
                    (Some(c), out)
                }
                None => (None, up.output.clone()),
            };
            stages.push((up, skip));
            h = next;
        }
        let logits = self.conv(&dec.head, &h);
        (
            DecoderCache {
                stages,
                head_input: h,
            },
            logits,
        )
    }

    pub(crate) fn forward_pass(&self, x: &Tensor, train: bool) -> ForwardPass {
        let mut encoder: Vec<BlockCache> = Vec::with_capacity(6);
        let mut h = x.clone();
        for blk in &self.encoder {
            let c = self.block_forward(blk, h, train);
            h = c.output.clone();
            encoder.push(c);
        }
        let (food, food_logits) = self.decoder_forward(&self.food, &encoder, train);
        let (plate, plate_logits) = self.decoder_forward(&self.plate, &encoder, train);
        ForwardPass {
            encoder,
            food,
            plate,
            food_logits,
            plate_logits,
        }
    }

    /// Folds the batch statistics of a training pass into the running
    /// averages (`running = m·running + (1−m)·batch`).
    pub(crate) fn update_running_stats(&mut self, pass: &ForwardPass, momentum: f64) {
        let stats: Vec<(Vec<f64>, Vec<f64>, usize)> = {
            let mut out = Vec::new();
            let mut add = |c: &BlockCache| {
                if let Some(bn) = &c.bn {
                    let n = c.output.n * c.output.h * c.output.w;
                    out.push((bn.mean.clone(), bn.var.clone(), n));
                }
            };
            pass.encoder.iter().for_each(&mut add);
            for d in [&pass.food, &pass.plate] {
                for (u, s) in &d.stages {
                    add(u);
                    if let Some(s) = s {
                        add(s);
                    }
                }
            }
            out
        };
        let layers = self.bn_layers();
        debug_assert_eq!(layers.len(), stats.len());
        for (bn, (mean, var, n)) in layers.iter().zip(stats) {
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            let rm = &mut self.buffers.values[bn.mean];
            rm.iter_mut()
                .zip(&mean)
                .for_each(|(r, m)| *r = momentum * *r + (1.0 - momentum) * m);
            let rv = &mut self.buffers.values[bn.var];
            rv.iter_mut()
                .zip(&var)
                .for_each(|(r, v)| *r = momentum * *r + (1.0 - momentum) * v * unbias);
        }
    }

    fn bn_layers(&self) -> Vec<BnLayer> {
        let mut out: Vec<BnLayer> = self.encoder.iter().map(|b| b.bn.clone()).collect();
        for d in [&self.food, &self.plate] {
            for st in &d.stages {
                out.push(st.up.bn.clone());
                if let Some((_, b)) = &st.skip {
                    out.push(b.bn.clone());
                }
            }
        }
        out
    }

    fn block_backward(&self, block: &Block, cache: &BlockCache, mut dy: Tensor, grads: &mut [Vec<f64>], want_dx: bool) -> Option<Tensor> {
        ops::relu_backward(&mut dy, &cache.output);
        let bn = cache.bn.as_ref().expect("backward needs a training pass");
        let (dz, dgamma, dbeta) = ops::bn_backward(&dy, bn, &self.params.values[block.bn.gamma]);
        add_into(&mut grads[block.bn.gamma], &dgamma);
        add_into(&mut grads[block.bn.beta], &dbeta);
        self.conv_backward(&block.conv, &cache.input, &dz, grads, want_dx)
    }

    fn conv_backward(&self, layer: &ConvLayer, x: &Tensor, dy: &Tensor, grads: &mut [Vec<f64>], want_dx: bool) -> Option<Tensor> {
        let w = &self.params.values[layer.weight];
        let (dx, dw, db) = if layer.transposed {
            ops::deconv_backward(x, w, dy, layer.geom)
        } else {
            ops::conv_backward(x, w, dy, layer.geom, want_dx)
        };
        add_into(&mut grads[layer.weight], &dw);
        if let Some(b) = layer.bias {
            add_into(&mut grads[b], &db);
        }
        dx
    }

    fn decoder_backward(&self, dec: &Decoder, cache: &DecoderCache, dlogits: &Tensor, enc_grads: &mut [Option<Tensor>], grads: &mut [Vec<f64>]) {
        let mut dh = self
            .conv_backward(&dec.head, &cache.head_input, dlogits, grads, true)
            .expect("dx requested");
        for (st, (up_c, skip_c)) in dec.stages.iter().zip(&cache.stages).rev() {
            if let (Some((j, blk)), Some(sc)) = (&st.skip, skip_c) {
                let dcat = self.block_backward(blk, sc, dh, grads, true).expect("dx requested");
                let (du, denc) = ops::split_channels(&dcat, up_c.output.c);
                accumulate(&mut enc_grads[*j], denc);
                dh = du;
            }
            dh = self.block_backward(&st.up, up_c, dh, grads, true).expect("dx requested");
        }
        accumulate(&mut enc_grads[5], dh);
    }

    /// Parameter gradients given loss gradients w.r.t. both heads' logits.
    pub(crate) fn backward(&self, pass: &ForwardPass, dfood: &Tensor, dplate: &Tensor) -> Vec<Vec<f64>> {
        let mut grads = self.params.zeros_like();
        let mut enc_grads: Vec<Option<Tensor>> = vec![None; 6];
        self.decoder_backward(&self.food, &pass.food, dfood, &mut enc_grads, &mut grads);
        self.decoder_backward(&self.plate, &pass.plate, dplate, &mut enc_grads, &mut grads);
        for j in (0..6).rev() {
            let Some(g) = enc_grads[j].take() else { continue };
            let dx = self.block_backward(&self.encoder[j], &pass.encoder[j], g, &mut grads, j > 0);
            if j > 0 {
                accumulate(&mut enc_grads[j - 1], dx.expect("dx requested"));
            }
        }
        grads
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(acc) => add_into(&mut acc.data, &t.data),
        None => *slot = Some(t),
    }
}

pub fn frame_tensor(config: &NetworkConfig, frame: &RgbdFrame) -> Result<Tensor> {
    let (h, w) = config.input_size;
    if (frame.height, frame.width) != (h, w) {
        return Err(Error::Dimension(format!(
            "frame is {}x{}, network expects {w}x{h}",
            frame.width, frame.height
        )));
    }
    let hw = h * w;
    let mut t = Tensor::zeros(1, config.input_channels, h, w);
    for i in 0..hw {
        for c in 0..3.min(config.input_channels) {
            t.data[c * hw + i] = frame.color[3 * i + c] as f64 / 255.0;
        }
        if config.input_channels > 3 {
            t.data[3 * hw + i] = frame.depth[i] / config.depth_norm_m;
        }
    }
    Ok(t)
}

fn to_prob_maps(food: &Tensor, plate: &Tensor) -> Vec<ProbabilityMaps> {
    let (h, w) = (food.h, food.w);
    ops::softmax_channels(food)
        .into_iter()
        .zip(ops::softmax_channels(plate))
        .map(|(f, p)| ProbabilityMaps {
            food: ClassProbs {
                width: w,
                height: h,
                classes: food.c,
                data: f,
            },
            plate: ClassProbs {
                width: w,
                height: h,
                classes: plate.c,
                data: p,
            },
        })
        .collect()
}

/// Pixel-averaged categorical cross-entropy of each head, combined as
/// `w_food·CE_food + w_plate·CE_plate`. Probabilities are floored at 1e-12.
pub fn loss(pred: &ProbabilityMaps, gt_food: &LabelMap, gt_plate: &LabelMap, weights: (f64, f64)) -> Result<f64> {
    let ce = |p: &ClassProbs, gt: &LabelMap| -> Result<f64> {
        if (p.width, p.height) != (gt.width, gt.height) {
            return Err(Error::Dimension(format!(
                "prediction {}x{} vs label map {}x{}",
                p.width, p.height, gt.width, gt.height
            )));
        }
        let mut s = 0.0;
        for (i, &l) in gt.labels.iter().enumerate() {
            let l = l as usize;
            if l >= p.classes {
                return Err(Error::Invalid(format!("label {l} outside {} classes", p.classes)));
            }
            s -= p.pixel(i)[l].max(1e-12).ln();
        }
        Ok(s / gt.labels.len() as f64)
    };
    Ok(weights.0 * ce(&pred.food, gt_food)? + weights.1 * ce(&pred.plate, gt_plate)?)
}

/// Batch cross-entropy from logits: `(loss, dlogits)` where the loss is the
/// mean over samples and pixels scaled by `weight`.
pub(crate) fn ce_from_logits(logits: &Tensor, targets: &[&[u8]], weight: f64) -> (f64, Tensor) {
    let hw = logits.h * logits.w;
    let c = logits.c;
    let norm = (logits.n * hw) as f64;
    let mut grad = Tensor::zeros(logits.n, c, logits.h, logits.w);
    let mut total = 0.0;
    let sl = logits.sample_len();
    for (i, target) in targets.iter().enumerate() {
        let s = logits.sample(i);
        let g = &mut grad.data[i * sl..(i + 1) * sl];
        for p in 0..hw {
            let mut m = f64::NEG_INFINITY;
            for k in 0..c {
                m = m.max(s[k * hw + p]);
            }
            let mut z = 0.0;
            for k in 0..c {
                z += (s[k * hw + p] - m).exp();
            }
            let t = target[p] as usize;
            total -= s[t * hw + p] - m - z.ln();
            for k in 0..c {
                let prob = (s[k * hw + p] - m).exp() / z;
                let onehot = if k == t { 1.0 } else { 0.0 };
                g[k * hw + p] = weight * (prob - onehot) / norm;
            }
        }
    }
    (weight * total / norm, grad)
}
