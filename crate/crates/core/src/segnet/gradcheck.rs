use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::network::{ce_from_logits, Network};
use super::ops::Tensor;
use super::train::{batch_loss_and_grads, TrainSample};

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    /// Draws discarded because a ReLU switched within ±ε.
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub max_abs_gradient: f64,
}

impl GradCheckReport {
    pub fn batch_norm_entries(&self) -> usize {
        self.entries.iter().filter(|e| e.param.contains(".bn.")).count()
    }
}

/// `|a − n| / max(|a|, |n|)`, with both-zero treated as exact agreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Training-mode loss and the ReLU activation pattern it was computed with.
fn training_loss(net: &Network, batch: &[&TrainSample], weights: (f64, f64)) -> (f64, Vec<bool>) {
    let inputs: Vec<Tensor> = batch.iter().map(|s| s.input.clone()).collect();
    let pass = net.forward_pass(&Tensor::stack(&inputs), true);
    let food: Vec<&[u8]> = batch.iter().map(|s| s.food.as_slice()).collect();
    let plate: Vec<&[u8]> = batch.iter().map(|s| s.plate.as_slice()).collect();
    let loss = ce_from_logits(&pass.food_logits, &food, weights.0).0
        + ce_from_logits(&pass.plate_logits, &plate, weights.1).0;
    (loss, pass.relu_pattern())
}

/// Compares backpropagated gradients of the training-mode loss with
/// central differences on `count` randomly chosen parameters. At least a
/// tenth of the sample is drawn from batch-norm scales and shifts. Draws
/// whose ±ε perturbation switches any ReLU are skipped and redrawn.
pub fn gradient_check(
    net: &Network,
    batch: &[TrainSample],
    epsilon: f64,
    count: usize,
    weights: (f64, f64),
    seed: u64,
) -> GradCheckReport {
    let refs: Vec<&TrainSample> = batch.iter().collect();
    let (_, grads, _) = batch_loss_and_grads(net, &refs, weights);
    let max_abs_gradient = grads
        .iter()
        .flatten()
        .fold(0.0f64, |m, g| m.max(g.abs()));

    let names = &net.params.names;
    let all: Vec<(usize, usize)> = net
        .params
        .values
        .iter()
        .enumerate()
        .flat_map(|(t, v)| (0..v.len()).map(move |i| (t, i)))
        .collect();
    let bn: Vec<(usize, usize)> = all
        .iter()
        .copied()
        .filter(|&(t, _)| names[t].contains(".bn."))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bn = (count / 10).max(1).min(bn.len());
    let (_, base_pattern) = training_loss(net, &refs, weights);
    let mut probe = net.clone();
    let mut entries: Vec<GradCheckEntry> = Vec::with_capacity(count);
    let mut kinks_skipped = 0;
    // central differences are meaningless across a kink, so such draws
    // are replaced; the cap keeps a kink-dense network from looping
    let max_draws = 20 * count.max(1);
    let mut draws = 0;
    while entries.len() < count && draws < max_draws {
        draws += 1;
        let pool = if entries.len() < n_bn { &bn } else { &all };
        let (t, i) = pool[rng.gen_range(0..pool.len())];
        let orig = probe.params.values[t][i];
        probe.params.values[t][i] = orig + epsilon;
        let (up, p_up) = training_loss(&probe, &refs, weights);
        probe.params.values[t][i] = orig - epsilon;
        let (down, p_down) = training_loss(&probe, &refs, weights);
        probe.params.values[t][i] = orig;
        if p_up != base_pattern || p_down != base_pattern {
            kinks_skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grads[t][i];
        entries.push(GradCheckEntry {
            param: names[t].clone(),
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = entries.iter().fold(0.0f64, |m, e| m.max(e.rel_error));
    GradCheckReport {
        entries,
        kinks_skipped,
        max_rel_error,
        max_abs_gradient,
    }
}
