//! Fully-connected CRF over the food probability map: Potts model with a
//! bilateral appearance kernel and a spatial smoothness kernel, solved by
//! synchronous mean-field updates.

use serde::{Deserialize, Serialize};

use crate::data::{ClassProbs, LabelMap};
use crate::error::{Error, Result};
use crate::par;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
/// Images with more pixels than this use a truncated message window.
pub const MAX_EXACT_PIXELS: usize = 128 * 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfParams {
    pub w_appearance: f64,
    pub w_smoothness: f64,
    /// Appearance kernel spatial bandwidth, pixels.
    pub theta_alpha: f64,
    /// Appearance kernel color bandwidth, 8-bit color units.
    pub theta_beta: f64,
    /// Smoothness kernel spatial bandwidth, pixels.
    pub theta_gamma: f64,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w_appearance: 3.0,
            w_smoothness: 1.0,
            theta_alpha: 20.0,
            theta_beta: 13.0,
            theta_gamma: 3.0,
            iterations: 5,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_appearance, self.w_smoothness];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid(format!("CRF weights must be >= 0, got {weights:?}")));
        }
        let bw = [self.theta_alpha, self.theta_beta, self.theta_gamma];
        if bw.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Invalid(format!("CRF bandwidths must be > 0, got {bw:?}")));
        }
        Ok(())
    }

    fn is_uncoupled(&self) -> bool {
        self.w_appearance == 0.0 && self.w_smoothness == 0.0
    }
}

/// Pairwise kernel k(f_i, f_j) evaluated through lookup tables: the
/// spatial Gaussians are indexed by (|dx|, |dy|) and the color Gaussian
/// factors into one table per channel difference.
struct Kernel<'a> {
    width: usize,
    height: usize,
    color: &'a [u8],
    /// Half-width of the square neighborhood; `None` means all pixels.
    window: Option<usize>,
    span: usize,
    appearance: Vec<f64>,
    smoothness: Vec<f64>,
    color_gauss: [f64; 256],
}

impl<'a> Kernel<'a> {
    fn new(width: usize, height: usize, color: &'a [u8], params: &CrfParams) -> Self {
        let window = (width * height > MAX_EXACT_PIXELS)
            .then(|| (3.0 * params.theta_alpha.max(params.theta_gamma)).ceil() as usize);
        let span = match window {
            Some(r) => r + 1,
            None => width.max(height),
        };
        let mut appearance = vec![0.0; span * span];
        let mut smoothness = vec![0.0; span * span];
        let two_a = 2.0 * params.theta_alpha * params.theta_alpha;
        let two_g = 2.0 * params.theta_gamma * params.theta_gamma;
        for dy in 0..span {
            for dx in 0..span {
                let d2 = (dx * dx + dy * dy) as f64;
                appearance[dy * span + dx] = params.w_appearance * (-d2 / two_a).exp();
                smoothness[dy * span + dx] = params.w_smoothness * (-d2 / two_g).exp();
            }
        }
        let two_b = 2.0 * params.theta_beta * params.theta_beta;
        let color_gauss = std::array::from_fn(|d| (-((d * d) as f64) / two_b).exp());
        Self {
            width,
            height,
            color,
            window,
            span,
            appearance,
            smoothness,
            color_gauss,
        }
    }

    #[inline]
    fn color_weight(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.color[3 * i..3 * i + 3], &self.color[3 * j..3 * j + 3]);
        self.color_gauss[a[0].abs_diff(b[0]) as usize]
            * self.color_gauss[a[1].abs_diff(b[1]) as usize]
            * self.color_gauss[a[2].abs_diff(b[2]) as usize]
    }

    #[inline]
    fn eval(&self, i: usize, j: usize) -> f64 {
        let (xi, yi) = (i % self.width, i / self.width);
        let (xj, yj) = (j % self.width, j / self.width);
        let s = yi.abs_diff(yj) * self.span + xi.abs_diff(xj);
        self.appearance[s] * self.color_weight(i, j) + self.smoothness[s]
    }

    /// Spatial appearance and smoothness weights for a row offset `dy`,
    /// indexed by |dx|.
    #[inline]
    fn rows(&self, dy: usize) -> (&[f64], &[f64]) {
        let r = dy * self.span..(dy + 1) * self.span;
        (&self.appearance[r.clone()], &self.smoothness[r])
    }

    /// Row range and column range of pixels coupled to `i`.
    fn neighborhood(&self, i: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        match self.window {
            None => (0..self.height, 0..self.width),
            Some(r) => {
                let (x, y) = (i % self.width, i / self.width);
                (
                    y.saturating_sub(r)..(y + r + 1).min(self.height),
                    x.saturating_sub(r)..(x + r + 1).min(self.width),
                )
            }
        }
    }
}

fn check_shapes(probs: &ClassProbs, color: &[u8]) -> Result<()> {
    if color.len() != 3 * probs.pixels() {
        return Err(Error::Dimension(format!(
            "{}x{} probability map with {} color bytes",
            probs.width,
            probs.height,
            color.len()
        )));
    }
    Ok(())
}

/// Gibbs energy of `labels`: floored negative log-likelihood unaries plus
/// the Potts pairwise term over unordered pixel pairs.
pub fn crf_energy(labels: &LabelMap, unary: &ClassProbs, color: &[u8], params: &CrfParams) -> Result<f64> {
    params.validate()?;
    check_shapes(unary, color)?;
    if labels.width != unary.width || labels.height != unary.height {
        return Err(Error::Dimension(format!(
            "labels {}x{} vs probabilities {}x{}",
            labels.width, labels.height, unary.width, unary.height
        )));
    }
    if let Some(l) = labels.labels.iter().find(|l| **l as usize >= unary.classes) {
        return Err(Error::LabelOutOfRange {
            domain: labels.domain.name(),
            value: *l,
            max: (unary.classes - 1) as u8,
        });
    }
    let n = unary.pixels();
    let unary_sum: f64 = (0..n)
        .map(|i| -unary.pixel(i)[labels.labels[i] as usize].max(PROB_FLOOR).ln())
        .sum();
    let kernel = Kernel::new(unary.width, unary.height, color, params);
    let pair_terms = par::map_range(n, |i| {
        let (rows, cols) = kernel.neighborhood(i);
        let mut acc = 0.0;
        for y in rows {
            for x in cols.clone() {
                let j = y * unary.width + x;
                if j > i && labels.labels[i] != labels.labels[j] {
                    acc += kernel.eval(i, j);
                }
            }
        }
        acc
    });
    Ok(unary_sum + pair_terms.iter().sum::<f64>())
}

/// Mean-field marginals after `params.iterations` synchronous updates.
///
/// With Potts compatibility the message for label l at pixel i is
/// Σ_j k_ij (1 − Q_j(l)); the Σ_j k_ij part is shared by every label and
/// cancels in the softmax, so the update only needs Σ_j k_ij Q_j(l).
pub fn refine_crf(unary: &ClassProbs, color: &[u8], params: &CrfParams) -> Result<ClassProbs> {
    params.validate()?;
    check_shapes(unary, color)?;
    if params.iterations == 0 || params.is_uncoupled() {
        return Ok(unary.clone());
    }
    let c = unary.classes;
    let w = unary.width;
    let log_p: Vec<f64> = unary.data.iter().map(|p| p.max(PROB_FLOOR).ln()).collect();
    let kernel = Kernel::new(w, unary.height, color, params);
    let mut q = unary.data.clone();
    let mut next = vec![0.0; q.len()];
    for _ in 0..params.iterations {
        par::for_each_chunk_mut(&mut next, c, |i, out| {
            out.fill(0.0);
            let (xi, yi) = (i % w, i / w);
            let ci = &color[3 * i..3 * i + 3];
            let g = &kernel.color_gauss;
            let (rows, cols) = kernel.neighborhood(i);
            for y in rows {
                let (app, smooth) = kernel.rows(y.abs_diff(yi));
                let (j0, j1) = (y * w + cols.start, y * w + cols.end);
                let q_row = q[j0 * c..j1 * c].chunks_exact(c);
                let c_row = color[3 * j0..3 * j1].chunks_exact(3);
                for ((x, qj), cj) in cols.clone().zip(q_row).zip(c_row) {
                    if y == yi && x == xi {
                        continue;
                    }
                    let dx = x.abs_diff(xi);
                    let cw = g[ci[0].abs_diff(cj[0]) as usize]
                        * g[ci[1].abs_diff(cj[1]) as usize]
                        * g[ci[2].abs_diff(cj[2]) as usize];
                    accumulate(out, app[dx] * cw + smooth[dx], qj);
                }
            }
            for (o, lp) in out.iter_mut().zip(&log_p[i * c..(i + 1) * c]) {
                *o += lp;
            }
            softmax_in_place(out);
        });
        std::mem::swap(&mut q, &mut next);
    }
    ClassProbs::new(unary.width, unary.height, c, q)
}

/// `out += k·q`, with a fixed-width path for the food map's eight classes.
#[inline]
fn accumulate(out: &mut [f64], k: f64, q: &[f64]) {
    if let (Ok(o), Ok(q)) = (<&mut [f64; 8]>::try_from(&mut *out), <&[f64; 8]>::try_from(q)) {
        for l in 0..8 {
            o[l] += k * q[l];
        }
    } else {
        for (o, qj) in out.iter_mut().zip(q) {
            *o += k * qj;
        }
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
