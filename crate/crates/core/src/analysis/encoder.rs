//! Self-supervised trajectory autoencoder: 128 -> 64 -> 16 -> 64 -> 128, tanh hidden layers.

use super::trajectory::{CollisionTrajectoryPair, PAIR_FEATURES};
use super::AnalysisError;
use crate::rng::stream;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MIN_PAIRS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 64,
            latent: 16,
            epochs: 3000,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderReport {
    pub epochs: usize,
    pub mse: f64,
    /// Mean per-feature variance of the normalized inputs.
    pub baseline: f64,
}

impl EncoderReport {
    pub fn below_baseline(&self) -> bool {
        self.mse <= 0.5 * self.baseline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEncoder {
    pub config: EncoderConfig,
    pub mean: Array1<f64>,
    pub scale: f64,
    /// Encoder layers first; layers 0 and 2 are tanh, 1 (latent) and 3 (output) linear.
    pub layers: Vec<Dense>,
}

fn is_tanh(layer: usize) -> bool {
    layer.is_multiple_of(2)
}

pub fn pair_matrix(pairs: &[CollisionTrajectoryPair]) -> Array2<f64> {
    let mut x = Array2::zeros((pairs.len(), PAIR_FEATURES));
    for (i, p) in pairs.iter().enumerate() {
        for (j, v) in p.flatten().into_iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    x
}

impl TrajectoryEncoder {
    pub fn new(config: EncoderConfig) -> Self {
        let mut rng = stream(config.seed, &[0xAE]);
        let dims = [PAIR_FEATURES, config.hidden, config.latent, config.hidden, PAIR_FEATURES];
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = (6.0 / (d[0] + d[1]) as f64).sqrt();
                Dense {
                    w: Array2::from_shape_fn((d[0], d[1]), |_| rng.random_range(-bound..bound)),
                    b: Array1::zeros(d[1]),
                }
            })
            .collect();
        TrajectoryEncoder {
            config,
            mean: Array1::zeros(PAIR_FEATURES),
            scale: 1.0,
            layers,
        }
    }

    /// Set the input normalization from `x`: per-feature mean, one global scale.
    pub fn fit_normalization(&mut self, x: &Array2<f64>) {
        self.mean = x.mean_axis(Axis(0)).expect("non-empty data");
        let var = x.var_axis(Axis(0), 0.0).mean().unwrap_or(0.0);
        self.scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / self.scale
    }

    /// Activations of every layer; element 0 is the input.
    pub fn forward(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.clone()];
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.w) + &layer.b;
            if is_tanh(l) {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared reconstruction error on normalized input and its gradient.
    pub fn loss_and_grad(&self, x: &Array2<f64>) -> (f64, Vec<Dense>) {
        let acts = self.forward(x);
        let out = acts.last().unwrap();
        let diff = out - x;
        let count = diff.len() as f64;
        let loss = diff.mapv(|d| d * d).sum() / count;
        let mut delta = diff * (2.0 / count);
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            if is_tanh(l) {
                delta = delta * acts[l + 1].mapv(|a| 1.0 - a * a);
            }
            grads.push(Dense {
                w: acts[l].t().dot(&delta),
                b: delta.sum_axis(Axis(0)),
            });
            if l > 0 {
                delta = delta.dot(&self.layers[l].w.t());
            }
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn loss(&self, x: &Array2<f64>) -> f64 {
        let out = self.forward(x).pop().unwrap();
        (out - x).mapv(|d| d * d).mean().unwrap_or(0.0)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|d| d.w.iter().chain(d.b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_flat(&mut self, theta: &[f64]) {
        let mut it = theta.iter();
        for d in &mut self.layers {
            for v in d.w.iter_mut().chain(d.b.iter_mut()) {
                *v = *it.next().expect("parameter vector length");
            }
        }
    }

    /// Fit normalization and weights on `pairs`; deterministic given the config seed.
    pub fn train(pairs: &[CollisionTrajectoryPair], config: EncoderConfig) -> Result<(Self, EncoderReport), AnalysisError> {
        if pairs.len() < MIN_PAIRS {
            return Err(AnalysisError::InsufficientData {
                needed: MIN_PAIRS,
                got: pairs.len(),
            });
        }
        let mut enc = TrajectoryEncoder::new(config);
        let raw = pair_matrix(pairs);
        enc.fit_normalization(&raw);
        let x = enc.normalize(&raw);
        let baseline = x.var_axis(Axis(0), 0.0).mean().unwrap_or(0.0);
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let mut m: Vec<f64> = vec![0.0; enc.flatten().len()];
        let mut v = m.clone();
        for t in 1..=enc.config.epochs {
            let (_, grads) = enc.loss_and_grad(&x);
            let g: Vec<f64> = grads
                .iter()
                .flat_map(|d| d.w.iter().chain(d.b.iter()).copied().collect::<Vec<_>>())
                .collect();
            let mut theta = enc.flatten();
            let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                theta[i] -= enc.config.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            enc.set_flat(&theta);
        }
        let report = EncoderReport {
            epochs: enc.config.epochs,
            mse: enc.loss(&x),
            baseline,
        };
        if !report.below_baseline() {
            log::warn!(
                "trajectory encoder reconstruction {:.4} above half the input variance {:.4}",
                report.mse,
                report.baseline
            );
        }
        Ok((enc, report))
    }

    /// 16-value latent of each pair.
    pub fn encode(&self, pairs: &[CollisionTrajectoryPair]) -> Array2<f64> {
        let x = self.normalize(&pair_matrix(pairs));
        self.forward(&x).swap_remove(2)
    }

    pub fn reconstruction_error(&self, pairs: &[CollisionTrajectoryPair]) -> f64 {
        self.loss(&self.normalize(&pair_matrix(pairs)))
    }
}
