//! Shuffled noisy SGD with l1 clipping and per-block Laplace noise, its
//! privacy accounting, and a planner that picks `epsilon0` for a budget.
//!
//! Each update averages the clipped block gradients by `1/m` where `m` is
//! the number of blocks, not the block size. The per-block sensitivity
//! `2 * clip / m` that sets the Laplace scale relies on exactly this
//! normalization.

use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::GdpParam;
use crate::dist::{laplace_sample, seeded_stream};
use crate::error::{domain, Result};
use crate::renyi::{check_order, RdpPoint};

const PERMUTATION_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Step size.
    pub eta: f64,
    /// Passes over the data, `T`.
    pub epochs: usize,
    /// Number of blocks, `m >= 2`.
    pub blocks: usize,
    /// l1 clipping bound on per-example gradients.
    pub clip: f64,
    /// Local budget per block release; `+inf` disables the noise.
    pub epsilon0: f64,
    pub dim: usize,
    pub seed: u64,
}

impl SgdConfig {
    fn validate(&self) -> Result<()> {
        if self.blocks < 2 {
            return domain(format!("need at least 2 blocks, got {}", self.blocks));
        }
        if self.epsilon0.is_nan() || self.epsilon0 <= 0.0 {
            return domain(format!("epsilon0 must be positive, got {}", self.epsilon0));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return domain(format!("step size must be positive, got {}", self.eta));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return domain(format!("clipping bound must be positive, got {}", self.clip));
        }
        if self.epochs == 0 || self.dim == 0 {
            return domain("epochs and dim must be positive");
        }
        Ok(())
    }

    /// Laplace scale `2 clip / (epsilon0 m)`; zero when `epsilon0 = +inf`.
    pub fn noise_scale(&self) -> f64 {
        2.0 * self.clip / (self.epsilon0 * self.blocks as f64)
    }
}

/// A labelled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: f64,
}

/// A differentiable per-example loss.
pub trait Loss {
    fn value(&self, theta: &[f64], ex: &Example) -> f64;
    fn gradient(&self, theta: &[f64], ex: &Example) -> Vec<f64>;
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + exp(-y <theta, x>))` with labels in `{-1, +1}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticLoss;

impl Loss for LogisticLoss {
    fn value(&self, theta: &[f64], ex: &Example) -> f64 {
        let m = -ex.label * dot(theta, &ex.features);
        if m > 0.0 {
            m + (-m).exp().ln_1p()
        } else {
            m.exp().ln_1p()
        }
    }

    fn gradient(&self, theta: &[f64], ex: &Example) -> Vec<f64> {
        let m = ex.label * dot(theta, &ex.features);
        let s = -ex.label / (1.0 + m.exp());
        ex.features.iter().map(|x| s * x).collect()
    }
}

/// `(<theta, x> - y)^2 / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredLoss;

impl Loss for SquaredLoss {
    fn value(&self, theta: &[f64], ex: &Example) -> f64 {
        0.5 * (dot(theta, &ex.features) - ex.label).powi(2)
    }

    fn gradient(&self, theta: &[f64], ex: &Example) -> Vec<f64> {
        let r = dot(theta, &ex.features) - ex.label;
        ex.features.iter().map(|x| r * x).collect()
    }
}

/// `g / max(1, ||g||_1 / clip)`.
pub fn l1_clip(g: &[f64], clip: f64) -> Vec<f64> {
    let norm: f64 = g.iter().map(|x| x.abs()).sum();
    let scale = (norm / clip).max(1.0);
    if scale == 1.0 {
        return g.to_vec();
    }
    g.iter().map(|x| x / scale).collect()
}

/// Two Gaussian blobs with unit covariance centered at `+-separation/2`
/// along the all-ones direction, labels `+-1`, alternating.
pub fn two_blobs(n: usize, dim: usize, separation: f64, seed: u64) -> Vec<Example> {
    let mut rng = seeded_stream(seed, 0);
    let shift = 0.5 * separation / (dim as f64).sqrt();
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            let features = (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + label * shift
                })
                .collect();
            Example { features, label }
        })
        .collect()
}

/// Privacy of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdPrivacy {
    /// `(lambda, 2 T e^eps0 lambda / (m - 1))`.
    pub rdp: RdpPoint,
    /// `2 sqrt(T) e^(eps0/2) / sqrt(m - 1)`.
    pub gdp: GdpParam,
}

/// Asymptotic privacy of `epochs` passes with `blocks` blocks.
pub fn sgd_privacy(epsilon0: f64, epochs: usize, blocks: usize, lambda: f64) -> Result<SgdPrivacy> {
    check_order(lambda)?;
    if blocks < 2 {
        return domain(format!("need at least 2 blocks, got {blocks}"));
    }
    let t = epochs as f64;
    let m1 = (blocks - 1) as f64;
    let mut rdp = RdpPoint {
        lambda,
        epsilon: 2.0 * t * epsilon0.exp() * lambda / m1,
        error_bound: 0.0,
        flags: Vec::new(),
    };
    rdp.flags.push(crate::renyi::Flag::Asymptotic);
    Ok(SgdPrivacy {
        rdp,
        gdp: GdpParam {
            mu: 2.0 * t.sqrt() * (0.5 * epsilon0).exp() / m1.sqrt(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdReport {
    pub final_params: Vec<f64>,
    /// `(epoch, mean training loss)` after each epoch, epochs counted from 1.
    pub loss_trace: Vec<(usize, f64)>,
    /// Mean training loss at the starting point.
    pub initial_loss: f64,
    pub privacy: SgdPrivacy,
    pub config: SgdConfig,
}

impl SgdReport {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn write_loss_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,loss")?;
        for (epoch, loss) in &self.loss_trace {
            writeln!(out, "{epoch},{loss}")?;
        }
        Ok(())
    }
}

/// The block visit order of every epoch, as drawn by [`run_shuffled_sgd`]
/// under `seed`.
pub fn block_orders(blocks: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seeded_stream(seed, PERMUTATION_STREAM);
    (0..epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..blocks).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

fn mean_loss<L: Loss + ?Sized>(loss: &L, theta: &[f64], data: &[Example]) -> f64 {
    data.iter().map(|ex| loss.value(theta, ex)).sum::<f64>() / data.len() as f64
}

/// Shuffled noisy SGD from `theta = 0`.
pub fn run_shuffled_sgd<L: Loss + ?Sized>(
    data: &[Example],
    loss: &L,
    cfg: &SgdConfig,
    lambda: f64,
) -> Result<SgdReport> {
    run_shuffled_sgd_observed(data, loss, cfg, lambda, |_| {})
}

/// [`run_shuffled_sgd`], calling `observe` on every clipped per-example gradient.
pub fn run_shuffled_sgd_observed<L, F>(
    data: &[Example],
    loss: &L,
    cfg: &SgdConfig,
    lambda: f64,
    mut observe: F,
) -> Result<SgdReport>
where
    L: Loss + ?Sized,
    F: FnMut(&[f64]),
{
    cfg.validate()?;
    let privacy = sgd_privacy(cfg.epsilon0, cfg.epochs, cfg.blocks, lambda)?;
    if data.len() < cfg.blocks {
        return domain(format!("{} examples cannot fill {} blocks", data.len(), cfg.blocks));
    }
    if let Some(ex) = data.iter().find(|ex| ex.features.len() != cfg.dim) {
        return domain(format!("example has {} features, expected {}", ex.features.len(), cfg.dim));
    }
    let block_size = data.len() / cfg.blocks;
    let used = block_size * cfg.blocks;
    if used < data.len() {
        log::warn!(
            "dropping {} examples so {} blocks have equal size {block_size}",
            data.len() - used,
            cfg.blocks
        );
    }
    let data = &data[..used];

    let m = cfg.blocks as f64;
    let scale = cfg.noise_scale();
    let orders = block_orders(cfg.blocks, cfg.epochs, cfg.seed);
    let mut noise_rng = seeded_stream(cfg.seed, NOISE_STREAM);
    let mut theta = vec![0.0; cfg.dim];
    let initial_loss = mean_loss(loss, &theta, data);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for (epoch, order) in orders.iter().enumerate() {
        for &block in order {
            let noise = if scale > 0.0 {
                laplace_sample(scale, cfg.dim, &mut noise_rng)?
            } else {
                vec![0.0; cfg.dim]
            };
            let mut sum = vec![0.0; cfg.dim];
            for ex in &data[block * block_size..(block + 1) * block_size] {
                let g = l1_clip(&loss.gradient(&theta, ex), cfg.clip);
                observe(&g);
                for (s, gi) in sum.iter_mut().zip(&g) {
                    *s += gi;
                }
            }
            for ((t, s), b) in theta.iter_mut().zip(&sum).zip(&noise) {
                *t -= cfg.eta * (s / m + b);
            }
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return domain(format!("parameters diverged in epoch {}", epoch + 1));
        }
        loss_trace.push((epoch + 1, mean_loss(loss, &theta, data)));
    }

    Ok(SgdReport {
        final_params: theta,
        loss_trace,
        initial_loss,
        privacy,
        config: *cfg,
    })
}

/// Budget handed to the planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanTarget {
    /// `(lambda, epsilon)`-RDP.
    Rdp { lambda: f64, epsilon: f64 },
    /// `mu`-GDP.
    Gdp { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PlanOutcome {
    Feasible { epsilon0: f64 },
    /// No positive `epsilon0` meets the target; `minimal` is the value the
    /// accountant reports as `epsilon0 -> 0+` (same units as the target).
    Infeasible { minimal: f64 },
}

/// Largest `epsilon0` whose accounted privacy equals the target.
pub fn plan_epsilon0(target: &PlanTarget, epochs: usize, blocks: usize) -> Result<PlanOutcome> {
    if blocks < 2 {
        return domain(format!("need at least 2 blocks, got {blocks}"));
    }
    if epochs == 0 {
        return domain("epochs must be positive");
    }
    let t = epochs as f64;
    let m1 = (blocks - 1) as f64;
    let (arg, minimal) = match *target {
        PlanTarget::Rdp { lambda, epsilon } => {
            check_order(lambda)?;
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return domain(format!("target epsilon must be positive, got {epsilon}"));
            }
            (epsilon * m1 / (2.0 * t * lambda), 2.0 * t * lambda / m1)
        }
        PlanTarget::Gdp { mu } => {
            if !(mu > 0.0 && mu.is_finite()) {
                return domain(format!("target mu must be positive, got {mu}"));
            }
            (mu * m1.sqrt() / (2.0 * t.sqrt()), 2.0 * t.sqrt() / m1.sqrt())
        }
    };
    if arg <= 1.0 {
        return Ok(PlanOutcome::Infeasible { minimal });
    }
    let epsilon0 = match target {
        PlanTarget::Rdp { .. } => arg.ln(),
        PlanTarget::Gdp { .. } => 2.0 * arg.ln(),
    };
    Ok(PlanOutcome::Feasible { epsilon0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    fn cfg(epsilon0: f64) -> SgdConfig {
        SgdConfig {
            eta: 0.5,
            epochs: 5,
            blocks: 10,
            clip: 1.0,
            epsilon0,
            dim: 3,
            seed: 42,
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(l1_clip(&[0.0, 0.0, 0.0], 1.0), vec![0.0; 3]);
        let c = l1_clip(&[3.0, -4.0], 1.0);
        assert_relative_eq!(c[0], 3.0 / 7.0, max_relative = 1e-15);
        assert_relative_eq!(c[1], -4.0 / 7.0, max_relative = 1e-15);
        assert!((c[0].abs() + c[1].abs() - 1.0).abs() < 1e-15);
        assert_eq!(l1_clip(&[0.5, -0.5], 1.0), vec![0.5, -0.5]);
    }

    #[test]
    fn privacy_formula() {
        let p = sgd_privacy(1.0, 50, 100, 2.0).unwrap();
        assert_eq!(p.rdp.epsilon, 200.0 * E / 99.0);
        assert!((p.rdp.epsilon - 5.4915).abs() < 1e-4);
        let half = 0.5 * p.gdp.mu * p.gdp.mu * 2.0;
        assert_relative_eq!(half, p.rdp.epsilon, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        let data = two_blobs(100, 3, 2.0, 1);
        let mut c = cfg(1.0);
        c.blocks = 1;
        assert!(run_shuffled_sgd(&data, &LogisticLoss, &c, 2.0).is_err());
        assert!(run_shuffled_sgd(&data, &LogisticLoss, &cfg(0.0), 2.0).is_err());
        assert!(run_shuffled_sgd(&data, &LogisticLoss, &cfg(-1.0), 2.0).is_err());
        let mut c = cfg(1.0);
        c.dim = 4;
        assert!(run_shuffled_sgd(&data, &LogisticLoss, &c, 2.0).is_err());
    }

    #[test]
    fn noise_free_training_descends() {
        let data = two_blobs(400, 3, 4.0, 7);
        let r = run_shuffled_sgd(&data, &LogisticLoss, &cfg(f64::INFINITY), 2.0).unwrap();
        assert!(r.loss_trace.last().unwrap().1 < r.initial_loss);
        assert_eq!(r.loss_trace.len(), 5);
    }

    #[test]
    fn seeded_runs_repeat() {
        let data = two_blobs(200, 3, 2.0, 3);
        let a = run_shuffled_sgd(&data, &LogisticLoss, &cfg(1.0), 2.0).unwrap();
        let b = run_shuffled_sgd(&data, &LogisticLoss, &cfg(1.0), 2.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let mut other = cfg(1.0);
        other.seed = 43;
        let c = run_shuffled_sgd(&data, &LogisticLoss, &other, 2.0).unwrap();
        assert_ne!(a.final_params, c.final_params);
        assert_eq!(a.privacy, c.privacy);
    }

    #[test]
    fn uneven_data_is_truncated() {
        let data = two_blobs(105, 3, 2.0, 3);
        let r = run_shuffled_sgd(&data, &SquaredLoss, &cfg(2.0), 2.0).unwrap();
        assert_eq!(r.final_params.len(), 3);
    }

    #[test]
    fn loss_csv_layout() {
        let data = two_blobs(100, 3, 2.0, 3);
        let r = run_shuffled_sgd(&data, &LogisticLoss, &cfg(1.0), 2.0).unwrap();
        let mut buf = Vec::new();
        r.write_loss_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,loss\n1,"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn planner_examples() {
        let out = plan_epsilon0(&PlanTarget::Rdp { lambda: 2.0, epsilon: 1.0 }, 10, 1000).unwrap();
        let PlanOutcome::Feasible { epsilon0 } = out else { panic!("{out:?}") };
        assert_relative_eq!(epsilon0, 24.975f64.ln(), max_relative = 1e-14);
        assert!((epsilon0 - 3.2179).abs() < 1e-4);

        let out = plan_epsilon0(&PlanTarget::Rdp { lambda: 3.0, epsilon: 0.024 }, 50, 100).unwrap();
        let PlanOutcome::Infeasible { minimal } = out else { panic!("{out:?}") };
        assert_relative_eq!(minimal, 300.0 / 99.0, max_relative = 1e-14);

        let out = plan_epsilon0(&PlanTarget::Gdp { mu: 1.0 }, 4, 101).unwrap();
        let PlanOutcome::Feasible { epsilon0 } = out else { panic!("{out:?}") };
        assert_relative_eq!(epsilon0, 2.0 * 2.5f64.ln(), max_relative = 1e-14);
        assert!(plan_epsilon0(&PlanTarget::Gdp { mu: 0.0 }, 4, 101).is_err());
    }

    #[test]
    fn planner_round_trip() {
        let data = two_blobs(100, 3, 2.0, 3);
        for (lambda, slope) in [(2.0, 3.0), (8.0, 8.0)] {
            let target = PlanTarget::Rdp { lambda, epsilon: slope * lambda };
            let PlanOutcome::Feasible { epsilon0 } = plan_epsilon0(&target, 5, 10).unwrap() else {
                panic!()
            };
            let mut c = cfg(epsilon0);
            c.epochs = 5;
            let r = run_shuffled_sgd(&data, &LogisticLoss, &c, lambda).unwrap();
            assert!((r.privacy.rdp.epsilon - slope * lambda).abs() < 1e-12);
        }
    }
}
