//! Noisy gradient descent on `x^T x`: the stochastic-optimization analogue
//! of the outer loop, with a closed-form stationary level.

use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub const DEFAULT_DIM: usize = 50;
pub const INITIAL_NORM: f64 = 5.0;
pub const DIVERGENCE_NORM: f64 = 1e6;

pub fn default_noise_std() -> f64 {
    3.0 / (DEFAULT_DIM as f64).sqrt()
}

/// Piecewise-constant step size: `(first_step, lr)` pairs, starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule(Vec<(usize, f64)>);

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule(vec![(0, lr)])
    }

    pub fn piecewise(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.first().map(|p| p.0) != Some(0) {
            return Err(Error::Config("schedule must start at step 0".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("schedule steps must be strictly increasing".into()));
        }
        if points.iter().any(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
            return Err(Error::Config("step sizes must be positive and finite".into()));
        }
        Ok(LrSchedule(points))
    }

    /// Parses `"0:0.2,5000:0.02"` or a bare `"0.1"`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse step-size schedule {text:?}"));
        if !text.contains(':') {
            let lr: f64 = text.trim().parse().map_err(|_| bad())?;
            return Self::piecewise(vec![(0, lr)]);
        }
        let points = text
            .split(',')
            .map(|part| {
                let (s, lr) = part.split_once(':').ok_or_else(bad)?;
                Ok((s.trim().parse().map_err(|_| bad())?, lr.trim().parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::piecewise(points)
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.0
            .iter()
            .take_while(|(s, _)| *s <= step)
            .last()
            .map(|p| p.1)
            .unwrap_or(self.0[0].1)
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadConfig {
    pub dim: usize,
    pub noise_std: f64,
    pub schedule: LrSchedule,
    pub total_steps: usize,
    pub seed: u64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            dim: DEFAULT_DIM,
            noise_std: default_noise_std(),
            schedule: LrSchedule::constant(0.1),
            total_steps: 10_000,
            seed: 0,
        }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    /// Step sizes outside (0, 1) do not contract the iterate.
    pub fn warnings(&self) -> Vec<String> {
        self.schedule
            .points()
            .iter()
            .filter(|(_, lr)| *lr >= 1.0)
            .map(|(s, lr)| format!("step size {lr} from step {s} is outside (0, 1); iterates will not contract"))
            .collect()
    }
}

/// `-||x_t||` for `t = 0..=total_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTrace {
    pub neg_dist: Vec<f64>,
}

impl QuadTrace {
    /// Mean of `||x_t||^2` over `t` in `range`.
    pub fn mean_sq_norm(&self, range: std::ops::Range<usize>) -> f64 {
        let n = range.len() as f64;
        self.neg_dist[range].iter().map(|d| d * d).sum::<f64>() / n
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `x_{t+1} = x_t - lr_t (2 x_t + noise_t)` with i.i.d. Gaussian noise per
/// coordinate. The start point is a Gaussian direction scaled to norm 5; the
/// noise stream depends only on the seed, so runs with different step sizes
/// and the same seed see identical noise.
pub fn run_quad(cfg: &QuadConfig) -> Result<QuadTrace> {
    cfg.validate()?;
    let mut init = rng::stream(cfg.seed, &[tag::QUAD, 0]);
    let mut x: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut init)).collect();
    let scale = INITIAL_NORM / norm(&x);
    x.iter_mut().for_each(|v| *v *= scale);

    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut rng = rng::stream(cfg.seed, &[tag::QUAD, 1]);
    let mut neg_dist = Vec::with_capacity(cfg.total_steps + 1);
    neg_dist.push(-norm(&x));
    for t in 0..cfg.total_steps {
        let lr = cfg.schedule.lr_at(t);
        for v in x.iter_mut() {
            let xi = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *v -= lr * (2.0 * *v + xi);
        }
        let d = norm(&x);
        if !(d <= DIVERGENCE_NORM) {
            return Err(Error::Divergence(format!(
                "||x|| = {d:e} at step {} with step size {lr}",
                t + 1
            )));
        }
        neg_dist.push(-d);
    }
    Ok(QuadTrace { neg_dist })
}

/// Stationary `E||x||^2 = d * lr^2 sigma^2 / (1 - (1 - 2 lr)^2)`.
pub fn stationary_second_moment(lr: f64, noise_std: f64, dim: usize) -> Result<f64> {
    if !(lr > 0.0 && lr < 1.0) {
        return Err(Error::InvalidArgument(format!("step size must lie in (0, 1), got {lr}")));
    }
    let contraction = (1.0 - 2.0 * lr).powi(2);
    Ok(dim as f64 * lr * lr * noise_std * noise_std / (1.0 - contraction))
}
