use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::HeadGrad;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-state action distributions for a batch, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum DistParams {
    Categorical {
        n_actions: usize,
        logits: Vec<f64>,
    },
    /// `log_std` is already clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    Gaussian {
        dim: usize,
        mean: Vec<f64>,
        log_std: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_ref(&self) -> ActionRef<'_> {
        match self {
            Action::Discrete(a) => ActionRef::Discrete(*a),
            Action::Continuous(v) => ActionRef::Continuous(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionRef<'a> {
    Discrete(usize),
    Continuous(&'a [f64]),
}

/// A batch of actions matching a [`DistParams`] batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Actions {
    Discrete(Vec<usize>),
    Continuous { dim: usize, values: Vec<f64> },
}

impl Actions {
    pub fn len(&self) -> usize {
        match self {
            Actions::Discrete(a) => a.len(),
            Actions::Continuous { dim, values } => values.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> ActionRef<'_> {
        match self {
            Actions::Discrete(a) => ActionRef::Discrete(a[i]),
            Actions::Continuous { dim, values } => {
                ActionRef::Continuous(&values[i * dim..(i + 1) * dim])
            }
        }
    }

    pub fn select(&self, idx: &[usize]) -> Actions {
        match self {
            Actions::Discrete(a) => Actions::Discrete(idx.iter().map(|&i| a[i]).collect()),
            Actions::Continuous { dim, values } => Actions::Continuous {
                dim: *dim,
                values: idx
                    .iter()
                    .flat_map(|&i| values[i * dim..(i + 1) * dim].iter().copied())
                    .collect(),
            },
        }
    }

    pub fn from_actions(actions: &[Action]) -> Result<Actions> {
        match actions.first() {
            None => Ok(Actions::Discrete(Vec::new())),
            Some(Action::Discrete(_)) => actions
                .iter()
                .map(|a| match a {
                    Action::Discrete(i) => Ok(*i),
                    _ => Err(Error::Shape("mixed action kinds".into())),
                })
                .collect::<Result<Vec<_>>>()
                .map(Actions::Discrete),
            Some(Action::Continuous(first)) => {
                let dim = first.len();
                let mut values = Vec::with_capacity(dim * actions.len());
                for a in actions {
                    match a {
                        Action::Continuous(v) if v.len() == dim => values.extend(v),
                        _ => return Err(Error::Shape("mixed action kinds".into())),
                    }
                }
                Ok(Actions::Continuous { dim, values })
            }
        }
    }
}

#[inline]
fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

impl DistParams {
    pub fn batch(&self) -> usize {
        match self {
            DistParams::Categorical { n_actions, logits } => logits.len() / n_actions,
            DistParams::Gaussian { dim, mean, .. } => mean.len() / dim,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            DistParams::Categorical { logits, .. } => logits.iter().all(|v| v.is_finite()),
            DistParams::Gaussian { mean, log_std, .. } => {
                mean.iter().chain(log_std).all(|v| v.is_finite())
            }
        }
    }

    pub fn select(&self, idx: &[usize]) -> DistParams {
        let gather = |v: &[f64], w: usize| -> Vec<f64> {
            idx.iter()
                .flat_map(|&i| v[i * w..(i + 1) * w].iter().copied())
                .collect()
        };
        match self {
            DistParams::Categorical { n_actions, logits } => DistParams::Categorical {
                n_actions: *n_actions,
                logits: gather(logits, *n_actions),
            },
            DistParams::Gaussian { dim, mean, log_std } => DistParams::Gaussian {
                dim: *dim,
                mean: gather(mean, *dim),
                log_std: gather(log_std, *dim),
            },
        }
    }

    /// Class probabilities of row `i` of a categorical batch.
    pub fn probs(&self, i: usize) -> Option<Vec<f64>> {
        match self {
            DistParams::Categorical { n_actions, logits } => {
                let row = &logits[i * n_actions..(i + 1) * n_actions];
                let lse = log_sum_exp(row);
                Some(row.iter().map(|z| (z - lse).exp()).collect())
            }
            DistParams::Gaussian { .. } => None,
        }
    }

    pub fn sample(&self, i: usize, rng: &mut impl Rng) -> Action {
        match self {
            DistParams::Categorical { .. } => {
                let p = self.probs(i).expect("categorical");
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        return Action::Discrete(k);
                    }
                }
                Action::Discrete(p.len() - 1)
            }
            DistParams::Gaussian { dim, mean, log_std } => Action::Continuous(
                (0..*dim)
                    .map(|d| {
                        let z: f64 = StandardNormal.sample(rng);
                        mean[i * dim + d] + log_std[i * dim + d].exp() * z
                    })
                    .collect(),
            ),
        }
    }

    /// Most likely action of row `i`.
    pub fn mode(&self, i: usize) -> Action {
        match self {
            DistParams::Categorical { n_actions, logits } => {
                let row = &logits[i * n_actions..(i + 1) * n_actions];
                let best = (0..*n_actions)
                    .fold(0, |b, k| if row[k] > row[b] { k } else { b });
                Action::Discrete(best)
            }
            DistParams::Gaussian { dim, mean, .. } => {
                Action::Continuous(mean[i * dim..(i + 1) * dim].to_vec())
            }
        }
    }
}

fn check_actions(dist: &DistParams, actions: &Actions) -> Result<()> {
    if dist.batch() != actions.len() {
        return Err(Error::Shape(format!(
            "{} distributions but {} actions",
            dist.batch(),
            actions.len()
        )));
    }
    match (dist, actions) {
        (DistParams::Categorical { n_actions, .. }, Actions::Discrete(a)) => {
            match a.iter().find(|&&i| i >= *n_actions) {
                Some(bad) => Err(Error::InvalidArgument(format!(
                    "action index {bad} out of range for {n_actions} actions"
                ))),
                None => Ok(()),
            }
        }
        (DistParams::Gaussian { dim, .. }, Actions::Continuous { dim: adim, .. }) if dim == adim => {
            Ok(())
        }
        _ => Err(Error::Shape("action type does not match head".into())),
    }
}

/// Log-density of each action under its row's distribution.
pub fn log_prob(dist: &DistParams, actions: &Actions) -> Result<Vec<f64>> {
    check_actions(dist, actions)?;
    Ok(match (dist, actions) {
        (DistParams::Categorical { n_actions, logits }, Actions::Discrete(a)) => logits
            .chunks_exact(*n_actions)
            .zip(a)
            .map(|(row, &k)| row[k] - log_sum_exp(row))
            .collect(),
        (DistParams::Gaussian { dim, mean, log_std }, Actions::Continuous { values, .. }) => mean
            .chunks_exact(*dim)
            .zip(log_std.chunks_exact(*dim))
            .zip(values.chunks_exact(*dim))
            .map(|((mu, ls), x)| {
                (0..*dim)
                    .map(|d| {
                        let z = (x[d] - mu[d]) * (-ls[d]).exp();
                        -0.5 * z * z - ls[d] - 0.5 * LN_2PI
                    })
                    .sum()
            })
            .collect(),
        _ => unreachable!("checked above"),
    })
}

pub fn entropy(dist: &DistParams) -> Vec<f64> {
    match dist {
        DistParams::Categorical { n_actions, logits } => logits
            .chunks_exact(*n_actions)
            .map(|row| {
                let lse = log_sum_exp(row);
                -row.iter()
                    .map(|z| {
                        let lp = z - lse;
                        lp.exp() * lp
                    })
                    .sum::<f64>()
            })
            .collect(),
        DistParams::Gaussian { dim, log_std, .. } => log_std
            .chunks_exact(*dim)
            .map(|ls| ls.iter().sum::<f64>() + 0.5 * *dim as f64 * (1.0 + LN_2PI))
            .collect(),
    }
}

/// Closed-form KL(p || q) per row.
pub fn kl(p: &DistParams, q: &DistParams) -> Result<Vec<f64>> {
    if p.batch() != q.batch() {
        return Err(Error::Shape("kl: batch sizes differ".into()));
    }
    match (p, q) {
        (
            DistParams::Categorical { n_actions: n, logits: lp },
            DistParams::Categorical { n_actions: m, logits: lq },
        ) if n == m => Ok(lp
            .chunks_exact(*n)
            .zip(lq.chunks_exact(*n))
            .map(|(a, b)| {
                let (la, lb) = (log_sum_exp(a), log_sum_exp(b));
                let v: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(za, zb)| {
                        let (pa, pb) = (za - la, zb - lb);
                        pa.exp() * (pa - pb)
                    })
                    .sum();
                v.max(0.0)
            })
            .collect()),
        (
            DistParams::Gaussian { dim: n, mean: mp, log_std: sp },
            DistParams::Gaussian { dim: m, mean: mq, log_std: sq },
        ) if n == m => Ok(mp
            .chunks_exact(*n)
            .zip(sp.chunks_exact(*n))
            .zip(mq.chunks_exact(*n).zip(sq.chunks_exact(*n)))
            .map(|((mu_p, ls_p), (mu_q, ls_q))| {
                let v: f64 = (0..*n)
                    .map(|d| {
                        let var_ratio = (2.0 * (ls_p[d] - ls_q[d])).exp();
                        let dm = (mu_p[d] - mu_q[d]) * (-ls_q[d]).exp();
                        ls_q[d] - ls_p[d] + 0.5 * (var_ratio + dm * dm) - 0.5
                    })
                    .sum();
                v.max(0.0)
            })
            .collect()),
        _ => Err(Error::Shape("kl: head types differ".into())),
    }
}

/// Adds `sum_i weights[i] * d log_prob_i / d head_i` into `grad`.
pub(crate) fn accumulate_log_prob_grad(
    dist: &DistParams,
    actions: &Actions,
    weights: &[f64],
    grad: &mut HeadGrad,
) -> Result<()> {
    check_actions(dist, actions)?;
    match (dist, actions) {
        (DistParams::Categorical { n_actions, logits }, Actions::Discrete(a)) => {
            let n = *n_actions;
            for (i, row) in logits.chunks_exact(n).enumerate() {
                let w = weights[i];
                if w == 0.0 {
                    continue;
                }
                let lse = log_sum_exp(row);
                let out = &mut grad.d_policy[i * n..(i + 1) * n];
                for k in 0..n {
                    let p = (row[k] - lse).exp();
                    let onehot = if k == a[i] { 1.0 } else { 0.0 };
                    out[k] += w * (onehot - p);
                }
            }
        }
        (DistParams::Gaussian { dim, mean, log_std }, Actions::Continuous { values, .. }) => {
            let n = *dim;
            for i in 0..dist.batch() {
                let w = weights[i];
                if w == 0.0 {
                    continue;
                }
                for d in 0..n {
                    let j = i * n + d;
                    let inv_var = (-2.0 * log_std[j]).exp();
                    let diff = values[j] - mean[j];
                    grad.d_policy[j] += w * diff * inv_var;
                    grad.d_log_std[j] += w * (diff * diff * inv_var - 1.0);
                }
            }
        }
        _ => unreachable!("checked above"),
    }
    Ok(())
}

/// Adds `sum_i weights[i] * d entropy_i / d head_i` into `grad`.
pub(crate) fn accumulate_entropy_grad(dist: &DistParams, weights: &[f64], grad: &mut HeadGrad) {
    match dist {
        DistParams::Categorical { n_actions, logits } => {
            let n = *n_actions;
            for (i, row) in logits.chunks_exact(n).enumerate() {
                let w = weights[i];
                if w == 0.0 {
                    continue;
                }
                let lse = log_sum_exp(row);
                let h: f64 = -row
                    .iter()
                    .map(|z| (z - lse).exp() * (z - lse))
                    .sum::<f64>();
                for k in 0..n {
                    let lp = row[k] - lse;
                    grad.d_policy[i * n + k] += w * (-lp.exp() * (lp + h));
                }
            }
        }
        DistParams::Gaussian { dim, .. } => {
            for i in 0..dist.batch() {
                for d in 0..*dim {
                    grad.d_log_std[i * dim + d] += weights[i];
                }
            }
        }
    }
}
