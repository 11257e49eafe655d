#![allow(dead_code)]

use plab::nn::{self, init_params, Activation, Actions, Head, MlpSpec, ParamTree};
use plab::ppo::Minibatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_spec(head: Head) -> MlpSpec {
    MlpSpec {
        input_dim: 4,
        hidden_widths: vec![8],
        activation: Activation::Tanh,
        head,
    }
}

pub fn perturbed(p: &ParamTree, scale: f64, r: &mut impl Rng) -> ParamTree {
    let mut q = p.clone();
    for v in q.values_mut() {
        *v += scale * (r.gen::<f64>() - 0.5);
    }
    q
}

/// Random minibatch whose behavior log-probs come from `behavior`.
pub fn random_minibatch(behavior: &ParamTree, n: usize, r: &mut impl Rng) -> Minibatch {
    let d_in = behavior.spec().input_dim;
    let obs: Vec<f64> = (0..n * d_in).map(|_| r.gen_range(-1.0..1.0)).collect();
    let actions = match behavior.spec().head {
        Head::Categorical { n_actions } => Actions::Discrete((0..n).map(|_| r.gen_range(0..n_actions)).collect()),
        Head::DiagonalGaussian { action_dim } => Actions::Continuous {
            dim: action_dim,
            values: (0..n * action_dim).map(|_| r.gen_range(-1.5..1.5)).collect(),
        },
    };
    let dist = nn::policy(behavior, &obs).unwrap();
    let behavior_log_probs = nn::log_prob(&dist, &actions).unwrap();
    Minibatch {
        obs,
        actions,
        advantages: (0..n).map(|_| r.gen_range(-2.0..2.0)).collect(),
        targets: (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
        old_values: (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
        behavior_log_probs,
    }
}

pub fn params(head: Head, seed: u64) -> ParamTree {
    init_params(&small_spec(head), seed).unwrap()
}

pub fn log_probs(p: &ParamTree, mb: &Minibatch) -> Vec<f64> {
    nn::log_prob(&nn::policy(p, &mb.obs).unwrap(), &mb.actions).unwrap()
}
