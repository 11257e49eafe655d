use super::dist::{DistParams, LOG_STD_MAX, LOG_STD_MIN};
use super::params::{DenseSlot, GradTree, ParamTree};
use super::spec::{Activation, Head};
use crate::error::{Error, Result};

/// Network outputs for a batch: the policy distribution and the critic value.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub dist: DistParams,
    pub values: Vec<f64>,
}

/// Gradient of a scalar loss with respect to the head outputs of a batch.
///
/// `d_policy` is per-row with respect to logits (categorical) or means
/// (Gaussian); `d_log_std` is per-row with respect to the clamped log-std and
/// is empty for categorical heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub d_policy: Vec<f64>,
    pub d_log_std: Vec<f64>,
    pub d_values: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros(head: Head, batch: usize) -> Self {
        let (out, ls) = match head {
            Head::Categorical { n_actions } => (n_actions, 0),
            Head::DiagonalGaussian { action_dim } => (action_dim, action_dim),
        };
        HeadGrad {
            d_policy: vec![0.0; batch * out],
            d_log_std: vec![0.0; batch * ls],
            d_values: vec![0.0; batch],
        }
    }
}

/// A scalar loss built from head outputs, with its exact gradient.
pub trait HeadLoss {
    fn evaluate(&self, out: &HeadOutputs) -> Result<(f64, HeadGrad)>;
}

impl<F> HeadLoss for F
where
    F: Fn(&HeadOutputs) -> Result<(f64, HeadGrad)>,
{
    fn evaluate(&self, out: &HeadOutputs) -> Result<(f64, HeadGrad)> {
        self(out)
    }
}

fn dense_forward(
    w: &[f64],
    b: &[f64],
    slot: &DenseSlot,
    input: &[f64],
    batch: usize,
    activation: Option<Activation>,
) -> Vec<f64> {
    let (fi, fo) = (slot.fan_in, slot.fan_out);
    assert!(w.len() == fi * fo && input.len() == batch * fi && b.len() == fo);
    let mut out: Vec<f64> = b.iter().copied().cycle().take(batch * fo).collect();
    // out (batch x fo) += input (batch x fi) * w^T (fi x fo)
    unsafe {
        matrixmultiply::dgemm(
            batch, fi, fo, 1.0,
            input.as_ptr(), fi as isize, 1,
            w.as_ptr(), 1, fi as isize,
            1.0,
            out.as_mut_ptr(), fo as isize, 1,
        );
    }
    if let Some(a) = activation {
        out.iter_mut().for_each(|v| *v = a.apply(*v));
    }
    out
}

/// Returns the post-activation output of every hidden layer and the final
/// linear output.
fn net_forward(
    params: &[f64],
    slots: &[DenseSlot],
    activation: Activation,
    input: &[f64],
    batch: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let last = slots.len() - 1;
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(last);
    for (l, slot) in slots.iter().enumerate() {
        let x: &[f64] = if l == 0 { input } else { &hidden[l - 1] };
        let act = (l < last).then_some(activation);
        let y = dense_forward(
            &params[slot.weight_range()],
            &params[slot.bias_range()],
            slot,
            x,
            batch,
            act,
        );
        if l == last {
            return (hidden, y);
        }
        hidden.push(y);
    }
    unreachable!("networks have at least one layer")
}

fn net_backward(
    params: &[f64],
    slots: &[DenseSlot],
    activation: Activation,
    input: &[f64],
    hidden: &[Vec<f64>],
    d_out: Vec<f64>,
    batch: usize,
    grad: &mut [f64],
) {
    let mut delta = d_out;
    for l in (0..slots.len()).rev() {
        let slot = slots[l];
        let (fi, fo) = (slot.fan_in, slot.fan_out);
        let x = if l == 0 { input } else { &hidden[l - 1] };
        assert!(delta.len() == batch * fo && x.len() == batch * fi);
        {
            let (gw, gb) = grad.split_at_mut(slot.bias);
            let gw = &mut gw[slot.weight..slot.weight + fo * fi];
            for (o, g) in gb[..fo].iter_mut().enumerate() {
                *g += delta.iter().skip(o).step_by(fo).sum::<f64>();
            }
            // gw (fo x fi) += delta^T (fo x batch) * x (batch x fi)
            unsafe {
                matrixmultiply::dgemm(
                    fo, batch, fi, 1.0,
                    delta.as_ptr(), 1, fo as isize,
                    x.as_ptr(), fi as isize, 1,
                    1.0,
                    gw.as_mut_ptr(), fi as isize, 1,
                );
            }
        }
        if l == 0 {
            break;
        }
        let w = &params[slot.weight_range()];
        let mut prev = vec![0.0; batch * fi];
        // prev (batch x fi) = delta (batch x fo) * w (fo x fi)
        unsafe {
            matrixmultiply::dgemm(
                batch, fo, fi, 1.0,
                delta.as_ptr(), fo as isize, 1,
                w.as_ptr(), fi as isize, 1,
                0.0,
                prev.as_mut_ptr(), fi as isize, 1,
            );
        }
        for (p, &h) in prev.iter_mut().zip(x.iter()) {
            *p *= activation.derivative_from_output(h);
        }
        delta = prev;
    }
}

fn check_obs(params: &ParamTree, obs: &[f64]) -> Result<usize> {
    let dim = params.spec().input_dim;
    if obs.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "observation buffer of length {} is not a multiple of input_dim {dim}",
            obs.len()
        )));
    }
    Ok(obs.len() / dim)
}

fn make_dist(params: &ParamTree, policy_out: Vec<f64>, batch: usize) -> DistParams {
    match params.spec().head {
        Head::Categorical { n_actions } => DistParams::Categorical {
            n_actions,
            logits: policy_out,
        },
        Head::DiagonalGaussian { action_dim } => {
            let ls: Vec<f64> = params
                .log_std()
                .iter()
                .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
                .collect();
            DistParams::Gaussian {
                dim: action_dim,
                mean: policy_out,
                log_std: ls.iter().copied().cycle().take(batch * action_dim).collect(),
            }
        }
    }
}

/// Policy distribution only; skips the critic.
pub fn policy(params: &ParamTree, obs: &[f64]) -> Result<DistParams> {
    let batch = check_obs(params, obs)?;
    let act = params.spec().activation;
    let (_, out) = net_forward(params.values(), &params.layout().actor, act, obs, batch);
    let dist = make_dist(params, out, batch);
    if !dist.is_finite() {
        return Err(Error::NonFinite("policy output".into()));
    }
    Ok(dist)
}

/// Batched forward pass. `obs` is row-major `batch x input_dim`.
pub fn forward(params: &ParamTree, obs: &[f64]) -> Result<(DistParams, Vec<f64>)> {
    let batch = check_obs(params, obs)?;
    let act = params.spec().activation;
    let (_, out) = net_forward(params.values(), &params.layout().actor, act, obs, batch);
    let (_, values) = net_forward(params.values(), &params.layout().critic, act, obs, batch);
    let dist = make_dist(params, out, batch);
    if !dist.is_finite() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok((dist, values))
}

/// Loss value and exact gradient with respect to every parameter.
///
/// The log-std clamp passes gradient only while the raw parameter lies inside
/// `[LOG_STD_MIN, LOG_STD_MAX]`.
pub fn grad<L: HeadLoss + ?Sized>(
    params: &ParamTree,
    obs: &[f64],
    loss: &L,
) -> Result<(f64, GradTree)> {
    let batch = check_obs(params, obs)?;
    let act = params.spec().activation;
    let layout = params.layout();
    let (actor_hidden, out) = net_forward(params.values(), &layout.actor, act, obs, batch);
    let (critic_hidden, values) = net_forward(params.values(), &layout.critic, act, obs, batch);
    let outputs = HeadOutputs {
        dist: make_dist(params, out, batch),
        values,
    };
    let (value, head_grad) = loss.evaluate(&outputs)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {value}")));
    }
    let mut g = params.zeros_like();
    let gv = g.values_mut();
    net_backward(
        params.values(),
        &layout.actor,
        act,
        obs,
        &actor_hidden,
        head_grad.d_policy,
        batch,
        gv,
    );
    net_backward(
        params.values(),
        &layout.critic,
        act,
        obs,
        &critic_hidden,
        head_grad.d_values,
        batch,
        gv,
    );
    if let Head::DiagonalGaussian { action_dim } = params.spec().head {
        let raw = params.log_std();
        for d in 0..action_dim {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw[d]) {
                let s: f64 = (0..batch).map(|r| head_grad.d_log_std[r * action_dim + d]).sum();
                gv[layout.log_std.start + d] += s;
            }
        }
    }
    Ok((value, g))
}
