use super::config::{beta_to_com, com_to_beta};
use crate::error::Result;
use crate::nn::ParamTree;

/// Proximal policy kept as an exponentially weighted average of the live
/// parameters, refreshed after every minibatch step.
#[derive(Debug, Clone, PartialEq)]
pub struct EwmaState {
    pub prox: ParamTree,
    pub beta: f64,
}

impl EwmaState {
    pub fn new(params: &ParamTree, com: f64) -> Result<Self> {
        Ok(EwmaState {
            prox: params.clone(),
            beta: com_to_beta(com)?,
        })
    }

    pub fn com(&self) -> f64 {
        beta_to_com(self.beta).unwrap_or(f64::INFINITY)
    }

    /// Changes the decay while keeping the current proximal parameters.
    pub fn set_com(&mut self, com: f64) -> Result<()> {
        self.beta = com_to_beta(com)?;
        Ok(())
    }

    /// `prox <- beta * prox + (1 - beta) * params`
    pub fn update(&mut self, params: &ParamTree) -> Result<()> {
        self.prox.check_shape(params, "ewma_update")?;
        let b = self.beta;
        for (p, &x) in self.prox.values_mut().iter_mut().zip(params.values()) {
            *p = b * *p + (1.0 - b) * x;
        }
        Ok(())
    }
}

pub fn ewma_update(state: &EwmaState, params: &ParamTree) -> Result<EwmaState> {
    let mut next = state.clone();
    next.update(params)?;
    Ok(next)
}
