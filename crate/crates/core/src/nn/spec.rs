use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Categorical { n_actions: usize },
    DiagonalGaussian { action_dim: usize },
}

impl Head {
    /// Width of the actor network's output layer.
    pub fn output_dim(&self) -> usize {
        match *self {
            Head::Categorical { n_actions } => n_actions,
            Head::DiagonalGaussian { action_dim } => action_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        match self.head {
            Head::Categorical { n_actions } if n_actions < 2 => Err(Error::Config(
                "categorical head needs at least 2 actions".into(),
            )),
            Head::DiagonalGaussian { action_dim: 0 } => {
                Err(Error::Config("gaussian head needs action_dim >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}
