use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PpoMode {
    Standard,
    /// Decoupled objective with an EWMA proximal policy of the given center
    /// of mass (in minibatch steps).
    Ewma { com: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub n_envs: usize,
    pub n_steps: usize,
    pub n_epochs: usize,
    pub n_minibatches: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub mode: PpoMode,
    pub value_clip: bool,
    pub lr_anneal: bool,
    pub adv_norm: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.995,
            gae_lambda: 0.9,
            clip_eps: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.01,
            n_envs: 2048,
            n_steps: 256,
            n_epochs: 8,
            n_minibatches: 32,
            lr: 3e-4,
            max_grad_norm: 0.5,
            mode: PpoMode::Standard,
            value_clip: true,
            lr_anneal: false,
            adv_norm: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn batch_size(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.n_minibatches.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_envs == 0 || self.n_steps == 0 || self.n_epochs == 0 || self.n_minibatches == 0 {
            return bad("n_envs, n_steps, n_epochs and n_minibatches must be >= 1");
        }
        if self.batch_size() % self.n_minibatches != 0 {
            return Err(Error::Config(format!(
                "n_envs * n_steps = {} is not divisible by n_minibatches = {}",
                self.batch_size(),
                self.n_minibatches
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.clip_eps.is_nan() || self.clip_eps < 0.0 {
            return bad("clip_eps must be >= 0");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be > 0");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be finite and >= 0");
        }
        if let PpoMode::Ewma { com } = self.mode {
            com_to_beta(com)?;
        }
        Ok(())
    }
}

/// `com / (com + 1)`, the EWMA decay whose center of mass is `com` steps.
pub fn com_to_beta(com: f64) -> Result<f64> {
    if !(com >= 0.0) || !com.is_finite() {
        return Err(Error::InvalidArgument(format!("center of mass must be finite and >= 0, got {com}")));
    }
    Ok(com / (com + 1.0))
}

/// Center of mass `1 / (1 - beta) - 1` of an EWMA with decay `beta`.
pub fn beta_to_com(beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("EWMA decay must lie in [0, 1), got {beta}")));
    }
    Ok(1.0 / (1.0 - beta) - 1.0)
}

/// Linearly annealed learning rate for update `update_index` (0-based) of
/// `total_updates`; reaches exactly zero at the final update.
pub fn annealed_lr(base: f64, update_index: usize, total_updates: usize) -> f64 {
    if total_updates <= 1 {
        return 0.0;
    }
    let last = (total_updates - 1) as f64;
    let remaining = last - update_index.min(total_updates - 1) as f64;
    base * remaining / last
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn com_beta_examples() {
        assert_eq!(com_to_beta(0.0).unwrap(), 0.0);
        assert_eq!(beta_to_com(0.5).unwrap(), 1.0);
        assert_eq!(com_to_beta(8.0).unwrap(), 8.0 / 9.0);
        assert_eq!(com_to_beta(32.0).unwrap(), 32.0 / 33.0);
        assert!(beta_to_com(1.0).is_err());
        assert!(com_to_beta(-1.0).is_err());
    }

    #[test]
    fn default_matches_reference_table() {
        let c = PpoConfig::default();
        assert_eq!(
            (c.gamma, c.gae_lambda, c.n_steps, c.n_epochs, c.clip_eps),
            (0.995, 0.9, 256, 8, 0.2)
        );
        assert_eq!((c.max_grad_norm, c.vf_coef, c.ent_coef), (0.5, 0.5, 0.01));
        assert_eq!((c.n_envs, c.lr, c.n_minibatches, c.value_clip), (2048, 3e-4, 32, true));
        assert_eq!(c.minibatch_size(), 16384);
        c.validate().unwrap();
    }

    #[test]
    fn indivisible_batch_rejected() {
        let c = PpoConfig {
            n_envs: 3,
            n_steps: 5,
            n_minibatches: 4,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn anneal_hits_zero_at_final_update() {
        assert_eq!(annealed_lr(1e-3, 0, 10), 1e-3);
        assert_eq!(annealed_lr(1e-3, 9, 10), 0.0);
        assert!((annealed_lr(1e-3, 3, 7) - 0.5e-3).abs() < 1e-18);
        assert_eq!(annealed_lr(1e-3, 0, 1), 0.0);
    }

    proptest! {
        #[test]
        fn com_beta_are_inverse(com in 0.0f64..1e4) {
            let back = beta_to_com(com_to_beta(com).unwrap()).unwrap();
            prop_assert!((back - com).abs() <= 1e-9 * com.max(1.0));
        }
    }
}
