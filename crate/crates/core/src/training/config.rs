use super::adam::AdamParams;
use crate::error::{Error, Result};
use crate::imaging::AugmentPolicy;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub adam: AdamParams,
    /// Epochs (0-based) at which the rate is divided by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// λ in `L = L_angle + λ·L_speed`.
    pub speed_loss_weight: f64,
    pub smooth_l1_beta: f64,
    pub seed: u64,
    /// Applied to training batches only; `None` disables augmentation.
    pub augment: Option<AugmentPolicy>,
    /// Write a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            adam: AdamParams::default(),
            decay_epochs: vec![30, 90, 150],
            decay_factor: 10.0,
            epochs: 160,
            batch_size: 16,
            speed_loss_weight: 0.1,
            smooth_l1_beta: 1.0,
            seed: 0,
            augment: Some(AugmentPolicy::default()),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad(format!("lr0 {} must be finite and >= 0", self.lr0));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "decay_epochs {:?} must be strictly increasing",
                self.decay_epochs
            ));
        }
        if self.decay_epochs.last().is_some_and(|&d| d >= self.epochs) {
            return bad(format!(
                "decay_epochs {:?} must all be below epochs = {}",
                self.decay_epochs, self.epochs
            ));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor >= 1.0) {
            return bad(format!("decay_factor {} must be >= 1", self.decay_factor));
        }
        if !(self.speed_loss_weight.is_finite() && self.speed_loss_weight >= 0.0) {
            return bad(format!(
                "speed_loss_weight {} must be >= 0",
                self.speed_loss_weight
            ));
        }
        if !(self.smooth_l1_beta.is_finite() && self.smooth_l1_beta > 0.0) {
            return bad(format!(
                "smooth_l1_beta {} must be > 0",
                self.smooth_l1_beta
            ));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps > 0".into());
        }
        if let Some(p) = &self.augment {
            p.validate()?;
        }
        Ok(())
    }
}

/// Step-decayed learning rate: `lr0 / decay_factor^k`, `k` the number of
/// decay epochs already reached. Rounded to 15 significant digits so the
/// decayed rates are the clean decimals (1e-7, not 1.0000000000000001e-7).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = cfg.decay_epochs.iter().filter(|&&d| epoch >= d).count();
    let raw = cfg.lr0 / cfg.decay_factor.powi(k as i32);
    format!("{raw:.14e}")
        .parse()
        .expect("formatted float parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 1e-4);
        assert_eq!(lr_at(29, &c), 1e-4);
        assert_eq!(lr_at(30, &c), 1e-5);
        assert_eq!(lr_at(89, &c), 1e-5);
        assert_eq!(lr_at(90, &c), 1e-6);
        assert_eq!(lr_at(150, &c), 1e-7);
        assert_eq!(lr_at(159, &c), 1e-7);
        assert!((1..c.epochs).all(|e| lr_at(e, &c) <= lr_at(e - 1, &c)));
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let late = TrainConfig {
            epochs: 100,
            ..TrainConfig::default()
        };
        assert!(late.validate().is_err());
        let unsorted = TrainConfig {
            decay_epochs: vec![30, 30],
            ..TrainConfig::default()
        };
        assert!(unsorted.validate().is_err());
    }
}
