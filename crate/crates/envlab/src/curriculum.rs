use serde::{Deserialize, Serialize};

/// `clamp(mean_len / l_ref, 0, 1)`.
pub fn ramp_for(mean_len: f64, l_ref: f64) -> f64 {
    (mean_len / l_ref).clamp(0.0, 1.0)
}

/// Penalty ramp driven by a moving average of finished episode lengths.
/// The ramp is ratcheted: it never decreases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub ema_len: f64,
    pub l_ref: f64,
    pub decay: f64,
    pub ramp: f64,
    pub enabled: bool,
}

impl Curriculum {
    pub fn new(l_ref: f64, decay: f64, enabled: bool) -> Self {
        Self {
            ema_len: 0.0,
            l_ref,
            decay,
            ramp: if enabled { 0.0 } else { 1.0 },
            enabled,
        }
    }

    /// Folds in the lengths of episodes that finished in one batch step.
    pub fn update(&mut self, lengths: &[u32]) {
        if !self.enabled || lengths.is_empty() {
            return;
        }
        let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64;
        self.ema_len = self.decay * self.ema_len + (1.0 - self.decay) * mean;
        self.ramp = self.ramp.max(ramp_for(self.ema_len, self.l_ref));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_examples() {
        assert_eq!(ramp_for(0.0, 500.0), 0.0);
        assert_eq!(ramp_for(500.0, 500.0), 1.0);
        assert_eq!(ramp_for(900.0, 500.0), 1.0);
        assert_eq!(ramp_for(250.0, 500.0), 0.5);
    }

    #[test]
    fn ratchet_holds_after_shorter_episodes() {
        let mut c = Curriculum::new(500.0, 0.5, true);
        c.update(&[400, 400]);
        let high = c.ramp;
        assert!(high > 0.0);
        c.update(&[1]);
        assert_eq!(c.ramp, high);
        assert!(c.ema_len < 200.0 + 1e-9);
    }

    #[test]
    fn monotone_history_tracks_ratio() {
        let mut c = Curriculum::new(500.0, 0.0, true);
        c.update(&[250]);
        assert_eq!(c.ramp, 0.5);
    }

    #[test]
    fn disabled_curriculum_applies_full_penalties() {
        let mut c = Curriculum::new(500.0, 0.99, false);
        c.update(&[1]);
        assert_eq!(c.ramp, 1.0);
    }
}
