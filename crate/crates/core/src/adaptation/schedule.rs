use serde::{Deserialize, Serialize};

/// Constant learning rate for `hold` epochs, then a linear ramp to zero over
/// `decay` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub hold: usize,
    pub decay: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 0.002,
            hold: 100,
            decay: 100,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        lr_at(epoch, self.base_lr, self.hold, self.decay)
    }

    pub fn total_epochs(&self) -> usize {
        self.hold + self.decay
    }
}

pub fn lr_at(epoch: usize, base_lr: f64, hold: usize, decay: usize) -> f64 {
    if epoch < hold {
        return base_lr;
    }
    let k = epoch - hold;
    if k >= decay {
        0.0
    } else {
        base_lr * (1.0 - k as f64 / decay as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_points() {
        let s = LrSchedule::default();
        assert_eq!(s.at(0), 0.002);
        assert_eq!(s.at(99), 0.002);
        assert_eq!(s.at(100), 0.002);
        assert!((s.at(150) - 0.001).abs() < 1e-15);
        assert_eq!(s.at(200), 0.0);
        assert_eq!(s.at(1000), 0.0);
        assert_eq!(lr_at(5, 1.0, 5, 0), 0.0);
    }

    proptest! {
        #[test]
        fn non_increasing(hold in 0usize..50, decay in 0usize..50, base in 0.0f64..1.0, e in 0usize..120) {
            prop_assert!(lr_at(e + 1, base, hold, decay) <= lr_at(e, base, hold, decay));
            prop_assert!(lr_at(e, base, hold, decay) >= 0.0);
        }
    }
}
