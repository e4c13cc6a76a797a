use crate::error::{Error, Result};

/// Linear warmup followed by two step decays (×0.1, then ×0.01).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub warmup: u64,
    pub milestones: (u64, u64),
    pub total: u64,
}

impl Schedule {
    pub fn new(warmup: u64, milestones: (u64, u64), total: u64) -> Result<Self> {
        let s = Schedule {
            warmup,
            milestones,
            total,
        };
        s.validate()?;
        Ok(s)
    }

    /// Full-scale schedule: 420k steps, decays at 150k and 250k.
    pub fn paper() -> Self {
        Self::scaled(420_000)
    }

    /// Reference toy schedule: 14k steps, warmup 200, decays at 6k and 10k.
    pub fn toy() -> Self {
        Schedule {
            warmup: 200,
            milestones: (6_000, 10_000),
            total: 14_000,
        }
    }

    /// Milestones at 150/420 and 250/420 of `total`, warmup `total / 70`.
    pub fn scaled(total: u64) -> Self {
        Schedule {
            warmup: total / 70,
            milestones: (total * 150 / 420, total * 250 / 420),
            total,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m1, m2) = self.milestones;
        if self.warmup < m1 && m1 < m2 && m2 < self.total {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "schedule needs warmup < m1 < m2 < total, got {} / {m1} / {m2} / {}",
                self.warmup, self.total
            )))
        }
    }

    /// Learning-rate multiplier for the update that completes step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let (m1, m2) = self.milestones;
        if step < self.warmup {
            step as f64 / self.warmup as f64
        } else if step < m1 {
            1.0
        } else if step < m2 {
            0.1
        } else {
            0.01
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_schedule_scales_paper_ratios() {
        let s = Schedule::scaled(14_000);
        assert_eq!(s, Schedule::new(200, (5_000, 8_333), 14_000).unwrap());
        Schedule::toy().validate().unwrap();
        let p = Schedule::paper();
        assert_eq!(p.milestones, (150_000, 250_000));
    }

    #[test]
    fn boundaries() {
        let s = Schedule::new(200, (6_000, 10_000), 14_000).unwrap();
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(1), 1.0 / 200.0);
        assert_eq!(s.lr_at(200), 1.0);
        assert_eq!(s.lr_at(5_999), 1.0);
        assert_eq!(s.lr_at(6_000), 0.1);
        assert_eq!(s.lr_at(10_000), 0.01);
        assert!(Schedule::new(10, (5, 20), 30).is_err());
    }

    #[test]
    fn piecewise_monotone() {
        let s = Schedule::scaled(7_000);
        let lrs: Vec<f64> = (0..7_000).map(|t| s.lr_at(t)).collect();
        let peak = s.warmup as usize;
        assert!(lrs[..=peak].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[peak..].windows(2).all(|w| w[0] >= w[1]));
    }
}
