use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Per-step variances `β_1..β_T` and cumulative products `ᾱ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// One transition of the reverse process, from timestep `t` down to `prev`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub prev: usize,
}

impl Step {
    pub fn single(t: usize) -> Self {
        Self {
            t,
            prev: t.saturating_sub(1),
        }
    }

    pub fn is_final(&self) -> bool {
        self.prev == 0
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    NoiseSchedule::linear(steps, beta_start, beta_end)
}

impl NoiseSchedule {
    /// Linear ramp from `beta_start` to `beta_end` over `steps` timesteps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::InvalidSchedule("T must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    /// Arbitrary schedule from `β_1..β_T`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self, DiffusionError> {
        if beta.is_empty() {
            return Err(DiffusionError::InvalidSchedule("T must be at least 1".into()));
        }
        if let Some((i, b)) = beta.iter().enumerate().find(|(_, &b)| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "beta_{} = {b} is outside (0, 1)",
                i + 1
            )));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { beta, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    /// `β_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> Result<f64, DiffusionError> {
        self.check(t)?;
        if t == 0 {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(self.beta[t - 1])
    }

    /// `ᾱ_t` for `0 <= t <= T`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        self.check(t)?;
        Ok(if t == 0 { 1.0 } else { self.alpha_bar[t - 1] })
    }

    /// Variance of the forward kernel from `step.prev` to `step.t`:
    /// `1 - ᾱ_t / ᾱ_prev`, which is `β_t` for a unit step.
    pub fn transition_beta(&self, step: Step) -> Result<f64, DiffusionError> {
        self.check_step(step)?;
        if step.prev + 1 == step.t {
            return self.beta(step.t);
        }
        Ok(1.0 - self.alpha_bar(step.t)? / self.alpha_bar(step.prev)?)
    }

    pub fn check_step(&self, step: Step) -> Result<(), DiffusionError> {
        self.check(step.t)?;
        if step.prev >= step.t {
            return Err(DiffusionError::InvalidStep {
                t: step.t,
                prev: step.prev,
            });
        }
        Ok(())
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t > self.steps() {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_cumulative_factor() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar(1).unwrap(), 0.9999);
        assert_eq!(s.beta(1000).unwrap(), 0.02);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
    }

    #[test]
    fn final_cumulative_product() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        // log-domain sum as an independent route to the same product
        let log: f64 = (0..1000)
            .map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln())
            .sum();
        let got = s.alpha_bar(1000).unwrap();
        assert!((got - log.exp()).abs() < 1e-15);
        assert!((got - 4.04e-5).abs() < 0.005e-5, "{got}");
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1).unwrap(), 0.5);
    }

    #[test]
    fn recurrence_and_monotonicity() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        for t in 1..=1000 {
            let a = s.alpha_bar(t).unwrap();
            assert_eq!(a, s.alpha_bar(t - 1).unwrap() * (1.0 - s.beta(t).unwrap()));
            assert!(a < s.alpha_bar(t - 1).unwrap());
        }
    }

    #[test]
    fn invalid_bounds_are_rejected() {
        assert!(make_schedule(1000, 0.0, 0.02).is_err());
        assert!(make_schedule(1000, 0.03, 0.02).is_err());
        assert!(make_schedule(1000, 1e-4, 1.0).is_err());
        assert!(make_schedule(0, 1e-4, 0.02).is_err());
        assert!(matches!(
            make_schedule(10, 1e-4, 0.02).unwrap().alpha_bar(11),
            Err(DiffusionError::TimestepOutOfRange { t: 11, max: 10 })
        ));
    }

    #[test]
    fn transition_beta_composes_unit_steps() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let jump = s.transition_beta(Step { t: 40, prev: 20 }).unwrap();
        let direct: f64 = (21..=40).map(|t| 1.0 - s.beta(t).unwrap()).product();
        assert!((1.0 - jump - direct).abs() < 1e-14);
        assert_eq!(s.transition_beta(Step::single(7)).unwrap(), s.beta(7).unwrap());
        assert!(s.transition_beta(Step { t: 5, prev: 5 }).is_err());
    }
}
