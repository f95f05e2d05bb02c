use super::{DiffusionError, NoiseSchedule, Step};

/// Outer-step schedule of the sampler.
///
/// Steps are numbered from `outer_steps` down to 1. Steps above
/// `phase_boundary` form the coarse phase and use `resample_counts[0]`
/// passes; the rest form the refinement phase, use `resample_counts[1]`
/// passes and, when `refinement_views` is set, only denoise those views.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub outer_steps: usize,
    pub jump: usize,
    pub resample_counts: [usize; 2],
    pub phase_boundary: usize,
    pub refinement_views: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedStep {
    pub step: Step,
    /// Counts down from `outer_steps` to 1.
    pub number: usize,
    pub passes: usize,
    pub refinement: bool,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            outer_steps: 50,
            jump: 20,
            resample_counts: [8, 4],
            phase_boundary: 25,
            refinement_views: None,
        }
    }
}

impl SamplingPlan {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<(), DiffusionError> {
        if self.outer_steps == 0 || self.jump == 0 {
            return Err(DiffusionError::InvalidPlan("steps and jump must be positive".into()));
        }
        if self.outer_steps * self.jump > sched.steps() {
            return Err(DiffusionError::InvalidPlan(format!(
                "{} steps of {} exceed T = {}",
                self.outer_steps,
                self.jump,
                sched.steps()
            )));
        }
        if self.resample_counts.contains(&0) {
            return Err(DiffusionError::InvalidPlan("resample counts must be at least 1".into()));
        }
        if self.phase_boundary > self.outer_steps {
            return Err(DiffusionError::InvalidPlan(format!(
                "phase boundary {} beyond {} steps",
                self.phase_boundary, self.outer_steps
            )));
        }
        if matches!(&self.refinement_views, Some(v) if v.is_empty()) {
            return Err(DiffusionError::InvalidPlan("empty refinement view set".into()));
        }
        Ok(())
    }

    /// Visited transitions, starting at `T`. Intermediate steps land on
    /// multiples of `jump`; the last one ends at 0.
    pub fn steps(&self, sched: &NoiseSchedule) -> Result<Vec<PlannedStep>, DiffusionError> {
        self.validate(sched)?;
        Ok((1..=self.outer_steps)
            .rev()
            .map(|number| {
                let t = if number == self.outer_steps {
                    sched.steps()
                } else {
                    number * self.jump
                };
                let refinement = number <= self.phase_boundary;
                PlannedStep {
                    step: Step {
                        t,
                        prev: (number - 1) * self.jump,
                    },
                    number,
                    passes: self.resample_counts[usize::from(refinement)],
                    refinement,
                }
            })
            .collect())
    }

    /// Views denoised during a step; `None` means all.
    pub fn active_views(&self, planned: &PlannedStep) -> Option<&[usize]> {
        if planned.refinement {
            self.refinement_views.as_deref()
        } else {
            None
        }
    }
}
