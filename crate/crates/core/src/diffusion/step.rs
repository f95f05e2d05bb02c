use super::{DiffusionError, LatentFrame, NoiseSchedule, Step};

/// Noise prediction `ε` and per-element variance `Σ` for one latent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub epsilon: LatentFrame,
    pub variance: LatentFrame,
}

impl DenoiserOutput {
    pub fn deterministic(epsilon: LatentFrame) -> Self {
        let variance = LatentFrame::zeros(epsilon.shape());
        Self { epsilon, variance }
    }

    pub fn check(&self, shape: super::Shape) -> Result<(), DiffusionError> {
        self.epsilon.check_shape(shape)?;
        self.variance.check_shape(shape)?;
        if let Some((index, &value)) = self
            .variance
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0))
        {
            return Err(DiffusionError::NegativeVariance { index, value });
        }
        Ok(())
    }
}

/// `√ᾱ_t·z0 + √(1-ᾱ_t)·eps`.
pub fn forward_noise(
    z0: &LatentFrame,
    t: usize,
    eps: &LatentFrame,
    sched: &NoiseSchedule,
) -> Result<LatentFrame, DiffusionError> {
    let a = sched.alpha_bar(t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    z0.zip_map(eps, |z, e| sa * z + sn * e)
}

/// Reverse transition `t → prev`:
/// `(z_t - β/√(1-ᾱ_t)·ε) / √(1-β) + √Σ·ξ` with `β` the forward-kernel variance
/// of the transition. The final transition to 0 ignores `Σ`.
pub fn posterior_step(
    zt: &LatentFrame,
    out: &DenoiserOutput,
    step: Step,
    sched: &NoiseSchedule,
    xi: &LatentFrame,
) -> Result<LatentFrame, DiffusionError> {
    sched.check_step(step)?;
    out.check(zt.shape())?;
    xi.check_shape(zt.shape())?;
    let beta = sched.transition_beta(step)?;
    let a = sched.alpha_bar(step.t)?;
    let coef = beta / (1.0 - a).sqrt();
    let scale = 1.0 / (1.0 - beta).sqrt();
    let mut z = zt.zip_map(&out.epsilon, |z, e| scale * (z - coef * e))?;
    if !step.is_final() {
        for ((v, s), x) in z.data_mut().iter_mut().zip(out.variance.data()).zip(xi.data()) {
            *v += s.sqrt() * x;
        }
    }
    Ok(z)
}

/// `(z_t - √(1-ᾱ_t)·ε) / √ᾱ_t`.
pub fn predict_z0(
    zt: &LatentFrame,
    out: &DenoiserOutput,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentFrame, DiffusionError> {
    let a = sched.alpha_bar(t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    zt.zip_map(&out.epsilon, |z, e| (z - sn * e) / sa)
}

/// Forward kernel of the transition: `√(1-β)·z_prev + √β·ξ`, taking a latent
/// at `step.prev` back up to `step.t`.
pub fn resample_noise(
    z_prev: &LatentFrame,
    step: Step,
    sched: &NoiseSchedule,
    xi: &LatentFrame,
) -> Result<LatentFrame, DiffusionError> {
    let beta = sched.transition_beta(step)?;
    let (keep, add) = ((1.0 - beta).sqrt(), beta.sqrt());
    z_prev.zip_map(xi, |z, x| keep * z + add * x)
}
