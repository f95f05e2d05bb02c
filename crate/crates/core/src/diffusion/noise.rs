use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{LatentFrame, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    /// Initial `z_T`.
    Init = 1,
    /// Re-noising of known latents.
    Known = 2,
    /// Posterior variance draw.
    Posterior = 3,
    /// Re-added noise between passes.
    Resample = 4,
}

/// Coordinates of one standard-normal latent draw. Every draw the samplers
/// make is addressed by its own key, so results never depend on the order
/// or thread in which cells are processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub purpose: Purpose,
    pub t: u32,
    pub pass: u32,
    pub time: u32,
    pub view: u32,
}

impl NoiseKey {
    pub fn new(purpose: Purpose, t: usize, pass: usize, time: usize, view: usize) -> Self {
        Self {
            purpose,
            t: t as u32,
            pass: pass as u32,
            time: time as u32,
            view: view as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
    stream: u8,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// An independent family of keys under the same seed.
    pub fn substream(self, stream: u8) -> Self {
        Self { stream, ..self }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng(&self, key: NoiseKey) -> ChaCha8Rng {
        let mut s = [0u8; 32];
        s[..8].copy_from_slice(&self.seed.to_le_bytes());
        s[8] = key.purpose as u8;
        s[9] = self.stream;
        s[12..16].copy_from_slice(&key.t.to_le_bytes());
        s[16..20].copy_from_slice(&key.pass.to_le_bytes());
        s[20..24].copy_from_slice(&key.time.to_le_bytes());
        s[24..28].copy_from_slice(&key.view.to_le_bytes());
        ChaCha8Rng::from_seed(s)
    }

    pub fn normal(&self, key: NoiseKey, shape: Shape) -> LatentFrame {
        let mut rng = self.rng(key);
        let mut z = LatentFrame::zeros(shape);
        for v in z.data_mut() {
            *v = rng.sample(StandardNormal);
        }
        z
    }
}
