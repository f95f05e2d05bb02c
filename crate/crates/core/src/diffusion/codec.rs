use super::{DiffusionError, LatentFrame, Shape};
use crate::image::ColorImage;

/// Image ↔ latent mapping used around the denoiser.
pub trait LatentCodec: Send + Sync {
    /// Spatial downsampling factor.
    fn factor(&self) -> usize;

    fn latent_shape(&self, width: usize, height: usize) -> Result<Shape, DiffusionError>;

    fn encode(&self, image: &ColorImage) -> Result<LatentFrame, DiffusionError>;

    fn decode(&self, latent: &LatentFrame) -> Result<ColorImage, DiffusionError>;
}

/// `f×f` block averaging with nearest-neighbour upsampling. Exact on
/// block-constant images. A block straddling unknown (zeroed) pixels averages
/// those zeros in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxCodec {
    factor: usize,
}

impl BoxCodec {
    pub fn new(factor: usize) -> Result<Self, DiffusionError> {
        if factor == 0 {
            return Err(DiffusionError::Indivisible {
                width: 0,
                height: 0,
                factor,
            });
        }
        Ok(Self { factor })
    }
}

impl LatentCodec for BoxCodec {
    fn factor(&self) -> usize {
        self.factor
    }

    fn latent_shape(&self, width: usize, height: usize) -> Result<Shape, DiffusionError> {
        let f = self.factor;
        if width == 0 || height == 0 || !width.is_multiple_of(f) || !height.is_multiple_of(f) {
            return Err(DiffusionError::Indivisible {
                width,
                height,
                factor: f,
            });
        }
        Ok((height / f, width / f, 3))
    }

    fn encode(&self, image: &ColorImage) -> Result<LatentFrame, DiffusionError> {
        let (h, w, c) = self.latent_shape(image.width(), image.height())?;
        let f = self.factor;
        let norm = 1.0 / (f * f) as f64;
        let mut z = LatentFrame::zeros((h, w, c));
        for by in 0..h {
            for bx in 0..w {
                let mut acc = [0.0f64; 3];
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        let p = image[(x, y)];
                        for ch in 0..3 {
                            acc[ch] += f64::from(p[ch]);
                        }
                    }
                }
                for (ch, a) in acc.iter().enumerate() {
                    let i = z.index(by, bx, ch);
                    z.data_mut()[i] = a * norm;
                }
            }
        }
        Ok(z)
    }

    fn decode(&self, latent: &LatentFrame) -> Result<ColorImage, DiffusionError> {
        let (h, w, c) = latent.shape();
        if c != 3 {
            return Err(DiffusionError::ShapeMismatch {
                expected: (h, w, 3),
                got: latent.shape(),
            });
        }
        let f = self.factor;
        Ok(ColorImage::from_fn(w * f, h * f, |x, y| {
            let (bx, by) = (x / f, y / f);
            [0, 1, 2].map(|ch| latent.at(by, bx, ch) as f32)
        }))
    }
}
