use super::{DiffusionError, Shape};

/// An `h × w × c` latent stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrame {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl LatentFrame {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self, DiffusionError> {
        if data.len() != h * w * c {
            return Err(DiffusionError::BadBuffer {
                shape: (h, w, c),
                len: data.len(),
            });
        }
        Ok(Self { h, w, c, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let (h, w, c) = shape;
        Self {
            h,
            w,
            c,
            data: vec![value; h * w * c],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn shape(&self) -> Shape {
        (self.h, self.w, self.c)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn index(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }

    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[self.index(y, x, ch)]
    }

    pub fn check_shape(&self, expected: Shape) -> Result<(), DiffusionError> {
        if self.shape() != expected {
            return Err(DiffusionError::ShapeMismatch {
                expected,
                got: self.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, DiffusionError> {
        other.check_shape(self.shape())?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, DiffusionError> {
        other.check_shape(self.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    /// Per-cell squared L2 distance summed over channels.
    pub fn cell_sq_dist(&self, other: &Self, y: usize, x: usize) -> f64 {
        (0..self.c)
            .map(|ch| {
                let i = self.index(y, x, ch);
                (self.data[i] - other.data[i]).powi(2)
            })
            .sum()
    }
}
