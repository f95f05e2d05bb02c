//! Dense row-major image containers shared by every stage of the pipeline.

use std::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid depth {value} at valid pixel ({x}, {y})")]
    InvalidDepth { x: usize, y: usize, value: f32 },
    #[error("buffer of length {len} does not hold a {width}x{height} grid")]
    BadBuffer { width: usize, height: usize, len: usize },
}

/// A `width × height` grid stored row-major, indexed as `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self, FrameError> {
        if data.len() != width * height {
            return Err(FrameError::BadBuffer {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    /// Signed lookup; `None` outside the grid.
    #[inline]
    pub fn get(&self, x: isize, y: isize) -> Option<&T> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(&self.data[y as usize * self.width + x as usize])
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.dims() == other.dims()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn check_dims<U>(&self, other: &Grid<U>) -> Result<(), FrameError> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(FrameError::ShapeMismatch {
                expected: self.dims(),
                got: other.dims(),
            })
        }
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (x, y): (usize, usize)) -> &T {
        &self.data[y * self.width + x]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, (x, y): (usize, usize)) -> &mut T {
        &mut self.data[y * self.width + x]
    }
}

/// Linear RGB in `[0, 1]`.
pub type ColorImage = Grid<[f32; 3]>;
/// Z-depth in meters.
pub type DepthMap = Grid<f32>;
/// `true` marks a valid (known) pixel.
pub type Mask = Grid<bool>;

/// Color, depth and validity for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub color: ColorImage,
    pub depth: DepthMap,
    pub mask: Mask,
}

impl RgbdFrame {
    pub fn new(color: ColorImage, depth: DepthMap, mask: Mask) -> Result<Self, FrameError> {
        color.check_dims(&depth)?;
        color.check_dims(&mask)?;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let d = depth[(x, y)];
                if mask[(x, y)] && !(d.is_finite() && d > 0.0) {
                    return Err(FrameError::InvalidDepth { x, y, value: d });
                }
            }
        }
        Ok(Self { color, depth, mask })
    }

    /// A fully valid frame.
    pub fn dense(color: ColorImage, depth: DepthMap) -> Result<Self, FrameError> {
        let mask = Mask::filled(color.width(), color.height(), true);
        Self::new(color, depth, mask)
    }

    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }
}

/// Mean squared error over RGB, restricted to `mask` when given.
/// Returns `None` when no pixel is selected.
pub fn mse(a: &ColorImage, b: &ColorImage, mask: Option<&Mask>) -> Option<f64> {
    assert!(a.same_dims(b), "mse on images of different size");
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, (pa, pb)) in a.data().iter().zip(b.data()).enumerate() {
        if let Some(m) = mask {
            if !m.data()[i] {
                continue;
            }
        }
        for c in 0..3 {
            let d = f64::from(pa[c]) - f64::from(pb[c]);
            sum += d * d;
        }
        count += 3;
    }
    (count > 0).then(|| sum / count as f64)
}

/// PSNR in dB for unit peak, from an accumulated MSE.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &ColorImage, b: &ColorImage, mask: Option<&Mask>) -> Option<f64> {
    mse(a, b, mask).map(psnr_from_mse)
}
