use crate::error::{Error, Result};
use crate::Scalar;

/// Dense single-channel scalar raster, row-major.
///
/// Entropy maps, feature maps, Gaussian fields, heatmaps and aggregated masks
/// all share this representation; their individual invariants are enforced by
/// the operations that build them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> ScalarField<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        ScalarField {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::zero())
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "field data length mismatch");
        ScalarField {
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
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn same_dims(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                context,
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    /// Pixel-wise combination of two equally-sized fields.
    pub fn zip_map(&self, other: &Self, context: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_dims(other, context)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ScalarField {
            width: self.width,
            height: self.height,
            data,
        })
    }
}
