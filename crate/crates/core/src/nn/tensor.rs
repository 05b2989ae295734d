use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Dense row-major f32 tensor. Image batches use NCHW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?} does not match data");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per batch entry.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    /// Concatenates tensors along the batch dimension.
    pub fn cat_rows(parts: &[&Tensor]) -> Self {
        let mut shape = parts[0].shape.clone();
        shape[0] = parts.iter().map(|t| t.shape[0]).sum();
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            debug_assert_eq!(p.shape[1..], shape[1..]);
            data.extend_from_slice(&p.data);
        }
        Tensor { shape, data }
    }

    /// Rows `[start, end)` as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let w = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor { shape, data: self.data[start * w..end * w].to_vec() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates a per-row vector to each row of a 2-D tensor.
    pub fn hcat(&self, other: &Tensor) -> Tensor {
        let (n, a, b) = (self.rows(), self.row_len(), other.row_len());
        assert_eq!(n, other.rows());
        let mut data = Vec::with_capacity(n * (a + b));
        for i in 0..n {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Tensor { shape: vec![n, a + b], data }
    }
}

impl Tensor {
    /// Stacks images into an NCHW batch with values in `[0, 1]`.
    pub fn from_images<'a, I>(images: I) -> Tensor
    where
        I: IntoIterator<Item = &'a crate::world::Image>,
        I::IntoIter: ExactSizeIterator,
    {
        let iter = images.into_iter();
        let n = iter.len();
        let mut data = Vec::new();
        let mut hw = (0, 0);
        for (i, img) in iter.enumerate() {
            if i == 0 {
                hw = (img.height, img.width);
                data = vec![0.0; n * 3 * img.height * img.width];
            }
            let stride = 3 * hw.0 * hw.1;
            img.write_chw(&mut data[i * stride..(i + 1) * stride]);
        }
        Tensor { shape: vec![n, 3, hw.0, hw.1], data }
    }
}
