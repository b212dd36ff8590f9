//! Dense row-major tensors.

use super::Scalar;
use crate::numerics::NumericsError;

/// A dense tensor: a shape and a flat row-major value buffer.
///
/// Tensors are plain values. Gradient tracking lives in
/// [`Graph`](super::Graph); a tensor that participates in differentiation is
/// registered there as a leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, checking `product(shape) == data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::Invalid {
                op: "Tensor::new",
                msg: format!(
                    "shape {:?} implies {} elements, buffer has {}",
                    shape,
                    numel,
                    data.len()
                ),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(NumericsError::Invalid {
                op: "Tensor::new",
                msg: format!("zero-sized dimension in shape {:?}", shape),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
        }
    }

    /// A 1-element tensor holding `value`.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// The value of a 1-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, NumericsError> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> T {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// Max |a - b| over all elements; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let r = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]);
        assert!(r.is_err());
    }

    #[test]
    fn new_rejects_zero_dim() {
        let r = Tensor::<f64>::new(vec![2, 0], vec![]);
        assert!(r.is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let r = t.reshaped(&[3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn indexing() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t.at3(1, 2, 3), 23.0);
        let m = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64);
        assert_eq!(m.at2(2, 1), 9.0);
    }
}
