use super::NdError;
use std::sync::Arc;

/// Dense row-major tensor of 64-bit floats.
///
/// Tensors are immutable values: every op produces a new one. The buffer
/// is shared on clone, so registering large parameter tensors on a tape
/// costs a refcount bump, not a copy. Rank is usually 1 or 2;
/// matmul/affine require rank 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NdError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(NdError::Shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![0.0; n]) }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![value; n]) }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![value]) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        let v: &mut Vec<f64> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Both dimensions of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize), NdError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(NdError::Shape(format!("expected rank 2, got shape {:?}", other))),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64, NdError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(NdError::Shape(format!("item() on shape {:?}", self.shape)))
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> Result<&[f64], NdError> {
        let (r, c) = self.dims2()?;
        if i >= r {
            return Err(NdError::Shape(format!("row {} out of {} rows", i, r)));
        }
        Ok(&self.data[i * c..(i + 1) * c])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
