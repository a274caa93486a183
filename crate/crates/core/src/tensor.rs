//! Dense row-major tensors.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::f16::{is_f16_representable, round_f64_to_f16, round_to_f16};

/// Highest rank any tensor may have at construction.
pub const MAX_RANK: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F16,
    /// Stored weights only; never used for arithmetic.
    I8,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::I8 => "i8",
        }
    }

    pub fn is_float(self) -> bool {
        !matches!(self, DType::I8)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    /// F32 or F16 values. F16 tensors hold only binary16-representable values.
    Float(Vec<f32>),
    /// Quantized values with per-channel scales along the last axis. A single
    /// scale applies to the whole tensor.
    Int8 { values: Vec<i8>, scales: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    /// Shared so cloning a graph does not copy weights.
    data: Arc<TensorData>,
}

pub fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.len() > MAX_RANK {
        return Err(Error::Tensor(format!(
            "rank {} exceeds maximum {MAX_RANK}",
            shape.len()
        )));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Tensor(format!("shape {shape:?} has a zero dimension")));
    }
    if element_count(shape) != len {
        return Err(Error::Tensor(format!(
            "shape {shape:?} holds {} elements but data has {len}",
            element_count(shape)
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Tensor {
            shape,
            dtype: DType::F32,
            data: Arc::new(TensorData::Float(data)),
        })
    }

    /// Builds an F16 tensor; every value must already be binary16-representable.
    pub fn from_f16_values(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        if let Some(v) = data.iter().find(|v| !is_f16_representable(**v)) {
            return Err(Error::Tensor(format!("{v} is not a binary16 value")));
        }
        Ok(Tensor {
            shape,
            dtype: DType::F16,
            data: Arc::new(TensorData::Float(data)),
        })
    }

    pub fn from_i8(shape: Vec<usize>, values: Vec<i8>, scales: Vec<f32>) -> Result<Self> {
        check_shape(&shape, values.len())?;
        let channels = shape.last().copied().unwrap_or(1);
        if scales.len() != 1 && scales.len() != channels {
            return Err(Error::Tensor(format!(
                "{} scales for {channels} channels",
                scales.len()
            )));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Tensor(format!("scale {s} is not positive and finite")));
        }
        Ok(Tensor {
            shape,
            dtype: DType::I8,
            data: Arc::new(TensorData::Int8 { values, scales }),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = element_count(&shape);
        Tensor::from_f32(shape, vec![0.0; n]).expect("zeros shape")
    }

    pub fn scalar(v: f32) -> Self {
        Tensor::from_f32(vec![1], vec![v]).expect("scalar shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        element_count(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Float payload, or `None` for I8 tensors.
    pub fn values(&self) -> Option<&[f32]> {
        match self.data.as_ref() {
            TensorData::Float(v) => Some(v),
            TensorData::Int8 { .. } => None,
        }
    }

    pub fn scales(&self) -> Option<&[f32]> {
        match self.data.as_ref() {
            TensorData::Int8 { scales, .. } => Some(scales),
            TensorData::Float(_) => None,
        }
    }

    pub fn int8_values(&self) -> Option<&[i8]> {
        match self.data.as_ref() {
            TensorData::Int8 { values, .. } => Some(values),
            TensorData::Float(_) => None,
        }
    }

    /// Scale for the element at flat index `i` of an I8 tensor.
    fn scale_at(scales: &[f32], channels: usize, i: usize) -> f32 {
        if scales.len() == 1 {
            scales[0]
        } else {
            scales[i % channels]
        }
    }

    /// Values widened to f32. I8 tensors are dequantized as `q * scale` in f32.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match self.data.as_ref() {
            TensorData::Float(v) => v.clone(),
            TensorData::Int8 { values, scales } => {
                let c = self.shape.last().copied().unwrap_or(1);
                values
                    .iter()
                    .enumerate()
                    .map(|(i, &q)| f32::from(q) * Self::scale_at(scales, c, i))
                    .collect()
            }
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        if element_count(&shape) != self.len() {
            return Err(Error::Tensor(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        if self.dtype == DType::I8 && shape.last() != self.shape.last() {
            if let Some(s) = self.scales() {
                if s.len() > 1 {
                    return Err(Error::Tensor(
                        "reshape would move the quantization channel axis".into(),
                    ));
                }
            }
        }
        check_shape(&shape, self.len())?;
        Ok(Tensor {
            shape,
            dtype: self.dtype,
            data: self.data.clone(),
        })
    }

    /// Copies the index range `[start, end)` of `axis`. I8 scales follow the
    /// last axis.
    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Result<Self> {
        if axis >= self.rank() || start >= end || end > self.shape[axis] {
            return Err(Error::Tensor(format!(
                "bad slice {start}..{end} on axis {axis} of {:?}",
                self.shape
            )));
        }
        let mask: Vec<bool> = (0..self.shape[axis]).map(|i| i >= start && i < end).collect();
        self.gather(axis, &mask)
    }

    /// Keeps only the listed positions (ascending) along `axis`.
    pub fn select_axis(&self, axis: usize, keep: &[usize]) -> Result<Self> {
        if axis >= self.rank() || keep.is_empty() || keep.iter().any(|&k| k >= self.shape[axis]) {
            return Err(Error::Tensor(format!(
                "bad selection on axis {axis} of {:?}",
                self.shape
            )));
        }
        let mask: Vec<bool> = (0..self.shape[axis]).map(|i| keep.contains(&i)).collect();
        self.gather(axis, &mask)
    }

    /// Keeps the positions of `axis` whose `mask` entry is set.
    fn gather(&self, axis: usize, mask: &[bool]) -> Result<Self> {
        let mut shape = self.shape.clone();
        shape[axis] = mask.iter().filter(|&&m| m).count();
        let data = match self.data.as_ref() {
            TensorData::Float(v) => TensorData::Float(gather_blocks(v, &self.shape, axis, mask)),
            TensorData::Int8 { values, scales } => {
                let scales = if scales.len() > 1 && axis + 1 == self.rank() {
                    scales.iter().zip(mask).filter(|(_, &m)| m).map(|(s, _)| *s).collect()
                } else {
                    scales.clone()
                };
                TensorData::Int8 {
                    values: gather_blocks(values, &self.shape, axis, mask),
                    scales,
                }
            }
        };
        check_shape(&shape, element_count(&shape))?;
        Ok(Tensor {
            shape,
            dtype: self.dtype,
            data: Arc::new(data),
        })
    }

    /// Converts between dtypes. Supported: F32 -> F16, F16 -> F32 and
    /// I8 -> F16 (dequantize `q * scale`, then round once to binary16).
    pub fn cast(&self, to: DType) -> Result<Tensor> {
        let data = match (self.data.as_ref(), self.dtype, to) {
            (_, from, to) if from == to => return Ok(self.clone()),
            (TensorData::Float(v), DType::F32, DType::F16) => {
                v.iter().map(|&x| round_to_f16(x)).collect()
            }
            (TensorData::Float(v), DType::F16, DType::F32) => v.clone(),
            (TensorData::Int8 { values, scales }, DType::I8, DType::F16) => {
                let c = self.shape.last().copied().unwrap_or(1);
                values
                    .iter()
                    .enumerate()
                    .map(|(i, &q)| {
                        round_f64_to_f16(f64::from(q) * f64::from(Self::scale_at(scales, c, i)))
                    })
                    .collect()
            }
            (_, from, to) => {
                return Err(Error::UnsupportedCast {
                    from: from.name(),
                    to: to.name(),
                })
            }
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            dtype: to,
            data: Arc::new(TensorData::Float(data)),
        })
    }

    /// True when every float value is finite. I8 tensors are always finite.
    pub fn all_finite(&self) -> bool {
        match self.data.as_ref() {
            TensorData::Float(v) => v.iter().all(|x| x.is_finite()),
            TensorData::Int8 { .. } => true,
        }
    }
}

/// Flat row-major indices of every element whose coordinate on `axis`
/// satisfies `keep`, in row-major order.
fn gather_blocks<T: Copy>(v: &[T], shape: &[usize], axis: usize, mask: &[bool]) -> Vec<T> {
    let inner: usize = shape[axis + 1..].iter().product();
    let dim = shape[axis];
    let kept = mask.iter().filter(|&&m| m).count();
    if v.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(v.len() / dim.max(1) * kept);
    for block in v.chunks(dim * inner) {
        for (pos, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            out.extend_from_slice(&block[pos * inner..(pos + 1) * inner]);
        }
    }
    out
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_must_agree() {
        assert!(Tensor::from_f32(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_f32(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_f32(vec![1; 6], vec![0.0]).is_err());
        assert!(Tensor::from_f32(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn f16_constructor_rejects_unrepresentable() {
        assert!(Tensor::from_f16_values(vec![1], vec![1.0004]).is_err());
        assert!(Tensor::from_f16_values(vec![2], vec![1.0, f32::INFINITY]).is_ok());
    }

    #[test]
    fn f16_round_trip_through_f32_is_identity() {
        let t = Tensor::from_f32(vec![4], vec![0.1, -3.7, 1e-6, 7e4]).unwrap();
        let h = t.cast(DType::F16).unwrap();
        let back = h.cast(DType::F32).unwrap().cast(DType::F16).unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn int8_dequantizes_to_f16() {
        let t = Tensor::from_i8(vec![1], vec![-127], vec![1.0 / 127.0]).unwrap();
        let h = t.cast(DType::F16).unwrap();
        assert_eq!(h.values().unwrap(), &[-1.0]);
    }

    #[test]
    fn overflowing_cast_gives_infinity() {
        let t = Tensor::from_f32(vec![1], vec![65520.0]).unwrap();
        assert_eq!(t.cast(DType::F16).unwrap().values().unwrap(), &[f32::INFINITY]);
    }

    #[test]
    fn rejected_cast_directions() {
        let t = Tensor::scalar(1.0);
        assert!(matches!(t.cast(DType::I8), Err(Error::UnsupportedCast { .. })));
        let q = Tensor::from_i8(vec![1], vec![1], vec![1.0]).unwrap();
        assert!(q.cast(DType::F32).is_err());
    }

    #[test]
    fn slicing_follows_row_major_layout() {
        let t = Tensor::from_f32(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let s = t.slice_axis(1, 1, 3).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.values().unwrap(), &[1.0, 2.0, 4.0, 5.0]);
        let r = t.select_axis(0, &[1]).unwrap();
        assert_eq!(r.values().unwrap(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn slicing_last_axis_slices_scales() {
        let t = Tensor::from_i8(vec![1, 3], vec![1, 2, 3], vec![0.5, 1.0, 2.0]).unwrap();
        let s = t.slice_axis(1, 1, 3).unwrap();
        assert_eq!(s.scales().unwrap(), &[1.0, 2.0]);
        assert_eq!(s.to_f32_vec(), vec![2.0, 6.0]);
    }
}
