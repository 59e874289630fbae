use super::{Real, Tensor};
use crate::error::NnError;

/// Named parameter tensors in a fixed order. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

pub type GradientSet<T> = ParamSet<T>;

impl<T: Real> ParamSet<T> {
    pub fn zeros(shapes: &[(String, Vec<usize>)]) -> Self {
        Self {
            names: shapes.iter().map(|(n, _)| n.clone()).collect(),
            tensors: shapes.iter().map(|(_, s)| Tensor::zeros(s)).collect(),
        }
    }

    pub fn from_parts(entries: Vec<(String, Tensor<T>)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        Self { names, tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<T> {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.tensors[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &ParamSet<T>) -> Result<(), NnError> {
        self.check_same_layout(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn check_same_layout(&self, other: &ParamSet<T>) -> Result<(), NnError> {
        let ok = self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape());
        if ok {
            Ok(())
        } else {
            Err(NnError::Shape {
                what: "parameter set".into(),
                expected: format!("{:?}", self.layout()),
                found: format!("{:?}", other.layout()),
            })
        }
    }

    pub fn check_shapes(&self, shapes: &[(String, Vec<usize>)]) -> Result<(), NnError> {
        let layout = self.layout();
        if layout.len() == shapes.len() && layout.iter().zip(shapes).all(|(a, b)| a.0 == b.0 && a.1 == b.1) {
            Ok(())
        } else {
            Err(NnError::Shape {
                what: "parameter set".into(),
                expected: format!("{:?}", shapes),
                found: format!("{:?}", layout),
            })
        }
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.names.iter().cloned().zip(self.tensors.iter().map(|t| t.shape().to_vec())).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bitwise_eq(&self, other: &ParamSet<T>) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}
