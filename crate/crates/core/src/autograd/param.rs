use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernel, `(k, k, cin, cout)`.
    Weight,
    /// Per-output-channel bias, stored as `(cout, 1, 1, 1)`.
    Bias,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Self {
        let shape = value.shape();
        Param {
            name: name.into(),
            kind,
            grad: Tensor::zeros(shape),
            momentum: Tensor::zeros(shape),
            value,
        }
    }

    /// Logical dimensions: rank 4 for weights, rank 1 for biases.
    pub fn dims(&self) -> Vec<usize> {
        let s = self.value.shape();
        match self.kind {
            ParamKind::Weight => s.dims().to_vec(),
            ParamKind::Bias => vec![s.n],
        }
    }

    pub fn shape_from_dims(kind: ParamKind, dims: &[usize]) -> Option<Shape> {
        match (kind, dims) {
            (ParamKind::Weight, &[a, b, c, d]) => Some(Shape::new(a, b, c, d)),
            (ParamKind::Bias, &[n]) => Some(Shape::new(n, 1, 1, 1)),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named parameter list.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
    grads_ready: bool,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: Vec::new(),
            by_name: HashMap::new(),
            grads_ready: false,
        }
    }

    pub fn push(&mut self, param: Param<T>) -> Result<ParamId> {
        if self.by_name.contains_key(&param.name) {
            return Err(Error::Invalid(format!(
                "duplicate parameter name {}",
                param.name
            )));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar values.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
        self.grads_ready = false;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    /// Squared L2 norm of all weights (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| {
                p.value
                    .data()
                    .iter()
                    .map(|v| v.f64() * v.f64())
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    momentum: p.momentum.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
            grads_ready: self.grads_ready,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut ps = ParamSet::<f32>::new();
        let w = Tensor::zeros(Shape::new(3, 3, 1, 2));
        ps.push(Param::new("a.weight", ParamKind::Weight, w.clone()))
            .unwrap();
        assert!(ps
            .push(Param::new("a.weight", ParamKind::Weight, w))
            .is_err());
    }

    #[test]
    fn dims_follow_kind() {
        let p = Param::<f32>::new("b", ParamKind::Bias, Tensor::zeros(Shape::new(5, 1, 1, 1)));
        assert_eq!(p.dims(), vec![5]);
        assert_eq!(
            Param::<f32>::shape_from_dims(ParamKind::Bias, &[5]),
            Some(p.value.shape())
        );
        assert_eq!(p.grad.shape(), p.value.shape());
        assert_eq!(p.momentum.shape(), p.value.shape());
    }
}
