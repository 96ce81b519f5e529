//! Recording tape for reverse-mode differentiation over the fixed op set.
//!
//! Each op appends a node holding its output value and whatever its adjoint
//! needs (operand handles, pooling argmax). [`Tape::backward`] consumes the
//! tape, walks it in reverse, accumulates parameter gradients with `+=`, and
//! returns the adjoints of the leaf tensors.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use super::kernels as k;
use super::param::{ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    ConvTranspose2d,
    MaxPool2x2,
    UpsampleNearest2x,
    Relu,
    Sigmoid,
    ConcatChannels,
    Add,
}

impl OpKind {
    pub const ALL: [OpKind; 8] = [
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::MaxPool2x2,
        OpKind::UpsampleNearest2x,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::ConcatChannels,
        OpKind::Add,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::MaxPool2x2 => "maxpool2x2",
            OpKind::UpsampleNearest2x => "upsample_nearest2x",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::Add => "add",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Record {
    Leaf,
    Conv2d {
        input: Var,
        weight: ParamId,
        bias: ParamId,
    },
    ConvTranspose2d {
        input: Var,
        weight: ParamId,
        bias: ParamId,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        input: Var,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
}

impl Record {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Record::Leaf => return None,
            Record::Conv2d { .. } => OpKind::Conv2d,
            Record::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Record::MaxPool { .. } => OpKind::MaxPool2x2,
            Record::Upsample { .. } => OpKind::UpsampleNearest2x,
            Record::Relu { .. } => OpKind::Relu,
            Record::Sigmoid { .. } => OpKind::Sigmoid,
            Record::Concat { .. } => OpKind::ConcatChannels,
            Record::Add { .. } => OpKind::Add,
        })
    }
}

struct Node<T> {
    value: Tensor<T>,
    record: Record,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    mutation: Option<OpKind>,
}

/// Adjoints of the tape's leaf tensors, indexed by [`Var`].
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            mutation: None,
        }
    }

    /// A tape whose adjoint for `op` has its sign flipped. Used to prove the
    /// gradient checker catches a broken backward pass.
    pub fn with_mutation(op: Option<OpKind>) -> Self {
        Tape {
            nodes: Vec::new(),
            mutation: op,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, record: Record) -> Var {
        self.nodes.push(Node { value, record });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Graph(format!("variable {} is not recorded on this tape", v.0)))
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Record::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        self.nodes[v.0].value.clone()
    }

    fn layer_name(params: &ParamSet<T>, weight: ParamId) -> String {
        let name = &params.get(weight).name;
        name.strip_suffix(".weight").unwrap_or(name).to_string()
    }

    pub fn conv2d(
        &mut self,
        params: &ParamSet<T>,
        input: Var,
        weight: ParamId,
        bias: ParamId,
    ) -> Result<Var> {
        let layer = Self::layer_name(params, weight);
        let out = k::conv2d_forward(
            &layer,
            &self.node(input)?.value,
            &params.get(weight).value,
            &params.get(bias).value,
        )?;
        Ok(self.push(
            out,
            Record::Conv2d {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        params: &ParamSet<T>,
        input: Var,
        weight: ParamId,
        bias: ParamId,
    ) -> Result<Var> {
        let layer = Self::layer_name(params, weight);
        let out = k::conv_transpose2d_forward(
            &layer,
            &self.node(input)?.value,
            &params.get(weight).value,
            &params.get(bias).value,
        )?;
        Ok(self.push(
            out,
            Record::ConvTranspose2d {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn maxpool2x2(&mut self, layer: &str, input: Var) -> Result<Var> {
        let (out, argmax) = k::maxpool2x2_forward(layer, &self.node(input)?.value)?;
        Ok(self.push(out, Record::MaxPool { input, argmax }))
    }

    pub fn upsample_nearest2x(&mut self, input: Var) -> Result<Var> {
        let out = k::upsample_nearest2x_forward(&self.node(input)?.value);
        Ok(self.push(out, Record::Upsample { input }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = k::relu_forward(&self.node(input)?.value);
        Ok(self.push(out, Record::Relu { input }))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out = k::sigmoid_forward(&self.node(input)?.value);
        Ok(self.push(out, Record::Sigmoid { input }))
    }

    pub fn concat_channels(&mut self, layer: &str, a: Var, b: Var) -> Result<Var> {
        let out = k::concat_channels_forward(layer, &self.node(a)?.value, &self.node(b)?.value)?;
        Ok(self.push(out, Record::Concat { a, b }))
    }

    pub fn add(&mut self, layer: &str, a: Var, b: Var) -> Result<Var> {
        let out = k::add_forward(layer, &self.node(a)?.value, &self.node(b)?.value)?;
        Ok(self.push(out, Record::Add { a, b }))
    }

    /// Fingerprint of every piecewise branch taken by the forward pass: ReLU
    /// signs, pooling winners, and sigmoid saturation. Two evaluations with
    /// equal signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.record {
                Record::Relu { input } => {
                    for v in self.nodes[input.0].value.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Record::MaxPool { argmax, .. } => argmax.hash(&mut h),
                Record::Sigmoid { input } => {
                    for v in self.nodes[input.0].value.data() {
                        k::sigmoid_saturated(*v).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates `seeds` (output handle, upstream gradient) back through the
    /// tape. Parameter gradients are added into `params`.
    pub fn backward(
        self,
        seeds: &[(Var, Tensor<T>)],
        params: &mut ParamSet<T>,
    ) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Graph(
                "backward called on an empty tape; run a forward pass first".into(),
            ));
        }
        if seeds.is_empty() {
            return Err(Error::Graph(
                "backward called without an upstream gradient".into(),
            ));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            let node = self.node(*v)?;
            if node.value.shape() != g.shape() {
                return Err(Error::shape("backward seed", node.value.shape(), g.shape()));
            }
            accumulate(&mut adj[v.0], g.clone());
        }

        let mutation = self.mutation;
        let mut nodes = self.nodes;
        let mut leaves: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        for i in (0..nodes.len()).rev() {
            let Some(g) = adj[i].take() else {
                continue;
            };
            let flip = |mut t: Tensor<T>, kind: Option<OpKind>| {
                if kind.is_some() && kind == mutation {
                    t.scale(-T::one());
                }
                t
            };
            let kind = nodes[i].record.kind();
            match &nodes[i].record {
                Record::Leaf => leaves[i] = Some(g),
                Record::Conv2d {
                    input,
                    weight,
                    bias,
                }
                | Record::ConvTranspose2d {
                    input,
                    weight,
                    bias,
                } => {
                    let x = &nodes[input.0].value;
                    let wv = &params.get(*weight).value;
                    let grads = if kind == Some(OpKind::Conv2d) {
                        k::conv2d_backward(x, wv, &g)
                    } else {
                        k::conv_transpose2d_backward(x, wv, &g)
                    };
                    params
                        .get_mut(*weight)
                        .grad
                        .accumulate(&flip(grads.weight, kind));
                    params
                        .get_mut(*bias)
                        .grad
                        .accumulate(&flip(grads.bias, kind));
                    accumulate(&mut adj[input.0], flip(grads.input, kind));
                }
                Record::MaxPool { input, argmax } => {
                    let gin = k::maxpool2x2_backward(nodes[input.0].value.shape(), argmax, &g);
                    accumulate(&mut adj[input.0], flip(gin, kind));
                }
                Record::Upsample { input } => {
                    let gin = k::upsample_nearest2x_backward(nodes[input.0].value.shape(), &g);
                    accumulate(&mut adj[input.0], flip(gin, kind));
                }
                Record::Relu { input } => {
                    let gin = k::relu_backward(&nodes[input.0].value, &g);
                    accumulate(&mut adj[input.0], flip(gin, kind));
                }
                Record::Sigmoid { input } => {
                    let gin = k::sigmoid_backward(&nodes[input.0].value, &nodes[i].value, &g);
                    accumulate(&mut adj[input.0], flip(gin, kind));
                }
                Record::Concat { a, b } => {
                    let ca = nodes[a.0].value.shape().c;
                    let (ga, gb) = k::concat_channels_backward(ca, &g);
                    accumulate(&mut adj[a.0], flip(ga, kind));
                    accumulate(&mut adj[b.0], flip(gb, kind));
                }
                Record::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut adj[a.0], flip(g.clone(), kind));
                    accumulate(&mut adj[b.0], flip(g, kind));
                }
            }
            // The node's value is no longer needed once its adjoint has run.
            if !matches!(nodes[i].record, Record::Leaf) {
                nodes[i].value = Tensor::zeros(crate::tensor::Shape::new(1, 1, 1, 1));
            }
        }
        params.mark_grads_ready();
        Ok(Gradients { leaves })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.accumulate(&g),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::param::{Param, ParamKind};
    use crate::tensor::Shape;

    #[test]
    fn backward_on_empty_tape_errors() {
        let tape = Tape::<f64>::new();
        let mut ps = ParamSet::new();
        let err = tape.backward(&[], &mut ps);
        assert!(matches!(err, Err(Error::Graph(_))));
    }

    #[test]
    fn backward_rejects_unknown_var() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let mut other = Tape::<f64>::new();
        other.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let y = other.relu(x).unwrap();
        let mut ps = ParamSet::new();
        assert!(tape
            .backward(&[(y, Tensor::zeros(Shape::new(1, 1, 2, 2)))], &mut ps)
            .is_err());
    }

    #[test]
    fn sigmoid_adjoint_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let y = tape.sigmoid(x).unwrap();
        let mut ps = ParamSet::new();
        let g = tape
            .backward(&[(y, Tensor::filled(Shape::new(1, 1, 1, 1), 1.0))], &mut ps)
            .unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn param_grads_accumulate() {
        let mut ps = ParamSet::<f64>::new();
        let w = ps
            .push(Param::new(
                "c.weight",
                ParamKind::Weight,
                Tensor::filled(Shape::new(1, 1, 1, 1), 2.0),
            ))
            .unwrap();
        let b = ps
            .push(Param::new(
                "c.bias",
                ParamKind::Bias,
                Tensor::zeros(Shape::new(1, 1, 1, 1)),
            ))
            .unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::filled(Shape::new(1, 1, 1, 1), 3.0));
            let y = tape.conv2d(&ps, x, w, b).unwrap();
            tape.backward(&[(y, Tensor::filled(Shape::new(1, 1, 1, 1), 1.0))], &mut ps)
                .unwrap();
        }
        assert_eq!(ps.get(w).grad.data(), &[6.0]);
        assert_eq!(ps.get(b).grad.data(), &[2.0]);
        assert!(ps.grads_ready());
    }

    #[test]
    fn mutation_flips_sign() {
        let run = |m| {
            let mut tape = Tape::<f64>::with_mutation(m);
            let x = tape.leaf(Tensor::filled(Shape::new(1, 1, 1, 1), 1.5));
            let y = tape.relu(x).unwrap();
            let mut ps = ParamSet::new();
            let g = tape
                .backward(&[(y, Tensor::filled(Shape::new(1, 1, 1, 1), 1.0))], &mut ps)
                .unwrap();
            g.wrt(x).unwrap().data()[0]
        };
        assert_eq!(run(None), 1.0);
        assert_eq!(run(Some(OpKind::Relu)), -1.0);
        assert_eq!(run(Some(OpKind::Sigmoid)), 1.0);
    }

    #[test]
    fn op_names_round_trip() {
        for op in OpKind::ALL {
            assert_eq!(OpKind::parse(op.name()), Some(op));
        }
    }
}
