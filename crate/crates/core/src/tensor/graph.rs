//! Reverse-mode tape over the fixed operation set of the detector.
//!
//! Nodes are appended in evaluation order, so walking them backwards is a
//! valid topological order. A graph can be differentiated once.

use super::ops::{self, ConvGeometry};
use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::pooling::{self, PoolSpec, PsRoiPoolCache, RoiPoolCache};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<usize> },
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeometry },
    Relu(Var),
    FullyConnected { input: Var, weight: Var, bias: Var },
    Concat(Vec<Var>),
    Reshape(Var),
    RoiPool { features: Var, cache: RoiPoolCache },
    PsRoiPool { score_map: Var, cache: PsRoiPoolCache },
    Vote(Var),
    Sum(Vec<Var>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Conv2d { input, weight, bias, .. } | Op::FullyConnected { input, weight, bias } => {
                vec![*input, *weight, *bias]
            }
            Op::Relu(x) | Op::Reshape(x) | Op::Vote(x) => vec![*x],
            Op::RoiPool { features, .. } => vec![*features],
            Op::PsRoiPool { score_map, .. } => vec![*score_map],
            Op::Concat(xs) | Op::Sum(xs) => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    differentiated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, context: &str) -> Result<Var> {
        value.ensure_finite(context)?;
        let needs_grad = match &op {
            Op::Leaf { param } => param.is_some(),
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf { param: None }, "input")
    }

    /// Input whose gradient is wanted although it is not a stored parameter.
    pub fn input_with_grad(&mut self, value: Tensor) -> Result<Var> {
        let v = self.push(value, Op::Leaf { param: None }, "input")?;
        self.nodes[v.0].needs_grad = true;
        Ok(v)
    }

    /// Copies a named parameter into the graph.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let index = store
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        self.push(store.by_index(index).clone(), Op::Leaf { param: Some(index) }, name)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias), geom)?;
        self.push(out, Op::Conv2d { input, weight, bias, geom }, "conv2d")
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = ops::relu(self.value(input));
        self.push(out, Op::Relu(input), "relu")
    }

    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::fully_connected(self.value(input), self.value(weight), self.value(bias))?;
        self.push(out, Op::FullyConnected { input, weight, bias }, "fully_connected")
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = ops::concat_channels(&values)?;
        self.push(out, Op::Concat(inputs.to_vec()), "concat_channels")
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        self.push(out, Op::Reshape(input), "reshape")
    }

    pub fn roi_pool(&mut self, features: Var, rois: &[BBox], spec: &PoolSpec) -> Result<Var> {
        let (out, cache) = pooling::roi_pool(self.value(features), rois, spec)?;
        self.push(out, Op::RoiPool { features, cache }, "roi_pool")
    }

    pub fn psroi_pool(&mut self, score_map: Var, rois: &[BBox], spec: &PoolSpec) -> Result<Var> {
        let (out, cache) = pooling::psroi_pool(self.value(score_map), rois, spec)?;
        self.push(out, Op::PsRoiPool { score_map, cache }, "psroi_pool")
    }

    pub fn vote(&mut self, pooled: Var) -> Result<Var> {
        let out = pooling::vote(self.value(pooled))?;
        self.push(out, Op::Vote(pooled), "vote")
    }

    /// Elementwise sum of same-shaped tensors, accumulated left to right.
    pub fn sum(&mut self, inputs: &[Var]) -> Result<Var> {
        let (first, rest) = inputs
            .split_first()
            .ok_or_else(|| Error::Dimension("sum needs at least one input".into()))?;
        let mut out = self.value(*first).clone();
        for v in rest {
            out.add_assign(self.value(*v))?;
        }
        self.push(out, Op::Sum(inputs.to_vec()), "sum")
    }

    /// Propagates the seed gradients back through the tape.
    pub fn backward(&mut self, seeds: Vec<(Var, Tensor)>) -> Result<()> {
        if self.differentiated {
            return Err(Error::Graph("backward already ran on this graph".into()));
        }
        self.differentiated = true;
        for (v, g) in seeds {
            self.nodes[v.0].value.same_shape(&g, "seed gradient")?;
            g.ensure_finite("seed gradient")?;
            self.accumulate(v, g)?;
        }
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &grad)?;
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                if self.nodes[v.0].needs_grad {
                    g.ensure_finite("backward")?;
                    self.accumulate(v, g)?;
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor) -> Result<()> {
        match &mut self.nodes[v.0].grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn input_grads(&self, i: usize, grad: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        Ok(match &node.op {
            Op::Leaf { .. } => vec![],
            Op::Conv2d { input, weight, bias, geom } => {
                let g = ops::conv2d_backward(self.value(*input), self.value(*weight), *geom, grad)?;
                vec![(*input, g.input), (*weight, g.weight), (*bias, g.bias)]
            }
            Op::Relu(x) => vec![(*x, ops::relu_backward(self.value(*x), grad)?)],
            Op::FullyConnected { input, weight, bias } => {
                let g = ops::fully_connected_backward(
                    self.value(*input),
                    self.value(*weight),
                    self.value(*bias),
                    grad,
                )?;
                vec![(*input, g.input), (*weight, g.weight), (*bias, g.bias)]
            }
            Op::Concat(xs) => {
                let shapes: Vec<&[usize]> = xs.iter().map(|v| self.value(*v).shape()).collect();
                let grads = ops::concat_channels_backward(&shapes, grad)?;
                xs.iter().copied().zip(grads).collect()
            }
            Op::Reshape(x) => vec![(*x, grad.clone().reshape(self.value(*x).shape())?)],
            Op::RoiPool { features, cache } => {
                let g = pooling::roi_pool_backward(self.value(*features).shape(), cache, grad)?;
                vec![(*features, g)]
            }
            Op::PsRoiPool { score_map, cache } => {
                let g = pooling::psroi_pool_backward(self.value(*score_map).shape(), cache, grad)?;
                vec![(*score_map, g)]
            }
            Op::Vote(x) => vec![(*x, pooling::vote_backward(self.value(*x).shape(), grad)?)],
            Op::Sum(xs) => xs.iter().map(|v| (*v, grad.clone())).collect(),
        })
    }

    /// Gradients of parameter leaves as `(store index, gradient)`.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.nodes.iter().filter_map(|n| match (&n.op, &n.grad) {
            (Op::Leaf { param: Some(i) }, Some(g)) => Some((*i, g)),
            _ => None,
        })
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (i, g) in self.param_grads() {
            let t = store.by_index_mut(i);
            t.same_shape(g, "parameter gradient")?;
            for (acc, v) in t.grad_mut().iter_mut().zip(g.data()) {
                *acc += *v;
            }
        }
        Ok(())
    }
}
