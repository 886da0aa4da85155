//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so node indices are already a
//! topological order and the backward sweep is a single reverse scan.

use super::kernels::ConvGeom;
use super::{sigmoid, Tensor, TensorError, TensorResult};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    SqDist(Var, Var),
    Concat(Vec<Var>),
    Slice {
        src: Var,
        start: usize,
    },
    Conv {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        col: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (data, frozen state).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> TensorResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.ensure_same_shape(tb, op_name)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary(a, b, "hadamard", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Sum of squared differences `Σ (a - b)²`, a scalar.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.ensure_same_shape(tb, "sq_dist")?;
        let s = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::SqDist(a, b), rg))
    }

    /// Concatenates channel-major tensors along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> TensorResult<Var> {
        let first = self.value(
            *parts
                .first()
                .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?,
        );
        let spatial = first.spatial().to_vec();
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.spatial() != spatial.as_slice() {
                return Err(TensorError::Shape {
                    op: "concat",
                    expected: spatial,
                    got: t.spatial().to_vec(),
                });
            }
            channels += t.channels();
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(&spatial);
        let value = Tensor::from_vec(shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start + len` of a channel-major tensor.
    pub fn slice_channels(&mut self, src: Var, start: usize, len: usize) -> TensorResult<Var> {
        let value = self.value(src).channel_slice(start, len)?;
        let rg = self.any_grad(&[src]);
        Ok(self.push(value, Op::Slice { src, start }, rg))
    }

    /// Zero-padded convolution; output spatial extents equal the input's.
    pub fn conv_same(&mut self, input: Var, kernel: Var, bias: Var) -> TensorResult<Var> {
        let geom = ConvGeom::same(
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).shape(),
        )?;
        Ok(self.conv(input, kernel, bias, geom))
    }

    /// Unpadded convolution; each spatial extent shrinks by `k - 1`.
    pub fn conv_valid(&mut self, input: Var, kernel: Var, bias: Var) -> TensorResult<Var> {
        let geom = ConvGeom::valid(
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).shape(),
        )?;
        Ok(self.conv(input, kernel, bias, geom))
    }

    fn conv(&mut self, input: Var, kernel: Var, bias: Var, geom: ConvGeom) -> Var {
        let mut col = Vec::new();
        let value = geom.forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &mut col,
        );
        let rg = self.any_grad(&[input, kernel, bias]);
        self.push(
            value,
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
                col,
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> TensorResult<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::from_vec(root_value.shape().to_vec(), vec![1.0])?);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            // only leaf gradients are observable; interior ones are freed
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        accumulate(grads, v, g.clone());
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    accumulate(grads, *a, zip_map(g, tb, |gv, y| gv * y));
                }
                if wants(*b) {
                    accumulate(grads, *b, zip_map(g, ta, |gv, x| gv * x));
                }
            }
            Op::Scale(a, f) => {
                if wants(*a) {
                    accumulate(grads, *a, g.map(|x| x * f));
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    accumulate(
                        grads,
                        *a,
                        zip_map(g, &node.value, |gv, s| gv * s * (1.0 - s)),
                    );
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    accumulate(
                        grads,
                        *a,
                        zip_map(g, &node.value, |gv, t| gv * (1.0 - t * t)),
                    );
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let shape = self.value(*a).shape();
                    accumulate(grads, *a, Tensor::full(shape, g.item()));
                }
            }
            Op::SqDist(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let s = 2.0 * g.item();
                if wants(*a) {
                    accumulate(grads, *a, zip_map(ta, tb, |x, y| s * (x - y)));
                }
                if wants(*b) {
                    accumulate(grads, *b, zip_map(ta, tb, |x, y| s * (y - x)));
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    if wants(p) {
                        let slice = g.data()[offset..offset + t.len()].to_vec();
                        accumulate(
                            grads,
                            p,
                            Tensor::from_vec(t.shape().to_vec(), slice).unwrap(),
                        );
                    }
                    offset += t.len();
                }
            }
            Op::Slice { src, start } => {
                if wants(*src) {
                    let t = self.value(*src);
                    let plane = t.len() / t.channels();
                    let at = start * plane;
                    add_into(grads, *src, t.shape(), |dst| {
                        for (d, s) in dst[at..at + g.len()].iter_mut().zip(g.data()) {
                            *d += s;
                        }
                    });
                }
            }
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
                col,
            } => {
                let kv = self.value(*kernel);
                let mut dk = wants(*kernel).then(|| Tensor::zeros(kv.shape()));
                let mut db = wants(*bias).then(|| Tensor::zeros(self.value(*bias).shape()));
                let mut di = wants(*input).then(|| Tensor::zeros(self.value(*input).shape()));
                geom.backward(
                    g.data(),
                    kv.data(),
                    col,
                    dk.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                    di.as_mut().map(|t| t.data_mut()),
                );
                for (v, t) in [(*kernel, dk), (*bias, db), (*input, di)] {
                    if let Some(t) = t {
                        accumulate(grads, v, t);
                    }
                }
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape().to_vec(), data).unwrap()
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn add_into(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
    f(slot.data_mut());
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for leaf `v`, or `None` if `v` is not upstream of the root.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, materializing zeros for nodes off the root's path.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}
