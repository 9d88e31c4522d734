//! Recorded forward passes and their reverse sweep.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::{apply_operator, relu_matrix, zip_with, Exec};
use crate::linalg::{affine_batch_backward, conv1d_batch_backward, Matrix};
use crate::model::params::{Gradients, ModelParams, OpKind, ParamId};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    /// An externally supplied value (inputs, constants). Not an operation.
    Leaf,
    Affine {
        op: ParamId,
        x: Slot,
    },
    Conv1d {
        op: ParamId,
        x: Slot,
    },
    Relu {
        x: Slot,
    },
    Add {
        a: Slot,
        b: Slot,
    },
    Sub {
        a: Slot,
        b: Slot,
    },
}

/// Topologically ordered record of one batch's forward computation.
///
/// Node `k` writes slot `k`, and every node only reads lower slots, so a
/// single reverse walk visits each value after all of its consumers.
pub struct Tape<'p> {
    params: &'p ModelParams,
    nodes: Vec<Node>,
    values: Vec<Matrix>,
    output: Option<Slot>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            values: Vec::new(),
            output: None,
        }
    }

    pub fn leaf(&mut self, value: Matrix) -> Slot {
        self.push(Node::Leaf, value)
    }

    fn push(&mut self, node: Node, value: Matrix) -> Slot {
        self.nodes.push(node);
        self.values.push(value);
        Slot(self.nodes.len() - 1)
    }

    pub fn value(&self, slot: Slot) -> &Matrix {
        &self.values[slot.0]
    }

    pub fn set_output(&mut self, slot: Slot) {
        self.output = Some(slot);
    }

    pub fn output(&self) -> Option<Slot> {
        self.output
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Number of recorded primitive operations (leaves excluded).
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n, Node::Leaf))
            .count()
    }

    /// Smallest `|x|` over all inputs fed to a ReLU, or `None` without ReLUs.
    pub fn min_abs_relu_input(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Relu { x } => Some(
                    self.values[x.0]
                        .as_slice()
                        .iter()
                        .fold(f64::INFINITY, |m, v| m.min(v.abs())),
                ),
                _ => None,
            })
            .reduce(f64::min)
    }

    /// Bytes held by recorded values.
    pub fn value_bytes(&self) -> usize {
        self.values
            .iter()
            .map(|v| core::mem::size_of_val(v.as_slice()))
            .sum()
    }

    /// Reverse sweep from the output slot seeded with `dl_dy`.
    pub fn backward(&self, dl_dy: &Matrix) -> Result<Gradients> {
        let out = self
            .output
            .ok_or_else(|| Error::Tape("no output slot recorded".into()))?;
        self.backward_from(out, dl_dy)
    }

    pub fn backward_from(&self, out: Slot, seed: &Matrix) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self.params);
        if out.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("output slot {} out of range", out.0)));
        }
        if seed.shape() != self.values[out.0].shape() {
            return Err(Error::Dimension {
                op: "backward",
                left: self.values[out.0].shape(),
                right: seed.shape(),
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; out.0 + 1];
        adj[out.0] = Some(seed.clone());

        for k in (0..=out.0).rev() {
            let Some(g) = adj[k].take() else { continue };
            match self.nodes[k] {
                Node::Leaf => {}
                Node::Affine { op, x } => {
                    self.check_input(k, x)?;
                    let spec = self.params.spec(op);
                    let OpKind::Dense { out: m, inp: n } = spec.kind else {
                        return Err(Error::Tape(format!(
                            "node {k} is affine but operator {} is not dense",
                            op.0
                        )));
                    };
                    let w = &self.params.operator(op)[..m * n];
                    let range = spec.range();
                    let (dw, db) = grads.0[range].split_at_mut(m * n);
                    let dx = affine_batch_backward(w, m, n, &self.values[x.0], &g, dw, db);
                    accumulate(&mut adj, x, dx);
                }
                Node::Conv1d { op, x } => {
                    self.check_input(k, x)?;
                    let spec = self.params.spec(op);
                    let OpKind::Conv(shape) = spec.kind else {
                        return Err(Error::Tape(format!(
                            "node {k} is conv1d but operator {} is not a conv",
                            op.0
                        )));
                    };
                    let kernel = &self.params.operator(op)[..shape.kernel];
                    let range = spec.range();
                    let (dk, db) = grads.0[range].split_at_mut(shape.kernel);
                    let dx =
                        conv1d_batch_backward(kernel, shape, &self.values[x.0], &g, dk, &mut db[0]);
                    accumulate(&mut adj, x, dx);
                }
                Node::Relu { x } => {
                    self.check_input(k, x)?;
                    // Subgradient at exactly zero is zero.
                    let dx = zip_with("relu'", &g, &self.values[x.0], |gv, xv| {
                        if xv > 0.0 {
                            gv
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut adj, x, dx);
                }
                Node::Add { a, b } => {
                    self.check_input(k, a)?;
                    self.check_input(k, b)?;
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, b, g);
                }
                Node::Sub { a, b } => {
                    self.check_input(k, a)?;
                    self.check_input(k, b)?;
                    let neg = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice().iter().map(|v| -v).collect(),
                    )?;
                    accumulate(&mut adj, a, g);
                    accumulate(&mut adj, b, neg);
                }
            }
        }
        Ok(grads)
    }

    fn check_input(&self, node: usize, input: Slot) -> Result<()> {
        if input.0 >= node {
            return Err(Error::Tape(format!(
                "node {node} reads slot {} which is not recorded before it",
                input.0
            )));
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], slot: Slot, g: Matrix) {
    match &mut adj[slot.0] {
        Some(acc) => {
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        empty @ None => *empty = Some(g),
    }
}

impl Exec for Tape<'_> {
    type Value = Slot;

    fn apply(&mut self, op: ParamId, x: &Slot) -> Result<Slot> {
        let y = apply_operator(self.params, op, &self.values[x.0])?;
        let node = match self.params.spec(op).kind {
            OpKind::Dense { .. } => Node::Affine { op, x: *x },
            OpKind::Conv(_) => Node::Conv1d { op, x: *x },
        };
        Ok(self.push(node, y))
    }

    fn relu(&mut self, x: &Slot) -> Slot {
        let y = relu_matrix(&self.values[x.0]);
        self.push(Node::Relu { x: *x }, y)
    }

    fn add(&mut self, a: &Slot, b: &Slot) -> Result<Slot> {
        let y = zip_with("add", &self.values[a.0], &self.values[b.0], |x, y| x + y)?;
        Ok(self.push(Node::Add { a: *a, b: *b }, y))
    }

    fn sub(&mut self, a: &Slot, b: &Slot) -> Result<Slot> {
        let y = zip_with("sub", &self.values[a.0], &self.values[b.0], |x, y| x - y)?;
        Ok(self.push(Node::Sub { a: *a, b: *b }, y))
    }

    fn zeros(&mut self, like: &Slot, len: usize) -> Slot {
        let rows = self.values[like.0].rows();
        self.leaf(Matrix::zeros(rows, len))
    }
}
