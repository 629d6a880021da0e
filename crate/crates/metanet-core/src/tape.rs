//! Wengert tape: records forward ops, replays them in reverse for gradients.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ops::{Aux, Op};
use crate::tensor::Tensor;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Handle to a tensor recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node {
    tape_id: u64,
    idx: u32,
}

struct Slot {
    value: Tensor,
}

struct Rec {
    op: Op,
    inputs: Vec<Node>,
    outputs: Vec<Node>,
    aux: Aux,
}

/// A single-threaded recording of forward operations.
///
/// Recording order is topological by construction: an op can only consume
/// nodes that already exist. [`Tape::backward`] visits ops in exact reverse
/// recording order.
pub struct Tape {
    id: u64,
    slots: Vec<Slot>,
    recs: Vec<Rec>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            slots: Vec::new(),
            recs: Vec::new(),
        }
    }

    /// Register a value as a leaf. Leaves can receive gradients; whether a
    /// leaf acts as a constant is purely a matter of never asking for its
    /// gradient.
    pub fn leaf(&mut self, value: Tensor) -> Node {
        self.push_slot(value)
    }

    /// Shorthand for registering a scalar constant.
    pub fn scalar(&mut self, v: f64) -> Node {
        self.leaf(Tensor::scalar(v))
    }

    fn push_slot(&mut self, value: Tensor) -> Node {
        let idx = self.slots.len() as u32;
        self.slots.push(Slot { value });
        Node {
            tape_id: self.id,
            idx,
        }
    }

    fn check(&self, n: Node) -> Result<()> {
        if n.tape_id != self.id || n.idx as usize >= self.slots.len() {
            return Err(Error::TapeMismatch);
        }
        Ok(())
    }

    pub fn value(&self, n: Node) -> &Tensor {
        assert_eq!(n.tape_id, self.id, "node belongs to a different tape");
        &self.slots[n.idx as usize].value
    }

    pub fn shape(&self, n: Node) -> &[usize] {
        self.value(n).shape()
    }

    pub fn n_ops(&self) -> usize {
        self.recs.len()
    }

    /// Record an op. Validates shapes, runs the forward kernel, rejects
    /// non-finite outputs, and returns the new nodes (one per output).
    pub fn apply_multi(&mut self, op: Op, inputs: &[Node]) -> Result<Vec<Node>> {
        for n in inputs {
            self.check(*n)?;
        }
        let in_vals: Vec<&Tensor> = inputs
            .iter()
            .map(|n| &self.slots[n.idx as usize].value)
            .collect();
        let (out_vals, aux) = op.forward(&in_vals)?;
        for t in &out_vals {
            if !t.all_finite() {
                return Err(Error::NonFinite { op: op.name() });
            }
        }
        let outputs: Vec<Node> = out_vals
            .into_iter()
            .map(|t| self.push_slot(t))
            .collect();
        self.recs.push(Rec {
            op,
            inputs: inputs.to_vec(),
            outputs: outputs.clone(),
            aux,
        });
        Ok(outputs)
    }

    /// Record a single-output op.
    pub fn apply(&mut self, op: Op, inputs: &[Node]) -> Result<Node> {
        debug_assert_eq!(op.n_outputs(), 1);
        Ok(self.apply_multi(op, inputs)?[0])
    }

    /// Fused LSTM cell; returns `(h', cell')`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &mut self,
        x: Node,
        h: Node,
        cell: Node,
        wx: Node,
        wh: Node,
        b: Node,
    ) -> Result<(Node, Node)> {
        let out = self.apply_multi(Op::LstmCell, &[x, h, cell, wx, wh, b])?;
        Ok((out[0], out[1]))
    }

    /// Reverse pass from a scalar loss. Multiple calls on the same tape are
    /// allowed; each returns an independent gradient map.
    pub fn backward(&self, loss: Node) -> Result<GradMap> {
        self.check(loss)?;
        let loss_val = &self.slots[loss.idx as usize].value;
        if !loss_val.is_scalar() {
            return Err(Error::LossNotScalar {
                shape: loss_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.slots.len()];
        grads[loss.idx as usize] = Some(Tensor::new(loss_val.shape().to_vec(), vec![1.0]).unwrap());

        for rec in self.recs.iter().rev() {
            if rec.outputs.iter().all(|o| grads[o.idx as usize].is_none()) {
                continue;
            }
            let in_vals: Vec<&Tensor> = rec
                .inputs
                .iter()
                .map(|n| &self.slots[n.idx as usize].value)
                .collect();
            let out_vals: Vec<&Tensor> = rec
                .outputs
                .iter()
                .map(|n| &self.slots[n.idx as usize].value)
                .collect();
            let douts: Vec<Option<&Tensor>> = rec
                .outputs
                .iter()
                .map(|o| grads[o.idx as usize].as_ref())
                .collect();
            let din = rec.op.backward(&in_vals, &out_vals, &rec.aux, &douts);
            for (node, g) in rec.inputs.iter().zip(din) {
                match &mut grads[node.idx as usize] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(GradMap {
            tape_id: self.id,
            grads,
        })
    }
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct GradMap {
    tape_id: u64,
    grads: Vec<Option<Tensor>>,
}

impl GradMap {
    /// Gradient of the loss w.r.t. `n`; a zero tensor when no gradient
    /// reached the node.
    pub fn get(&self, tape: &Tape, n: Node) -> Tensor {
        assert_eq!(n.tape_id, self.tape_id, "node belongs to a different tape");
        match &self.grads[n.idx as usize] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(n).shape()),
        }
    }

    /// True when some gradient actually flowed to `n`.
    pub fn reached(&self, n: Node) -> bool {
        n.tape_id == self.tape_id && self.grads[n.idx as usize].is_some()
    }
}
