use std::cell::{Ref, RefCell};
use std::fmt;

use super::Tensor;
use crate::error::{Error, Result};

/// Maps the upstream gradient of an op's output to one optional gradient per
/// input, in input order. `None` means "no contribution".
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Records the forward computation as a topologically ordered list of nodes.
///
/// Single-threaded by construction (`!Sync`). Build one tape per forward pass;
/// an inference tape ([`Tape::inference`]) skips all gradient bookkeeping.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    record: bool,
    stats: RefCell<Vec<(String, Tensor)>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("record", &self.record)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            record: true,
            stats: RefCell::new(Vec::new()),
        }
    }

    /// A tape that never records backward closures.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf. Receives a gradient in [`Tape::backward`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, self.record, Vec::new(), None)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, false, Vec::new(), None)
    }

    /// Records an operation with a hand-written backward rule.
    ///
    /// `backward` receives the gradient of the output and must return exactly
    /// one entry per input, each shaped like that input. The closure is
    /// dropped unless some input requires a gradient.
    pub fn custom_op<'t, F>(&'t self, value: Tensor, inputs: &[Var<'t>], backward: F) -> Var<'t>
    where
        F: Fn(&Tensor) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad = self.record && inputs.iter().any(|v| v.requires_grad());
        let ids = inputs.iter().map(|v| v.id).collect();
        let bw: Option<BackwardFn> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(value, requires_grad, ids, bw)
    }

    fn push(
        &self,
        value: Tensor,
        requires_grad: bool,
        inputs: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            inputs,
            backward,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Side channel for statistics observed during a training-mode forward
    /// pass (batch-norm batch moments), keyed by buffer name.
    pub fn record_stat(&self, name: impl Into<String>, value: Tensor) {
        self.stats.borrow_mut().push((name.into(), value));
    }

    pub fn take_stats(&self) -> Vec<(String, Tensor)> {
        std::mem::take(&mut *self.stats.borrow_mut())
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Visits every node at or before `loss` exactly once, newest first.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(self, loss.tape),
            "loss does not belong to this tape"
        );
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            // Interior gradients are consumed here; only leaves keep theirs.
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let contributions = backward(&upstream);
            debug_assert_eq!(contributions.len(), node.inputs.len());
            for (&input, contribution) in node.inputs.iter().zip(contributions) {
                let Some(g) = contribution else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[input].value.shape(), "gradient shape");
                grads[input] = Some(match grads[input].take() {
                    None => g,
                    Some(acc) => acc
                        .zip_map(&g, |a, b| a + b)
                        .expect("accumulated gradients share a shape"),
                });
            }
        }
        Ok(Gradients { grads })
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_ref(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(self.id).shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Records `value` as the output of an op on `inputs`.
    pub(crate) fn op(
        &self,
        value: Tensor,
        inputs: &[Var<'t>],
        backward: impl Fn(&Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Var<'t> {
        self.tape.custom_op(value, inputs, backward)
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when it was not reached.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a leaf; unreachable leaves get zeros of the leaf's shape.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}
