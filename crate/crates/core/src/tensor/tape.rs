use std::cell::RefCell;
use std::fmt;

use super::{DType, Tensor};
use crate::error::{Error, Result};

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Result<Vec<Tensor>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Constant,
    Leaf,
    Op,
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    kind: Kind,
}

/// Append-only record of operations. Node ids are assigned in recording
/// order, so every node's inputs precede it.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    allow_dft_fallback: bool,
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
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            allow_dft_fallback: false,
        }
    }

    /// A tape whose FFT ops fall back to an O(n^2) DFT for lengths that are
    /// not powers of two.
    pub fn with_dft_fallback() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            allow_dft_fallback: true,
        }
    }

    pub fn allow_dft_fallback(&self) -> bool {
        self.allow_dft_fallback
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Tracked input: gradients are accumulated for it.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            kind: Kind::Leaf,
        })
    }

    /// Untracked input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            kind: Kind::Constant,
        })
    }

    pub(crate) fn op(
        &self,
        value: Tensor,
        parents: &[Var<'_>],
        backward: impl Fn(&Tensor) -> Result<Vec<Tensor>> + 'static,
    ) -> Var<'_> {
        self.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: Some(Box::new(backward)),
            kind: Kind::Op,
        })
    }

    pub(crate) fn value(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn owns(&self, var: Var<'_>) -> bool {
        std::ptr::eq(self, var.tape)
    }

    /// Reverse sweep from a real scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !self.owns(loss) {
            return Err(Error::Graph("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 || root.value.dtype() != DType::Real {
            return Err(Error::InvalidArgument(format!(
                "backward needs a real scalar loss, got shape {:?} ({:?})",
                root.value.shape(),
                root.value.dtype()
            )));
        }
        if root.kind == Kind::Constant {
            return Err(Error::Graph(
                "loss is detached from every tracked tensor".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::from_real(root.value.shape().to_vec(), vec![1.0]));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(bw) = &node.backward {
                let parent_grads = bw(&g)?;
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    if nodes[pid].kind == Kind::Constant {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), nodes[pid].value.shape());
                    debug_assert_eq!(pg.dtype(), nodes[pid].value.dtype());
                    grads[pid] = Some(match grads[pid].take() {
                        Some(acc) => acc.add_same(&pg),
                        None => pg,
                    });
                }
            }
            if node.kind == Kind::Leaf {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            tape: self as *const Tape as usize,
        })
    }
}

/// Gradients of one backward sweep, indexed by tracked leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    tape: usize,
}

impl Gradients {
    /// Gradient of a leaf; `None` when the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        if var.tape as *const Tape as usize != self.tape {
            return None;
        }
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but returns zeros for untouched leaves.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Result<Tensor> {
        if var.tape as *const Tape as usize != self.tape {
            return Err(Error::Graph("variable belongs to a different tape".into()));
        }
        Ok(match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let v = var.value();
                Tensor::zeros(v.shape(), v.dtype())
            }
        })
    }
}

/// Handle to a tensor recorded on a [`Tape`].
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

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dtype(&self) -> DType {
        self.tape.nodes.borrow()[self.id].value.dtype()
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    pub(crate) fn same_tape(&self, other: Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Graph(
                "operands are recorded on different tapes".into(),
            ))
        }
    }
}
