//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation as it executes; calling
//! [`Tape::backward`] on a scalar output walks the recording once in reverse
//! and accumulates gradients for every watched leaf. Tensors are immutable
//! value handles over reference-counted buffers, so recording a tensor on the
//! tape is cheap and the same buffers are shared between forward values and
//! the saved state backward needs.
//!
//! One tape belongs to one training step. Inference uses a non-recording tape
//! ([`Tape::inference`]) so nothing is saved.

mod backward;
mod gradcheck;
#[cfg(test)]
mod op_tests;
mod ops;

pub use backward::Gradients;
pub use gradcheck::{
    grad_check, grad_check_error, max_rel_error, numeric_gradient, primitive_gradient_sweep,
    PrimitiveCheck,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

/// Dense row-major tensor of rank 1 or 2.
#[derive(Debug, Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Rc<Vec<S>>,
    requires_grad: bool,
    node: Option<NodeRef>,
}

/// Identifies a node on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    tape: u64,
    pub(crate) index: usize,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 2 || len != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} vs {} elements", shape, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            requires_grad: false,
            node: None,
        })
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| S::real(x)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(vec![S::zero(); len]),
            requires_grad: false,
            node: None,
        }
    }

    pub fn scalar_tensor(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: Rc::new(vec![value]),
            requires_grad: false,
            node: None,
        }
    }

    /// Marks this tensor as a differentiable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor; a 1-D tensor is treated as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a 2-D tensor, or the length of a 1-D tensor.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Mutable access to the buffer. Copies if the buffer is still shared
    /// (e.g. a tape from the current step has not been dropped yet).
    pub fn data_mut(&mut self) -> &mut [S] {
        if Rc::strong_count(&self.data) > 1 {
            self.data = Rc::new(self.data.as_ref().clone());
        }
        Rc::get_mut(&mut self.data).expect("sole owner after copy")
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub(crate) fn node(&self) -> Option<NodeRef> {
        self.node
    }

    /// Extracts the single element of a scalar tensor.
    pub fn scalar(&self) -> Result<S> {
        if self.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.shape.clone()))
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    fn arg(&self, tape: &Tape<S>) -> Arg<S> {
        Arg {
            node: self.node_on(tape),
            data: Rc::clone(&self.data),
            rows: self.rows(),
            cols: self.cols(),
        }
    }

    fn node_on(&self, tape: &Tape<S>) -> Option<usize> {
        match self.node {
            Some(n) => {
                assert_eq!(n.tape, tape.id, "tensor used with a foreign tape");
                Some(n.index)
            }
            None => None,
        }
    }
}

/// Saved input of a recorded operation: optional node for gradient routing
/// plus the forward buffer backward may need.
#[derive(Debug)]
pub(crate) struct Arg<S> {
    pub node: Option<usize>,
    pub data: Rc<Vec<S>>,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug)]
pub(crate) struct Node<S> {
    pub op: ops::Op<S>,
}

/// Append-only recording of differentiable operations.
///
/// Nodes are stored in creation order, which is a topological order of the
/// computation graph; backward walks them exactly once in reverse.
pub struct Tape<S> {
    id: u64,
    recording: bool,
    pub(crate) nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    /// A recording tape for one forward/backward pass.
    pub fn new() -> Self {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A tape that records nothing; use for inference.
    pub fn inference() -> Self {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            recording: false,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Registers a grad-requiring tensor as a leaf on this tape and returns
    /// the bound handle. Tensors that do not require grad pass through.
    pub fn watch(&self, t: &Tensor<S>) -> Tensor<S> {
        if !self.recording || !t.requires_grad {
            return t.clone();
        }
        let index = self.push(Node { op: ops::Op::Leaf });
        Tensor {
            shape: t.shape.clone(),
            data: Rc::clone(&t.data),
            requires_grad: true,
            node: Some(NodeRef { tape: self.id, index }),
        }
    }

    pub(crate) fn push(&self, node: Node<S>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Wraps a computed buffer in a tensor, recording `op` when any input
    /// participates in the graph, and rejecting non-finite results.
    pub(crate) fn output(
        &self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<S>,
        op: impl FnOnce() -> ops::Op<S>,
        any_input_tracked: bool,
    ) -> Result<Tensor<S>> {
        if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: name,
                context: format!(" (element {bad})"),
            });
        }
        let node = if self.recording && any_input_tracked {
            let index = self.push(Node { op: op() });
            Some(NodeRef { tape: self.id, index })
        } else {
            None
        };
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            requires_grad: false,
            node,
        })
    }
}

pub(crate) fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

pub(crate) fn require_2d<S: Scalar>(op: &'static str, t: &Tensor<S>) -> Result<(usize, usize)> {
    if t.shape().len() == 2 {
        Ok((t.shape()[0], t.shape()[1]))
    } else {
        Err(Error::ShapeMismatch {
            op,
            detail: format!("expected 2-D, got {:?}", t.shape()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_construction_and_accessors() {
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
        assert!(!t.requires_grad());
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn scalar_extraction_rejects_vectors() {
        let t = Tensor::<f64>::from_vec(&[3], vec![1., 2., 3.]).unwrap();
        assert!(matches!(t.scalar(), Err(Error::NotScalar(_))));
        let s = Tensor::<f64>::scalar_tensor(7.0);
        assert_eq!(s.scalar().unwrap(), 7.0);
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::<f64>::inference();
        let x = Tensor::from_vec(&[2], vec![1., 2.]).unwrap().with_grad();
        let x = tape.watch(&x);
        let y = tape.scale(&x, 3.0).unwrap();
        assert_eq!(tape.num_nodes(), 0);
        assert!(y.node().is_none());
    }

    #[test]
    fn f32_instantiation_works() {
        let tape = Tape::<f32>::new();
        let x = Tensor::<f32>::from_vec(&[2], vec![1.5, -0.5]).unwrap().with_grad();
        let x = tape.watch(&x);
        let y = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
        assert!((y.scalar().unwrap() - 2.5).abs() < 1e-6);
        let grads = tape.backward(&y).unwrap();
        let gx = grads.get(&x).unwrap();
        assert!((gx[0] - 3.0).abs() < 1e-6 && (gx[1] + 1.0).abs() < 1e-6);
    }
}
