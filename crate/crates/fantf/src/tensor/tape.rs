//! The reverse-mode tape.
//!
//! A [`Tape`] lives for one forward pass. Operations register their input
//! tensors (lazily, as leaves) and push one node per op holding the input
//! node ids plus a closure that maps the upstream gradient to per-input
//! gradient contributions. Because inputs are registered before outputs,
//! node ids are already topologically ordered and the backward sweep is a
//! single reverse iteration with additive accumulation at fan-in points.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{FantfError, Result};

/// Upstream gradient -> one gradient contribution per recorded input.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
    /// Present on `requires_grad` leaves so the sweep can deposit gradients.
    leaf: Option<Tensor>,
    len: usize,
}

static TAPE_UID: AtomicU64 = AtomicU64::new(1);

/// Records one forward pass; dropped (freeing all closures) after backward.
pub struct Tape {
    uid: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            uid: TAPE_UID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Node id of `t` on this tape, registering it as a leaf if new. A tensor
    /// recorded by an earlier (dropped) tape re-registers cleanly because the
    /// stored uid no longer matches.
    pub(crate) fn register(&self, t: &Tensor) -> usize {
        if let Some(id) = t.tape_node(self.uid) {
            return id;
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            inputs: Vec::new(),
            backward: None,
            leaf: t.requires_grad().then(|| t.clone()),
            len: t.len(),
        });
        t.set_tape_node(self.uid, id);
        id
    }

    /// Records `out = op(inputs)` with its backward rule and returns `out`
    /// bound to this tape.
    pub(crate) fn record(&self, inputs: &[&Tensor], out: Tensor, backward: BackwardFn) -> Tensor {
        let input_ids: Vec<usize> = inputs.iter().map(|t| self.register(t)).collect();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            inputs: input_ids,
            backward: Some(backward),
            leaf: None,
            len: out.len(),
        });
        out.set_tape_node(self.uid, id);
        out
    }

    /// Reverse sweep from a scalar root. Gradients of all `requires_grad`
    /// leaves reachable from the root are written to their `grad` fields;
    /// registered-but-unreached leaves receive zeros.
    pub fn backward(&self, root: &Tensor) -> Result<()> {
        if root.len() != 1 {
            return Err(FantfError::Contract(format!(
                "backward: root must be a scalar, got shape {:?}",
                root.shape()
            )));
        }
        let root_id = root.tape_node(self.uid).ok_or_else(|| {
            FantfError::Contract("backward: root is not recorded on this tape".into())
        })?;

        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root_id] = Some(vec![1.0]);

        for id in (0..=root_id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            debug_assert_eq!(g.len(), node.len);
            if let Some(backward) = &node.backward {
                let contributions = backward(&g);
                debug_assert_eq!(contributions.len(), node.inputs.len());
                for (&input_id, contrib) in node.inputs.iter().zip(contributions) {
                    debug_assert!(input_id < id, "tape order violated");
                    match &mut grads[input_id] {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contrib) {
                                *a += c;
                            }
                        }
                        slot @ None => *slot = Some(contrib),
                    }
                }
            } else if let Some(leaf) = &node.leaf {
                leaf.set_grad(g);
            }
        }

        // Leaves never reached by the sweep have zero derivative.
        for node in nodes.iter() {
            if let Some(leaf) = &node.leaf {
                if leaf.grad().is_none() {
                    leaf.set_grad(vec![0.0; node.len]);
                }
            }
        }
        Ok(())
    }
}
