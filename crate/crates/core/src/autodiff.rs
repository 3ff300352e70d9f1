//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! The feature pipeline is written once against the [`Engine`] trait. The
//! [`Eval`] engine runs it eagerly for prediction; the [`Tape`] engine records
//! every primitive so [`Tape::backward`] can replay adjoints in exact reverse
//! order for gradient-mode training. Both engines call the same kernels, so
//! the taped forward is bit-identical to the eager one.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{matmul_unchecked, Tensor};

/// Abstract execution engine for the differentiable primitives the feature
/// modules need. `T` is the value handle: a plain [`Tensor`] for eager
/// evaluation, a [`Var`] for taped evaluation.
pub trait Engine {
    type T: Clone;

    /// Lift a tensor into the engine as a non-differentiable constant.
    fn constant(&mut self, t: Tensor) -> Self::T;
    fn value(&self, h: &Self::T) -> Tensor;

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn scale(&mut self, a: &Self::T, f: f64) -> Self::T;
    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn transpose(&mut self, a: &Self::T) -> Self::T;
    fn reshape(&mut self, a: &Self::T, shape: &[usize]) -> Self::T;
    fn relu(&mut self, a: &Self::T) -> Self::T;
    fn sigmoid(&mut self, a: &Self::T) -> Self::T;
    fn add_row(&mut self, a: &Self::T, v: &Self::T) -> Self::T;
    fn mul_row(&mut self, a: &Self::T, v: &Self::T) -> Self::T;
    fn row_standardize(&mut self, a: &Self::T, eps: f64) -> Self::T;
    fn conv1d(&mut self, x: &Self::T, w: &Self::T, b: &Self::T, d: usize) -> Self::T;
    fn avg_pool_rows(&mut self, x: &Self::T, p: usize) -> Self::T;
    fn upsample_rows(&mut self, x: &Self::T, l: usize) -> Self::T;
    fn conv2d(&mut self, x: &Self::T, w: &Self::T, b: &Self::T) -> Self::T;
    fn deform_sample(
        &mut self,
        x: &Self::T,
        offsets: &Self::T,
        w: &Self::T,
        kh: usize,
        kw: usize,
    ) -> Self::T;
    fn mul_gate(&mut self, x: &Self::T, g: &Self::T) -> Self::T;
    fn stack(&mut self, parts: &[Self::T]) -> Self::T;
    fn mean_scale(&mut self, x: &Self::T) -> Self::T;
    fn sum_all(&mut self, x: &Self::T) -> Self::T;
}

/// Eager engine: handles are the tensors themselves.
#[derive(Debug, Default)]
pub struct Eval;

impl Engine for Eval {
    type T = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn value(&self, h: &Tensor) -> Tensor {
        h.clone()
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.add(b)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.sub(b)
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.mul(b)
    }
    fn scale(&mut self, a: &Tensor, f: f64) -> Tensor {
        a.scale(f)
    }
    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.ncols(), b.nrows(), "matmul inner extents differ");
        matmul_unchecked(a, b)
    }
    fn transpose(&mut self, a: &Tensor) -> Tensor {
        a.transposed()
    }
    fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Tensor {
        a.reshaped(shape)
    }
    fn relu(&mut self, a: &Tensor) -> Tensor {
        kernels::relu(a)
    }
    fn sigmoid(&mut self, a: &Tensor) -> Tensor {
        kernels::sigmoid(a)
    }
    fn add_row(&mut self, a: &Tensor, v: &Tensor) -> Tensor {
        kernels::add_row(a, v)
    }
    fn mul_row(&mut self, a: &Tensor, v: &Tensor) -> Tensor {
        kernels::mul_row(a, v)
    }
    fn row_standardize(&mut self, a: &Tensor, eps: f64) -> Tensor {
        kernels::row_standardize(a, eps)
    }
    fn conv1d(&mut self, x: &Tensor, w: &Tensor, b: &Tensor, d: usize) -> Tensor {
        kernels::conv1d(x, w, b, d)
    }
    fn avg_pool_rows(&mut self, x: &Tensor, p: usize) -> Tensor {
        kernels::avg_pool_rows(x, p)
    }
    fn upsample_rows(&mut self, x: &Tensor, l: usize) -> Tensor {
        kernels::upsample_rows(x, l)
    }
    fn conv2d(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        kernels::conv2d(x, w, b)
    }
    fn deform_sample(
        &mut self,
        x: &Tensor,
        offsets: &Tensor,
        w: &Tensor,
        kh: usize,
        kw: usize,
    ) -> Tensor {
        kernels::deform_sample(x, offsets, w, kh, kw)
    }
    fn mul_gate(&mut self, x: &Tensor, g: &Tensor) -> Tensor {
        kernels::mul_gate(x, g)
    }
    fn stack(&mut self, parts: &[Tensor]) -> Tensor {
        let refs: Vec<&Tensor> = parts.iter().collect();
        kernels::stack(&refs)
    }
    fn mean_scale(&mut self, x: &Tensor) -> Tensor {
        kernels::mean_scale(x)
    }
    fn sum_all(&mut self, x: &Tensor) -> Tensor {
        Tensor::scalar(x.sum())
    }
}

/// Handle to a node on a [`Tape`]. Tagged so using a handle on the wrong
/// tape is caught instead of silently reading another graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    tag: u64,
}

type BackFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    back: Option<BackFn>,
    needs_grad: bool,
}

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Gradient tape: an ordered record of primitive ops. Appending preserves
/// topological order, so adjoint replay is a single reverse scan.
pub struct Tape {
    nodes: Vec<Node>,
    tag: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            tag: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Record a differentiable leaf (a trainable parameter or probed input).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, v: Var) -> &Tensor {
        assert_eq!(v.tag, self.tag, "handle belongs to a different tape");
        &self.nodes[v.id].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, back: Option<BackFn>, leaf: bool) -> Var {
        let needs_grad = leaf || parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node {
            value,
            parents,
            back: if needs_grad { back } else { None },
            needs_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            tag: self.tag,
        }
    }

    fn unary<F>(&mut self, a: Var, value: Tensor, back: F) -> Var
    where
        F: Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor> + 'static,
    {
        self.push(value, vec![a.id], Some(Box::new(back)), false)
    }

    fn binary<F>(&mut self, a: Var, b: Var, value: Tensor, back: F) -> Var
    where
        F: Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor> + 'static,
    {
        self.push(value, vec![a.id, b.id], Some(Box::new(back)), false)
    }

    fn ternary<F>(&mut self, a: Var, b: Var, c: Var, value: Tensor, back: F) -> Var
    where
        F: Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor> + 'static,
    {
        self.push(value, vec![a.id, b.id, c.id], Some(Box::new(back)), false)
    }

    /// Replay adjoints from a scalar loss node back to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tag != self.tag || loss.id >= self.nodes.len() {
            return Err(Error::usage("backward: loss is not on this tape"));
        }
        if self.nodes[loss.id].value.len() != 1 {
            return Err(Error::usage("backward: loss must be scalar"));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.id] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(a) = adj[id].clone() else { continue };
            let Some(back) = &node.back else { continue };
            let pvals: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let pgrads = back(&a, &pvals, &node.value);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (pid, g) in node.parents.iter().zip(pgrads) {
                if !self.nodes[*pid].needs_grad {
                    continue;
                }
                match &mut adj[*pid] {
                    Some(existing) => *existing = existing.add(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients {
            grads: adj,
            tag: self.tag,
        })
    }
}

/// Per-leaf adjoints produced by [`Tape::backward`]. Leaves the loss never
/// touched (and constants) read back as zeros.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    tag: u64,
}

impl Gradients {
    pub fn get(&self, tape: &Tape, v: Var) -> Tensor {
        assert_eq!(v.tag, self.tag, "handle belongs to a different tape");
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.nodes[v.id].value.shape()),
        }
    }
}

impl Engine for Tape {
    type T = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None, false)
    }

    fn value(&self, h: &Var) -> Tensor {
        self.get(*h).clone()
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.get(*a).add(self.get(*b));
        self.binary(*a, *b, v, |adj, _, _| vec![adj.clone(), adj.clone()])
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.get(*a).sub(self.get(*b));
        self.binary(*a, *b, v, |adj, _, _| vec![adj.clone(), adj.scale(-1.0)])
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.get(*a).mul(self.get(*b));
        self.binary(*a, *b, v, |adj, p, _| {
            vec![adj.mul(p[1]), adj.mul(p[0])]
        })
    }

    fn scale(&mut self, a: &Var, f: f64) -> Var {
        let v = self.get(*a).scale(f);
        self.unary(*a, v, move |adj, _, _| vec![adj.scale(f)])
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let (av, bv) = (self.get(*a), self.get(*b));
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner extents differ");
        let v = matmul_unchecked(av, bv);
        self.binary(*a, *b, v, |adj, p, _| {
            vec![
                matmul_unchecked(adj, &p[1].transposed()),
                matmul_unchecked(&p[0].transposed(), adj),
            ]
        })
    }

    fn transpose(&mut self, a: &Var) -> Var {
        let v = self.get(*a).transposed();
        self.unary(*a, v, |adj, _, _| vec![adj.transposed()])
    }

    fn reshape(&mut self, a: &Var, shape: &[usize]) -> Var {
        let v = self.get(*a).reshaped(shape);
        self.unary(*a, v, |adj, p, _| vec![adj.reshaped(p[0].shape())])
    }

    fn relu(&mut self, a: &Var) -> Var {
        let v = kernels::relu(self.get(*a));
        self.unary(*a, v, |adj, p, _| vec![kernels::relu_backward(adj, p[0])])
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let v = kernels::sigmoid(self.get(*a));
        self.unary(*a, v, |adj, _, out| vec![kernels::sigmoid_backward(adj, out)])
    }

    fn add_row(&mut self, a: &Var, vrow: &Var) -> Var {
        let v = kernels::add_row(self.get(*a), self.get(*vrow));
        self.binary(*a, *vrow, v, |adj, _, _| {
            let (dx, dv) = kernels::add_row_backward(adj);
            vec![dx, dv]
        })
    }

    fn mul_row(&mut self, a: &Var, vrow: &Var) -> Var {
        let v = kernels::mul_row(self.get(*a), self.get(*vrow));
        self.binary(*a, *vrow, v, |adj, p, _| {
            let (dx, dv) = kernels::mul_row_backward(adj, p[0], p[1]);
            vec![dx, dv]
        })
    }

    fn row_standardize(&mut self, a: &Var, eps: f64) -> Var {
        let v = kernels::row_standardize(self.get(*a), eps);
        self.unary(*a, v, move |adj, p, out| {
            vec![kernels::row_standardize_backward(adj, p[0], out, eps)]
        })
    }

    fn conv1d(&mut self, x: &Var, w: &Var, b: &Var, d: usize) -> Var {
        let v = kernels::conv1d(self.get(*x), self.get(*w), self.get(*b), d);
        self.ternary(*x, *w, *b, v, move |adj, p, _| {
            let (dx, dw, db) = kernels::conv1d_backward(adj, p[0], p[1], d);
            vec![dx, dw, db]
        })
    }

    fn avg_pool_rows(&mut self, x: &Var, p: usize) -> Var {
        let v = kernels::avg_pool_rows(self.get(*x), p);
        self.unary(*x, v, |adj, pv, _| {
            vec![kernels::avg_pool_rows_backward(adj, pv[0].nrows())]
        })
    }

    fn upsample_rows(&mut self, x: &Var, l: usize) -> Var {
        let v = kernels::upsample_rows(self.get(*x), l);
        self.unary(*x, v, |adj, pv, _| {
            vec![kernels::upsample_rows_backward(adj, pv[0].nrows())]
        })
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var) -> Var {
        let v = kernels::conv2d(self.get(*x), self.get(*w), self.get(*b));
        self.ternary(*x, *w, *b, v, |adj, p, _| {
            let (dx, dw, db) = kernels::conv2d_backward(adj, p[0], p[1]);
            vec![dx, dw, db]
        })
    }

    fn deform_sample(&mut self, x: &Var, offsets: &Var, w: &Var, kh: usize, kw: usize) -> Var {
        let v = kernels::deform_sample(self.get(*x), self.get(*offsets), self.get(*w), kh, kw);
        self.ternary(*x, *offsets, *w, v, move |adj, p, _| {
            let (dx, doff, dw) = kernels::deform_sample_backward(adj, p[0], p[1], p[2], kh, kw);
            vec![dx, doff, dw]
        })
    }

    fn mul_gate(&mut self, x: &Var, g: &Var) -> Var {
        let v = kernels::mul_gate(self.get(*x), self.get(*g));
        self.binary(*x, *g, v, |adj, p, _| {
            let (dx, dg) = kernels::mul_gate_backward(adj, p[0], p[1]);
            vec![dx, dg]
        })
    }

    fn stack(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| self.get(*v)).collect();
        let value = kernels::stack(&tensors);
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let back: BackFn = Box::new(|adj, pv, _| {
            let per = pv[0].len();
            pv.iter()
                .enumerate()
                .map(|(i, p)| {
                    Tensor::new(p.shape().to_vec(), adj.data()[i * per..(i + 1) * per].to_vec())
                })
                .collect()
        });
        self.push(value, ids, Some(back), false)
    }

    fn mean_scale(&mut self, x: &Var) -> Var {
        let v = kernels::mean_scale(self.get(*x));
        self.unary(*x, v, |adj, p, _| {
            vec![kernels::mean_scale_backward(adj, p[0].shape()[0])]
        })
    }

    fn sum_all(&mut self, x: &Var) -> Var {
        let v = Tensor::scalar(self.get(*x).sum());
        self.unary(*x, v, |adj, p, _| {
            vec![Tensor::full(p[0].shape(), adj.data()[0])]
        })
    }
}

/// Max relative error between taped gradients and central finite differences
/// (step `h`) over every coordinate of every input. `build` must construct a
/// scalar loss from leaves lifted in the order of `inputs`.
pub fn fd_max_rel_err<F>(inputs: &[Tensor], h: f64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("fd_max_rel_err: backward failed");

    let eval = |pt: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = pt.iter().map(|x| t.leaf(x.clone())).collect();
        let l = build(&mut t, &vs);
        t.get(l).data()[0]
    };

    let mut worst: f64 = 0.0;
    for (li, input) in inputs.iter().enumerate() {
        let g = grads.get(&tape, vars[li]);
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[li].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[li].data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let gi = g.data()[i];
            let rel = (fd - gi).abs() / f64::max(fd.abs().max(gi.abs()), 1e-4);
            worst = worst.max(rel);
        }
    }
    worst
}
