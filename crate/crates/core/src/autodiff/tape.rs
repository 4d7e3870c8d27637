use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

type BackFn<S> = Box<dyn Fn(&Tensor<S>) -> Tensor<S>>;

struct Parent<S> {
    id: usize,
    backward: BackFn<S>,
}

struct Node<S> {
    value: Rc<Tensor<S>>,
    parents: Vec<Parent<S>>,
}

/// Append-only record of operations, rebuilt for every training step.
///
/// A tape created with [`Tape::detached`] evaluates the same kernels but
/// keeps no local-gradient closures, so it cannot be differentiated.
pub struct Tape<S: Real = f64> {
    nodes: RefCell<Vec<Node<S>>>,
    recording: bool,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> fmt::Debug for Tape<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("recording", &self.recording)
            .finish()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    pub fn detached() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf. Leaves are where gradients are read back.
    pub fn var(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Vec::new())
    }

    /// Registers a value that never needs a gradient. Identical to `var`
    /// on the tape; the separate name documents intent at call sites.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Vec::new())
    }

    fn push(&self, value: Tensor<S>, parents: Vec<Parent<S>>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents: if self.recording { parents } else { Vec::new() },
        });
        Var { tape: self, id }
    }

    fn value(&self, id: usize) -> Rc<Tensor<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar root. Nodes are visited in exact reverse
    /// creation order; contributions reaching a node along several paths are
    /// summed.
    pub fn backward(&self, root: Var<'_, S>) -> Result<Gradients<S>> {
        if !self.recording {
            return Err(Error::Precondition(
                "backward called on a detached tape".into(),
            ));
        }
        self.check_owner(root)?;
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::Precondition(format!(
                "backward requires a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(root_value.shape(), S::one()));
        for id in (0..=root.id).rev() {
            let (before, rest) = grads.split_at_mut(id);
            let Some(g) = rest[0].as_ref() else {
                continue;
            };
            for parent in &nodes[id].parents {
                let contrib = (parent.backward)(g);
                match &mut before[parent.id] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a = *a + *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn check_owner(&self, v: Var<'_, S>) -> Result<()> {
        if std::ptr::eq(v.tape, self) {
            Ok(())
        } else {
            Err(Error::Precondition("variable belongs to another tape".into()))
        }
    }
}

/// Gradients of one backward sweep, indexed by tape node.
#[derive(Debug, Clone)]
pub struct Gradients<S: Real = f64> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    /// Gradient w.r.t. `v`, or `None` if `v` does not influence the root.
    pub fn get(&self, v: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient w.r.t. `v`, zero-filled when `v` does not influence the root.
    pub fn get_or_zeros(&self, v: Var<'_, S>) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Real = f64> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S: Real> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

impl<'t, S: Real> Var<'t, S> {
    pub fn value(&self) -> Rc<Tensor<S>> {
        self.tape.value(self.id)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    /// Copy of the current value with no link back to this tape.
    pub fn detach(&self) -> Tensor<S> {
        (*self.value()).clone()
    }

    fn same_tape(&self, other: &Var<'t, S>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Precondition(
                "operands belong to different tapes".into(),
            ))
        }
    }

    fn unary(&self, value: Tensor<S>, backward: BackFn<S>) -> Var<'t, S> {
        self.tape.push(
            value,
            vec![Parent {
                id: self.id,
                backward,
            }],
        )
    }

    fn binary(
        &self,
        other: &Var<'t, S>,
        value: Tensor<S>,
        back_self: BackFn<S>,
        back_other: BackFn<S>,
    ) -> Var<'t, S> {
        self.tape.push(
            value,
            vec![
                Parent {
                    id: self.id,
                    backward: back_self,
                },
                Parent {
                    id: other.id,
                    backward: back_other,
                },
            ],
        )
    }

    pub fn matmul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let out = kernels::matmul(&a, &b)?;
        Ok(self.binary(
            other,
            out,
            Box::new(move |g| kernels::matmul(g, &b.transpose()).expect("matmul grad")),
            Box::new(move |g| kernels::matmul(&a.transpose(), g).expect("matmul grad")),
        ))
    }

    pub fn transpose(&self) -> Var<'t, S> {
        let out = self.value().transpose();
        self.unary(out, Box::new(|g| g.transpose()))
    }

    pub fn add(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        kernels::same_shape("add", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x + y);
        Ok(self.binary(other, out, Box::new(|g| g.clone()), Box::new(|g| g.clone())))
    }

    pub fn sub(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        kernels::same_shape("sub", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x - y);
        Ok(self.binary(
            other,
            out,
            Box::new(|g| g.clone()),
            Box::new(|g| g.map(|v| -v)),
        ))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&self, bias: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(bias)?;
        let (a, b) = (self.value(), bias.value());
        let out = kernels::add_row(&a, &b)?;
        let bshape = b.shape().to_vec();
        Ok(self.binary(
            bias,
            out,
            Box::new(|g| g.clone()),
            Box::new(move |g| Tensor::from_parts(bshape.clone(), kernels::col_sums(g))),
        ))
    }

    /// Elementwise product of two variables.
    pub fn mul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        kernels::same_shape("mul", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x * y);
        Ok(self.binary(
            other,
            out,
            Box::new(move |g| g.zip_map(&b, |gv, bv| gv * bv)),
            Box::new(move |g| g.zip_map(&a, |gv, av| gv * av)),
        ))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&self, c: &Tensor<S>) -> Result<Var<'t, S>> {
        let a = self.value();
        kernels::same_shape("mul_const", &a, c)?;
        let out = a.zip_map(c, |x, y| x * y);
        let c = c.clone();
        Ok(self.unary(out, Box::new(move |g| g.zip_map(&c, |gv, cv| gv * cv))))
    }

    pub fn scale(&self, c: S) -> Var<'t, S> {
        let out = self.value().map(|x| x * c);
        self.unary(out, Box::new(move |g| g.map(|v| v * c)))
    }

    pub fn add_scalar(&self, c: S) -> Var<'t, S> {
        let out = self.value().map(|x| x + c);
        self.unary(out, Box::new(|g| g.clone()))
    }

    /// `c - self`, elementwise.
    pub fn rsub_scalar(&self, c: S) -> Var<'t, S> {
        let out = self.value().map(|x| c - x);
        self.unary(out, Box::new(|g| g.map(|v| -v)))
    }

    pub fn relu(&self) -> Var<'t, S> {
        let a = self.value();
        let out = a.map(|x| if x > S::zero() { x } else { S::zero() });
        self.unary(
            out,
            Box::new(move |g| g.zip_map(&a, |gv, av| if av > S::zero() { gv } else { S::zero() })),
        )
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&self) -> Result<Var<'t, S>> {
        let a = self.value();
        if let Some(bad) = a.data().iter().find(|&&x| !(x > S::zero())) {
            return Err(Error::numeric(
                "log",
                format!("non-positive or NaN argument {bad}"),
            ));
        }
        let out = a.map(|x| x.ln());
        Ok(self.unary(out, Box::new(move |g| g.zip_map(&a, |gv, av| gv / av))))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&self, lo: S, hi: S) -> Var<'t, S> {
        let a = self.value();
        let out = a.map(|x| x.max(lo).min(hi));
        self.unary(
            out,
            Box::new(move |g| {
                g.zip_map(&a, |gv, av| {
                    if av >= lo && av <= hi {
                        gv
                    } else {
                        S::zero()
                    }
                })
            }),
        )
    }

    pub fn sum(&self) -> Var<'t, S> {
        let a = self.value();
        let out = Tensor::scalar(a.data().iter().copied().sum());
        let shape = a.shape().to_vec();
        self.unary(out, Box::new(move |g| Tensor::full(&shape, g.item())))
    }

    pub fn mean(&self) -> Result<Var<'t, S>> {
        let a = self.value();
        if a.is_empty() {
            return Err(Error::Precondition("mean of an empty tensor".into()));
        }
        let n = S::cast(a.len() as f64);
        let out = Tensor::scalar(a.data().iter().copied().sum::<S>() / n);
        let shape = a.shape().to_vec();
        Ok(self.unary(out, Box::new(move |g| Tensor::full(&shape, g.item() / n))))
    }

    /// Sums each row, `[m×n] -> [m]`.
    pub fn sum_rows(&self) -> Var<'t, S> {
        let a = self.value();
        let out = kernels::sum_rows(&a);
        let shape = a.shape().to_vec();
        let cols = a.cols();
        self.unary(
            out,
            Box::new(move |g| {
                let data = (0..shape.iter().product::<usize>())
                    .map(|i| g.data()[i / cols])
                    .collect();
                Tensor::from_parts(shape.clone(), data)
            }),
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&self) -> Result<Var<'t, S>> {
        let out = kernels::softmax_rows(&self.value())?;
        let y = out.clone();
        Ok(self.unary(
            out,
            Box::new(move |g| {
                let mut data = Vec::with_capacity(g.len());
                for (grow, yrow) in g.row_iter().zip(y.row_iter()) {
                    let dot: S = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    data.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| yv * (gv - dot)));
                }
                Tensor::from_parts(y.shape().to_vec(), data)
            }),
        ))
    }

    /// Row-wise projection onto the unit sphere.
    pub fn l2_normalize(&self) -> Result<Var<'t, S>> {
        let (out, norms) = kernels::l2_normalize_rows(&self.value())?;
        let y = out.clone();
        Ok(self.unary(
            out,
            Box::new(move |g| {
                let mut data = Vec::with_capacity(g.len());
                for ((grow, yrow), &n) in g.row_iter().zip(y.row_iter()).zip(&norms) {
                    let dot: S = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    data.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| (gv - yv * dot) / n));
                }
                Tensor::from_parts(y.shape().to_vec(), data)
            }),
        ))
    }

    /// Row-wise convex combination `λ_i·self_i + (1-λ_i)·other_i`.
    pub fn mix_rows(&self, other: &Var<'t, S>, lambdas: &[S]) -> Result<Var<'t, S>> {
        self.same_tape(other)?;
        let out = kernels::convex_rows(&self.value(), &other.value(), lambdas)?;
        let cols = out.cols();
        let weights: Rc<Vec<(S, S)>> =
            Rc::new(lambdas.iter().map(|&l| kernels::convex_weights(l)).collect());
        let wb = Rc::clone(&weights);
        Ok(self.binary(
            other,
            out,
            Box::new(move |g| {
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * weights[i / cols].0)
                    .collect();
                Tensor::from_parts(g.shape().to_vec(), data)
            }),
            Box::new(move |g| {
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * wb[i / cols].1)
                    .collect();
                Tensor::from_parts(g.shape().to_vec(), data)
            }),
        ))
    }
}
