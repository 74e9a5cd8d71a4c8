//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! A [`Tape`] records every operation in execution order, so the node list
//! is already a topological order of the graph. [`Tape::backward`] walks it
//! in reverse and accumulates adjoints. Parameter tensors can be borrowed
//! into the tape without copying; the tape never mutates them.

use std::borrow::Cow;

use super::tensor::{affine_kernel, check_affine_shapes, softmax_kernel, Activation, Tensor, LOG_EPSILON};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        w: Var,
        x: Var,
        b: Var,
    },
    Gather {
        table: Var,
        row: usize,
    },
    Concat(Vec<Var>),
    Activation {
        x: Var,
        kind: Activation,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Pool {
        rows: Vec<Var>,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    Nll {
        p: Var,
        target: usize,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        self.push(Cow::Owned(Tensor::from_parts(shape, data)), op)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    /// Records a borrowed tensor (typically a model parameter) as a leaf.
    pub fn leaf_ref(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (wt, xt, bt) = (self.value(w), self.value(x), self.value(b));
        check_affine_shapes(wt, xt, bt)?;
        let out = affine_kernel(wt.data(), xt.data(), bt.data());
        Ok(self.owned(vec![out.len()], out, Op::Affine { w, x, b }))
    }

    /// Row `row` of a 2-D table, as a vector.
    pub fn gather(&mut self, table: Var, row: usize) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "gather",
                left: t.shape().to_vec(),
                right: vec![row],
            });
        }
        if row >= t.rows() {
            return Err(Error::IndexOutOfRange {
                what: "embedding row",
                index: row,
                len: t.rows(),
            });
        }
        let data = t.row(row).to_vec();
        Ok(self.owned(vec![data.len()], data, Op::Gather { table, row }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.owned(vec![data.len()], data, Op::Concat(parts.to_vec())))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| kind.apply(v)).collect();
        let shape = t.shape().to_vec();
        self.owned(shape, data, Op::Activation { x, kind })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_with(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.owned(shape, data, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_with(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.owned(shape, data, Op::Mul(a, b)))
    }

    /// Coordinate-wise mean or max over equally sized vectors.
    ///
    /// The mean is accumulated as `x_1 + Σ(x_k - x_1) / n`, so a stack of
    /// identical rows pools to exactly that row. Max ties go to the earliest
    /// row.
    pub fn pool(&mut self, rows: &[Var], mode: PoolMode) -> Result<Var> {
        let first = *rows.first().ok_or(Error::Empty("pool"))?;
        for &r in &rows[1..] {
            self.same_shape("pool", first, r)?;
        }
        let base = self.value(first).data();
        let width = base.len();
        let n = rows.len() as f64;
        let mut argmax = Vec::new();
        let data = match mode {
            PoolMode::Avg => {
                let mut acc = vec![0.0; width];
                for &r in &rows[1..] {
                    for ((a, x), x1) in acc.iter_mut().zip(self.value(r).data()).zip(base) {
                        *a += x - x1;
                    }
                }
                base.iter().zip(&acc).map(|(x1, a)| x1 + a / n).collect()
            }
            PoolMode::Max => {
                let mut best = base.to_vec();
                argmax = vec![0; width];
                for (k, &r) in rows.iter().enumerate().skip(1) {
                    for (c, &x) in self.value(r).data().iter().enumerate() {
                        if x > best[c] {
                            best[c] = x;
                            argmax[c] = k;
                        }
                    }
                }
                best
            }
        };
        Ok(self.owned(
            vec![width],
            data,
            Op::Pool {
                rows: rows.to_vec(),
                mode,
                argmax,
            },
        ))
    }

    pub fn softmax(&mut self, z: Var) -> Result<Var> {
        let t = self.value(z);
        if t.is_empty() {
            return Err(Error::Empty("softmax"));
        }
        let data = softmax_kernel(t.data());
        Ok(self.owned(vec![data.len()], data, Op::Softmax(z)))
    }

    /// Negative log-likelihood of `target` under the probability vector `p`.
    pub fn nll(&mut self, p: Var, target: usize) -> Result<Var> {
        let t = self.value(p);
        if target >= t.len() {
            return Err(Error::IndexOutOfRange {
                what: "cross_entropy target",
                index: target,
                len: t.len(),
            });
        }
        let loss = -t.data()[target].max(LOG_EPSILON).ln();
        Ok(self.owned(vec![1], vec![loss], Op::Nll { p, target }))
    }

    /// Propagates `d loss / d node` for every node that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        slots[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = slots[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Affine { w, x, b } => {
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let d_in = xv.len();
                    {
                        let gw = slot(&mut slots, *w, wv.len());
                        for (o, &go) in g.iter().enumerate() {
                            if go != 0.0 {
                                let row = &mut gw[o * d_in..(o + 1) * d_in];
                                for (gwi, &xi) in row.iter_mut().zip(xv) {
                                    *gwi += go * xi;
                                }
                            }
                        }
                    }
                    {
                        let gx = slot(&mut slots, *x, d_in);
                        for (o, &go) in g.iter().enumerate() {
                            if go != 0.0 {
                                let row = &wv[o * d_in..(o + 1) * d_in];
                                for (gxi, &wi) in gx.iter_mut().zip(row) {
                                    *gxi += go * wi;
                                }
                            }
                        }
                    }
                    add_into(slot(&mut slots, *b, g.len()), &g);
                }
                Op::Gather { table, row } => {
                    let tv = self.value(*table);
                    let cols = tv.cols();
                    let gt = slot(&mut slots, *table, tv.len());
                    add_into(&mut gt[row * cols..(row + 1) * cols], &g);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(slot(&mut slots, p, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Activation { x, kind } => {
                    let y = node.value.data();
                    let gx = slot(&mut slots, *x, y.len());
                    for ((gxi, &gi), &yi) in gx.iter_mut().zip(&g).zip(y) {
                        *gxi += gi * kind.derivative_from_output(yi);
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut slots, *a, g.len()), &g);
                    add_into(slot(&mut slots, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    {
                        let ga = slot(&mut slots, *a, g.len());
                        for ((gai, &gi), &bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *gai += gi * bi;
                        }
                    }
                    let gb = slot(&mut slots, *b, g.len());
                    for ((gbi, &gi), &ai) in gb.iter_mut().zip(&g).zip(av) {
                        *gbi += gi * ai;
                    }
                }
                Op::Pool { rows, mode, argmax } => match mode {
                    PoolMode::Avg => {
                        let inv = 1.0 / rows.len() as f64;
                        for &r in rows {
                            let gr = slot(&mut slots, r, g.len());
                            for (gri, &gi) in gr.iter_mut().zip(&g) {
                                *gri += gi * inv;
                            }
                        }
                    }
                    PoolMode::Max => {
                        for (c, &k) in argmax.iter().enumerate() {
                            slot(&mut slots, rows[k], g.len())[c] += g[c];
                        }
                    }
                },
                Op::Softmax(z) => {
                    let p = node.value.data();
                    let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                    let gz = slot(&mut slots, *z, p.len());
                    for ((gzi, &pi), &gi) in gz.iter_mut().zip(p).zip(&g) {
                        *gzi += pi * (gi - dot);
                    }
                }
                Op::Nll { p, target } => {
                    let pv = self.value(*p).data();
                    let pt = pv[*target];
                    let gp = slot(&mut slots, *p, pv.len());
                    if pt > LOG_EPSILON {
                        gp[*target] -= g[0] / pt;
                    }
                }
            }
            slots[idx] = Some(g);
        }
        Ok(Gradients { slots })
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn slot(slots: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    slots[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.slots.get(v.0).and_then(|s| s.as_deref())
    }

    /// Gradient for `v` shaped like `like`; all zeros when disconnected.
    pub fn tensor(&self, v: Var, like: &Tensor) -> Tensor {
        match self.get(v) {
            Some(g) => Tensor::from_parts(like.shape().to_vec(), g.to_vec()),
            None => Tensor::zeros(like.shape().to_vec()),
        }
    }
}
