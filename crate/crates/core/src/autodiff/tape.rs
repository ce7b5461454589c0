use super::{Gradients, ParamId, ParameterStore};
use crate::error::{Error, Result};
use crate::kg::Action;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Row { param: ParamId, row: usize },
    MatVec { weight: ParamId, x: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    Dot(Var, Var),
    Sum(Var),
    AddN(Vec<Var>),
    LogSoftmax(Var),
    Pick { src: Var, index: usize },
    ActionScores {
        head: Var,
        relations: ParamId,
        entities: ParamId,
        actions: Vec<Action>,
    },
    BceWithLogits { logit: Var, label: f64 },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records one forward pass. Borrows the parameter store read-only, so any
/// number of tapes may evaluate the same parameters concurrently.
pub struct Tape<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, name: &'static str, value: Vec<f64>, op: Op) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_dim(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (da, db) = (self.dim(a), self.dim(b));
        if da != db {
            return Err(shape_err(op, format!("{da} vs {db}")));
        }
        Ok(da)
    }

    /// A constant with no gradient of its own.
    pub fn input(&mut self, values: Vec<f64>) -> Result<Var> {
        self.push("input", values, Op::Leaf)
    }

    /// A whole parameter tensor, flattened.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let value = self.store.get(id).values().to_vec();
        self.push("param", value, Op::Param(id))
    }

    /// Row `row` of a matrix parameter (embedding lookup).
    pub fn row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let t = self.store.get(id);
        if t.shape().len() != 2 || row >= t.rows() {
            return Err(shape_err(
                "row",
                format!("row {row} of {} with shape {:?}", self.store.name(id), t.shape()),
            ));
        }
        let cols = t.cols();
        let value = t.values()[row * cols..(row + 1) * cols].to_vec();
        self.push("row", value, Op::Row { param: id, row })
    }

    /// `W x` for a `[out, in]` weight.
    pub fn matvec(&mut self, weight: ParamId, x: Var) -> Result<Var> {
        let w = self.store.get(weight);
        let (rows, cols) = (w.rows(), w.cols());
        if w.shape().len() != 2 || cols != self.dim(x) {
            return Err(shape_err(
                "matvec",
                format!("{} {:?} times vector of {}", self.store.name(weight), w.shape(), self.dim(x)),
            ));
        }
        let xv = self.value(x);
        let value = w
            .values()
            .chunks_exact(cols)
            .take(rows)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push("matvec", value, Op::MatVec { weight, x })
    }

    /// `W x + b`.
    pub fn affine(&mut self, weight: ParamId, bias: ParamId, x: Var) -> Result<Var> {
        let wx = self.matvec(weight, x)?;
        let b = self.param(bias)?;
        self.add(wx, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dim("add", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push("add", value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dim("mul", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x * factor).collect();
        self.push("scale", value, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push("tanh", value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| super::sigmoid(x)).collect();
        self.push("sigmoid", value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.push("relu", value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x.exp()).collect();
        self.push("exp", value, Op::Exp(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let value = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push("concat", value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.dim(src) {
            return Err(shape_err("slice", format!("{start}..{} of {}", start + len, self.dim(src))));
        }
        let value = self.value(src)[start..start + len].to_vec();
        self.push("slice", value, Op::Slice { src, start })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dim("dot", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push("dot", vec![value], Op::Dot(a, b))
    }

    /// Reduces a vector to the scalar sum of its entries.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().sum();
        self.push("sum", vec![value], Op::Sum(a))
    }

    /// Elementwise sum of equally sized vectors, accumulated left to right.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("add_n of an empty list".into()))?;
        let mut value = vec![0.0; self.dim(first)];
        for &p in parts {
            self.same_dim("add_n", first, p)?;
            value.iter_mut().zip(self.value(p)).for_each(|(acc, x)| *acc += x);
        }
        self.push("add_n", value, Op::AddN(parts.to_vec()))
    }

    /// Log-probabilities over all entries of `a`.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Contract("softmax over zero entries".into()));
        }
        let lse = super::log_sum_exp(x);
        let value = x.iter().map(|v| v - lse).collect();
        self.push("log_softmax", value, Op::LogSoftmax(a))
    }

    pub fn pick(&mut self, src: Var, index: usize) -> Result<Var> {
        let value = *self
            .value(src)
            .get(index)
            .ok_or_else(|| shape_err("pick", format!("index {index} of {}", self.dim(src))))?;
        self.push("pick", vec![value], Op::Pick { src, index })
    }

    /// Scores each action by `head · [relations[r]; entities[e]]`.
    pub fn action_scores(
        &mut self,
        head: Var,
        relations: ParamId,
        entities: ParamId,
        actions: &[Action],
    ) -> Result<Var> {
        let rel = self.store.get(relations);
        let ent = self.store.get(entities);
        let (dr, de) = (rel.cols(), ent.cols());
        if self.dim(head) != dr + de {
            return Err(shape_err(
                "action_scores",
                format!("head of {} vs embedding width {}", self.dim(head), dr + de),
            ));
        }
        let h = self.value(head);
        let mut value = Vec::with_capacity(actions.len());
        for a in actions {
            if a.relation >= rel.rows() || a.target >= ent.rows() {
                return Err(shape_err("action_scores", format!("action {a:?} out of range")));
            }
            let r = &rel.values()[a.relation * dr..(a.relation + 1) * dr];
            let e = &ent.values()[a.target * de..(a.target + 1) * de];
            let s: f64 = h[..dr].iter().zip(r).map(|(x, y)| x * y).sum::<f64>()
                + h[dr..].iter().zip(e).map(|(x, y)| x * y).sum::<f64>();
            value.push(s);
        }
        self.push(
            "action_scores",
            value,
            Op::ActionScores {
                head,
                relations,
                entities,
                actions: actions.to_vec(),
            },
        )
    }

    /// Numerically stable binary cross-entropy of `sigmoid(logit)` against
    /// `label`.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Result<Var> {
        if self.dim(logit) != 1 {
            return Err(shape_err("bce_with_logits", format!("logit of {}", self.dim(logit))));
        }
        let z = self.scalar(logit);
        let value = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
        self.push("bce_with_logits", vec![value], Op::BceWithLogits { logit, label })
    }

    /// Accumulates `d root / d param` into `grads` for every parameter the
    /// root depends on. `root` must be a scalar.
    pub fn backward(&self, root: Var, grads: &mut Gradients) -> Result<()> {
        self.backward_scaled(root, 1.0, grads)
    }

    /// As [`Tape::backward`] with the seed gradient set to `seed`.
    pub fn backward_scaled(&self, root: Var, seed: f64, grads: &mut Gradients) -> Result<()> {
        if self.dim(root) != 1 {
            return Err(shape_err("backward", format!("root has {} entries", self.dim(root))));
        }
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        node_grads[root.0] = Some(vec![seed]);

        for i in (0..=root.0).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let len = self.nodes[v.0].value.len();
                f(node_grads[v.0].get_or_insert_with(|| vec![0.0; len]));
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let buf = grads.buffer(*id, g.len());
                    buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x);
                }
                Op::Row { param, row } => {
                    let t = self.store.get(*param);
                    let cols = t.cols();
                    let buf = grads.buffer(*param, t.len());
                    buf[row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(b, x)| *b += x);
                }
                Op::MatVec { weight, x } => {
                    let w = self.store.get(*weight);
                    let cols = w.cols();
                    let xv = &self.nodes[x.0].value;
                    acc(*x, &mut |gx| {
                        for (row, gi) in w.values().chunks_exact(cols).zip(&g) {
                            gx.iter_mut().zip(row).for_each(|(a, wij)| *a += gi * wij);
                        }
                    });
                    let buf = grads.buffer(*weight, w.len());
                    for (brow, gi) in buf.chunks_exact_mut(cols).zip(&g) {
                        brow.iter_mut().zip(xv).for_each(|(b, xj)| *b += gi * xj);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        acc(v, &mut |ga| ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &mut |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] * bv[k];
                        }
                    });
                    acc(*b, &mut |gb| {
                        for k in 0..gb.len() {
                            gb[k] += g[k] * av[k];
                        }
                    });
                }
                Op::Scale(a, factor) => {
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(x, y)| *x += factor * y));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, &mut |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] * (1.0 - y[k] * y[k]);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &mut |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] * y[k] * (1.0 - y[k]);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for k in 0..ga.len() {
                            if x[k] > 0.0 {
                                ga[k] += g[k];
                            }
                        }
                    });
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    acc(*a, &mut |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] * y[k];
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        let part = &g[offset..offset + len];
                        acc(p, &mut |gp| gp.iter_mut().zip(part).for_each(|(x, y)| *x += y));
                        offset += len;
                    }
                }
                Op::Slice { src, start } => {
                    acc(*src, &mut |gs| {
                        gs[*start..*start + g.len()]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(x, y)| *x += y);
                    });
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &mut |ga| ga.iter_mut().zip(bv).for_each(|(x, y)| *x += g[0] * y));
                    acc(*b, &mut |gb| gb.iter_mut().zip(av).for_each(|(x, y)| *x += g[0] * y));
                }
                Op::Sum(a) => {
                    acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0]));
                }
                Op::AddN(parts) => {
                    for &p in parts {
                        acc(p, &mut |gp| gp.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    }
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.iter().sum();
                    let y = &node.value;
                    acc(*a, &mut |ga| {
                        for k in 0..ga.len() {
                            ga[k] += g[k] - y[k].exp() * total;
                        }
                    });
                }
                Op::Pick { src, index } => {
                    acc(*src, &mut |gs| gs[*index] += g[0]);
                }
                Op::ActionScores {
                    head,
                    relations,
                    entities,
                    actions,
                } => {
                    let rel = self.store.get(*relations);
                    let ent = self.store.get(*entities);
                    let (dr, de) = (rel.cols(), ent.cols());
                    let h = &self.nodes[head.0].value;
                    acc(*head, &mut |gh| {
                        for (a, gi) in actions.iter().zip(&g) {
                            let r = &rel.values()[a.relation * dr..(a.relation + 1) * dr];
                            let e = &ent.values()[a.target * de..(a.target + 1) * de];
                            gh[..dr].iter_mut().zip(r).for_each(|(x, y)| *x += gi * y);
                            gh[dr..].iter_mut().zip(e).for_each(|(x, y)| *x += gi * y);
                        }
                    });
                    let rbuf = grads.buffer(*relations, rel.len());
                    for (a, gi) in actions.iter().zip(&g) {
                        rbuf[a.relation * dr..(a.relation + 1) * dr]
                            .iter_mut()
                            .zip(&h[..dr])
                            .for_each(|(x, y)| *x += gi * y);
                    }
                    let ebuf = grads.buffer(*entities, ent.len());
                    for (a, gi) in actions.iter().zip(&g) {
                        ebuf[a.target * de..(a.target + 1) * de]
                            .iter_mut()
                            .zip(&h[dr..])
                            .for_each(|(x, y)| *x += gi * y);
                    }
                }
                Op::BceWithLogits { logit, label } => {
                    let z = self.nodes[logit.0].value[0];
                    let d = super::sigmoid(z) - label;
                    acc(*logit, &mut |gz| gz[0] += g[0] * d);
                }
            }
        }
        Ok(())
    }
}
