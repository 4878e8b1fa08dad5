//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every operation appends a node holding its output value and the ids of its
//! parents. Parents always precede children, so a single reverse sweep over
//! node ids visits the graph in reverse topological order.

use crate::error::{Error, Result};
use crate::tensor::{GradientSet, NamedTensors, Tensor};

/// Handle to a node on a [`ComputeTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Row(Var, usize),
    StackRows(Vec<Var>),
    MaxPoolTime {
        input: Var,
        argmax: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Records a forward computation so gradients can be pulled back to its leaves.
///
/// Leaves registered with [`ComputeTape::param`] receive gradients;
/// leaves from [`ComputeTape::constant`] do not.
#[derive(Debug, Default)]
pub struct ComputeTape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

impl ComputeTape {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Registers a named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::Validation(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let v = self.push(Op::Input, value, "param")?;
        self.params.push((name, v));
        Ok(v)
    }

    /// Registers a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Input, value, "constant")
    }

    /// Matrix product of two rank-2 nodes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b)).map_err(|e| match e {
            Error::Shape { .. } => Error::shape("matmul", self.shape(a), self.shape(b)),
            other => other,
        })?;
        self.push(Op::MatMul(a, b), out, "matmul")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), name, f)?;
        self.push(op, out, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "subtract", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "hadamard", Op::Hadamard(a, b), |x, y| x * y)
    }

    /// Multiplies every element by a constant; the only broadcast supported.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), out, "scale")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out, "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), out, "relu")
    }

    /// Row `i` of a rank-2 node, as a `[1 × cols]` node.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let src = self.value(a);
        let (_, cols) = src.dims2()?;
        let data = src.row(i)?.to_vec();
        self.push(
            Op::Row(a, i),
            Tensor::from_parts(vec![1, cols], data),
            "row",
        )
    }

    /// Stacks `[1 × c]` rows into an `[n × c]` node.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::EmptyInput("stack_rows needs at least one row".into()))?;
        let row_shape = self.shape(first).to_vec();
        let cols = match row_shape.as_slice() {
            &[1, c] => c,
            _ => return Err(Error::shape("stack_rows", &row_shape, &[1, 0])),
        };
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if self.shape(r) != row_shape.as_slice() {
                return Err(Error::shape("stack_rows", &row_shape, self.shape(r)));
            }
            data.extend_from_slice(self.value(r).data());
        }
        let out = Tensor::from_parts(vec![rows.len(), cols], data);
        self.push(Op::StackRows(rows.to_vec()), out, "stack_rows")
    }

    /// Per-column maximum over the rows (time steps) of a `[T × H]` node,
    /// giving a `[1 × H]` node. Gradient flows to the first maximal row.
    pub fn maxpool_time(&mut self, seq: Var) -> Result<Var> {
        let (pooled, argmax) = maxpool_with_argmax(self.value(seq))?;
        let h = pooled.len();
        self.push(
            Op::MaxPoolTime { input: seq, argmax },
            Tensor::from_parts(vec![1, h], pooled.into_data()),
            "maxpool_time",
        )
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, as a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let value = self.value(logits);
        let (batch, classes) = value.dims2()?;
        if labels.len() != batch {
            return Err(Error::shape(
                "softmax_cross_entropy",
                &[batch, classes],
                &[labels.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                bound: classes,
            });
        }
        let probs = softmax_rows(value)?.into_data();
        let mut loss = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            let row = value.row(b)?;
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            loss += log_sum - (row[label] - max);
        }
        loss /= batch as f64;
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            "softmax_cross_entropy",
        )
    }

    /// Runs the reverse sweep from a scalar root and returns gradients for
    /// every registered parameter, in registration order.
    ///
    /// Consumes the tape: one backward pass per recorded forward pass.
    pub fn backward(self, root: Var) -> Result<GradientSet> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "root node {} is not on the tape",
                root.0
            )));
        }
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (n, k) = av.dims2()?;
                    let (_, m) = bv.dims2()?;
                    // dA = dC · Bᵀ
                    accumulate(&mut grads, *a, n * k, |ga| {
                        for i in 0..n {
                            let g_row = &g[i * m..(i + 1) * m];
                            for p in 0..k {
                                let b_row = &bv.data()[p * m..(p + 1) * m];
                                ga[i * k + p] += dot(g_row, b_row);
                            }
                        }
                    });
                    // dB = Aᵀ · dC
                    accumulate(&mut grads, *b, k * m, |gb| {
                        for i in 0..n {
                            let g_row = &g[i * m..(i + 1) * m];
                            for p in 0..k {
                                let a = av.data()[i * k + p];
                                if a == 0.0 {
                                    continue;
                                }
                                for (o, &gv) in gb[p * m..(p + 1) * m].iter_mut().zip(g_row) {
                                    *o += a * gv;
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.len(), |ga| add_into(ga, &g));
                    accumulate(&mut grads, *b, g.len(), |gb| add_into(gb, &g));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.len(), |ga| add_into(ga, &g));
                    accumulate(&mut grads, *b, g.len(), |gb| {
                        gb.iter_mut().zip(&g).for_each(|(o, &x)| *o -= x)
                    });
                }
                Op::Hadamard(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    accumulate(&mut grads, *a, g.len(), |ga| {
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv[i];
                        }
                    });
                    accumulate(&mut grads, *b, g.len(), |gb| {
                        for i in 0..g.len() {
                            gb[i] += g[i] * av[i];
                        }
                    });
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.len(), |ga| {
                        ga.iter_mut().zip(&g).for_each(|(o, &x)| *o += c * x)
                    });
                }
                Op::Sigmoid(a) => {
                    let s = node.value.data();
                    accumulate(&mut grads, *a, g.len(), |ga| {
                        for i in 0..g.len() {
                            ga[i] += g[i] * s[i] * (1.0 - s[i]);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    accumulate(&mut grads, *a, g.len(), |ga| {
                        for i in 0..g.len() {
                            ga[i] += g[i] * (1.0 - y[i] * y[i]);
                        }
                    });
                }
                Op::Relu(a) => {
                    let y = node.value.data();
                    accumulate(&mut grads, *a, g.len(), |ga| {
                        for i in 0..g.len() {
                            if y[i] > 0.0 {
                                ga[i] += g[i];
                            }
                        }
                    });
                }
                Op::Row(a, i) => {
                    let n = self.value(*a).len();
                    let cols = g.len();
                    accumulate(&mut grads, *a, n, |ga| {
                        add_into(&mut ga[i * cols..(i + 1) * cols], &g)
                    });
                }
                Op::StackRows(rows) => {
                    let cols = g.len() / rows.len();
                    for (r, &src) in rows.iter().enumerate() {
                        accumulate(&mut grads, src, cols, |gs| {
                            add_into(gs, &g[r * cols..(r + 1) * cols])
                        });
                    }
                }
                Op::MaxPoolTime { input, argmax } => {
                    let n = self.value(*input).len();
                    let h = argmax.len();
                    accumulate(&mut grads, *input, n, |gi| {
                        for (j, &t) in argmax.iter().enumerate() {
                            gi[t * h + j] += g[j];
                        }
                    });
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let batch = labels.len();
                    let classes = probs.len() / batch;
                    let scale = g[0] / batch as f64;
                    accumulate(&mut grads, *logits, probs.len(), |gl| {
                        for (b, &label) in labels.iter().enumerate() {
                            for c in 0..classes {
                                let onehot = if c == label { 1.0 } else { 0.0 };
                                gl[b * classes + c] += scale * (probs[b * classes + c] - onehot);
                            }
                        }
                    });
                }
            }
        }

        let mut out = NamedTensors::new();
        for (name, v) in &self.params {
            let shape = self.shape(*v).to_vec();
            let data = match grads.get_mut(v.0).and_then(Option::take) {
                Some(d) => d,
                None => vec![0.0; self.value(*v).len()],
            };
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            out.insert(name.clone(), Tensor::from_parts(shape, data))?;
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, &x)| *o += x);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a rank-2 tensor, stabilized by subtracting each row's max.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (rows, cols) = logits.dims2()?;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = logits.row(r)?;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&x| (x - max).exp()));
        let z: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|p| *p /= z);
    }
    Ok(Tensor::from_parts(vec![rows, cols], out))
}

fn maxpool_with_argmax(seq: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (t, h) = seq.dims2().map_err(|_| {
        Error::Validation(format!("maxpool_time needs [T × H], got {:?}", seq.shape()))
    })?;
    if t == 0 {
        return Err(Error::EmptyInput(
            "maxpool_time over zero time steps".into(),
        ));
    }
    let data = seq.data();
    let mut best = data[..h].to_vec();
    let mut argmax = vec![0; h];
    for step in 1..t {
        for j in 0..h {
            let x = data[step * h + j];
            if x > best[j] {
                best[j] = x;
                argmax[j] = step;
            }
        }
    }
    Ok((Tensor::from_parts(vec![h], best), argmax))
}

/// Per-column maximum over the rows of a `[T × H]` tensor, as an `[H]` tensor.
pub fn maxpool_time(seq: &Tensor) -> Result<Tensor> {
    maxpool_with_argmax(seq).map(|(pooled, _)| pooled)
}
