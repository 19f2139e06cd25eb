//! Dense 2-D tensors with reverse-mode differentiation.
//!
//! The op set is exactly what the operator stack and the loss suite need:
//! affine layers with optional ReLU, blockwise max pooling, channel/row
//! concatenation, elementwise arithmetic, and the scalar reductions. All
//! math is f64. Tensors are immutable once created; each forward pass owns
//! its own graph, so independent passes can run on different threads.
//!
//! `backward` accumulates: calling it twice on the same graph adds the
//! gradients twice. Leaves created for parameters keep their gradient
//! buffer until `zero_grad` or replacement.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;

use crate::error::{shape_err, Error, Result};

#[derive(Clone)]
pub struct Tensor {
    node: Arc<Node>,
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    op: Op,
}

enum Op {
    Leaf,
    /// y = act(x W + b); `relu` decides the activation.
    Linear { x: Tensor, w: Tensor, b: Tensor, relu: bool },
    /// Blockwise max over rows; `argmax[i]` is the flat source index that
    /// produced output element i.
    MaxPool { x: Tensor, argmax: Vec<usize> },
    ConcatCols { a: Tensor, b: Tensor },
    /// Per block of `rows` rows of `x`, one extra row from `extra`.
    AppendRow { x: Tensor, extra: Tensor, rows: usize },
    /// Each row of `x` repeated `reps` times, block-interleaved.
    RepeatRows { x: Tensor, reps: usize },
    Add { a: Tensor, b: Tensor },
    Sub { a: Tensor, b: Tensor },
    Mul { a: Tensor, b: Tensor },
    AddScalar { x: Tensor },
    MulScalar { x: Tensor, k: f64 },
    Sigmoid { x: Tensor },
    Ln { x: Tensor },
    PowConst { x: Tensor, e: f64 },
    ClampMin { x: Tensor, min: f64 },
    /// Elementwise 0.5 x^2 / beta for |x| < beta, else |x| - 0.5 beta.
    Huber { x: Tensor, beta: f64 },
    SumAll { x: Tensor },
    MeanAll { x: Tensor },
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Linear { x, w, b, .. } => vec![x, w, b],
            Op::MaxPool { x, .. }
            | Op::AddScalar { x }
            | Op::MulScalar { x, .. }
            | Op::Sigmoid { x }
            | Op::Ln { x }
            | Op::PowConst { x, .. }
            | Op::ClampMin { x, .. }
            | Op::Huber { x, .. }
            | Op::SumAll { x }
            | Op::MeanAll { x }
            | Op::RepeatRows { x, .. } => vec![x],
            Op::ConcatCols { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                vec![a, b]
            }
            Op::AppendRow { x, extra, .. } => vec![x, extra],
        }
    }
}

fn ensure_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} produced a non-finite value")));
    }
    Ok(())
}

impl Tensor {
    fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op, what: &str) -> Result<Tensor> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        ensure_finite(&data, what)?;
        let requires_grad = op.parents().iter().any(|p| p.node.requires_grad);
        Ok(Tensor {
            node: Arc::new(Node {
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                op,
            }),
        })
    }

    /// Constant leaf; does not participate in gradients.
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::new_leaf(shape, data, false)
    }

    /// Trainable leaf; gradients accumulate here across backward calls.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::new_leaf(shape, data, true)
    }

    fn new_leaf(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            shape_err!("leaf data length {} does not match shape {:?}", data.len(), shape);
        }
        ensure_finite(&data, "leaf")?;
        Ok(Tensor {
            node: Arc::new(Node {
                shape: shape.to_vec(),
                data,
                requires_grad,
                grad: Mutex::new(None),
                op: Op::Leaf,
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product::<usize>();
        Self::leaf(shape, vec![0.0; n]).expect("zeros is always valid")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::Empty("from_rows needs at least one row".into()));
        }
        let c = rows[0].len();
        if rows.iter().any(|r| r.len() != c) {
            shape_err!("from_rows given ragged rows");
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::leaf(&[rows.len(), c], data)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::leaf(&[1], vec![v]).expect("scalar is always valid")
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            shape_err!("item() on tensor of shape {:?}", self.shape());
        }
        Ok(self.node.data[0])
    }

    fn rows_cols(&self) -> Result<(usize, usize)> {
        match self.node.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected 2-D tensor, got shape {s:?}"))),
        }
    }

    pub fn rows(&self) -> Result<usize> {
        Ok(self.rows_cols()?.0)
    }

    pub fn cols(&self) -> Result<usize> {
        Ok(self.rows_cols()?.1)
    }

    /// Copy of the accumulated gradient, if backward has reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().unwrap() = None;
    }

    fn ptr(&self) -> usize {
        Arc::as_ptr(&self.node) as usize
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// Channelwise max over blocks of `rows_per_block` consecutive rows.
    /// (M*n)xC -> MxC. Ties go to the lowest row index.
    pub fn max_pool_blocks(&self, rows_per_block: usize) -> Result<Tensor> {
        let (r, c) = self.rows_cols()?;
        if rows_per_block == 0 || r == 0 {
            return Err(Error::Empty("max pool over an empty group".into()));
        }
        if r % rows_per_block != 0 {
            shape_err!("{r} rows do not divide into blocks of {rows_per_block}");
        }
        let blocks = r / rows_per_block;
        let mut out = vec![f64::NEG_INFINITY; blocks * c];
        let mut argmax = vec![0usize; blocks * c];
        for blk in 0..blocks {
            for row in 0..rows_per_block {
                let src_row = blk * rows_per_block + row;
                for ch in 0..c {
                    let v = self.node.data[src_row * c + ch];
                    let o = blk * c + ch;
                    if v > out[o] {
                        out[o] = v;
                        argmax[o] = src_row * c + ch;
                    }
                }
            }
        }
        Tensor::from_op(vec![blocks, c], out, Op::MaxPool { x: self.clone(), argmax }, "max_pool")
    }

    /// Channelwise max over all rows: PxC -> 1xC plus per-channel argmax rows.
    pub fn max_pool_rows(&self) -> Result<(Tensor, Vec<usize>)> {
        let (r, c) = self.rows_cols()?;
        let pooled = self.max_pool_blocks(r)?;
        let rows = match &pooled.node.op {
            Op::MaxPool { argmax, .. } => argmax.iter().map(|flat| flat / c).collect(),
            _ => unreachable!(),
        };
        Ok((pooled, rows))
    }

    /// Channel-axis concatenation: PxC1 ++ PxC2 -> Px(C1+C2).
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        let (ra, ca) = self.rows_cols()?;
        let (rb, cb) = other.rows_cols()?;
        if ra != rb {
            shape_err!("concat_cols point counts differ: {ra} vs {rb}");
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&self.node.data[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&other.node.data[r * cb..(r + 1) * cb]);
        }
        Tensor::from_op(
            vec![ra, ca + cb],
            data,
            Op::ConcatCols { a: self.clone(), b: other.clone() },
            "concat_cols",
        )
    }

    /// Per block of `rows` rows, append the block's row from `extra`:
    /// (M*rows)xC with MxC -> (M*(rows+1))xC.
    pub fn append_block_rows(&self, extra: &Tensor, rows: usize) -> Result<Tensor> {
        let (r, c) = self.rows_cols()?;
        let (m, ce) = extra.rows_cols()?;
        if rows == 0 || r != m * rows {
            shape_err!("append_block_rows: {r} rows vs {m} blocks of {rows}");
        }
        if ce != c {
            shape_err!("append_block_rows channel mismatch: {c} vs {ce}");
        }
        let mut data = Vec::with_capacity((r + m) * c);
        for blk in 0..m {
            let start = blk * rows * c;
            data.extend_from_slice(&self.node.data[start..start + rows * c]);
            data.extend_from_slice(&extra.node.data[blk * c..(blk + 1) * c]);
        }
        Tensor::from_op(
            vec![r + m, c],
            data,
            Op::AppendRow { x: self.clone(), extra: extra.clone(), rows },
            "append_block_rows",
        )
    }

    /// Repeat each row `reps` times: MxC -> (M*reps)xC.
    pub fn repeat_rows_blockwise(&self, reps: usize) -> Result<Tensor> {
        let (m, c) = self.rows_cols()?;
        if reps == 0 {
            shape_err!("repeat_rows_blockwise with zero repetitions");
        }
        let mut data = Vec::with_capacity(m * reps * c);
        for blk in 0..m {
            for _ in 0..reps {
                data.extend_from_slice(&self.node.data[blk * c..(blk + 1) * c]);
            }
        }
        Tensor::from_op(vec![m * reps, c], data, Op::RepeatRows { x: self.clone(), reps }, "repeat_rows")
    }

    fn zip_same_shape(&self, other: &Tensor, name: &str) -> Result<()> {
        if self.node.shape != other.node.shape {
            shape_err!("{name}: shapes {:?} and {:?} differ", self.shape(), other.shape());
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(other, "add")?;
        let data = self.node.data.iter().zip(&other.node.data).map(|(a, b)| a + b).collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::Add { a: self.clone(), b: other.clone() }, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(other, "sub")?;
        let data = self.node.data.iter().zip(&other.node.data).map(|(a, b)| a - b).collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::Sub { a: self.clone(), b: other.clone() }, "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(other, "mul")?;
        let data = self.node.data.iter().zip(&other.node.data).map(|(a, b)| a * b).collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::Mul { a: self.clone(), b: other.clone() }, "mul")
    }

    pub fn add_scalar(&self, k: f64) -> Result<Tensor> {
        let data = self.node.data.iter().map(|v| v + k).collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::AddScalar { x: self.clone() }, "add_scalar")
    }

    pub fn mul_scalar(&self, k: f64) -> Result<Tensor> {
        let data = self.node.data.iter().map(|v| v * k).collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::MulScalar { x: self.clone(), k }, "mul_scalar")
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data = self
            .node
            .data
            .iter()
            .map(|&v| if v >= 0.0 { 1.0 / (1.0 + (-v).exp()) } else { v.exp() / (1.0 + v.exp()) })
            .collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::Sigmoid { x: self.clone() }, "sigmoid")
    }

    pub fn ln(&self) -> Result<Tensor> {
        let data = self.node.data.iter().map(|v| v.ln()).collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::Ln { x: self.clone() }, "ln")
    }

    pub fn pow_const(&self, e: f64) -> Result<Tensor> {
        let data = self.node.data.iter().map(|v| v.powf(e)).collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::PowConst { x: self.clone(), e }, "pow_const")
    }

    pub fn clamp_min(&self, min: f64) -> Result<Tensor> {
        let data = self.node.data.iter().map(|v| v.max(min)).collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::ClampMin { x: self.clone(), min }, "clamp_min")
    }

    pub fn huber(&self, beta: f64) -> Result<Tensor> {
        if beta <= 0.0 {
            return Err(Error::Config(format!("huber beta must be positive, got {beta}")));
        }
        let data = self
            .node
            .data
            .iter()
            .map(|&d| if d.abs() < beta { 0.5 * d * d / beta } else { d.abs() - 0.5 * beta })
            .collect();
        Tensor::from_op(self.node.shape.clone(), data, Op::Huber { x: self.clone(), beta }, "huber")
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = self.node.data.iter().sum();
        Tensor::from_op(vec![1], vec![s], Op::SumAll { x: self.clone() }, "sum")
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::Empty("mean of an empty tensor".into()));
        }
        let s: f64 = self.node.data.iter().sum();
        Tensor::from_op(vec![1], vec![s / self.numel() as f64], Op::MeanAll { x: self.clone() }, "mean")
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse-topological gradient accumulation from a scalar root.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            shape_err!("backward needs a scalar root, got shape {:?}", self.shape());
        }
        if !self.node.requires_grad {
            return Ok(()); // nothing on the tape wants gradients
        }

        // Post-order DFS; only subgraphs that require gradients matter.
        let mut topo: Vec<Tensor> = Vec::new();
        let mut seen: HashMap<usize, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                topo.push(t);
                continue;
            }
            if seen.contains_key(&t.ptr()) {
                continue;
            }
            seen.insert(t.ptr(), ());
            stack.push((t.clone(), true));
            for p in t.node.op.parents() {
                if p.node.requires_grad && !seen.contains_key(&p.ptr()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        // Flows local to this call; merged into persistent grads at the end
        // so repeated backward calls accumulate exactly once each.
        let mut flow: HashMap<usize, Vec<f64>> = HashMap::new();
        flow.insert(self.ptr(), vec![1.0]);

        for t in topo.iter().rev() {
            let local = match flow.get(&t.ptr()) {
                Some(g) => g.clone(),
                None => continue,
            };
            t.node.op.backward(&t.node, &local, &mut flow);
        }

        for t in &topo {
            if let Some(g) = flow.remove(&t.ptr()) {
                let mut slot = t.node.grad.lock().unwrap();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &self.node.data)
            .finish()
    }
}

fn add_into(flow: &mut HashMap<usize, Vec<f64>>, target: &Tensor, contrib: impl Fn(&mut Vec<f64>)) {
    if !target.node.requires_grad {
        return;
    }
    let entry = flow
        .entry(target.ptr())
        .or_insert_with(|| vec![0.0; target.numel()]);
    contrib(entry);
}

impl Op {
    fn backward(&self, node: &Node, local: &[f64], flow: &mut HashMap<usize, Vec<f64>>) {
        match self {
            Op::Leaf => {}
            Op::Linear { x, w, b, relu } => {
                let (rows, cout) = (node.shape[0], node.shape[1]);
                let cin = x.node.shape[1];
                // dy masked by the activation.
                let dy: Vec<f64> = if *relu {
                    local
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| if node.data[i] > 0.0 { g } else { 0.0 })
                        .collect()
                } else {
                    local.to_vec()
                };
                add_into(flow, x, |gx| {
                    for r in 0..rows {
                        for i in 0..cin {
                            let mut s = 0.0;
                            for c in 0..cout {
                                s += dy[r * cout + c] * w.node.data[i * cout + c];
                            }
                            gx[r * cin + i] += s;
                        }
                    }
                });
                add_into(flow, w, |gw| {
                    for i in 0..cin {
                        for c in 0..cout {
                            let mut s = 0.0;
                            for r in 0..rows {
                                s += x.node.data[r * cin + i] * dy[r * cout + c];
                            }
                            gw[i * cout + c] += s;
                        }
                    }
                });
                add_into(flow, b, |gb| {
                    for c in 0..cout {
                        let mut s = 0.0;
                        for r in 0..rows {
                            s += dy[r * cout + c];
                        }
                        gb[c] += s;
                    }
                });
            }
            Op::MaxPool { x, argmax } => add_into(flow, x, |gx| {
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += local[o];
                }
            }),
            Op::ConcatCols { a, b } => {
                let rows = node.shape[0];
                let ctot = node.shape[1];
                let ca = a.node.shape[1];
                add_into(flow, a, |ga| {
                    for r in 0..rows {
                        for c in 0..ca {
                            ga[r * ca + c] += local[r * ctot + c];
                        }
                    }
                });
                add_into(flow, b, |gb| {
                    let cb = ctot - ca;
                    for r in 0..rows {
                        for c in 0..cb {
                            gb[r * cb + c] += local[r * ctot + ca + c];
                        }
                    }
                });
            }
            Op::AppendRow { x, extra, rows } => {
                let c = node.shape[1];
                let m = extra.node.shape[0];
                add_into(flow, x, |gx| {
                    for blk in 0..m {
                        for row in 0..*rows {
                            let src = (blk * (rows + 1) + row) * c;
                            let dst = (blk * rows + row) * c;
                            for ch in 0..c {
                                gx[dst + ch] += local[src + ch];
                            }
                        }
                    }
                });
                add_into(flow, extra, |ge| {
                    for blk in 0..m {
                        let src = (blk * (rows + 1) + rows) * c;
                        for ch in 0..c {
                            ge[blk * c + ch] += local[src + ch];
                        }
                    }
                });
            }
            Op::RepeatRows { x, reps } => add_into(flow, x, |gx| {
                let c = node.shape[1];
                let m = x.node.shape[0];
                for blk in 0..m {
                    for rep in 0..*reps {
                        let src = (blk * reps + rep) * c;
                        for ch in 0..c {
                            gx[blk * c + ch] += local[src + ch];
                        }
                    }
                }
            }),
            Op::Add { a, b } => {
                add_into(flow, a, |g| g.iter_mut().zip(local).for_each(|(g, l)| *g += l));
                add_into(flow, b, |g| g.iter_mut().zip(local).for_each(|(g, l)| *g += l));
            }
            Op::Sub { a, b } => {
                add_into(flow, a, |g| g.iter_mut().zip(local).for_each(|(g, l)| *g += l));
                add_into(flow, b, |g| g.iter_mut().zip(local).for_each(|(g, l)| *g -= l));
            }
            Op::Mul { a, b } => {
                add_into(flow, a, |g| {
                    for (i, l) in local.iter().enumerate() {
                        g[i] += l * b.node.data[i];
                    }
                });
                add_into(flow, b, |g| {
                    for (i, l) in local.iter().enumerate() {
                        g[i] += l * a.node.data[i];
                    }
                });
            }
            Op::AddScalar { x } => add_into(flow, x, |g| g.iter_mut().zip(local).for_each(|(g, l)| *g += l)),
            Op::MulScalar { x, k } => add_into(flow, x, |g| {
                g.iter_mut().zip(local).for_each(|(g, l)| *g += k * l)
            }),
            Op::Sigmoid { x } => add_into(flow, x, |g| {
                for (i, l) in local.iter().enumerate() {
                    let y = node.data[i];
                    g[i] += l * y * (1.0 - y);
                }
            }),
            Op::Ln { x } => add_into(flow, x, |g| {
                for (i, l) in local.iter().enumerate() {
                    g[i] += l / x.node.data[i];
                }
            }),
            Op::PowConst { x, e } => add_into(flow, x, |g| {
                for (i, l) in local.iter().enumerate() {
                    g[i] += l * e * x.node.data[i].powf(e - 1.0);
                }
            }),
            Op::ClampMin { x, min } => add_into(flow, x, |g| {
                for (i, l) in local.iter().enumerate() {
                    if x.node.data[i] > *min {
                        g[i] += l;
                    }
                }
            }),
            Op::Huber { x, beta } => add_into(flow, x, |g| {
                for (i, l) in local.iter().enumerate() {
                    let d = x.node.data[i];
                    g[i] += l * if d.abs() < *beta { d / beta } else { d.signum() };
                }
            }),
            Op::SumAll { x } => add_into(flow, x, |g| g.iter_mut().for_each(|g| *g += local[0])),
            Op::MeanAll { x } => add_into(flow, x, |g| {
                let k = local[0] / x.numel() as f64;
                g.iter_mut().for_each(|g| *g += k);
            }),
        }
    }
}

// ── shared MLP ───────────────────────────────────────────────────────

/// One affine layer applied pointwise across the row axis.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: Tensor, // C_in x C_out
    pub bias: Tensor,   // 1 x C_out
    pub relu: bool,
}

impl LinearLayer {
    pub fn new(weight: Tensor, bias: Tensor, relu: bool) -> Result<Self> {
        let (_, cout) = weight.rows_cols()?;
        let (br, bc) = bias.rows_cols()?;
        if br != 1 || bc != cout {
            shape_err!("bias shape {:?} does not match weight output width {cout}", bias.shape());
        }
        Ok(LinearLayer { weight, bias, relu })
    }

    /// He-uniform initialized trainable layer.
    pub fn init(c_in: usize, c_out: usize, relu: bool, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / c_in as f64).sqrt();
        let w: Vec<f64> = (0..c_in * c_out).map(|_| rng.gen_range(-bound..bound)).collect();
        LinearLayer {
            weight: Tensor::param(&[c_in, c_out], w).expect("init weight"),
            bias: Tensor::param(&[1, c_out], vec![0.0; c_out]).expect("init bias"),
            relu,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// y = act(x W + b). Rows are points; channels chain C_in -> C_out.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cin) = x.rows_cols()?;
        let (win, cout) = self.weight.rows_cols()?;
        if cin != win {
            shape_err!("input width {cin} does not match layer input {win}");
        }
        let xd = x.data();
        let wd = self.weight.data();
        let bd = self.bias.data();
        let mut out = vec![0.0; rows * cout];
        for r in 0..rows {
            let row = &xd[r * cin..(r + 1) * cin];
            let dst = &mut out[r * cout..(r + 1) * cout];
            dst.copy_from_slice(bd);
            for (i, &xv) in row.iter().enumerate() {
                let wrow = &wd[i * cout..(i + 1) * cout];
                for c in 0..cout {
                    dst[c] += xv * wrow[c];
                }
            }
            if self.relu {
                for v in dst.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        Tensor::from_op(
            vec![rows, cout],
            out,
            Op::Linear {
                x: x.clone(),
                w: self.weight.clone(),
                b: self.bias.clone(),
                relu: self.relu,
            },
            "linear",
        )
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }
}

/// A chain of shared-MLP layers. Adjacent widths must agree.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<LinearLayer>) -> Result<Self> {
        let mlp = Mlp { layers };
        mlp.validate()?;
        Ok(mlp)
    }

    /// ReLU on every layer except the last (identity), widths chained.
    pub fn init(widths: &[usize], final_identity: bool, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output widths".into()));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let relu = !(final_identity && i == n - 1);
                LinearLayer::init(widths[i], widths[i + 1], relu, rng)
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].c_out() != pair[1].c_in() {
                return Err(Error::Config(format!(
                    "MLP widths do not chain: {} -> {}",
                    pair[0].c_out(),
                    pair[1].c_in()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.apply(&cur)?;
        }
        Ok(cur)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}
