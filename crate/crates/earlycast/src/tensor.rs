//! Dense rank-2 tensors with reverse-mode automatic differentiation.
//!
//! The computation graph is a dynamic tape rebuilt on every forward pass:
//! each op allocates a fresh node holding its values, its parents, and a
//! closure that scatters the node's gradient back into the parents. Values
//! are immutable once a node exists; parameters live outside the graph as
//! plain [`Param`] storage and are re-leafed each pass. Everything is `f64`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

/// Row-major rank-2 shape. Vectors are `1 x n` rows; scalars are `1 x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

struct Node {
    shape: Shape,
    values: Vec<f64>,
    grad: RefCell<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Handle to a node in the computation graph. Cloning is cheap (`Rc`).
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

fn accumulate(target: &Tensor, delta: &[f64]) {
    if !target.0.requires_grad {
        return;
    }
    let mut grad = target.0.grad.borrow_mut();
    for (g, d) in grad.iter_mut().zip(delta) {
        *g += d;
    }
}

impl Tensor {
    fn new(
        values: Vec<f64>,
        shape: Shape,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        assert_eq!(values.len(), shape.len(), "value buffer does not match shape");
        let grad = vec![0.0; values.len()];
        Tensor(Rc::new(Node {
            shape,
            values,
            grad: RefCell::new(grad),
            requires_grad,
            parents,
            backward,
        }))
    }

    /// Constant (non-differentiable) tensor.
    pub fn constant(values: Vec<f64>, rows: usize, cols: usize) -> Tensor {
        Tensor::new(values, Shape { rows, cols }, false, vec![], None)
    }

    /// Leaf tensor that participates in gradient accumulation.
    pub fn leaf(values: Vec<f64>, rows: usize, cols: usize) -> Tensor {
        Tensor::new(values, Shape { rows, cols }, true, vec![], None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(vec![v], 1, 1)
    }

    pub fn row(values: Vec<f64>) -> Tensor {
        let n = values.len();
        Tensor::constant(values, 1, n)
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    /// Scalar payload; panics if the tensor is not 1x1.
    pub fn value(&self) -> f64 {
        assert_eq!(self.0.shape.len(), 1, "value() requires a scalar tensor");
        self.0.values[0]
    }

    pub fn grad(&self) -> Vec<f64> {
        self.0.grad.borrow().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    fn unary<F, G>(&self, f: F, df: G) -> Tensor
    where
        F: Fn(f64) -> f64,
        G: Fn(f64, f64) -> f64 + 'static,
    {
        let values: Vec<f64> = self.0.values.iter().map(|&x| f(x)).collect();
        let out_values = values.clone();
        let inputs = self.0.values.clone();
        let shape = self.0.shape;
        let rg = self.0.requires_grad;
        Tensor::new(
            values,
            shape,
            rg,
            vec![self.clone()],
            Some(Box::new(move |out_grad, parents| {
                let delta: Vec<f64> = out_grad
                    .iter()
                    .zip(inputs.iter().zip(out_values.iter()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                accumulate(&parents[0], &delta);
            })),
        )
    }

    fn binary_elementwise<F>(&self, rhs: &Tensor, f: F, dfa: BinGrad, dfb: BinGrad) -> Tensor
    where
        F: Fn(f64, f64) -> f64,
    {
        assert_eq!(self.0.shape, rhs.0.shape, "elementwise op requires equal shapes");
        let values: Vec<f64> = self
            .0
            .values
            .iter()
            .zip(rhs.0.values.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let a_vals = self.0.values.clone();
        let b_vals = rhs.0.values.clone();
        let rg = self.0.requires_grad || rhs.0.requires_grad;
        Tensor::new(
            values,
            self.0.shape,
            rg,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(move |out_grad, parents| {
                let da: Vec<f64> = out_grad
                    .iter()
                    .zip(a_vals.iter().zip(b_vals.iter()))
                    .map(|(&g, (&a, &b))| g * dfa(a, b))
                    .collect();
                let db: Vec<f64> = out_grad
                    .iter()
                    .zip(a_vals.iter().zip(b_vals.iter()))
                    .map(|(&g, (&a, &b))| g * dfb(a, b))
                    .collect();
                accumulate(&parents[0], &da);
                accumulate(&parents[1], &db);
            })),
        )
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        self.binary_elementwise(rhs, |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        self.binary_elementwise(rhs, |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        self.binary_elementwise(rhs, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, rhs: &Tensor) -> Tensor {
        self.binary_elementwise(rhs, |a, b| a / b, |_, b| 1.0 / b, |a, b| -a / (b * b))
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _| -1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        self.unary(|x| x.ln(), |x, _| 1.0 / x)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(|x| x.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn elu(&self) -> Tensor {
        self.unary(
            |x| if x >= 0.0 { x } else { x.exp() - 1.0 },
            |x, y| if x >= 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    /// Broadcast-multiplies every entry by a differentiable 1x1 tensor.
    pub fn mul_scalar_tensor(&self, s: &Tensor) -> Tensor {
        assert_eq!(s.0.shape.len(), 1, "mul_scalar_tensor expects a scalar rhs");
        let sv = s.0.values[0];
        let values: Vec<f64> = self.0.values.iter().map(|&x| x * sv).collect();
        let a_vals = self.0.values.clone();
        let rg = self.0.requires_grad || s.0.requires_grad;
        Tensor::new(
            values,
            self.0.shape,
            rg,
            vec![self.clone(), s.clone()],
            Some(Box::new(move |out_grad, parents| {
                let da: Vec<f64> = out_grad.iter().map(|&g| g * sv).collect();
                accumulate(&parents[0], &da);
                let ds: f64 = out_grad.iter().zip(a_vals.iter()).map(|(&g, &a)| g * a).sum();
                accumulate(&parents[1], &[ds]);
            })),
        )
    }

    /// Matrix product `self (m x k) * rhs (k x n)`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        let (m, k) = (self.0.shape.rows, self.0.shape.cols);
        let (k2, n) = (rhs.0.shape.rows, rhs.0.shape.cols);
        assert_eq!(k, k2, "matmul inner dimensions differ: {k} vs {k2}");
        let a = self.0.values.clone();
        let b = rhs.0.values.clone();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    values[i * n + j] += aip * b[p * n + j];
                }
            }
        }
        let rg = self.0.requires_grad || rhs.0.requires_grad;
        Tensor::new(
            values,
            Shape { rows: m, cols: n },
            rg,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(move |out_grad, parents| {
                // dA = dC * B^T, dB = A^T * dC
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += out_grad[i * n + j] * b[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += a[i * k + p] * out_grad[i * n + j];
                        }
                        db[p * n + j] = acc;
                    }
                }
                accumulate(&parents[0], &da);
                accumulate(&parents[1], &db);
            })),
        )
    }

    /// Row-wise softmax, numerically stabilized by max subtraction.
    pub fn softmax(&self) -> Tensor {
        let Shape { rows, cols } = self.0.shape;
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.0.values[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                values[r * cols + j] = e;
                sum += e;
            }
            for j in 0..cols {
                values[r * cols + j] /= sum;
            }
        }
        let out_values = values.clone();
        let rg = self.0.requires_grad;
        Tensor::new(
            values,
            self.0.shape,
            rg,
            vec![self.clone()],
            Some(Box::new(move |out_grad, parents| {
                let mut delta = vec![0.0; rows * cols];
                for r in 0..rows {
                    let s = &out_values[r * cols..(r + 1) * cols];
                    let g = &out_grad[r * cols..(r + 1) * cols];
                    let dot: f64 = s.iter().zip(g.iter()).map(|(&si, &gi)| si * gi).sum();
                    for j in 0..cols {
                        delta[r * cols + j] = s[j] * (g[j] - dot);
                    }
                }
                accumulate(&parents[0], &delta);
            })),
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.0.values.iter().sum();
        let n = self.0.values.len();
        let rg = self.0.requires_grad;
        Tensor::new(
            vec![total],
            Shape { rows: 1, cols: 1 },
            rg,
            vec![self.clone()],
            Some(Box::new(move |out_grad, parents| {
                let delta = vec![out_grad[0]; n];
                accumulate(&parents[0], &delta);
            })),
        )
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&self) -> Tensor {
        let n = self.0.values.len();
        self.sum().scale(1.0 / n as f64)
    }

    /// Horizontal concatenation of single-row tensors into one row.
    pub fn concat_cols(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let mut values = Vec::new();
        let mut offsets = Vec::with_capacity(parts.len());
        let mut rg = false;
        for p in parts {
            assert_eq!(p.0.shape.rows, 1, "concat_cols expects row tensors");
            offsets.push((values.len(), p.0.shape.cols));
            values.extend_from_slice(&p.0.values);
            rg |= p.0.requires_grad;
        }
        let cols = values.len();
        Tensor::new(
            values,
            Shape { rows: 1, cols },
            rg,
            parts.to_vec(),
            Some(Box::new(move |out_grad, parents| {
                for (parent, &(start, len)) in parents.iter().zip(offsets.iter()) {
                    accumulate(parent, &out_grad[start..start + len]);
                }
            })),
        )
    }

    /// Vertical stack of equal-width tensors.
    pub fn concat_rows(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let cols = parts[0].0.shape.cols;
        let mut values = Vec::new();
        let mut spans = Vec::with_capacity(parts.len());
        let mut rg = false;
        for p in parts {
            assert_eq!(p.0.shape.cols, cols, "concat_rows expects equal widths");
            spans.push((values.len(), p.0.values.len()));
            values.extend_from_slice(&p.0.values);
            rg |= p.0.requires_grad;
        }
        let rows = values.len() / cols;
        Tensor::new(
            values,
            Shape { rows, cols },
            rg,
            parts.to_vec(),
            Some(Box::new(move |out_grad, parents| {
                for (parent, &(start, len)) in parents.iter().zip(spans.iter()) {
                    accumulate(parent, &out_grad[start..start + len]);
                }
            })),
        )
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// node reachable through `requires_grad` paths.
    pub fn backward(&self) {
        assert_eq!(self.0.shape.len(), 1, "backward() requires a scalar loss");
        let order = topo_order(self);
        self.0.grad.borrow_mut()[0] = 1.0;
        for node in order.iter().rev() {
            if !node.0.requires_grad {
                continue;
            }
            if let Some(back) = &node.0.backward {
                let grad = node.0.grad.borrow().clone();
                back(&grad, &node.0.parents);
            }
        }
    }
}

type BinGrad = fn(f64, f64) -> f64;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const Node> = HashSet::new();
    // Iterative post-order DFS; graphs can be deep (long GRU chains).
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(Rc::as_ptr(&root.0));
    while let Some((node, child)) = stack.pop() {
        if child < node.0.parents.len() {
            stack.push((node.clone(), child + 1));
            let parent = node.0.parents[child].clone();
            if visited.insert(Rc::as_ptr(&parent.0)) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

// ---------------------------------------------------------------------------
// Parameters, optimizer, checkpoints
// ---------------------------------------------------------------------------

/// Named trainable parameter stored outside the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Param {
    pub fn zeros(rows: usize, cols: usize) -> Param {
        Param {
            values: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn leaf(&self) -> Tensor {
        Tensor::leaf(self.values.clone(), self.rows, self.cols)
    }
}

/// Deterministically ordered parameter collection.
pub type ParamSet = BTreeMap<String, Param>;

/// Adam with bias correction. Moments are kept per parameter name and
/// shaped like the parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Vec<f64>>) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (name, param) in params.iter_mut() {
            let Some(grad) = grads.get(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; param.values.len()], vec![0.0; param.values.len()]));
            for i in 0..param.values.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ECKP";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a parameter set as a versioned little-endian binary checkpoint.
/// The byte stream is a pure function of the parameter contents.
pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<(), TensorError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, p) in params {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(p.rows as u64).to_le_bytes());
        buf.extend_from_slice(&(p.cols as u64).to_le_bytes());
        for v in &p.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet, TensorError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], TensorError> {
        if *cursor + n > bytes.len() {
            return Err(TensorError::Checkpoint("unexpected end of file".into()));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };
    if take(&mut cursor, 4)? != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
            .map_err(|_| TensorError::Checkpoint("non-utf8 parameter name".into()))?;
        let rows = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()));
        }
        params.insert(name, Param { values, rows, cols });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences over a flat input vector.
    fn numeric_grad<F>(f: F, xs: &[f64], eps: f64) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut grad = vec![0.0; xs.len()];
        let mut work = xs.to_vec();
        for i in 0..xs.len() {
            let x0 = work[i];
            work[i] = x0 + eps;
            let hi = f(&work);
            work[i] = x0 - eps;
            let lo = f(&work);
            work[i] = x0;
            grad[i] = (hi - lo) / (2.0 * eps);
        }
        grad
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric.iter())
            .map(|(&a, &n)| {
                let denom = a.abs().max(n.abs()).max(1e-8);
                (a - n).abs() / denom
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::leaf(vec![3.0], 1, 1);
        let y = x.mul(&x);
        y.backward();
        assert_eq!(y.value(), 9.0);
        assert_eq!(x.grad()[0], 6.0);
    }

    #[test]
    fn sum_of_products_gradient_is_other_factor() {
        let a = Tensor::leaf(vec![1.0, -2.0, 0.5], 1, 3);
        let b = Tensor::constant(vec![4.0, 5.0, 6.0], 1, 3);
        let loss = a.mul(&b).sum();
        loss.backward();
        assert_eq!(a.grad(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::constant(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let a = Tensor::constant(vec![1.5, -2.0, 3.0, 0.25], 2, 2);
        let out = eye.matmul(&a);
        assert_eq!(out.values(), a.values());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::constant(vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0], 2, 3);
        let s = x.softmax();
        for r in 0..2 {
            let sum: f64 = s.values()[r * 3..(r + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::constant(vec![0.0], 1, 1);
        assert_eq!(x.sigmoid().value(), 0.5);
    }

    #[test]
    fn shared_node_accumulates_grad_once_per_use() {
        // loss = x*x + x  => dloss/dx = 2x + 1
        let x = Tensor::leaf(vec![2.0], 1, 1);
        let loss = x.mul(&x).add(&x);
        loss.backward();
        assert!((x.grad()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn composite_matches_finite_differences() {
        // Three-layer composite over a 2x3 input: softmax, tanh, matmul,
        // leaky_relu, elu, log/exp paths all on the tape at once.
        let seed_vals: Vec<f64> = (0..6).map(|i| 0.3 * (i as f64) - 0.7).collect();
        let w_vals: Vec<f64> = (0..9).map(|i| 0.1 * (i as f64 + 1.0) - 0.45).collect();

        let eval = |xs: &[f64]| -> f64 {
            let x = Tensor::leaf(xs[..6].to_vec(), 2, 3);
            let w = Tensor::leaf(xs[6..].to_vec(), 3, 3);
            let h = x.matmul(&w).tanh();
            let s = h.softmax();
            let t = s.leaky_relu(0.2).elu().add_scalar(1.5).log();
            let u = t.mul(&h.sigmoid()).sub(&s.scale(0.3));
            u.exp().mean().value()
        };

        let mut all = seed_vals.clone();
        all.extend_from_slice(&w_vals);

        let x = Tensor::leaf(seed_vals.clone(), 2, 3);
        let w = Tensor::leaf(w_vals.clone(), 3, 3);
        let h = x.matmul(&w).tanh();
        let s = h.softmax();
        let t = s.leaky_relu(0.2).elu().add_scalar(1.5).log();
        let u = t.mul(&h.sigmoid()).sub(&s.scale(0.3));
        let loss = u.exp().mean();
        loss.backward();

        let numeric = numeric_grad(eval, &all, 1e-6);
        let mut analytic = x.grad();
        analytic.extend(w.grad());
        assert!(
            max_rel_err(&analytic, &numeric) < 1e-4,
            "rel err {}",
            max_rel_err(&analytic, &numeric)
        );
    }

    #[test]
    fn per_op_finite_difference_checks() {
        let xs: Vec<f64> = vec![0.8, -0.4, 1.3, 0.2, -1.1, 0.6];
        struct Case {
            name: &'static str,
            f: Box<dyn Fn(&Tensor) -> Tensor>,
        }
        let cases = vec![
            Case { name: "exp", f: Box::new(|t: &Tensor| t.exp()) },
            Case { name: "log", f: Box::new(|t: &Tensor| t.add_scalar(2.0).log()) },
            Case { name: "sigmoid", f: Box::new(|t: &Tensor| t.sigmoid()) },
            Case { name: "tanh", f: Box::new(|t: &Tensor| t.tanh()) },
            Case { name: "leaky", f: Box::new(|t: &Tensor| t.leaky_relu(0.2)) },
            Case { name: "elu", f: Box::new(|t: &Tensor| t.elu()) },
            Case { name: "softmax", f: Box::new(|t: &Tensor| t.softmax()) },
            Case { name: "neg", f: Box::new(|t: &Tensor| t.neg()) },
            Case { name: "div", f: Box::new(|t: &Tensor| t.div(&t.add_scalar(3.0))) },
            Case { name: "mean", f: Box::new(|t: &Tensor| t.mean()) },
        ];
        for case in cases {
            let leaf = Tensor::leaf(xs.clone(), 2, 3);
            let loss = (case.f)(&leaf).sum();
            loss.backward();
            let numeric = numeric_grad(
                |v| {
                    let leaf = Tensor::leaf(v.to_vec(), 2, 3);
                    (case.f)(&leaf).sum().value()
                },
                &xs,
                1e-6,
            );
            let err = max_rel_err(&leaf.grad(), &numeric);
            assert!(err < 1e-4, "{}: rel err {err}", case.name);
        }
    }

    #[test]
    fn concat_gradients_split_correctly() {
        let a = Tensor::leaf(vec![1.0, 2.0], 1, 2);
        let b = Tensor::leaf(vec![3.0], 1, 1);
        let joined = Tensor::concat_cols(&[a.clone(), b.clone()]);
        let loss = joined.mul(&Tensor::row(vec![10.0, 20.0, 30.0])).sum();
        loss.backward();
        assert_eq!(a.grad(), vec![10.0, 20.0]);
        assert_eq!(b.grad(), vec![30.0]);

        let r1 = Tensor::leaf(vec![1.0, 2.0], 1, 2);
        let r2 = Tensor::leaf(vec![3.0, 4.0], 1, 2);
        let stacked = Tensor::concat_rows(&[r1.clone(), r2.clone()]);
        let loss = stacked.mul(&Tensor::constant(vec![1.0, 2.0, 3.0, 4.0], 2, 2)).sum();
        loss.backward();
        assert_eq!(r1.grad(), vec![1.0, 2.0]);
        assert_eq!(r2.grad(), vec![3.0, 4.0]);
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut params = ParamSet::new();
        params.insert("w".into(), Param { values: vec![1.0, -2.0], rows: 1, cols: 2 });
        let before = params.clone();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![0.0, 0.0]);
        let mut adam = Adam::new(0.1);
        adam.step(&mut params, &grads);
        assert_eq!(params, before);
    }

    #[test]
    fn adam_descends_on_1d_quadratic() {
        let mut params = ParamSet::new();
        params.insert("w".into(), Param { values: vec![1.0], rows: 1, cols: 1 });
        let mut adam = Adam::new(0.05);
        let f = |w: f64| w * w;
        let before = f(params["w"].values[0]);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![2.0 * params["w"].values[0]]);
        adam.step(&mut params, &grads);
        assert!(f(params["w"].values[0]) < before);
    }

    #[test]
    fn adam_converges_on_2d_quadratic() {
        // f(w) = (w0 - 3)^2 + 2*(w1 + 1)^2, minimizer (3, -1)
        let mut params = ParamSet::new();
        params.insert("w".into(), Param { values: vec![0.0, 0.0], rows: 1, cols: 2 });
        let mut adam = Adam::new(0.05);
        for _ in 0..500 {
            let w = &params["w"].values;
            let grad = vec![2.0 * (w[0] - 3.0), 4.0 * (w[1] + 1.0)];
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), grad);
            adam.step(&mut params, &grads);
        }
        let w = &params["w"].values;
        assert!((w[0] - 3.0).abs() < 1e-3, "w0 = {}", w[0]);
        assert!((w[1] + 1.0).abs() < 1e-3, "w1 = {}", w[1]);
    }

    #[test]
    fn checkpoint_round_trip_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = ParamSet::new();
        params.insert("a.w".into(), Param { values: vec![1.25, -0.5, 3.75], rows: 1, cols: 3 });
        params.insert("b.w".into(), Param { values: vec![0.125; 4], rows: 2, cols: 2 });
        let p1 = dir.path().join("one.ckpt");
        let p2 = dir.path().join("two.ckpt");
        save_checkpoint(&p1, &params).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, params);
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
