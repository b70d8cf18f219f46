//! Minimal reverse-mode automatic differentiation on dense row-major tensors.
//!
//! A [`Graph`] is a Wengert tape: every operation appends a node holding the
//! forward result and a closure that maps the node's output gradient to
//! gradient contributions for its inputs. [`Graph::backward`] walks the tape
//! in exact reverse recording order, so topological order is recording order
//! by construction. Learnable parameters live outside the tape (see
//! [`Param`]) and are bound to leaf nodes per forward pass.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Scalar element type. 64-bit by default; the `f32` cargo feature switches
/// the whole engine (and everything built on it) to 32-bit storage.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Name of the compiled element type, used in configs and checkpoints.
pub const PRECISION: &str = if cfg!(feature = "f32") { "f32" } else { "f64" };

type BackFn = Box<dyn Fn(&[Real]) -> Vec<(usize, Vec<Real>)>>;

struct Node {
    data: Rc<Vec<Real>>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<Real>>,
    backward: Option<BackFn>,
    /// Set when this leaf mirrors a [`Param`]; used to scatter gradients back.
    param: Option<u64>,
}

struct GraphInner {
    nodes: Vec<Node>,
    backward_done: bool,
    /// Multiply-accumulate count of all matmul/convolution work recorded on
    /// this tape (forward only).
    macs: u128,
}

/// A computation tape. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

/// Handle to one node of a [`Graph`].
#[derive(Clone)]
pub struct Tensor {
    graph: Graph,
    id: usize,
    shape: Vec<usize>,
}

fn fmt_shape(s: &[usize]) -> String {
    let dims: Vec<String> = s.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join(","))
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Opt-in forward-output finiteness tracing (`NPMIXER_CHECK_FINITE=1`).
/// Off by default so that numerical divergence reaches the training loop's
/// graceful abort instead of panicking mid-op.
#[inline]
fn debug_check_finite(data: &[Real], op: &str) {
    static ENABLED: std::sync::OnceLock<bool> = std::sync::OnceLock::new();
    let on = *ENABLED
        .get_or_init(|| std::env::var_os("NPMIXER_CHECK_FINITE").is_some_and(|v| v == "1"));
    if on {
        for &v in data {
            assert!(v.is_finite(), "{op}: non-finite value {v} in forward output");
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                backward_done: false,
                macs: 0,
            })),
        }
    }

    fn push(
        &self,
        data: Vec<Real>,
        shape: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackFn>,
        param: Option<u64>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            data: Rc::new(data),
            shape: shape.clone(),
            requires_grad,
            grad: None,
            backward,
            param,
        });
        Tensor { graph: self.clone(), id, shape }
    }

    fn add_macs(&self, n: u128) {
        self.inner.borrow_mut().macs += n;
    }

    /// Total multiply-accumulates recorded on this tape so far.
    pub fn macs(&self) -> u128 {
        self.inner.borrow().macs
    }

    /// Constant (non-differentiable) leaf.
    pub fn leaf(&self, data: Vec<Real>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "leaf: shape {} implies {} elements, got {}",
                fmt_shape(shape),
                numel(shape),
                data.len()
            )));
        }
        Ok(self.push(data, shape.to_vec(), false, None, None))
    }

    /// Differentiable leaf (an input whose gradient is wanted, e.g. in tests).
    pub fn leaf_grad(&self, data: Vec<Real>, shape: &[usize]) -> Result<Tensor> {
        let t = self.leaf(data, shape)?;
        self.inner.borrow_mut().nodes[t.id].requires_grad = true;
        Ok(t)
    }

    pub fn scalar(&self, v: Real) -> Tensor {
        self.push(vec![v], vec![1], false, None, None)
    }

    /// Reverse pass from a scalar loss. Each `requires_grad` node receives
    /// `d loss / d node`, accumulated additively across reuse.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !Rc::ptr_eq(&self.inner, &loss.graph.inner) {
            return Err(Error::contract("backward: loss belongs to a different tape"));
        }
        let mut inner = self.inner.borrow_mut();
        if inner.backward_done {
            return Err(Error::state(
                "backward already ran on this tape; record a new forward pass first",
            ));
        }
        if numel(&inner.nodes[loss.id].shape) != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {}",
                fmt_shape(&inner.nodes[loss.id].shape)
            )));
        }
        inner.backward_done = true;
        inner.nodes[loss.id].grad = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let back = inner.nodes[id].backward.take();
            let Some(back) = back else { continue };
            // Intermediate gradients are consumed here; leaves keep theirs.
            let Some(gy) = inner.nodes[id].grad.take() else { continue };
            for (target, contrib) in back(&gy) {
                let node = &mut inner.nodes[target];
                debug_assert!(node.requires_grad);
                debug_assert_eq!(contrib.len(), numel(&node.shape));
                match &mut node.grad {
                    Some(g) => {
                        for (gi, ci) in g.iter_mut().zip(&contrib) {
                            *gi += *ci;
                        }
                    }
                    None => node.grad = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `t`, if any was accumulated.
    pub fn grad(&self, t: &Tensor) -> Option<Vec<Real>> {
        self.inner.borrow().nodes[t.id].grad.clone()
    }

    /// Add the tape's gradients onto the matching parameters' grad buffers.
    pub fn accumulate_param_grads(&self, params: &mut [&mut Param]) {
        use std::collections::HashMap;
        let mut by_id: HashMap<u64, usize> = HashMap::new();
        for (i, p) in params.iter().enumerate() {
            by_id.insert(p.id, i);
        }
        let inner = self.inner.borrow();
        for node in &inner.nodes {
            let (Some(pid), Some(grad)) = (node.param, &node.grad) else { continue };
            if let Some(&i) = by_id.get(&pid) {
                for (g, c) in params[i].grad.iter_mut().zip(grad) {
                    *g += *c;
                }
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

static PARAM_IDS: AtomicU64 = AtomicU64::new(1);

/// A named learnable parameter, living outside any tape. Bind it into a
/// forward pass with [`Param::leaf`]; after `backward`, scatter gradients
/// back with [`Graph::accumulate_param_grads`].
#[derive(Clone)]
pub struct Param {
    id: u64,
    pub name: String,
    pub data: Vec<Real>,
    pub shape: Vec<usize>,
    pub grad: Vec<Real>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, data: Vec<Real>, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), data.len());
        let grad = vec![0.0; data.len()];
        Param {
            id: PARAM_IDS.fetch_add(1, Ordering::Relaxed),
            name: name.into(),
            data,
            shape: shape.to_vec(),
            grad,
            trainable: true,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Bind this parameter as a leaf of `g` for one forward pass.
    pub fn leaf(&self, g: &Graph) -> Tensor {
        g.push(
            self.data.clone(),
            self.shape.clone(),
            self.trainable,
            None,
            Some(self.id),
        )
    }
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Shared handle to the forward data.
    pub fn data(&self) -> Rc<Vec<Real>> {
        self.graph.inner.borrow().nodes[self.id].data.clone()
    }

    pub fn to_vec(&self) -> Vec<Real> {
        self.data().as_ref().clone()
    }

    fn rc(&self) -> Rc<Vec<Real>> {
        self.data()
    }

    fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    fn same_graph(&self, other: &Tensor, op: &str) -> Result<()> {
        if Rc::ptr_eq(&self.graph.inner, &other.graph.inner) {
            Ok(())
        } else {
            Err(Error::contract(format!("{op}: operands recorded on different tapes")))
        }
    }

    fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    // ----- elementwise binary ops (same shape, or scalar broadcast) -----

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(Real, Real) -> Real,
        // partial derivatives w.r.t. (a, b) as functions of (a, b)
        dfa: impl Fn(Real, Real) -> Real + 'static,
        dfb: impl Fn(Real, Real) -> Real + 'static,
    ) -> Result<Tensor> {
        self.same_graph(other, op)?;
        let (a, b) = (self.rc(), other.rc());
        let a_scalar = a.len() == 1 && b.len() != 1;
        let b_scalar = b.len() == 1 && a.len() != 1;
        if !(a_scalar || b_scalar) && self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: incompatible shapes {} and {}",
                fmt_shape(&self.shape),
                fmt_shape(&other.shape)
            )));
        }
        let n = a.len().max(b.len());
        let out_shape = if a_scalar { other.shape.clone() } else { self.shape.clone() };
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let av = a[if a_scalar { 0 } else { i }];
            let bv = b[if b_scalar { 0 } else { i }];
            y.push(f(av, bv));
        }
        debug_check_finite(&y, op);
        let (ga, gb) = (self.requires_grad(), other.requires_grad());
        let back: Option<BackFn> = if ga || gb {
            let (aid, bid) = (self.id, other.id);
            let (ac, bc) = (a.clone(), b.clone());
            Some(Box::new(move |gy| {
                let mut out = Vec::new();
                if ga {
                    let mut g = vec![0.0; ac.len()];
                    for i in 0..gy.len() {
                        let av = ac[if a_scalar { 0 } else { i }];
                        let bv = bc[if b_scalar { 0 } else { i }];
                        g[if a_scalar { 0 } else { i }] += gy[i] * dfa(av, bv);
                    }
                    out.push((aid, g));
                }
                if gb {
                    let mut g = vec![0.0; bc.len()];
                    for i in 0..gy.len() {
                        let av = ac[if a_scalar { 0 } else { i }];
                        let bv = bc[if b_scalar { 0 } else { i }];
                        g[if b_scalar { 0 } else { i }] += gy[i] * dfb(av, bv);
                    }
                    out.push((bid, g));
                }
                out
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, out_shape, ga || gb, back, None))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    // ----- elementwise unary ops -----

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(Real) -> (Real, Real), // (value, derivative)
    ) -> Tensor {
        let a = self.rc();
        let mut y = Vec::with_capacity(a.len());
        let mut dydx = Vec::with_capacity(a.len());
        for &v in a.iter() {
            let (yv, dv) = f(v);
            y.push(yv);
            dydx.push(dv);
        }
        debug_check_finite(&y, op);
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |gy| {
                let g = gy.iter().zip(&dydx).map(|(g, d)| g * d).collect();
                vec![(id, g)]
            }))
        } else {
            None
        };
        self.graph.push(y, self.shape.clone(), rg, back, None)
    }

    /// `a*x + b` with scalar constants (covers negation, scaling, shifting).
    pub fn affine(&self, a: Real, b: Real) -> Tensor {
        self.unary("affine", move |x| (a * x + b, a))
    }

    /// GELU, tanh approximation:
    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&self) -> Tensor {
        const C: Real = 0.7978845608028654; // sqrt(2/pi)
        const A: Real = 0.044715;
        self.unary("gelu", |x| {
            let u = C * (x + A * x * x * x);
            let t = u.tanh();
            let y = 0.5 * x * (1.0 + t);
            let du = C * (1.0 + 3.0 * A * x * x);
            let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
            (y, d)
        })
    }

    /// Elementwise reciprocal.
    pub fn recip(&self) -> Tensor {
        self.unary("recip", |x| {
            let y = 1.0 / x;
            (y, -y * y)
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", |x| {
            let y = if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            };
            (y, y * (1.0 - y))
        })
    }

    /// Inverted-scaling dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1−p)`; in eval mode
    /// this is the identity.
    pub fn dropout(&self, p: Real, training: bool, rng: &mut impl rand::Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout rate must be in [0,1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let a = self.rc();
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<Real> = (0..a.len())
            .map(|_| if rng.random::<Real>() < p { 0.0 } else { scale })
            .collect();
        let y: Vec<Real> = a.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |gy| {
                let g = gy.iter().zip(&mask).map(|(g, m)| g * m).collect();
                vec![(id, g)]
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, self.shape.clone(), rg, back, None))
    }

    // ----- reductions -----

    pub fn sum(&self) -> Tensor {
        let a = self.rc();
        let total = stable_sum(&a);
        let rg = self.requires_grad();
        let n = a.len();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |gy| vec![(id, vec![gy[0]; n])]))
        } else {
            None
        };
        self.graph.push(vec![total], vec![1], rg, back, None)
    }

    pub fn mean(&self) -> Tensor {
        let a = self.rc();
        let n = a.len();
        let total = stable_sum(&a) / n as Real;
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |gy| vec![(id, vec![gy[0] / n as Real; n])]))
        } else {
            None
        };
        self.graph.push(vec![total], vec![1], rg, back, None)
    }

    // ----- structural ops -----

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(format!(
                "reshape: {} ({} elements) to {} ({} elements)",
                fmt_shape(&self.shape),
                self.numel(),
                fmt_shape(shape),
                numel(shape)
            )));
        }
        let a = self.rc();
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |gy| vec![(id, gy.to_vec())]))
        } else {
            None
        };
        Ok(self.graph.push(a.as_ref().clone(), shape.to_vec(), rg, back, None))
    }

    /// Swap the last two axes (batched matrix transpose).
    pub fn transpose2d(&self) -> Result<Tensor> {
        if self.shape.len() < 2 {
            return Err(Error::shape(format!(
                "transpose2d needs rank ≥ 2, got {}",
                fmt_shape(&self.shape)
            )));
        }
        let (r, c) = (self.shape[self.shape.len() - 2], self.shape[self.shape.len() - 1]);
        let batch = self.numel() / (r * c);
        let a = self.rc();
        let mut y = vec![0.0; a.len()];
        for bi in 0..batch {
            let o = bi * r * c;
            for i in 0..r {
                for j in 0..c {
                    y[o + j * r + i] = a[o + i * c + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |gy| {
                let mut g = vec![0.0; gy.len()];
                for bi in 0..batch {
                    let o = bi * r * c;
                    for i in 0..r {
                        for j in 0..c {
                            g[o + i * c + j] = gy[o + j * r + i];
                        }
                    }
                }
                vec![(id, g)]
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, shape, rg, back, None))
    }

    /// Contiguous slice along the last dimension.
    pub fn slice_lastdim(&self, start: usize, len: usize) -> Result<Tensor> {
        let d = self.last_dim();
        if start + len > d || len == 0 {
            return Err(Error::shape(format!(
                "slice_lastdim: [{start}, {}) out of last dim {d} of {}",
                start + len,
                fmt_shape(&self.shape)
            )));
        }
        let rows = self.numel() / d;
        let a = self.rc();
        let mut y = Vec::with_capacity(rows * len);
        for r in 0..rows {
            y.extend_from_slice(&a[r * d + start..r * d + start + len]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = len;
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            let total = self.numel();
            Some(Box::new(move |gy| {
                let mut g = vec![0.0; total];
                for r in 0..rows {
                    g[r * d + start..r * d + start + len]
                        .copy_from_slice(&gy[r * len..(r + 1) * len]);
                }
                vec![(id, g)]
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, shape, rg, back, None))
    }

    // ----- normalization / softmax -----

    /// Numerically stable softmax over the last dimension.
    pub fn softmax_lastdim(&self) -> Tensor {
        let d = self.last_dim();
        let rows = self.numel() / d;
        let a = self.rc();
        let mut y = vec![0.0; a.len()];
        for r in 0..rows {
            let row = &a[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let mut z = 0.0;
            for (i, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                y[r * d + i] = e;
                z += e;
            }
            for v in &mut y[r * d..(r + 1) * d] {
                *v /= z;
            }
        }
        debug_check_finite(&y, "softmax_lastdim");
        let rg = self.requires_grad();
        let yc = y.clone();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            Some(Box::new(move |gy| {
                let mut g = vec![0.0; gy.len()];
                for r in 0..rows {
                    let o = r * d;
                    let mut dot = 0.0;
                    for i in 0..d {
                        dot += gy[o + i] * yc[o + i];
                    }
                    for i in 0..d {
                        g[o + i] = yc[o + i] * (gy[o + i] - dot);
                    }
                }
                vec![(id, g)]
            }))
        } else {
            None
        };
        self.graph.push(y, self.shape.clone(), rg, back, None)
    }

    /// Layer normalization over the last dimension with learnable affine.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: Real) -> Result<Tensor> {
        self.same_graph(gamma, "layer_norm")?;
        self.same_graph(beta, "layer_norm")?;
        let d = self.last_dim();
        if gamma.numel() != d || beta.numel() != d {
            return Err(Error::shape(format!(
                "layer_norm: gamma {} / beta {} must match last dim {d} of {}",
                fmt_shape(&gamma.shape),
                fmt_shape(&beta.shape),
                fmt_shape(&self.shape)
            )));
        }
        let rows = self.numel() / d;
        let (a, gm, bt) = (self.rc(), gamma.rc(), beta.rc());
        let mut y = vec![0.0; a.len()];
        let mut xhat = vec![0.0; a.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &a[r * d..(r + 1) * d];
            let mean = row.iter().sum::<Real>() / d as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for i in 0..d {
                let xh = (row[i] - mean) * istd;
                xhat[r * d + i] = xh;
                y[r * d + i] = xh * gm[i] + bt[i];
            }
        }
        debug_check_finite(&y, "layer_norm");
        let (rx, rgm, rbt) = (self.requires_grad(), gamma.requires_grad(), beta.requires_grad());
        let rg = rx || rgm || rbt;
        let back: Option<BackFn> = if rg {
            let (xid, gid, bid) = (self.id, gamma.id, beta.id);
            let gmc = gm.clone();
            Some(Box::new(move |gy| {
                let mut out = Vec::new();
                if rx {
                    let mut g = vec![0.0; gy.len()];
                    for r in 0..rows {
                        let o = r * d;
                        let mut sum_gg = 0.0;
                        let mut sum_ggx = 0.0;
                        for i in 0..d {
                            let gg = gy[o + i] * gmc[i];
                            sum_gg += gg;
                            sum_ggx += gg * xhat[o + i];
                        }
                        let inv_d = 1.0 / d as Real;
                        for i in 0..d {
                            let gg = gy[o + i] * gmc[i];
                            g[o + i] = inv_std[r]
                                * (gg - inv_d * sum_gg - xhat[o + i] * inv_d * sum_ggx);
                        }
                    }
                    out.push((xid, g));
                }
                if rgm {
                    let mut g = vec![0.0; d];
                    for r in 0..rows {
                        for i in 0..d {
                            g[i] += gy[r * d + i] * xhat[r * d + i];
                        }
                    }
                    out.push((gid, g));
                }
                if rbt {
                    let mut g = vec![0.0; d];
                    for r in 0..rows {
                        for i in 0..d {
                            g[i] += gy[r * d + i];
                        }
                    }
                    out.push((bid, g));
                }
                out
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, self.shape.clone(), rg, back, None))
    }

    // ----- broadcasting helpers used by the model -----

    /// Add a bias vector over the last dimension.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        self.same_graph(bias, "add_bias")?;
        let d = self.last_dim();
        if bias.numel() != d {
            return Err(Error::shape(format!(
                "add_bias: bias {} must match last dim of {}",
                fmt_shape(&bias.shape),
                fmt_shape(&self.shape)
            )));
        }
        let rows = self.numel() / d;
        let (a, b) = (self.rc(), bias.rc());
        let mut y = Vec::with_capacity(a.len());
        for r in 0..rows {
            for i in 0..d {
                y.push(a[r * d + i] + b[i]);
            }
        }
        let (ra, rb) = (self.requires_grad(), bias.requires_grad());
        let back: Option<BackFn> = if ra || rb {
            let (aid, bid) = (self.id, bias.id);
            Some(Box::new(move |gy| {
                let mut out = Vec::new();
                if ra {
                    out.push((aid, gy.to_vec()));
                }
                if rb {
                    let mut g = vec![0.0; d];
                    for r in 0..rows {
                        for i in 0..d {
                            g[i] += gy[r * d + i];
                        }
                    }
                    out.push((bid, g));
                }
                out
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, self.shape.clone(), ra || rb, back, None))
    }

    /// Per-channel affine `y[..,c,t] = x[..,c,t]·scale[c] + shift[c]` for a
    /// tensor shaped `[.., C, T]` with learnable `scale`/`shift` of length C.
    pub fn channel_affine(&self, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
        self.same_graph(scale, "channel_affine")?;
        self.same_graph(shift, "channel_affine")?;
        if self.shape.len() < 2 {
            return Err(Error::shape(format!(
                "channel_affine needs rank ≥ 2, got {}",
                fmt_shape(&self.shape)
            )));
        }
        let c = self.shape[self.shape.len() - 2];
        let t = self.last_dim();
        if scale.numel() != c || shift.numel() != c {
            return Err(Error::shape(format!(
                "channel_affine: scale {} / shift {} must have length {c} for {}",
                fmt_shape(&scale.shape),
                fmt_shape(&shift.shape),
                fmt_shape(&self.shape)
            )));
        }
        let rows = self.numel() / t; // each row belongs to channel rows % c
        let (a, sc, sh) = (self.rc(), scale.rc(), shift.rc());
        let mut y = Vec::with_capacity(a.len());
        for r in 0..rows {
            let ch = r % c;
            for i in 0..t {
                y.push(a[r * t + i] * sc[ch] + sh[ch]);
            }
        }
        let (ra, rs, rh) = (self.requires_grad(), scale.requires_grad(), shift.requires_grad());
        let rg = ra || rs || rh;
        let back: Option<BackFn> = if rg {
            let (aid, sid, hid) = (self.id, scale.id, shift.id);
            let (ac, scc) = (a.clone(), sc.clone());
            Some(Box::new(move |gy| {
                let mut out = Vec::new();
                if ra {
                    let mut g = Vec::with_capacity(gy.len());
                    for r in 0..rows {
                        let ch = r % c;
                        for i in 0..t {
                            g.push(gy[r * t + i] * scc[ch]);
                        }
                    }
                    out.push((aid, g));
                }
                if rs {
                    let mut g = vec![0.0; c];
                    for r in 0..rows {
                        let ch = r % c;
                        for i in 0..t {
                            g[ch] += gy[r * t + i] * ac[r * t + i];
                        }
                    }
                    out.push((sid, g));
                }
                if rh {
                    let mut g = vec![0.0; c];
                    for r in 0..rows {
                        let ch = r % c;
                        for i in 0..t {
                            g[ch] += gy[r * t + i];
                        }
                    }
                    out.push((hid, g));
                }
                out
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, self.shape.clone(), rg, back, None))
    }

    /// Per-row affine with constant (non-learnable) coefficients:
    /// `y[r, i] = x[r, i]·mul[r] + add[r]` where rows are over all leading
    /// dimensions. Used for instance-normalization statistics.
    pub fn row_affine_const(&self, mul: &[Real], add: &[Real]) -> Result<Tensor> {
        let t = self.last_dim();
        let rows = self.numel() / t;
        if mul.len() != rows || add.len() != rows {
            return Err(Error::shape(format!(
                "row_affine_const: {} rows, got {} mul / {} add coefficients",
                rows,
                mul.len(),
                add.len()
            )));
        }
        let a = self.rc();
        let mut y = Vec::with_capacity(a.len());
        for r in 0..rows {
            for i in 0..t {
                y.push(a[r * t + i] * mul[r] + add[r]);
            }
        }
        debug_check_finite(&y, "row_affine_const");
        let rg = self.requires_grad();
        let back: Option<BackFn> = if rg {
            let id = self.id;
            let mulc = mul.to_vec();
            Some(Box::new(move |gy| {
                let mut g = Vec::with_capacity(gy.len());
                for r in 0..rows {
                    for i in 0..t {
                        g.push(gy[r * t + i] * mulc[r]);
                    }
                }
                vec![(id, g)]
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, self.shape.clone(), rg, back, None))
    }

    // ----- matmul family -----

    /// Matrix product. Supports `[.., n, k] × [k, m]` (shared right-hand
    /// side) and `[B.., n, k] × [B.., k, m]` with identical batch dims.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_impl(other, false)
    }

    /// Matrix product with the right-hand side transposed:
    /// `[.., n, k] × [.., m, k] → [.., n, m]`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Tensor, nt: bool) -> Result<Tensor> {
        let op = if nt { "matmul_nt" } else { "matmul" };
        self.same_graph(other, op)?;
        let (ashape, bshape) = (&self.shape, &other.shape);
        if ashape.len() < 2 || bshape.len() < 2 {
            return Err(Error::shape(format!(
                "{op}: needs rank ≥ 2 operands, got {} and {}",
                fmt_shape(ashape),
                fmt_shape(bshape)
            )));
        }
        let n = ashape[ashape.len() - 2];
        let k = ashape[ashape.len() - 1];
        let (bk, m) = if nt {
            (bshape[bshape.len() - 1], bshape[bshape.len() - 2])
        } else {
            (bshape[bshape.len() - 2], bshape[bshape.len() - 1])
        };
        let shared_rhs = bshape.len() == 2 && ashape.len() >= 2;
        let batched = !shared_rhs;
        if bk != k
            || (batched
                && (ashape.len() != bshape.len()
                    || ashape[..ashape.len() - 2] != bshape[..bshape.len() - 2]))
        {
            return Err(Error::shape(format!(
                "{op}: incompatible shapes {} and {}",
                fmt_shape(ashape),
                fmt_shape(bshape)
            )));
        }
        let batch = self.numel() / (n * k);
        let (a, b) = (self.rc(), other.rc());
        let mut y = vec![0.0; batch * n * m];
        for bi in 0..batch {
            let ao = bi * n * k;
            let bo = if shared_rhs { 0 } else { bi * k * m };
            let yo = bi * n * m;
            if nt {
                mm_nt(&a[ao..ao + n * k], &b[bo..bo + k * m], &mut y[yo..yo + n * m], n, k, m);
            } else {
                mm(&a[ao..ao + n * k], &b[bo..bo + k * m], &mut y[yo..yo + n * m], n, k, m);
            }
        }
        self.graph.add_macs((batch * n * k * m) as u128);
        debug_check_finite(&y, op);
        let mut shape = ashape[..ashape.len() - 1].to_vec();
        shape.push(m);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        let rg = ra || rb;
        let back: Option<BackFn> = if rg {
            let (aid, bid) = (self.id, other.id);
            let (ac, bc) = (a.clone(), b.clone());
            Some(Box::new(move |gy| {
                let mut out = Vec::new();
                if ra {
                    // dA[n,k] = gy[n,m] · B[k,m]^T  (nt: gy[n,m] · B[m,k])
                    let mut g = vec![0.0; batch * n * k];
                    for bi in 0..batch {
                        let bo = if shared_rhs { 0 } else { bi * k * m };
                        let go = bi * n * m;
                        let ao = bi * n * k;
                        if nt {
                            mm(&gy[go..go + n * m], &bc[bo..bo + k * m], &mut g[ao..ao + n * k], n, m, k);
                        } else {
                            mm_nt(&gy[go..go + n * m], &bc[bo..bo + k * m], &mut g[ao..ao + n * k], n, m, k);
                        }
                    }
                    out.push((aid, g));
                }
                if rb {
                    let mut g = vec![0.0; bc.len()];
                    for bi in 0..batch {
                        let ao = bi * n * k;
                        let go = bi * n * m;
                        let bo = if shared_rhs { 0 } else { bi * k * m };
                        if nt {
                            // dB[m,k] += gy[n,m]^T · A[n,k]
                            mm_tn_acc(&gy[go..go + n * m], &ac[ao..ao + n * k], &mut g[bo..bo + k * m], n, m, k);
                        } else {
                            // dB[k,m] += A[n,k]^T · gy[n,m]
                            mm_tn_acc(&ac[ao..ao + n * k], &gy[go..go + n * m], &mut g[bo..bo + k * m], n, k, m);
                        }
                    }
                    out.push((bid, g));
                }
                out
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, shape, rg, back, None))
    }

    // ----- dilated circular convolution -----

    /// Causal circular convolution over the last dimension, applied
    /// independently per row: `y[r,t] = Σ_k h[k]·x[r, (t − k·d) mod L]`.
    pub fn conv1d_dilated_circular(&self, h: &Tensor, d: usize) -> Result<Tensor> {
        self.conv_impl(h, d, false)
    }

    /// Adjoint (anti-causal) circular convolution:
    /// `y[r,t] = Σ_k h[k]·x[r, (t + k·d) mod L]`.
    pub fn conv1d_dilated_circular_adjoint(&self, h: &Tensor, d: usize) -> Result<Tensor> {
        self.conv_impl(h, d, true)
    }

    fn conv_impl(&self, h: &Tensor, d: usize, adjoint: bool) -> Result<Tensor> {
        self.same_graph(h, "conv1d_dilated_circular")?;
        if d < 1 {
            return Err(Error::config("conv1d_dilated_circular: dilation must be ≥ 1"));
        }
        if h.shape.len() != 1 || h.numel() == 0 {
            return Err(Error::shape(format!(
                "conv1d_dilated_circular: filter must be a nonempty vector, got {}",
                fmt_shape(&h.shape)
            )));
        }
        let l = self.last_dim();
        let rows = self.numel() / l;
        let f = h.numel();
        let (x, hh) = (self.rc(), h.rc());
        let mut y = vec![0.0; x.len()];
        conv_rows(&x, &hh, &mut y, rows, l, d, adjoint);
        self.graph.add_macs((rows * l * f) as u128);
        debug_check_finite(&y, "conv1d_dilated_circular");
        let (rx, rh) = (self.requires_grad(), h.requires_grad());
        let rg = rx || rh;
        let back: Option<BackFn> = if rg {
            let (xid, hid) = (self.id, h.id);
            let xc = x.clone();
            let hc = hh.clone();
            Some(Box::new(move |gy| {
                let mut out = Vec::new();
                if rx {
                    // The adjoint of a circular convolution is the opposite-
                    // direction circular convolution with the same filter.
                    let mut g = vec![0.0; gy.len()];
                    conv_rows(gy, &hc, &mut g, rows, l, d, !adjoint);
                    out.push((xid, g));
                }
                if rh {
                    let mut g = vec![0.0; f];
                    for r in 0..rows {
                        let o = r * l;
                        for (k, gk) in g.iter_mut().enumerate() {
                            let off = (k * d) % l;
                            let mut acc = 0.0;
                            for t in 0..l {
                                let src = if adjoint {
                                    let s = t + off;
                                    if s >= l { s - l } else { s }
                                } else {
                                    let s = t + l - off;
                                    if s >= l { s - l } else { s }
                                };
                                acc += xc[o + src] * gy[o + t];
                            }
                            *gk += acc;
                        }
                    }
                    out.push((hid, g));
                }
                out
            }))
        } else {
            None
        };
        Ok(self.graph.push(y, self.shape.clone(), rg, back, None))
    }
}

/// Concatenate tensors along the last dimension (leading dims must agree).
pub fn concat_lastdim(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::contract("concat_lastdim: empty input list"));
    }
    let graph = parts[0].graph.clone();
    let lead = &parts[0].shape[..parts[0].shape.len() - 1];
    let mut total = 0;
    for p in parts {
        parts[0].same_graph(p, "concat_lastdim")?;
        if &p.shape[..p.shape.len() - 1] != lead {
            return Err(Error::shape(format!(
                "concat_lastdim: leading dims differ: {} vs {}",
                fmt_shape(&parts[0].shape),
                fmt_shape(&p.shape)
            )));
        }
        total += p.last_dim();
    }
    let rows = numel(lead);
    let datas: Vec<Rc<Vec<Real>>> = parts.iter().map(|p| p.rc()).collect();
    let widths: Vec<usize> = parts.iter().map(|p| p.last_dim()).collect();
    let mut y = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (dat, &w) in datas.iter().zip(&widths) {
            y.extend_from_slice(&dat[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    let flags: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
    let rg = flags.iter().any(|&f| f);
    let back: Option<BackFn> = if rg {
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let widths = widths.clone();
        Some(Box::new(move |gy| {
            let mut out = Vec::new();
            let mut offset = 0;
            for (pi, &w) in widths.iter().enumerate() {
                if flags[pi] {
                    let mut g = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        let o = r * total + offset;
                        g.extend_from_slice(&gy[o..o + w]);
                    }
                    out.push((ids[pi], g));
                }
                offset += w;
            }
            out
        }))
    } else {
        None
    };
    Ok(graph.push(y, shape, rg, back, None))
}

/// Compensated (Kahan) summation so metric accumulation is independent of
/// batching order at the target tolerance.
pub fn stable_sum(values: &[Real]) -> Real {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

// ----- dense kernels (row-major) -----

/// `y[n,m] = a[n,k] · b[k,m]`
fn mm(a: &[Real], b: &[Real], y: &mut [Real], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let yo = i * m;
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let bo = p * m;
            for j in 0..m {
                y[yo + j] += av * b[bo + j];
            }
        }
    }
}

/// `y[n,m] = a[n,k] · b[m,k]^T`
fn mm_nt(a: &[Real], b: &[Real], y: &mut [Real], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let ao = i * k;
        for j in 0..m {
            let bo = j * k;
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[ao + p] * b[bo + p];
            }
            y[i * m + j] = acc;
        }
    }
}

/// `y[k,m] += a[n,k]^T · b[n,m]`
fn mm_tn_acc(a: &[Real], b: &[Real], y: &mut [Real], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let ao = i * k;
        let bo = i * m;
        for p in 0..k {
            let av = a[ao + p];
            if av == 0.0 {
                continue;
            }
            let yo = p * m;
            for j in 0..m {
                y[yo + j] += av * b[bo + j];
            }
        }
    }
}

/// Circular convolution of each row: causal (`t − k·d`) or adjoint (`t + k·d`).
fn conv_rows(x: &[Real], h: &[Real], y: &mut [Real], rows: usize, l: usize, d: usize, adjoint: bool) {
    for r in 0..rows {
        let o = r * l;
        for (k, &hk) in h.iter().enumerate() {
            if hk == 0.0 {
                continue;
            }
            let off = (k * d) % l;
            if adjoint {
                // y[t] += hk * x[(t + off) mod L]
                for t in 0..l - off {
                    y[o + t] += hk * x[o + t + off];
                }
                for t in l - off..l {
                    y[o + t] += hk * x[o + t + off - l];
                }
            } else {
                // y[t] += hk * x[(t - off) mod L]
                for t in 0..off {
                    y[o + t] += hk * x[o + t + l - off];
                }
                for t in off..l {
                    y[o + t] += hk * x[o + t - off];
                }
            }
        }
    }
}
