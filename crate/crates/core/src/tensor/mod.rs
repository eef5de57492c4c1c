//! Dense f64 tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle (`Rc`) onto a shape, a row-major
//! f64 buffer, an optional gradient buffer and, when the value was produced by
//! an operation on tracked inputs, a backward closure plus parent handles.
//! Calling [`Tensor::backward`] on a scalar walks the recorded graph in
//! reverse creation order, accumulates gradients into every tracked tensor and
//! then drops the graph edges so the tape is one-shot.
//!
//! The engine is single-threaded by construction; determinism comes from the
//! fixed creation-order tape and sequential accumulation.

mod fft;
mod gradcheck;
mod nn;
mod optim;
mod params;
mod serialize;

pub(crate) use fft::dft2_unitary;
pub use fft::{amp_phase, fft2, fftshift, ifft2, ifftshift, reconstruct, ComplexSpectrum};
pub use gradcheck::grad_check;
pub use nn::{
    attention, bilinear_resize, channel_max, channel_mean, conv2d, conv2d_depthwise,
    global_avg_pool, layer_norm, linear, maxpool2d, softmax_rows,
};
pub use optim::{AdamW, AdamWConfig};
pub use params::{
    kaiming_uniform as init_kaiming, uniform as init_uniform, xavier_uniform as init_xavier, Param,
    ParamSet,
};
pub use serialize::{
    load_checkpoint, read_tensor, save_checkpoint, write_tensor, CheckpointRecord, TENSOR_MAGIC,
};

use crate::error::{Error, Result};
use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` with graph recording disabled; used for pure inference passes.
pub fn with_no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

fn grad_enabled() -> bool {
    NO_GRAD.with(|c| !c.get())
}

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Dense N-dimensional f64 array with optional gradient tracking.
pub struct Tensor(Rc<RefCell<Inner>>);

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.0.borrow();
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            inner.id, inner.shape, inner.requires_grad
        )
    }
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "from_vec",
                format!(
                    "shape {:?} does not describe {} elements",
                    shape,
                    data.len()
                ),
            ));
        }
        Ok(Tensor::leaf(shape.to_vec(), data))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::leaf(shape.to_vec(), vec![value; numel])
    }

    /// Shape-`[1]` constant.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![value])
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor(Rc::new(RefCell::new(Inner {
            id: next_id(),
            shape,
            data,
            grad: None,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        })))
    }

    /// Marks this tensor as a differentiation leaf (gradients accumulate here).
    pub fn set_requires_grad(&self, flag: bool) {
        self.0.borrow_mut().requires_grad = flag;
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn data(&self) -> Vec<f64> {
        self.0.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.0.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad = None;
    }

    /// Overwrites the stored values in place (optimizer updates, checkpoint loads).
    pub fn set_data(&self, data: &[f64]) -> Result<()> {
        let mut inner = self.0.borrow_mut();
        if inner.data.len() != data.len() {
            return Err(Error::shape(
                "set_data",
                format!("expected {} elements, got {}", inner.data.len(), data.len()),
            ));
        }
        inner.data.copy_from_slice(data);
        Ok(())
    }

    /// Manually seeds a gradient buffer (test and optimizer plumbing).
    pub fn set_grad(&self, grad: &[f64]) -> Result<()> {
        let mut inner = self.0.borrow_mut();
        if inner.data.len() != grad.len() {
            return Err(Error::shape(
                "set_grad",
                format!("expected {} elements, got {}", inner.data.len(), grad.len()),
            ));
        }
        inner.grad = Some(grad.to_vec());
        Ok(())
    }

    pub(crate) fn data_ref(&self) -> Ref<'_, [f64]> {
        Ref::map(self.0.borrow(), |inner| inner.data.as_slice())
    }

    pub(crate) fn grad_add(&self, delta: &[f64]) {
        let mut inner = self.0.borrow_mut();
        let n = inner.data.len();
        debug_assert_eq!(n, delta.len());
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Builds an op-output tensor, recording parents and the backward closure
    /// when recording is enabled and at least one parent is tracked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: &[&Tensor],
        backward: impl Fn(&[f64]) + 'static,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by a forward op"
        );
        let tracked = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !tracked {
            return Tensor::leaf(shape, data);
        }
        Tensor(Rc::new(RefCell::new(Inner {
            id: next_id(),
            shape,
            data,
            grad: None,
            requires_grad: true,
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Some(Box::new(backward)),
        })))
    }

    /// Reverse-mode pass from a scalar root. Gradients accumulate into every
    /// tensor with `requires_grad`; the recorded graph is consumed.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape()),
            ));
        }
        self.set_grad(&[1.0])?;

        // Reverse creation order is a valid topological order: an op can only
        // consume tensors that already existed.
        let mut stack = vec![self.clone()];
        let mut seen = std::collections::HashSet::new();
        let mut order: Vec<Tensor> = Vec::new();
        while let Some(t) = stack.pop() {
            let id = t.0.borrow().id;
            if !seen.insert(id) {
                continue;
            }
            for parent in t.0.borrow().parents.iter() {
                if parent.requires_grad() {
                    stack.push(parent.clone());
                }
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.0.borrow().id));

        for node in &order {
            let (grad, backward) = {
                let mut inner = node.0.borrow_mut();
                (inner.grad.clone(), inner.backward.take())
            };
            if let (Some(grad), Some(backward)) = (grad, backward) {
                backward(&grad);
            }
            // Drop edges so the one-shot tape frees without deep recursion.
            node.0.borrow_mut().parents.clear();
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

/// Right-aligned broadcast shape of two operands, NumPy-style.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::shape(
                "broadcast",
                format!("cannot broadcast {:?} with {:?}", a, b),
            ));
        };
    }
    Ok(out)
}

/// Row-major strides, with 0 on broadcast (extent-1) axes, padded to `rank`.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

struct BroadcastIter {
    out_shape: Vec<usize>,
    idx: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    a_pos: usize,
    b_pos: usize,
    remaining: usize,
}

impl BroadcastIter {
    fn new(a: &[usize], b: &[usize], out_shape: &[usize]) -> BroadcastIter {
        BroadcastIter {
            out_shape: out_shape.to_vec(),
            idx: vec![0; out_shape.len()],
            a_strides: broadcast_strides(a, out_shape),
            b_strides: broadcast_strides(b, out_shape),
            a_pos: 0,
            b_pos: 0,
            remaining: out_shape.iter().product(),
        }
    }
}

impl Iterator for BroadcastIter {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        if self.remaining == 0 {
            return None;
        }
        let item = (self.a_pos, self.b_pos);
        self.remaining -= 1;
        // advance the odometer
        for axis in (0..self.out_shape.len()).rev() {
            self.idx[axis] += 1;
            self.a_pos += self.a_strides[axis];
            self.b_pos += self.b_strides[axis];
            if self.idx[axis] < self.out_shape[axis] {
                break;
            }
            self.a_pos -= self.a_strides[axis] * self.out_shape[axis];
            self.b_pos -= self.b_strides[axis] * self.out_shape[axis];
            self.idx[axis] = 0;
        }
        Some(item)
    }
}

fn binary_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    fwd: impl Fn(f64, f64) -> f64,
    // (x, y) -> (df/dx, df/dy)
    vjp: impl Fn(f64, f64) -> (f64, f64) + 'static,
) -> Result<Tensor> {
    let a_shape = a.shape();
    let b_shape = b.shape();
    let out_shape = broadcast_shape(&a_shape, &b_shape).map_err(|_| {
        Error::shape(
            op,
            format!("cannot broadcast {:?} with {:?}", a_shape, b_shape),
        )
    })?;
    let numel: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    {
        let ad = a.data_ref();
        let bd = b.data_ref();
        for (ia, ib) in BroadcastIter::new(&a_shape, &b_shape, &out_shape) {
            data.push(fwd(ad[ia], bd[ib]));
        }
    }

    let (pa, pb) = (a.clone(), b.clone());
    let (sa, sb, so) = (a_shape, b_shape, out_shape.clone());
    Ok(Tensor::from_op(out_shape, data, &[a, b], move |go| {
        let (mut ga, mut gb) = (
            pa.requires_grad().then(|| vec![0.0; pa.numel()]),
            pb.requires_grad().then(|| vec![0.0; pb.numel()]),
        );
        {
            let ad = pa.data_ref();
            let bd = pb.data_ref();
            for (flat, (ia, ib)) in BroadcastIter::new(&sa, &sb, &so).enumerate() {
                let (da, db) = vjp(ad[ia], bd[ib]);
                if let Some(g) = ga.as_mut() {
                    g[ia] += go[flat] * da;
                }
                if let Some(g) = gb.as_mut() {
                    g[ib] += go[flat] * db;
                }
            }
        }
        if let Some(g) = ga {
            pa.grad_add(&g);
        }
        if let Some(g) = gb {
            pb.grad_add(&g);
        }
    }))
}

fn unary_op(x: &Tensor, fwd: impl Fn(f64) -> f64, dfdx: impl Fn(f64) -> f64 + 'static) -> Tensor {
    let data: Vec<f64> = x.data_ref().iter().map(|&v| fwd(v)).collect();
    let px = x.clone();
    Tensor::from_op(x.shape(), data, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let g: Vec<f64> = {
            let xd = px.data_ref();
            xd.iter().zip(go).map(|(&v, &g)| g * dfdx(v)).collect()
        };
        px.grad_add(&g);
    })
}

// ---------------------------------------------------------------------------
// Public ops
// ---------------------------------------------------------------------------

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast("add", self, other, |x, y| x + y, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast("sub", self, other, |x, y| x - y, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast("mul", self, other, |x, y| x * y, |x, y| (y, x))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast(
            "div",
            self,
            other,
            |x, y| x / y,
            |x, y| (1.0 / y, -x / (y * y)),
        )
    }

    pub fn neg(&self) -> Tensor {
        unary_op(self, |v| -v, |_| -1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary_op(self, move |v| c * v, move |_| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary_op(self, move |v| v + c, |_| 1.0)
    }

    pub fn square(&self) -> Tensor {
        unary_op(self, |v| v * v, |v| 2.0 * v)
    }

    pub fn sqrt(&self) -> Tensor {
        unary_op(self, |v| v.sqrt(), |v| 0.5 / v.sqrt().max(1e-300))
    }

    pub fn exp(&self) -> Tensor {
        unary_op(self, |v| v.exp(), |v| v.exp())
    }

    pub fn ln(&self) -> Tensor {
        unary_op(self, |v| v.ln(), |v| 1.0 / v)
    }

    pub fn sin(&self) -> Tensor {
        unary_op(self, |v| v.sin(), |v| v.cos())
    }

    pub fn cos(&self) -> Tensor {
        unary_op(self, |v| v.cos(), |v| -v.sin())
    }

    pub fn abs(&self) -> Tensor {
        unary_op(self, |v| v.abs(), |v| if v >= 0.0 { 1.0 } else { -1.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        unary_op(
            self,
            |v| 1.0 / (1.0 + (-v).exp()),
            |v| {
                let s = 1.0 / (1.0 + (-v).exp());
                s * (1.0 - s)
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        fn inner(v: f64) -> f64 {
            let u = (2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        }
        unary_op(self, inner, |v| {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            let u = c * (v + 0.044715 * v * v * v);
            let t = u.tanh();
            let du = c * (1.0 + 3.0 * 0.044715 * v * v);
            0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary_op(
            self,
            move |v| if v >= 0.0 { v } else { slope * v },
            move |v| if v >= 0.0 { 1.0 } else { slope },
        )
    }

    /// Clamps values into `[lo, hi]`; gradient is passed through strictly inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary_op(
            self,
            move |v| v.clamp(lo, hi),
            move |v| if v > lo && v < hi { 1.0 } else { 0.0 },
        )
    }

    /// Elementwise `max(v, lo)`; subgradient 1 for v > lo, else 0.
    pub fn clamp_min(&self, lo: f64) -> Tensor {
        unary_op(
            self,
            move |v| v.max(lo),
            move |v| if v > lo { 1.0 } else { 0.0 },
        )
    }

    /// User-supplied pointwise function with its derivative.
    pub fn custom_unary(
        &self,
        fwd: impl Fn(f64) -> f64,
        dfdx: impl Fn(f64) -> f64 + 'static,
    ) -> Tensor {
        unary_op(self, fwd, dfdx)
    }

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data_ref().iter().sum();
        let px = self.clone();
        Tensor::from_op(vec![1], vec![total], &[self], move |go| {
            if px.requires_grad() {
                px.grad_add(&vec![go[0]; px.numel()]);
            }
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        let total: f64 = self.data_ref().iter().sum();
        let px = self.clone();
        Tensor::from_op(vec![1], vec![total / n], &[self], move |go| {
            if px.requires_grad() {
                px.grad_add(&vec![go[0] / n; px.numel()]);
            }
        })
    }

    /// Minimum over all elements; gradient routes to the first minimum in scan order.
    pub fn min_all(&self) -> Tensor {
        reduce_extremum(self, false)
    }

    /// Maximum over all elements; gradient routes to the first maximum in scan order.
    pub fn max_all(&self) -> Tensor {
        reduce_extremum(self, true)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} incompatible with {} elements", shape, self.numel()),
            ));
        }
        let px = self.clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data(),
            &[self],
            move |go| {
                if px.requires_grad() {
                    px.grad_add(go);
                }
            },
        ))
    }

    /// Output `out[i] = self[perm[i]]` over flat indices; `new_shape` must have
    /// the same element count. `perm` must be a permutation for the adjoint to
    /// be exact, which is all this crate needs (shifts, transposes).
    pub fn index_permute(&self, perm: Rc<Vec<usize>>, new_shape: &[usize]) -> Result<Tensor> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() || perm.len() != numel {
            return Err(Error::shape(
                "index_permute",
                format!(
                    "permutation of {} entries onto shape {:?} from {} elements",
                    perm.len(),
                    new_shape,
                    self.numel()
                ),
            ));
        }
        let data: Vec<f64> = {
            let xd = self.data_ref();
            perm.iter().map(|&i| xd[i]).collect()
        };
        let px = self.clone();
        let bperm = Rc::clone(&perm);
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            data,
            &[self],
            move |go| {
                if !px.requires_grad() {
                    return;
                }
                let mut g = vec![0.0; px.numel()];
                for (out_i, &src_i) in bperm.iter().enumerate() {
                    g[src_i] += go[out_i];
                }
                px.grad_add(&g);
            },
        ))
    }

    /// 2-D transpose.
    pub fn transpose2d(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::shape(
                "transpose2d",
                format!("rank {} input", shape.len()),
            ));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let mut perm = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                perm.push(i * cols + j);
            }
        }
        self.index_permute(Rc::new(perm), &[cols, rows])
    }

    /// Gathers `out[k] = self[indices[k]]` over the flattened input.
    pub fn gather_flat(&self, indices: Rc<Vec<usize>>) -> Result<Tensor> {
        let n = self.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(
                "gather_flat",
                format!("index {} out of bounds for {} elements", bad, n),
            ));
        }
        let data: Vec<f64> = {
            let xd = self.data_ref();
            indices.iter().map(|&i| xd[i]).collect()
        };
        let px = self.clone();
        let bidx = Rc::clone(&indices);
        Ok(Tensor::from_op(
            vec![indices.len()],
            data,
            &[self],
            move |go| {
                if !px.requires_grad() {
                    return;
                }
                let mut g = vec![0.0; px.numel()];
                for (k, &i) in bidx.iter().enumerate() {
                    g[i] += go[k];
                }
                px.grad_add(&g);
            },
        ))
    }

    /// Dense matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        {
            let ad = self.data_ref();
            let bd = other.data_ref();
            for i in 0..m {
                for p in 0..k {
                    let a = ad[i * k + p];
                    if a == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    let crow = &mut data[i * n..(i + 1) * n];
                    for j in 0..n {
                        crow[j] += a * brow[j];
                    }
                }
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            &[self, other],
            move |go| {
                if pa.requires_grad() {
                    // dA = dC . B^T
                    let mut ga = vec![0.0; m * k];
                    {
                        let bd = pb.data_ref();
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += go[i * n + j] * bd[p * n + j];
                                }
                                ga[i * k + p] = acc;
                            }
                        }
                    }
                    pa.grad_add(&ga);
                }
                if pb.requires_grad() {
                    // dB = A^T . dC
                    let mut gb = vec![0.0; k * n];
                    {
                        let ad = pa.data_ref();
                        for i in 0..m {
                            for p in 0..k {
                                let a = ad[i * k + p];
                                if a == 0.0 {
                                    continue;
                                }
                                let gorow = &go[i * n..(i + 1) * n];
                                let gbrow = &mut gb[p * n..(p + 1) * n];
                                for j in 0..n {
                                    gbrow[j] += a * gorow[j];
                                }
                            }
                        }
                    }
                    pb.grad_add(&gb);
                }
            },
        ))
    }
}

pub(crate) fn softmax_backward_rows(y: &[f64], go: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut g = vec![0.0; n * d];
    for row in 0..n {
        let yr = &y[row * d..(row + 1) * d];
        let gr = &go[row * d..(row + 1) * d];
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for col in 0..d {
            g[row * d + col] = yr[col] * (gr[col] - dot);
        }
    }
    g
}

fn reduce_extremum(x: &Tensor, want_max: bool) -> Tensor {
    let (value, arg) = {
        let xd = x.data_ref();
        let mut best = xd[0];
        let mut arg = 0usize;
        for (i, &v) in xd.iter().enumerate().skip(1) {
            if (want_max && v > best) || (!want_max && v < best) {
                best = v;
                arg = i;
            }
        }
        (best, arg)
    };
    let px = x.clone();
    Tensor::from_op(vec![1], vec![value], &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut g = vec![0.0; px.numel()];
        g[arg] = go[0];
        px.grad_add(&g);
    })
}

/// Concatenates tensors along `axis`. All other extents must match.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::invalid("concat", "no inputs"));
    }
    let first = parts[0].shape();
    let rank = first.len();
    if axis >= rank {
        return Err(Error::invalid(
            "concat",
            format!("axis {} for rank {}", axis, rank),
        ));
    }
    let mut axis_total = 0usize;
    for p in parts {
        let s = p.shape();
        if s.len() != rank
            || s.iter()
                .zip(&first)
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(Error::shape(
                "concat",
                format!("{:?} incompatible with {:?} along axis {}", s, first, axis),
            ));
        }
        axis_total += s[axis];
    }
    let mut out_shape = first.clone();
    out_shape[axis] = axis_total;

    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let numel: usize = out_shape.iter().product();
    let mut data = vec![0.0; numel];
    let mut offsets = Vec::with_capacity(parts.len());
    let mut axis_off = 0usize;
    for p in parts {
        let extent = p.shape()[axis];
        offsets.push((axis_off, extent));
        let pd = p.data_ref();
        for o in 0..outer {
            let src = &pd[o * extent * inner..(o + 1) * extent * inner];
            let dst_start = (o * axis_total + axis_off) * inner;
            data[dst_start..dst_start + extent * inner].copy_from_slice(src);
        }
        axis_off += extent;
    }

    let handles: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
    Ok(Tensor::from_op(out_shape, data, parts, move |go| {
        for (p, &(axis_off, extent)) in handles.iter().zip(&offsets) {
            if !p.requires_grad() {
                continue;
            }
            let mut g = vec![0.0; p.numel()];
            for o in 0..outer {
                let src_start = (o * axis_total + axis_off) * inner;
                g[o * extent * inner..(o + 1) * extent * inner]
                    .copy_from_slice(&go[src_start..src_start + extent * inner]);
            }
            p.grad_add(&g);
        }
    }))
}

/// Contiguous slice `[start, start+len)` along `axis`.
pub fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() || start + len > shape[axis] || len == 0 {
        return Err(Error::invalid(
            "slice",
            format!(
                "range [{}, {}) on axis {} of {:?}",
                start,
                start + len,
                axis,
                shape
            ),
        ));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let extent = shape[axis];
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    let mut data = vec![0.0; outer * len * inner];
    {
        let xd = x.data_ref();
        for o in 0..outer {
            let src_start = (o * extent + start) * inner;
            data[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&xd[src_start..src_start + len * inner]);
        }
    }
    let px = x.clone();
    Ok(Tensor::from_op(out_shape, data, &[x], move |go| {
        if !px.requires_grad() {
            return;
        }
        let mut g = vec![0.0; px.numel()];
        for o in 0..outer {
            let dst_start = (o * extent + start) * inner;
            g[dst_start..dst_start + len * inner]
                .copy_from_slice(&go[o * len * inner..(o + 1) * len * inner]);
        }
        px.grad_add(&g);
    }))
}

/// Rebuilds a `[H, W]` map from per-ring value groups using the ring's
/// flat bin indices; the groups jointly cover every bin exactly once.
pub fn assemble_groups(
    groups: &[&Tensor],
    index_lists: &[Rc<Vec<usize>>],
    shape: &[usize],
) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    let total: usize = index_lists.iter().map(|l| l.len()).sum();
    if groups.len() != index_lists.len() || total != numel {
        return Err(Error::shape(
            "assemble_groups",
            format!(
                "{} groups over {} indices into {} bins",
                groups.len(),
                total,
                numel
            ),
        ));
    }
    let mut data = vec![0.0; numel];
    for (g, idx) in groups.iter().zip(index_lists) {
        if g.numel() != idx.len() {
            return Err(Error::shape(
                "assemble_groups",
                format!("group of {} values for {} bins", g.numel(), idx.len()),
            ));
        }
        let gd = g.data_ref();
        for (k, &i) in idx.iter().enumerate() {
            data[i] = gd[k];
        }
    }
    let handles: Vec<Tensor> = groups.iter().map(|g| (*g).clone()).collect();
    let lists: Vec<Rc<Vec<usize>>> = index_lists.iter().map(Rc::clone).collect();
    Ok(Tensor::from_op(shape.to_vec(), data, groups, move |go| {
        for (g, idx) in handles.iter().zip(&lists) {
            if !g.requires_grad() {
                continue;
            }
            let grad: Vec<f64> = idx.iter().map(|&i| go[i]).collect();
            g.grad_add(&grad);
        }
    }))
}
