//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every op records the computation graph dynamically (per forward pass)
//! whenever an input has `requires_grad` set; rewrite layers have
//! data-dependent structure so a fresh tape is built for every example.
//! Gradients accumulate into each tensor's `grad` slot on `backward`.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};

type GradFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    grad_fn: Option<GradFn>,
}

/// A dense multi-dimensional value with an optional gradient slot.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if numel(&shape) != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad: false,
                parents: Vec::new(),
                grad_fn: None,
            })),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = numel(&shape);
        Tensor::from_vec(shape, vec![0.0; n]).expect("consistent")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![], vec![v]).expect("consistent")
    }

    /// A leaf tensor that participates in gradient computation.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        Ref::map(self.inner.borrow(), |i| &i.data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of a scalar tensor.
    pub fn value(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "value() on non-scalar");
        inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn accumulate_grad(&self, g: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        let n = inner.data.len();
        assert_eq!(g.len(), n);
        let slot = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (s, gi) in slot.iter_mut().zip(g) {
            *s += gi;
        }
    }

    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        if let Some(g) = inner.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn get_elem(&self, idx: usize) -> f64 {
        self.inner.borrow().data[idx]
    }

    /// In-place mutation of one element; used by the optimizer and the
    /// finite-difference checker. Invalidates nothing: leaves carry no tape.
    pub fn set_elem(&self, idx: usize, v: f64) {
        self.inner.borrow_mut().data[idx] = v;
    }

    pub fn set_data(&self, data: Vec<f64>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len());
        inner.data = data;
    }

    fn ptr(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Accumulates d(self)/d(everything reachable) into grad slots.
    ///
    /// Calling twice without zeroing doubles the accumulated gradients.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }

        // Iterative post-order over the graph; order is deterministic
        // because parent lists are built deterministically.
        let mut order: Vec<Tensor> = Vec::new();
        let mut state: HashMap<usize, bool> = HashMap::new(); // false = open, true = done
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            let key = node.ptr();
            if expanded {
                if !state[&key] {
                    state.insert(key, true);
                    order.push(node);
                }
                continue;
            }
            if state.contains_key(&key) {
                continue;
            }
            state.insert(key, false);
            stack.push((node.clone(), true));
            let inner = node.inner.borrow();
            for p in &inner.parents {
                if !state.contains_key(&p.ptr()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut scratch: HashMap<usize, Vec<f64>> = HashMap::new();
        scratch.insert(self.ptr(), vec![1.0]);

        for node in order.iter().rev() {
            let g = match scratch.remove(&node.ptr()) {
                Some(g) => g,
                None => continue,
            };
            let mut inner = node.inner.borrow_mut();
            if inner.requires_grad {
                let n = inner.data.len();
                let slot = inner.grad.get_or_insert_with(|| vec![0.0; n]);
                for (s, gi) in slot.iter_mut().zip(&g) {
                    *s += gi;
                }
            }
            drop(inner);
            let inner = node.inner.borrow();
            if let Some(f) = &inner.grad_fn {
                let contribs = f(&g);
                debug_assert_eq!(contribs.len(), inner.parents.len());
                for (p, c) in inner.parents.iter().zip(contribs) {
                    let entry = scratch
                        .entry(p.ptr())
                        .or_insert_with(|| vec![0.0; p.len()]);
                    for (e, ci) in entry.iter_mut().zip(&c) {
                        *e += ci;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds an op node: checks finiteness, wires parents and the backward
/// closure when any parent participates in gradients.
pub(crate) fn make_node(
    op: &'static str,
    shape: Vec<usize>,
    data: Vec<f64>,
    parents: Vec<Tensor>,
    grad_fn: impl Fn(&[f64]) -> Vec<Vec<f64>> + 'static,
) -> Result<Tensor> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(op));
    }
    let t = Tensor::from_vec(shape, data)?;
    if parents.iter().any(|p| p.requires_grad()) {
        let mut inner = t.inner.borrow_mut();
        inner.requires_grad = true;
        inner.parents = parents;
        inner.grad_fn = Some(Box::new(grad_fn));
    }
    Ok(t)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::ShapeMismatch {
            op,
            lhs: sa,
            rhs: sb,
        });
    }
    Ok(())
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s,
            rhs: vec![0, 0],
        });
    }
    Ok((s[0], s[1]))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    make_node("add", a.shape(), out, vec![a.clone(), b.clone()], |g| {
        vec![g.to_vec(), g.to_vec()]
    })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    make_node("sub", a.shape(), out, vec![a.clone(), b.clone()], |g| {
        vec![g.to_vec(), g.iter().map(|x| -x).collect()]
    })
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    make_node("mul", a.shape(), out, vec![a.clone(), b.clone()], move |g| {
        let av = ac.data();
        let bv = bc.data();
        vec![
            g.iter().zip(bv.iter()).map(|(gi, y)| gi * y).collect(),
            g.iter().zip(av.iter()).map(|(gi, x)| gi * x).collect(),
        ]
    })
}

pub fn scale(a: &Tensor, c: f64) -> Result<Tensor> {
    let out: Vec<f64> = a.data().iter().map(|x| x * c).collect();
    make_node("scale", a.shape(), out, vec![a.clone()], move |g| {
        vec![g.iter().map(|x| x * c).collect()]
    })
}

pub fn add_const(a: &Tensor, c: f64) -> Result<Tensor> {
    let out: Vec<f64> = a.data().iter().map(|x| x + c).collect();
    make_node("add_const", a.shape(), out, vec![a.clone()], |g| vec![g.to_vec()])
}

/// Adds a constant (non-differentiable) buffer, e.g. Gumbel noise.
pub fn add_buffer(a: &Tensor, noise: &[f64]) -> Result<Tensor> {
    if a.len() != noise.len() {
        return Err(Error::InvalidArgument(
            "add_buffer length mismatch".to_string(),
        ));
    }
    let out: Vec<f64> = a.data().iter().zip(noise).map(|(x, n)| x + n).collect();
    make_node("add_buffer", a.shape(), out, vec![a.clone()], |g| vec![g.to_vec()])
}

/// Elementwise product with a constant mask (dropout, row gating).
pub fn mul_mask(a: &Tensor, mask: &[f64]) -> Result<Tensor> {
    if a.len() != mask.len() {
        return Err(Error::InvalidArgument("mul_mask length mismatch".to_string()));
    }
    let out: Vec<f64> = a.data().iter().zip(mask).map(|(x, m)| x * m).collect();
    let m = mask.to_vec();
    make_node("mul_mask", a.shape(), out, vec![a.clone()], move |g| {
        vec![g.iter().zip(&m).map(|(gi, mi)| gi * mi).collect()]
    })
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = dims2("matmul", a)?;
    let (kb, m) = dims2("matmul", b)?;
    if k != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let av = a.data();
    let bv = b.data();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            let x = av[i * k + l];
            if x == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i * m + j] += x * bv[l * m + j];
            }
        }
    }
    drop(av);
    drop(bv);
    let (ac, bc) = (a.clone(), b.clone());
    make_node(
        "matmul",
        vec![n, m],
        out,
        vec![a.clone(), b.clone()],
        move |g| {
            let av = ac.data();
            let bv = bc.data();
            let mut da = vec![0.0; n * k];
            let mut db = vec![0.0; k * m];
            for i in 0..n {
                for j in 0..m {
                    let gi = g[i * m + j];
                    if gi == 0.0 {
                        continue;
                    }
                    for l in 0..k {
                        da[i * k + l] += gi * bv[l * m + j];
                        db[l * m + j] += gi * av[i * k + l];
                    }
                }
            }
            vec![da, db]
        },
    )
}

/// `a (n×d) · b^T (d×v)` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d) = dims2("matmul_nt", a)?;
    let (v, db) = dims2("matmul_nt", b)?;
    if d != db {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let av = a.data();
    let bv = b.data();
    let mut out = vec![0.0; n * v];
    for i in 0..n {
        for j in 0..v {
            let mut s = 0.0;
            for l in 0..d {
                s += av[i * d + l] * bv[j * d + l];
            }
            out[i * v + j] = s;
        }
    }
    drop(av);
    drop(bv);
    let (ac, bc) = (a.clone(), b.clone());
    make_node(
        "matmul_nt",
        vec![n, v],
        out,
        vec![a.clone(), b.clone()],
        move |g| {
            let av = ac.data();
            let bv = bc.data();
            let mut da = vec![0.0; n * d];
            let mut db2 = vec![0.0; v * d];
            for i in 0..n {
                for j in 0..v {
                    let gi = g[i * v + j];
                    if gi == 0.0 {
                        continue;
                    }
                    for l in 0..d {
                        da[i * d + l] += gi * bv[j * d + l];
                        db2[j * d + l] += gi * av[i * d + l];
                    }
                }
            }
            vec![da, db2]
        },
    )
}

/// Valid 1-D convolution of `x` (n×d) with `patterns` (R×Lp×d), scaled.
/// Output (n−Lp+1)×R of window match scores.
pub fn conv_match(x: &Tensor, patterns: &Tensor, scale: f64) -> Result<Tensor> {
    let (n, d) = dims2("conv_match", x)?;
    let ps = patterns.shape();
    if ps.len() != 3 || ps[2] != d {
        return Err(Error::ShapeMismatch {
            op: "conv_match",
            lhs: x.shape(),
            rhs: ps,
        });
    }
    let (r, lp) = (ps[0], ps[1]);
    if n < lp {
        return Err(Error::SequenceTooShort { n, lp });
    }
    let w = n - lp + 1;
    let xv = x.data();
    let pv = patterns.data();
    let mut out = vec![0.0; w * r];
    for i in 0..w {
        for rr in 0..r {
            let mut s = 0.0;
            for k in 0..lp {
                let xo = (i + k) * d;
                let po = (rr * lp + k) * d;
                for j in 0..d {
                    s += xv[xo + j] * pv[po + j];
                }
            }
            out[i * r + rr] = s * scale;
        }
    }
    drop(xv);
    drop(pv);
    let (xc, pc) = (x.clone(), patterns.clone());
    make_node(
        "conv_match",
        vec![w, r],
        out,
        vec![x.clone(), patterns.clone()],
        move |g| {
            let xv = xc.data();
            let pv = pc.data();
            let mut dx = vec![0.0; n * d];
            let mut dp = vec![0.0; r * lp * d];
            for i in 0..w {
                for rr in 0..r {
                    let gi = g[i * r + rr] * scale;
                    if gi == 0.0 {
                        continue;
                    }
                    for k in 0..lp {
                        let xo = (i + k) * d;
                        let po = (rr * lp + k) * d;
                        for j in 0..d {
                            dx[xo + j] += gi * pv[po + j];
                            dp[po + j] += gi * xv[xo + j];
                        }
                    }
                }
            }
            vec![dx, dp]
        },
    )
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (n, m) = dims2("softmax_rows", x)?;
    let xv = x.data();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &xv[i * m..(i + 1) * m];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..m {
            let e = (row[j] - mx).exp();
            out[i * m + j] = e;
            z += e;
        }
        for j in 0..m {
            out[i * m + j] /= z;
        }
    }
    drop(xv);
    let yv = out.clone();
    make_node("softmax_rows", vec![n, m], out, vec![x.clone()], move |g| {
        let mut dx = vec![0.0; n * m];
        for i in 0..n {
            let mut dot = 0.0;
            for j in 0..m {
                dot += g[i * m + j] * yv[i * m + j];
            }
            for j in 0..m {
                dx[i * m + j] = yv[i * m + j] * (g[i * m + j] - dot);
            }
        }
        vec![dx]
    })
}

fn log_softmax_1d(row: &[f64], out: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &v in row {
        z += (v - mx).exp();
    }
    let lz = mx + z.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lz;
    }
}

pub fn log_softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (n, m) = dims2("log_softmax_rows", x)?;
    let xv = x.data();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let mut tmp = vec![0.0; m];
        log_softmax_1d(&xv[i * m..(i + 1) * m], &mut tmp);
        out[i * m..(i + 1) * m].copy_from_slice(&tmp);
    }
    drop(xv);
    let yv = out.clone();
    make_node(
        "log_softmax_rows",
        vec![n, m],
        out,
        vec![x.clone()],
        move |g| {
            let mut dx = vec![0.0; n * m];
            for i in 0..n {
                let gsum: f64 = g[i * m..(i + 1) * m].iter().sum();
                for j in 0..m {
                    dx[i * m + j] = g[i * m + j] - yv[i * m + j].exp() * gsum;
                }
            }
            vec![dx]
        },
    )
}

pub fn log_softmax_cols(x: &Tensor) -> Result<Tensor> {
    let (n, m) = dims2("log_softmax_cols", x)?;
    let xv = x.data();
    let mut out = vec![0.0; n * m];
    for j in 0..m {
        let col: Vec<f64> = (0..n).map(|i| xv[i * m + j]).collect();
        let mut tmp = vec![0.0; n];
        log_softmax_1d(&col, &mut tmp);
        for i in 0..n {
            out[i * m + j] = tmp[i];
        }
    }
    drop(xv);
    let yv = out.clone();
    make_node(
        "log_softmax_cols",
        vec![n, m],
        out,
        vec![x.clone()],
        move |g| {
            let mut dx = vec![0.0; n * m];
            for j in 0..m {
                let mut gsum = 0.0;
                for i in 0..n {
                    gsum += g[i * m + j];
                }
                for i in 0..n {
                    dx[i * m + j] = g[i * m + j] - yv[i * m + j].exp() * gsum;
                }
            }
            vec![dx]
        },
    )
}

pub fn exp(x: &Tensor) -> Result<Tensor> {
    let out: Vec<f64> = x.data().iter().map(|v| v.exp()).collect();
    let yv = out.clone();
    make_node("exp", x.shape(), out, vec![x.clone()], move |g| {
        vec![g.iter().zip(&yv).map(|(gi, y)| gi * y).collect()]
    })
}

/// Row-wise layer normalization with learnable affine gain/bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (n, d) = dims2("layer_norm", x)?;
    if gain.shape() != vec![d] || bias.shape() != vec![d] {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape(),
            rhs: gain.shape(),
        });
    }
    let xv = x.data();
    let gv = gain.data();
    let bv = bias.data();
    let mut out = vec![0.0; n * d];
    let mut norm = vec![0.0; n * d]; // pre-affine normalized values
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = &xv[i * d..(i + 1) * d];
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            norm[i * d + j] = h;
            out[i * d + j] = h * gv[j] + bv[j];
        }
    }
    drop(xv);
    drop(gv);
    drop(bv);
    let gc = gain.clone();
    make_node(
        "layer_norm",
        vec![n, d],
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        move |g| {
            let gv = gc.data();
            let mut dx = vec![0.0; n * d];
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            for i in 0..n {
                let is = inv_std[i];
                let h = &norm[i * d..(i + 1) * d];
                // dL/dh for this row
                let dh: Vec<f64> = (0..d).map(|j| g[i * d + j] * gv[j]).collect();
                let dh_mean: f64 = dh.iter().sum::<f64>() / d as f64;
                let dh_h_mean: f64 =
                    dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for j in 0..d {
                    dgain[j] += g[i * d + j] * h[j];
                    dbias[j] += g[i * d + j];
                    dx[i * d + j] = is * (dh[j] - dh_mean - h[j] * dh_h_mean);
                }
            }
            vec![dx, dgain, dbias]
        },
    )
}

pub fn gather_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (n, d) = dims2("gather_rows", x)?;
    for &i in idx {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "gather_rows index {i} out of range {n}"
            )));
        }
    }
    let xv = x.data();
    let mut out = vec![0.0; idx.len() * d];
    for (o, &i) in idx.iter().enumerate() {
        out[o * d..(o + 1) * d].copy_from_slice(&xv[i * d..(i + 1) * d]);
    }
    drop(xv);
    let idxc = idx.to_vec();
    let m = idx.len();
    make_node("gather_rows", vec![m, d], out, vec![x.clone()], move |g| {
        let mut dx = vec![0.0; n * d];
        for (o, &i) in idxc.iter().enumerate() {
            for j in 0..d {
                dx[i * d + j] += g[o * d + j];
            }
        }
        vec![dx]
    })
}

pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat_rows of nothing".to_string()));
    }
    let d = dims2("concat_rows", &parts[0])?.1;
    let mut total = 0;
    let mut sizes = Vec::with_capacity(parts.len());
    for p in parts {
        let (np, dp) = dims2("concat_rows", p)?;
        if dp != d {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                lhs: parts[0].shape(),
                rhs: p.shape(),
            });
        }
        total += np;
        sizes.push(np);
    }
    let mut out = Vec::with_capacity(total * d);
    for p in parts {
        out.extend_from_slice(&p.data());
    }
    make_node(
        "concat_rows",
        vec![total, d],
        out,
        parts.to_vec(),
        move |g| {
            let mut res = Vec::with_capacity(sizes.len());
            let mut off = 0;
            for &np in &sizes {
                res.push(g[off * d..(off + np) * d].to_vec());
                off += np;
            }
            res
        },
    )
}

/// Appends a column filled with a scalar tensor (the copy bias).
pub fn append_col(x: &Tensor, col: &Tensor) -> Result<Tensor> {
    let (n, m) = dims2("append_col", x)?;
    if col.len() != 1 {
        return Err(Error::InvalidArgument("append_col wants a scalar".to_string()));
    }
    let c = col.value();
    let xv = x.data();
    let mut out = vec![0.0; n * (m + 1)];
    for i in 0..n {
        out[i * (m + 1)..i * (m + 1) + m].copy_from_slice(&xv[i * m..(i + 1) * m]);
        out[i * (m + 1) + m] = c;
    }
    drop(xv);
    make_node(
        "append_col",
        vec![n, m + 1],
        out,
        vec![x.clone(), col.clone()],
        move |g| {
            let mut dx = vec![0.0; n * m];
            let mut dc = 0.0;
            for i in 0..n {
                dx[i * m..(i + 1) * m].copy_from_slice(&g[i * (m + 1)..i * (m + 1) + m]);
                dc += g[i * (m + 1) + m];
            }
            vec![dx, vec![dc]]
        },
    )
}

pub fn sum_all(x: &Tensor) -> Result<Tensor> {
    let s: f64 = x.data().iter().sum();
    let n = x.len();
    make_node("sum_all", vec![], vec![s], vec![x.clone()], move |g| {
        vec![vec![g[0]; n]]
    })
}

/// Straight-through gate: forward takes the hard values, backward passes
/// the upstream gradient to the soft matrix unchanged.
pub fn ste_gate(soft: &Tensor, hard: &[f64]) -> Result<Tensor> {
    if soft.len() != hard.len() {
        return Err(Error::InvalidArgument("ste_gate length mismatch".to_string()));
    }
    make_node(
        "ste_gate",
        soft.shape(),
        hard.to_vec(),
        vec![soft.clone()],
        |g| vec![g.to_vec()],
    )
}

/// Mean cross-entropy of `logits` rows against integer targets, averaged
/// over positions where `mask` is true.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<Tensor> {
    let (n, v) = dims2("cross_entropy", logits)?;
    if targets.len() != n || mask.len() != n {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy: {} logit rows, {} targets, {} mask entries",
            n,
            targets.len(),
            mask.len()
        )));
    }
    let active: usize = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::InvalidArgument(
            "cross_entropy: empty mask".to_string(),
        ));
    }
    let xv = logits.data();
    let mut loss = 0.0;
    let mut probs = vec![0.0; n * v]; // cached softmax for backward
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let row = &xv[i * v..(i + 1) * v];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..v {
            let e = (row[j] - mx).exp();
            probs[i * v + j] = e;
            z += e;
        }
        for j in 0..v {
            probs[i * v + j] /= z;
        }
        loss -= probs[i * v + targets[i]].max(1e-300).ln();
    }
    loss /= active as f64;
    drop(xv);
    let tg = targets.to_vec();
    let mk = mask.to_vec();
    make_node(
        "cross_entropy",
        vec![],
        vec![loss],
        vec![logits.clone()],
        move |g| {
            let scale = g[0] / active as f64;
            let mut dx = vec![0.0; n * v];
            for i in 0..n {
                if !mk[i] {
                    continue;
                }
                for j in 0..v {
                    let ind = if j == tg[i] { 1.0 } else { 0.0 };
                    dx[i * v + j] = scale * (probs[i * v + j] - ind);
                }
            }
            vec![dx]
        },
    )
}

/// Max over parameters of |analytic − numeric| / max(1, |numeric|), with
/// numeric gradients from central differences at step `h`.
///
/// `f` must be deterministic: the same graph (and any noise) on every call.
pub fn finite_diff_check(
    f: &mut dyn FnMut() -> Result<Tensor>,
    params: &[Tensor],
    h: f64,
) -> Result<f64> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "finite_diff_check: h must be positive, got {h}"
        )));
    }
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut max_err = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.len() {
            let orig = p.get_elem(j);
            p.set_elem(j, orig + h);
            let up = f()?.value();
            p.set_elem(j, orig - h);
            let down = f()?.value();
            p.set_elem(j, orig);
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic[pi][j] - numeric).abs() / numeric.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
