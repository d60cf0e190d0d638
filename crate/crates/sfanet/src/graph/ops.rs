//! Differentiable tensor ops: elementwise math, reductions, shape moves,
//! GEMM-backed matrix products, softmax and shrinkage.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{strides_of, Tensor};

// ---------------------------------------------------------------------------
// GEMM plumbing shared with the convolution ops.
// ---------------------------------------------------------------------------

/// C[m,n] = alpha * A·B + beta * C on row-major buffers. `at`/`bt` flag
/// operands that are stored transposed ([k,m] / [n,k]) without copying.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    at: bool,
    b: &[f64],
    bt: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm A buffer");
    assert_eq!(b.len(), k * n, "gemm B buffer");
    assert_eq!(c.len(), m * n, "gemm C buffer");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic.
// ---------------------------------------------------------------------------

pub fn add(g: &Graph, a: Var, b: Var) -> Result<Var> {
    let (va, vb) = (g.value(a), g.value(b));
    let out = va.zip_map(&vb, |x, y| x + y)?;
    Ok(g.op(out, &[a, b], Box::new(move |grad| {
        vec![(a, grad.clone()), (b, grad.clone())]
    })))
}

pub fn sub(g: &Graph, a: Var, b: Var) -> Result<Var> {
    let (va, vb) = (g.value(a), g.value(b));
    let out = va.zip_map(&vb, |x, y| x - y)?;
    Ok(g.op(out, &[a, b], Box::new(move |grad| {
        vec![(a, grad.clone()), (b, grad.map(|v| -v))]
    })))
}

pub fn mul(g: &Graph, a: Var, b: Var) -> Result<Var> {
    let (va, vb) = (g.value(a), g.value(b));
    let out = va.zip_map(&vb, |x, y| x * y)?;
    Ok(g.op(out, &[a, b], Box::new(move |grad| {
        vec![
            (a, grad.zip_map(&vb, |gv, y| gv * y).expect("mul backward")),
            (b, grad.zip_map(&va, |gv, x| gv * x).expect("mul backward")),
        ]
    })))
}

pub fn neg(g: &Graph, a: Var) -> Var {
    let out = g.value(a).map(|x| -x);
    g.op(out, &[a], Box::new(move |grad| vec![(a, grad.map(|v| -v))]))
}

/// Multiply by a compile-time-known scalar.
pub fn scale(g: &Graph, a: Var, c: f64) -> Var {
    let out = g.value(a).map(|x| c * x);
    g.op(out, &[a], Box::new(move |grad| vec![(a, grad.map(|v| c * v))]))
}

/// Add a compile-time-known scalar.
pub fn add_const(g: &Graph, a: Var, c: f64) -> Var {
    let out = g.value(a).map(|x| x + c);
    g.op(out, &[a], Box::new(move |grad| vec![(a, grad.clone())]))
}

// ---------------------------------------------------------------------------
// Activations and shrinkage.
// ---------------------------------------------------------------------------

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_val(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Gaussian error linear unit (tanh form).
pub fn gelu(g: &Graph, a: Var) -> Var {
    let va = g.value(a);
    let out = va.map(gelu_val);
    g.op(out, &[a], Box::new(move |grad| {
        vec![(a, grad.zip_map(&va, |gv, x| gv * gelu_deriv(x)).expect("gelu backward"))]
    }))
}

/// At x == 0 the right-derivative (slope 1) is used.
pub fn leaky_relu(g: &Graph, a: Var, slope: f64) -> Var {
    let va = g.value(a);
    let out = va.map(|x| if x >= 0.0 { x } else { slope * x });
    g.op(out, &[a], Box::new(move |grad| {
        vec![(a, grad
            .zip_map(&va, |gv, x| if x >= 0.0 { gv } else { slope * gv })
            .expect("leaky_relu backward"))]
    }))
}

pub fn sigmoid(g: &Graph, a: Var) -> Var {
    let va = g.value(a);
    let y = va.map(|x| 1.0 / (1.0 + (-x).exp()));
    let y_saved = y.clone();
    g.op(y, &[a], Box::new(move |grad| {
        vec![(a, grad
            .zip_map(&y_saved, |gv, yv| gv * yv * (1.0 - yv))
            .expect("sigmoid backward"))]
    }))
}

/// Soft shrinkage: sign(x) * max(|x| - lambda, 0). At the kinks the
/// right-derivative is used, so lambda == 0 is an exact identity with
/// gradient one everywhere.
pub fn soft_shrink(g: &Graph, a: Var, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::config(format!(
            "soft_shrink threshold must be non-negative, got {lambda}"
        )));
    }
    let va = g.value(a);
    let out = va.map(|x| {
        if x > lambda {
            x - lambda
        } else if x < -lambda {
            x + lambda
        } else {
            0.0
        }
    });
    Ok(g.op(out, &[a], Box::new(move |grad| {
        vec![(a, grad
            .zip_map(&va, |gv, x| if x >= lambda || x < -lambda { gv } else { 0.0 })
            .expect("soft_shrink backward"))]
    })))
}

/// Softmax over the last axis.
pub fn softmax_last(g: &Graph, a: Var) -> Result<Var> {
    let va = g.value(a);
    if va.rank() == 0 || va.is_empty() {
        return Err(Error::shape("softmax needs a non-empty tensor"));
    }
    let width = *va.shape().last().expect("rank checked");
    let rows = va.len() / width;
    let mut out = vec![0.0; va.len()];
    for r in 0..rows {
        let row = &va.data()[r * width..(r + 1) * width];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &x) in out[r * width..(r + 1) * width].iter_mut().zip(row) {
            *o = (x - m).exp();
            sum += *o;
        }
        for o in out[r * width..(r + 1) * width].iter_mut() {
            *o /= sum;
        }
    }
    let y = Tensor::from_vec(va.shape(), out)?;
    let y_saved = y.clone();
    Ok(g.op(y, &[a], Box::new(move |grad| {
        let mut dx = vec![0.0; y_saved.len()];
        for r in 0..rows {
            let ys = &y_saved.data()[r * width..(r + 1) * width];
            let gs = &grad.data()[r * width..(r + 1) * width];
            let dot: f64 = ys.iter().zip(gs).map(|(&y, &gv)| y * gv).sum();
            for ((d, &y), &gv) in dx[r * width..(r + 1) * width].iter_mut().zip(ys).zip(gs) {
                *d = y * (gv - dot);
            }
        }
        vec![(a, Tensor::from_vec(y_saved.shape(), dx).expect("softmax backward"))]
    })))
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

pub fn sum_all(g: &Graph, a: Var) -> Var {
    let va = g.value(a);
    let s: f64 = va.iter().sum();
    let shape = va.shape().to_vec();
    g.op(Tensor::scalar(s), &[a], Box::new(move |grad| {
        let gv = grad.data()[0];
        vec![(a, Tensor::full(&shape, gv))]
    }))
}

pub fn mean_all(g: &Graph, a: Var) -> Result<Var> {
    let va = g.value(a);
    if va.is_empty() {
        return Err(Error::shape("mean of an empty tensor"));
    }
    let n = va.len() as f64;
    let s: f64 = va.iter().sum();
    let shape = va.shape().to_vec();
    Ok(g.op(Tensor::scalar(s / n), &[a], Box::new(move |grad| {
        let gv = grad.data()[0] / n;
        vec![(a, Tensor::full(&shape, gv))]
    })))
}

// ---------------------------------------------------------------------------
// Broadcast helpers: bias over the last axis, per-channel gain on axis 1.
// ---------------------------------------------------------------------------

/// x[..., C] + b[C].
pub fn add_bias_last(g: &Graph, x: Var, b: Var) -> Result<Var> {
    let (vx, vb) = (g.value(x), g.value(b));
    let c = *vx.shape().last().ok_or_else(|| Error::shape("bias add on rank-0 tensor"))?;
    if vb.shape() != [c] {
        return Err(Error::shape(format!(
            "bias shape {:?} does not match last axis of {:?}",
            vb.shape(),
            vx.shape()
        )));
    }
    let rows = vx.len() / c;
    let mut out = vx.data().to_vec();
    for r in 0..rows {
        for (o, &bv) in out[r * c..(r + 1) * c].iter_mut().zip(vb.data()) {
            *o += bv;
        }
    }
    let out = Tensor::from_vec(vx.shape(), out)?;
    Ok(g.op(out, &[x, b], Box::new(move |grad| {
        let mut db = vec![0.0; c];
        for r in 0..rows {
            for (d, &gv) in db.iter_mut().zip(&grad.data()[r * c..(r + 1) * c]) {
                *d += gv;
            }
        }
        vec![
            (x, grad.clone()),
            (b, Tensor::from_vec(&[c], db).expect("bias backward")),
        ]
    })))
}

/// x[N, C, ...] * s[C], broadcasting the per-channel gain over batch and
/// spatial axes.
pub fn mul_channel(g: &Graph, x: Var, s: Var) -> Result<Var> {
    let (vx, vs) = (g.value(x), g.value(s));
    if vx.rank() < 2 {
        return Err(Error::shape(format!(
            "channel gain needs rank >= 2, got {:?}",
            vx.shape()
        )));
    }
    let c = vx.shape()[1];
    if vs.shape() != [c] {
        return Err(Error::shape(format!(
            "gain shape {:?} does not match channel axis of {:?}",
            vs.shape(),
            vx.shape()
        )));
    }
    let n = vx.shape()[0];
    let inner: usize = vx.shape()[2..].iter().product();
    let mut out = vx.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            let sv = vs.data()[ch];
            for o in out[base..base + inner].iter_mut() {
                *o *= sv;
            }
        }
    }
    let out = Tensor::from_vec(vx.shape(), out)?;
    let (vx2, vs2) = (vx, vs);
    Ok(g.op(out, &[x, s], Box::new(move |grad| {
        let mut dx = vec![0.0; vx2.len()];
        let mut ds = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                let sv = vs2.data()[ch];
                let mut acc = 0.0;
                for i in 0..inner {
                    let gv = grad.data()[base + i];
                    dx[base + i] = gv * sv;
                    acc += gv * vx2.data()[base + i];
                }
                ds[ch] += acc;
            }
        }
        vec![
            (x, Tensor::from_vec(vx2.shape(), dx).expect("gain backward")),
            (s, Tensor::from_vec(&[c], ds).expect("gain backward")),
        ]
    })))
}

// ---------------------------------------------------------------------------
// Shape moves.
// ---------------------------------------------------------------------------

pub fn reshape(g: &Graph, a: Var, shape: &[usize]) -> Result<Var> {
    let va = g.value(a);
    let out = va.reshaped(shape)?;
    let parent_shape = va.shape().to_vec();
    Ok(g.op(out, &[a], Box::new(move |grad| {
        vec![(a, grad.reshaped(&parent_shape).expect("reshape backward"))]
    })))
}

/// Materialized axis permutation (out axis i reads in axis axes[i]).
pub fn permute(g: &Graph, a: Var, axes: &[usize]) -> Result<Var> {
    let va = g.value(a);
    let out = permute_data(&va, axes)?;
    // Inverse permutation sends the gradient back to the input layout.
    let mut inverse = vec![0usize; axes.len()];
    for (i, &ax) in axes.iter().enumerate() {
        inverse[ax] = i;
    }
    Ok(g.op(out, &[a], Box::new(move |grad| {
        vec![(a, permute_data(grad, &inverse).expect("permute backward"))]
    })))
}

pub(crate) fn permute_data(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = t.rank();
    if axes.len() != rank {
        return Err(Error::shape(format!(
            "permutation {:?} does not cover rank {rank}",
            axes
        )));
    }
    let mut seen = vec![false; rank];
    for &ax in axes {
        if ax >= rank || seen[ax] {
            return Err(Error::shape(format!("invalid permutation {:?}", axes)));
        }
        seen[ax] = true;
    }
    let in_shape = t.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&ax| in_shape[ax]).collect();
    let in_strides = strides_of(in_shape);
    // Stride of each output axis in the input buffer.
    let step: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
    let mut out = vec![0.0; t.len()];
    if t.len() > 0 {
        let mut coords = vec![0usize; rank];
        let mut in_off = 0usize;
        let src = t.data();
        for o in out.iter_mut() {
            *o = src[in_off];
            // Odometer increment over output coordinates.
            for ax in (0..rank).rev() {
                coords[ax] += 1;
                in_off += step[ax];
                if coords[ax] < out_shape[ax] {
                    break;
                }
                coords[ax] = 0;
                in_off -= step[ax] * out_shape[ax];
            }
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// Concatenate along `axis`. All parts must agree on every other axis.
pub fn concat(g: &Graph, parts: &[Var], axis: usize) -> Result<Var> {
    if parts.is_empty() {
        return Err(Error::shape("concat of zero tensors"));
    }
    let values: Vec<Tensor> = parts.iter().map(|&p| g.value(p)).collect();
    let rank = values[0].rank();
    if axis >= rank {
        return Err(Error::shape(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    let mut axis_total = 0usize;
    for v in &values {
        if v.rank() != rank {
            return Err(Error::shape("concat parts disagree on rank"));
        }
        for d in 0..rank {
            if d != axis && v.shape()[d] != values[0].shape()[d] {
                return Err(Error::shape(format!(
                    "concat parts disagree off-axis: {:?} vs {:?}",
                    v.shape(),
                    values[0].shape()
                )));
            }
        }
        axis_total += v.shape()[axis];
    }
    let mut out_shape = values[0].shape().to_vec();
    out_shape[axis] = axis_total;
    let lead: usize = out_shape[..axis].iter().product();
    let tail: usize = out_shape[axis + 1..].iter().product();
    let mut out = vec![0.0; out_shape.iter().product()];
    let mut offset = 0usize;
    let mut spans = Vec::with_capacity(values.len());
    for v in &values {
        let span = v.shape()[axis] * tail;
        for l in 0..lead {
            let dst = l * axis_total * tail + offset;
            out[dst..dst + span].copy_from_slice(&v.data()[l * span..(l + 1) * span]);
        }
        spans.push((offset, span));
        offset += span;
    }
    let out = Tensor::from_vec(&out_shape, out)?;
    let parents: Vec<Var> = parts.to_vec();
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    Ok(g.op(out, parts, Box::new(move |grad| {
        let mut contributions = Vec::with_capacity(parents.len());
        for (i, &p) in parents.iter().enumerate() {
            let (off, span) = spans[i];
            let mut part = vec![0.0; lead * span];
            for l in 0..lead {
                let src = l * axis_total * tail + off;
                part[l * span..(l + 1) * span].copy_from_slice(&grad.data()[src..src + span]);
            }
            contributions.push((p, Tensor::from_vec(&shapes[i], part).expect("concat backward")));
        }
        contributions
    })))
}

/// Take `len` entries starting at `start` along `axis`.
pub fn slice_axis(g: &Graph, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
    let va = g.value(a);
    let rank = va.rank();
    if axis >= rank {
        return Err(Error::shape(format!(
            "slice axis {axis} out of range for rank {rank}"
        )));
    }
    let extent = va.shape()[axis];
    if start + len > extent {
        return Err(Error::shape(format!(
            "slice {start}..{} exceeds axis extent {extent}",
            start + len
        )));
    }
    let lead: usize = va.shape()[..axis].iter().product();
    let tail: usize = va.shape()[axis + 1..].iter().product();
    let mut out_shape = va.shape().to_vec();
    out_shape[axis] = len;
    let mut out = vec![0.0; lead * len * tail];
    for l in 0..lead {
        let src = (l * extent + start) * tail;
        out[l * len * tail..(l + 1) * len * tail]
            .copy_from_slice(&va.data()[src..src + len * tail]);
    }
    let out = Tensor::from_vec(&out_shape, out)?;
    let in_shape = va.shape().to_vec();
    Ok(g.op(out, &[a], Box::new(move |grad| {
        let mut dx = vec![0.0; in_shape.iter().product()];
        for l in 0..lead {
            let dst = (l * extent + start) * tail;
            dx[dst..dst + len * tail]
                .copy_from_slice(&grad.data()[l * len * tail..(l + 1) * len * tail]);
        }
        vec![(a, Tensor::from_vec(&in_shape, dx).expect("slice backward"))]
    })))
}

// ---------------------------------------------------------------------------
// Matrix products.
// ---------------------------------------------------------------------------

/// a[M,K] x b[K,N] -> [M,N].
pub fn matmul(g: &Graph, a: Var, b: Var) -> Result<Var> {
    let (va, vb) = (g.value(a), g.value(b));
    if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
        return Err(Error::shape(format!(
            "matmul on {:?} x {:?}",
            va.shape(),
            vb.shape()
        )));
    }
    let (m, k) = (va.shape()[0], va.shape()[1]);
    let n = vb.shape()[1];
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, va.data(), false, vb.data(), false, 0.0, &mut out);
    let out = Tensor::from_vec(&[m, n], out)?;
    Ok(g.op(out, &[a, b], Box::new(move |grad| {
        let mut da = vec![0.0; m * k];
        // dA = G·B^T
        gemm(m, n, k, 1.0, grad.data(), false, vb.data(), true, 0.0, &mut da);
        let mut db = vec![0.0; k * n];
        // dB = A^T·G
        gemm(k, m, n, 1.0, va.data(), true, grad.data(), false, 0.0, &mut db);
        vec![
            (a, Tensor::from_vec(&[m, k], da).expect("matmul backward")),
            (b, Tensor::from_vec(&[k, n], db).expect("matmul backward")),
        ]
    })))
}

/// Batched matmul: a[G,M,K] x b[G,K,N] -> [G,M,N].
pub fn bmm(g: &Graph, a: Var, b: Var) -> Result<Var> {
    let (va, vb) = (g.value(a), g.value(b));
    if va.rank() != 3
        || vb.rank() != 3
        || va.shape()[0] != vb.shape()[0]
        || va.shape()[2] != vb.shape()[1]
    {
        return Err(Error::shape(format!(
            "bmm on {:?} x {:?}",
            va.shape(),
            vb.shape()
        )));
    }
    let (batches, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
    let n = vb.shape()[2];
    let mut out = vec![0.0; batches * m * n];
    for i in 0..batches {
        gemm(
            m,
            k,
            n,
            1.0,
            &va.data()[i * m * k..(i + 1) * m * k],
            false,
            &vb.data()[i * k * n..(i + 1) * k * n],
            false,
            0.0,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    let out = Tensor::from_vec(&[batches, m, n], out)?;
    Ok(g.op(out, &[a, b], Box::new(move |grad| {
        let mut da = vec![0.0; batches * m * k];
        let mut db = vec![0.0; batches * k * n];
        for i in 0..batches {
            let gs = &grad.data()[i * m * n..(i + 1) * m * n];
            gemm(
                m,
                n,
                k,
                1.0,
                gs,
                false,
                &vb.data()[i * k * n..(i + 1) * k * n],
                true,
                0.0,
                &mut da[i * m * k..(i + 1) * m * k],
            );
            gemm(
                k,
                m,
                n,
                1.0,
                &va.data()[i * m * k..(i + 1) * m * k],
                true,
                gs,
                false,
                0.0,
                &mut db[i * k * n..(i + 1) * k * n],
            );
        }
        vec![
            (a, Tensor::from_vec(&[batches, m, k], da).expect("bmm backward")),
            (b, Tensor::from_vec(&[batches, k, n], db).expect("bmm backward")),
        ]
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check::check_gradients;

    fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn matmul_small_known_product() {
        let g = Graph::new();
        let a = g.input(tensor(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.input(tensor(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = matmul(&g, a, b).unwrap();
        assert_eq!(g.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let g = Graph::new();
        let x = g.input(tensor(&[2, 3], vec![0.1, 1.2, -0.4, 3.0, 3.0, 3.0]));
        let y = softmax_last(&g, x).unwrap();
        let v = g.value(y);
        let row0: f64 = v.data()[..3].iter().sum();
        assert!((row0 - 1.0).abs() < 1e-12, "row sum {row0}");
        for &p in &v.data()[3..] {
            assert!((p - 1.0 / 3.0).abs() < 1e-12, "uniform row entry {p}");
        }
        let shifted = g.input(tensor(&[2, 3], vec![100.1, 101.2, 99.6, 3.0, 3.0, 3.0]));
        let ys = softmax_last(&g, shifted).unwrap();
        let d = g.value(ys).max_abs_diff(&v).unwrap();
        assert!(d < 1e-12, "softmax must be shift invariant, diff {d}");
    }

    #[test]
    fn soft_shrink_matches_closed_form() {
        let g = Graph::new();
        let x = g.input(tensor(&[5], vec![-2.0, -0.3, 0.0, 0.3, 2.0]));
        let y = soft_shrink(&g, x, 0.5).unwrap();
        assert_eq!(g.value(y).data(), &[-1.5, 0.0, 0.0, 0.0, 1.5]);
        let id = soft_shrink(&g, x, 0.0).unwrap();
        assert!(g.value(id).bit_eq(&g.value(x)), "zero threshold must be the identity");
        assert!(soft_shrink(&g, x, -0.1).is_err(), "negative threshold must be rejected");
    }

    #[test]
    fn leaky_relu_and_sigmoid_pointwise_values() {
        let g = Graph::new();
        let x = g.input(tensor(&[3], vec![-2.0, 0.0, 3.0]));
        let y = leaky_relu(&g, x, 0.1);
        assert_eq!(g.value(y).data(), &[-0.2, 0.0, 3.0]);
        let s = sigmoid(&g, x);
        assert!((g.value(s).data()[1] - 0.5).abs() < 1e-15);
        assert_eq!(g.value(gelu(&g, x)).data()[1], 0.0, "gelu is odd around zero");
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        // Inputs kept away from the kinks of leaky_relu / soft_shrink.
        let r = check_gradients(
            &[vec![0.5, -1.3, 2.0, -0.7, 0.9, -2.1]],
            &[vec![6]],
            |g, vars| {
                let a = leaky_relu(g, vars[0], 0.2);
                let b = sigmoid(g, a);
                let c = soft_shrink(g, b, 0.1)?;
                mean_all(g, c)
            },
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "rel err {}", r.max_rel_err);
    }

    #[test]
    fn concat_slice_round_trip() {
        let g = Graph::new();
        let a = g.input(tensor(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.input(tensor(&[2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]));
        let c = concat(&g, &[a, b], 1).unwrap();
        assert_eq!(g.shape(c), vec![2, 5]);
        assert_eq!(
            g.value(c).data(),
            &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]
        );
        let back = slice_axis(&g, c, 1, 2, 3).unwrap();
        assert_eq!(g.value(back).data(), g.value(b).data());
    }

    #[test]
    fn permute_round_trip_restores_input() {
        let g = Graph::new();
        let x = g.input(tensor(&[2, 3, 4], (0..24).map(|i| i as f64).collect()));
        let p = permute(&g, x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(p), vec![4, 2, 3]);
        let back = permute(&g, p, &[1, 2, 0]).unwrap();
        assert!(g.value(back).bit_eq(&g.value(x)));
    }

    #[test]
    fn permute_rejects_bad_axes() {
        let g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 3]));
        assert!(permute(&g, x, &[0, 0]).is_err());
        assert!(permute(&g, x, &[0]).is_err());
        assert!(permute(&g, x, &[0, 2]).is_err());
    }

    #[test]
    fn elementwise_and_reduction_gradients_match_finite_differences() {
        let result = check_gradients(
            &[vec![0.5, -1.3, 2.0, 0.7], vec![1.1, 0.2, -0.8, 1.9]],
            &[vec![2, 2], vec![2, 2]],
            |g, vars| {
                let p = mul(g, vars[0], vars[1])?;
                let s = add(g, p, vars[0])?;
                let t = gelu(g, s);
                mean_all(g, t)
            },
        )
        .unwrap();
        assert!(result.max_rel_err < 1e-6, "rel err {}", result.max_rel_err);
    }

    #[test]
    fn matmul_bmm_softmax_gradients_match_finite_differences() {
        let result = check_gradients(
            &[
                (0..6).map(|i| 0.3 * i as f64 - 0.7).collect(),
                (0..6).map(|i| 0.2 * i as f64 + 0.1).collect(),
            ],
            &[vec![2, 3], vec![3, 2]],
            |g, vars| {
                let mm = matmul(g, vars[0], vars[1])?;
                let sm = softmax_last(g, mm)?;
                mean_all(g, sm)
            },
        )
        .unwrap();
        assert!(result.max_rel_err < 1e-5, "rel err {}", result.max_rel_err);

        let result = check_gradients(
            &[
                (0..12).map(|i| (i as f64 * 0.37).sin()).collect(),
                (0..12).map(|i| (i as f64 * 0.21).cos()).collect(),
            ],
            &[vec![2, 2, 3], vec![2, 3, 2]],
            |g, vars| {
                let p = bmm(g, vars[0], vars[1])?;
                mean_all(g, p)
            },
        )
        .unwrap();
        assert!(result.max_rel_err < 1e-6, "rel err {}", result.max_rel_err);
    }

    #[test]
    fn shape_move_gradients_match_finite_differences() {
        let result = check_gradients(
            &[
                (0..8).map(|i| (i as f64 * 0.31).sin()).collect(),
                (0..8).map(|i| (i as f64 * 0.17).cos()).collect(),
            ],
            &[vec![2, 4], vec![2, 4]],
            |g, vars| {
                let c = concat(g, &[vars[0], vars[1]], 0)?;
                let p = permute(g, c, &[1, 0])?;
                let r = reshape(g, p, &[2, 8])?;
                let s = slice_axis(g, r, 1, 1, 5)?;
                mean_all(g, s)
            },
        )
        .unwrap();
        assert!(result.max_rel_err < 1e-6, "rel err {}", result.max_rel_err);
    }

    #[test]
    fn bias_and_channel_gain_gradients_match_finite_differences() {
        let result = check_gradients(
            &[
                (0..12).map(|i| (i as f64 * 0.5).sin()).collect(),
                vec![0.3, -0.2, 0.9],
                vec![1.5, -0.5],
            ],
            &[vec![2, 2, 3], vec![3], vec![2]],
            |g, vars| {
                let b = add_bias_last(g, vars[0], vars[1])?;
                let s = mul_channel(g, b, vars[2])?;
                mean_all(g, s)
            },
        )
        .unwrap();
        assert!(result.max_rel_err < 1e-6, "rel err {}", result.max_rel_err);
    }
}
