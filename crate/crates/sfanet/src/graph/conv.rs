//! conv2d / conv_transpose2d on [B, C, H, W] maps, lowered to GEMM via
//! im2col / col2im so the inner loops run through the tuned kernel.

use crate::error::{Error, Result};
use crate::graph::ops::gemm;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Spatial geometry shared by the gather (im2col) and scatter (col2im)
/// lowerings: column index space is the conv-output grid of `h x w`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(h: usize, w: usize, kh: usize, kw: usize, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("convolution stride must be positive"));
        }
        let eh = h + 2 * padding;
        let ew = w + 2 * padding;
        if eh < kh || ew < kw {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {eh}x{ew}"
            )));
        }
        Ok(Geometry {
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            oh: (eh - kh) / stride + 1,
            ow: (ew - kw) / stride + 1,
        })
    }

    /// img [C, h, w] -> col [C*kh*kw, oh*ow], zero-filled outside bounds.
    fn im2col(&self, img: &[f64], channels: usize, col: &mut [f64]) {
        let cols = self.oh * self.ow;
        debug_assert_eq!(col.len(), channels * self.kh * self.kw * cols);
        let mut row = 0usize;
        for c in 0..channels {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    row += 1;
                    let mut idx = 0usize;
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i) as isize - self.padding as isize;
                        if y < 0 || y >= self.h as isize {
                            dst[idx..idx + self.ow].fill(0.0);
                            idx += self.ow;
                            continue;
                        }
                        let base = y as usize * self.w;
                        for ox in 0..self.ow {
                            let x = (ox * self.stride + j) as isize - self.padding as isize;
                            dst[idx] = if x < 0 || x >= self.w as isize {
                                0.0
                            } else {
                                plane[base + x as usize]
                            };
                            idx += 1;
                        }
                    }
                }
            }
        }
    }

    /// col [C*kh*kw, oh*ow] scatter-accumulated back into img [C, h, w].
    fn col2im(&self, col: &[f64], channels: usize, img: &mut [f64]) {
        let cols = self.oh * self.ow;
        debug_assert_eq!(col.len(), channels * self.kh * self.kw * cols);
        let mut row = 0usize;
        for c in 0..channels {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let src = &col[row * cols..(row + 1) * cols];
                    row += 1;
                    let mut idx = 0usize;
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i) as isize - self.padding as isize;
                        if y < 0 || y >= self.h as isize {
                            idx += self.ow;
                            continue;
                        }
                        let base = y as usize * self.w;
                        for ox in 0..self.ow {
                            let x = (ox * self.stride + j) as isize - self.padding as isize;
                            if x >= 0 && x < self.w as isize {
                                plane[base + x as usize] += src[idx];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
}

fn check_feature_map(name: &str, t: &Tensor) -> Result<()> {
    if t.rank() != 4 {
        return Err(Error::shape(format!(
            "{name} must be [batch, channel, height, width], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// 2D convolution with optional bias and channel groups.
///
/// x: [B, C_in, H, W], weight: [C_out, C_in/groups, kh, kw], bias: [C_out].
pub fn conv2d(
    g: &Graph,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Var> {
    let vx = g.value(x);
    let vw = g.value(weight);
    check_feature_map("conv2d input", &vx)?;
    if vw.rank() != 4 {
        return Err(Error::shape(format!(
            "conv2d weight must be [c_out, c_in/groups, kh, kw], got {:?}",
            vw.shape()
        )));
    }
    if groups == 0 {
        return Err(Error::config("conv2d groups must be positive"));
    }
    let (batch, c_in, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
    let (c_out, wc_in, kh, kw) = (vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]);
    if c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::shape(format!(
            "channels in={c_in} out={c_out} not divisible by groups={groups}"
        )));
    }
    if wc_in != c_in / groups {
        return Err(Error::shape(format!(
            "conv2d weight expects {} input channels per group, input has {} ({} groups)",
            wc_in,
            c_in / groups,
            groups
        )));
    }
    let vb = bias.map(|b| g.value(b));
    if let Some(ref b) = vb {
        if b.shape() != [c_out] {
            return Err(Error::shape(format!(
                "conv2d bias shape {:?} must be [{c_out}]",
                b.shape()
            )));
        }
    }
    let geo = Geometry::new(h, w, kh, kw, stride, padding)?;
    let (oh, ow) = (geo.oh, geo.ow);
    let cols = oh * ow;
    let cg_in = c_in / groups;
    let cg_out = c_out / groups;
    let krows = cg_in * kh * kw;

    let mut out = vec![0.0; batch * c_out * cols];
    let mut col = vec![0.0; c_in * kh * kw * cols];
    for b in 0..batch {
        let img = &vx.data()[b * c_in * h * w..(b + 1) * c_in * h * w];
        geo.im2col(img, c_in, &mut col);
        for gr in 0..groups {
            gemm(
                cg_out,
                krows,
                cols,
                1.0,
                &vw.data()[gr * cg_out * krows..(gr + 1) * cg_out * krows],
                false,
                &col[gr * krows * cols..(gr + 1) * krows * cols],
                false,
                0.0,
                &mut out[(b * c_out + gr * cg_out) * cols..(b * c_out + (gr + 1) * cg_out) * cols],
            );
        }
        if let Some(ref bv) = vb {
            for co in 0..c_out {
                let add = bv.data()[co];
                for o in out[(b * c_out + co) * cols..(b * c_out + co + 1) * cols].iter_mut() {
                    *o += add;
                }
            }
        }
    }
    let out = Tensor::from_vec(&[batch, c_out, oh, ow], out)?;

    let parents: Vec<Var> = match bias {
        Some(bv) => vec![x, weight, bv],
        None => vec![x, weight],
    };
    Ok(g.op(out, &parents, Box::new(move |grad| {
        let mut dx = vec![0.0; batch * c_in * h * w];
        let mut dw = vec![0.0; c_out * krows];
        let mut col = vec![0.0; c_in * kh * kw * cols];
        let mut dcol = vec![0.0; c_in * kh * kw * cols];
        for b in 0..batch {
            let gy = &grad.data()[b * c_out * cols..(b + 1) * c_out * cols];
            let img = &vx.data()[b * c_in * h * w..(b + 1) * c_in * h * w];
            geo.im2col(img, c_in, &mut col);
            for gr in 0..groups {
                let gy_g = &gy[gr * cg_out * cols..(gr + 1) * cg_out * cols];
                // dW_g += gy_g · col_g^T
                gemm(
                    cg_out,
                    cols,
                    krows,
                    1.0,
                    gy_g,
                    false,
                    &col[gr * krows * cols..(gr + 1) * krows * cols],
                    true,
                    1.0,
                    &mut dw[gr * cg_out * krows..(gr + 1) * cg_out * krows],
                );
                // dcol_g = W_g^T · gy_g
                gemm(
                    krows,
                    cg_out,
                    cols,
                    1.0,
                    &vw.data()[gr * cg_out * krows..(gr + 1) * cg_out * krows],
                    true,
                    gy_g,
                    false,
                    0.0,
                    &mut dcol[gr * krows * cols..(gr + 1) * krows * cols],
                );
            }
            geo.col2im(&dcol, c_in, &mut dx[b * c_in * h * w..(b + 1) * c_in * h * w]);
        }
        let mut contributions = vec![
            (x, Tensor::from_vec(&[batch, c_in, h, w], dx).expect("conv2d backward")),
            (
                weight,
                Tensor::from_vec(&[c_out, cg_in, kh, kw], dw).expect("conv2d backward"),
            ),
        ];
        if let Some(bv) = bias {
            let mut db = vec![0.0; c_out];
            for b in 0..batch {
                for co in 0..c_out {
                    db[co] += grad.data()[(b * c_out + co) * cols..(b * c_out + co + 1) * cols]
                        .iter()
                        .sum::<f64>();
                }
            }
            contributions.push((bv, Tensor::from_vec(&[c_out], db).expect("conv2d backward")));
        }
        contributions
    })))
}

/// Transposed 2D convolution (adjoint of conv2d with the same geometry).
///
/// x: [B, C_in, H, W], weight: [C_in, C_out, kh, kw], bias: [C_out].
/// Output spatial extent: (H-1)*stride - 2*padding + k.
pub fn conv_transpose2d(
    g: &Graph,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let vx = g.value(x);
    let vw = g.value(weight);
    check_feature_map("conv_transpose2d input", &vx)?;
    if vw.rank() != 4 {
        return Err(Error::shape(format!(
            "conv_transpose2d weight must be [c_in, c_out, kh, kw], got {:?}",
            vw.shape()
        )));
    }
    let (batch, c_in, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
    let (wc_in, c_out, kh, kw) = (vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]);
    if wc_in != c_in {
        return Err(Error::shape(format!(
            "conv_transpose2d weight expects {wc_in} input channels, input has {c_in}"
        )));
    }
    if stride == 0 {
        return Err(Error::config("conv_transpose2d stride must be positive"));
    }
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;
    let (oh, ow) = (
        oh.checked_sub(2 * padding).ok_or_else(|| {
            Error::shape(format!("padding {padding} swallows the whole {oh}-row output"))
        })?,
        ow.checked_sub(2 * padding).ok_or_else(|| {
            Error::shape(format!("padding {padding} swallows the whole {ow}-col output"))
        })?,
    );
    let vb = bias.map(|b| g.value(b));
    if let Some(ref b) = vb {
        if b.shape() != [c_out] {
            return Err(Error::shape(format!(
                "conv_transpose2d bias shape {:?} must be [{c_out}]",
                b.shape()
            )));
        }
    }
    // Column space indexed by the *input* grid; image space is the output.
    let geo = Geometry::new(oh, ow, kh, kw, stride, padding)?;
    if geo.oh != h || geo.ow != w {
        return Err(Error::shape(format!(
            "conv_transpose2d geometry mismatch: adjoint maps {}x{} -> {h}x{w}, got {}x{}",
            oh, ow, geo.oh, geo.ow
        )));
    }
    let cols = h * w;
    let krows = c_out * kh * kw;

    let mut out = vec![0.0; batch * c_out * oh * ow];
    let mut col = vec![0.0; krows * cols];
    for b in 0..batch {
        // col = W^T · x_im, with x_im = [c_in, h*w]
        gemm(
            krows,
            c_in,
            cols,
            1.0,
            vw.data(),
            true,
            &vx.data()[b * c_in * cols..(b + 1) * c_in * cols],
            false,
            0.0,
            &mut col,
        );
        let img = &mut out[b * c_out * oh * ow..(b + 1) * c_out * oh * ow];
        geo.col2im(&col, c_out, img);
        if let Some(ref bv) = vb {
            for co in 0..c_out {
                let add = bv.data()[co];
                for o in img[co * oh * ow..(co + 1) * oh * ow].iter_mut() {
                    *o += add;
                }
            }
        }
    }
    let out = Tensor::from_vec(&[batch, c_out, oh, ow], out)?;

    let parents: Vec<Var> = match bias {
        Some(bv) => vec![x, weight, bv],
        None => vec![x, weight],
    };
    Ok(g.op(out, &parents, Box::new(move |grad| {
        let mut dx = vec![0.0; batch * c_in * cols];
        let mut dw = vec![0.0; c_in * krows];
        let mut dcol = vec![0.0; krows * cols];
        for b in 0..batch {
            let gy = &grad.data()[b * c_out * oh * ow..(b + 1) * c_out * oh * ow];
            geo.im2col(gy, c_out, &mut dcol);
            // dx_im = W · dcol
            gemm(
                c_in,
                krows,
                cols,
                1.0,
                vw.data(),
                false,
                &dcol,
                false,
                0.0,
                &mut dx[b * c_in * cols..(b + 1) * c_in * cols],
            );
            // dW += x_im · dcol^T
            gemm(
                c_in,
                cols,
                krows,
                1.0,
                &vx.data()[b * c_in * cols..(b + 1) * c_in * cols],
                false,
                &dcol,
                true,
                1.0,
                &mut dw,
            );
        }
        let mut contributions = vec![
            (x, Tensor::from_vec(&[batch, c_in, h, w], dx).expect("conv_transpose2d backward")),
            (
                weight,
                Tensor::from_vec(&[c_in, c_out, kh, kw], dw).expect("conv_transpose2d backward"),
            ),
        ];
        if let Some(bv) = bias {
            let mut db = vec![0.0; c_out];
            for b in 0..batch {
                for co in 0..c_out {
                    let plane = (b * c_out + co) * oh * ow;
                    db[co] += grad.data()[plane..plane + oh * ow].iter().sum::<f64>();
                }
            }
            contributions.push((bv, Tensor::from_vec(&[c_out], db).expect("conv_transpose2d backward")));
        }
        contributions
    })))
}
