//! Group normalization over [B, C, ...] with per-channel affine.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Normalize each (batch, group) slab to zero mean / unit variance, then
/// apply the per-channel affine gamma * xhat + beta. Variance is the biased
/// (population) estimate.
pub fn group_norm(
    g: &Graph,
    x: Var,
    num_groups: usize,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<Var> {
    let vx = g.value(x);
    if vx.rank() < 2 {
        return Err(Error::shape(format!(
            "group_norm needs [batch, channel, ...], got {:?}",
            vx.shape()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::config(format!("group_norm eps must be positive, got {eps}")));
    }
    let (batch, channels) = (vx.shape()[0], vx.shape()[1]);
    if num_groups == 0 || channels % num_groups != 0 {
        return Err(Error::config(format!(
            "channel count {channels} not divisible by num_groups {num_groups}"
        )));
    }
    let (vgamma, vbeta) = (g.value(gamma), g.value(beta));
    if vgamma.shape() != [channels] || vbeta.shape() != [channels] {
        return Err(Error::shape(format!(
            "affine shapes {:?}/{:?} must be [{channels}]",
            vgamma.shape(),
            vbeta.shape()
        )));
    }
    let spatial: usize = vx.shape()[2..].iter().product();
    let cg = channels / num_groups;
    let slab = cg * spatial; // elements per (batch, group)

    let mut out = vec![0.0; vx.len()];
    let mut means = vec![0.0; batch * num_groups];
    let mut inv_stds = vec![0.0; batch * num_groups];
    for b in 0..batch {
        for gr in 0..num_groups {
            let base = (b * channels + gr * cg) * spatial;
            let slice = &vx.data()[base..base + slab];
            let mean = slice.iter().sum::<f64>() / slab as f64;
            let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / slab as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            means[b * num_groups + gr] = mean;
            inv_stds[b * num_groups + gr] = inv_std;
            for c in 0..cg {
                let ch = gr * cg + c;
                let (gam, bet) = (vgamma.data()[ch], vbeta.data()[ch]);
                let off = base + c * spatial;
                for i in 0..spatial {
                    out[off + i] = gam * (vx.data()[off + i] - mean) * inv_std + bet;
                }
            }
        }
    }
    let out = Tensor::from_vec(vx.shape(), out)?;

    Ok(g.op(out, &[x, gamma, beta], Box::new(move |grad| {
        let mut dx = vec![0.0; vx.len()];
        let mut dgamma = vec![0.0; channels];
        let mut dbeta = vec![0.0; channels];
        for b in 0..batch {
            for gr in 0..num_groups {
                let base = (b * channels + gr * cg) * spatial;
                let mean = means[b * num_groups + gr];
                let inv_std = inv_stds[b * num_groups + gr];
                // First pass: per-group sums of dxhat and dxhat * xhat.
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                for c in 0..cg {
                    let ch = gr * cg + c;
                    let gam = vgamma.data()[ch];
                    let off = base + c * spatial;
                    for i in 0..spatial {
                        let xh = (vx.data()[off + i] - mean) * inv_std;
                        let gv = grad.data()[off + i];
                        dgamma[ch] += gv * xh;
                        dbeta[ch] += gv;
                        let dxh = gv * gam;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                }
                let n = slab as f64;
                for c in 0..cg {
                    let ch = gr * cg + c;
                    let gam = vgamma.data()[ch];
                    let off = base + c * spatial;
                    for i in 0..spatial {
                        let xh = (vx.data()[off + i] - mean) * inv_std;
                        let dxh = grad.data()[off + i] * gam;
                        dx[off + i] = inv_std * (dxh - sum_dxh / n - xh * sum_dxh_xh / n);
                    }
                }
            }
        }
        vec![
            (x, Tensor::from_vec(vx.shape(), dx).expect("group_norm backward")),
            (gamma, Tensor::from_vec(&[channels], dgamma).expect("group_norm backward")),
            (beta, Tensor::from_vec(&[channels], dbeta).expect("group_norm backward")),
        ]
    })))
}
