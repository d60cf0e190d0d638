//! Parameter-free pooling token mixer: boundary-renormalized window mean
//! minus the center value, in O(H*W) via summed-area tables.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Summed-area table of one [h, w] plane, laid out [(h+1), (w+1)].
fn integral(plane: &[f64], h: usize, w: usize, sat: &mut [f64]) {
    debug_assert_eq!(sat.len(), (h + 1) * (w + 1));
    for v in sat[..w + 1].iter_mut() {
        *v = 0.0;
    }
    for y in 0..h {
        let mut row_acc = 0.0;
        sat[(y + 1) * (w + 1)] = 0.0;
        for x in 0..w {
            row_acc += plane[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row_acc;
        }
    }
}

#[inline]
fn window_sum(sat: &[f64], w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> f64 {
    // Inclusive corners [y0..=y1] x [x0..=x1].
    let stride = w + 1;
    sat[(y1 + 1) * stride + x1 + 1] - sat[y0 * stride + x1 + 1] - sat[(y1 + 1) * stride + x0]
        + sat[y0 * stride + x0]
}

#[inline]
fn clamp_window(center: usize, radius: usize, extent: usize) -> (usize, usize) {
    let lo = center.saturating_sub(radius);
    let hi = (center + radius).min(extent - 1);
    (lo, hi)
}

/// Mean over the in-bounds part of the K x K window centered at each cell,
/// minus the cell itself. Zero learnable parameters.
pub fn pool_mix(g: &Graph, x: Var, pool_size: usize) -> Result<Var> {
    if pool_size < 3 || pool_size % 2 == 0 {
        return Err(Error::config(format!(
            "pool_size must be odd and >= 3, got {pool_size}"
        )));
    }
    let vx = g.value(x);
    if vx.rank() < 2 {
        return Err(Error::shape(format!(
            "pool_mix needs trailing [h, w] axes, got {:?}",
            vx.shape()
        )));
    }
    let h = vx.shape()[vx.rank() - 2];
    let w = vx.shape()[vx.rank() - 1];
    let radius = pool_size / 2;
    let planes = vx.len() / (h * w);

    let mut out = vec![0.0; vx.len()];
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for p in 0..planes {
        let plane = &vx.data()[p * h * w..(p + 1) * h * w];
        integral(plane, h, w, &mut sat);
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let (y0, y1) = clamp_window(y, radius, h);
            for x in 0..w {
                let (x0, x1) = clamp_window(x, radius, w);
                let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
                dst[y * w + x] = window_sum(&sat, w, y0, y1, x0, x1) / count - plane[y * w + x];
            }
        }
    }
    let out = Tensor::from_vec(vx.shape(), out)?;
    let shape = vx.shape().to_vec();
    Ok(g.op(out, &[x], Box::new(move |grad| {
        // Adjoint: divide the seed by each cell's window count, box-sum the
        // result (windows are symmetric), then subtract the seed itself.
        let mut dx = vec![0.0; grad.len()];
        let mut weighted = vec![0.0; h * w];
        let mut sat = vec![0.0; (h + 1) * (w + 1)];
        for p in 0..planes {
            let gp = &grad.data()[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                let (y0, y1) = clamp_window(y, radius, h);
                for x in 0..w {
                    let (x0, x1) = clamp_window(x, radius, w);
                    let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
                    weighted[y * w + x] = gp[y * w + x] / count;
                }
            }
            integral(&weighted, h, w, &mut sat);
            let dp = &mut dx[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                let (y0, y1) = clamp_window(y, radius, h);
                for x in 0..w {
                    let (x0, x1) = clamp_window(x, radius, w);
                    dp[y * w + x] = window_sum(&sat, w, y0, y1, x0, x1) - gp[y * w + x];
                }
            }
        }
        vec![(x, Tensor::from_vec(&shape, dx).expect("pool_mix backward"))]
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check::check_gradients;
    use crate::graph::ops;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct window-enumeration oracle, no integral images.
    fn pool_mix_oracle(x: &Tensor, k: usize) -> Tensor {
        let rank = x.rank();
        let h = x.shape()[rank - 2];
        let w = x.shape()[rank - 1];
        let r = k / 2;
        let planes = x.len() / (h * w);
        let mut out = vec![0.0; x.len()];
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    for dy in -(r as isize)..=(r as isize) {
                        for dx in -(r as isize)..=(r as isize) {
                            let ny = y as isize + dy;
                            let nx = xx as isize + dx;
                            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                                continue;
                            }
                            sum += x.data()[p * h * w + ny as usize * w + nx as usize];
                            count += 1.0;
                        }
                    }
                    out[p * h * w + y * w + xx] =
                        sum / count - x.data()[p * h * w + y * w + xx];
                }
            }
        }
        Tensor::from_vec(x.shape(), out).unwrap()
    }

    #[test]
    fn constant_field_maps_to_zero_for_all_window_sizes() {
        for k in [3, 5, 7] {
            let g = Graph::new();
            let x = g.input(Tensor::full(&[1, 2, 6, 5], 3.25));
            let y = pool_mix(&g, x, k).unwrap();
            let max = g.value(y).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(max < 1e-12, "K={k}: constant field must map to zero, got {max}");
        }
    }

    #[test]
    fn center_spike_window_means() {
        let g = Graph::new();
        let mut data = vec![0.0; 9];
        data[4] = 9.0;
        let x = g.input(Tensor::from_vec(&[1, 1, 3, 3], data).unwrap());
        let y = pool_mix(&g, x, 3).unwrap();
        let v = g.value(y);
        // Center: full 3x3 window mean 1, minus the 9 at the center.
        assert!((v.data()[4] - (1.0 - 9.0)).abs() < 1e-12, "center {}", v.data()[4]);
        // Corner (0,0): in-bounds 2x2 window {0,0,0,9} -> 2.25 - 0.
        assert!((v.data()[0] - 2.25).abs() < 1e-12, "corner {}", v.data()[0]);
    }

    #[test]
    fn matches_window_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let xt = Tensor::rand_uniform(&mut rng, &[2, 3, 7, 6], -1.0, 1.0);
        for k in [3, 5] {
            let g = Graph::new();
            let x = g.input(xt.clone());
            let y = pool_mix(&g, x, k).unwrap();
            let diff = g.value(y).max_abs_diff(&pool_mix_oracle(&xt, k)).unwrap();
            assert!(diff < 1e-12, "K={k}: integral-image path drifted by {diff}");
        }
    }

    #[test]
    fn rejects_even_or_tiny_windows() {
        let g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 4, 4]));
        assert!(pool_mix(&g, x, 4).is_err());
        assert!(pool_mix(&g, x, 1).is_err());
    }

    #[test]
    fn rotating_the_input_rotates_the_output() {
        fn rot90(t: &Tensor) -> Tensor {
            // [h, w] -> [w, h], (y, x) -> (x, h-1-y)
            let h = t.shape()[0];
            let w = t.shape()[1];
            let mut out = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    out[x * h + (h - 1 - y)] = t.data()[y * w + x];
                }
            }
            Tensor::from_vec(&[w, h], out).unwrap()
        }
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let xt = Tensor::rand_uniform(&mut rng, &[5, 5], -1.0, 1.0);
        let g = Graph::new();
        let y_then_rot = rot90(&g.value(pool_mix(&g, g.input(xt.clone()), 3).unwrap()));
        let rot_then_y = g.value(pool_mix(&g, g.input(rot90(&xt)), 3).unwrap());
        let diff = y_then_rot.max_abs_diff(&rot_then_y).unwrap();
        assert!(diff < 1e-12, "rotation equivariance broken by {diff}");
    }

    #[test]
    fn gradients_match_finite_differences_including_borders() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let x: Vec<f64> = Tensor::rand_uniform(&mut rng, &[2 * 4 * 4], -1.0, 1.0)
            .data()
            .to_vec();
        let r = check_gradients(&[x], &[vec![1, 2, 4, 4]], |g, vars| {
            let y = pool_mix(g, vars[0], 3)?;
            let sq = ops::mul(g, y, y)?;
            ops::mean_all(g, sq)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "pool_mix rel err {}", r.max_rel_err);
    }
}
