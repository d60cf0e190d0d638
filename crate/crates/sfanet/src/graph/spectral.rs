//! 2D Fourier transforms over the trailing two axes, differentiable.
//!
//! Convention: unnormalized forward, 1/(H*W) on the inverse. The inverse
//! returns the real part (inputs upstream are real fields; the imaginary
//! residue of a round trip is numerical noise).

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::graph::{CVar, Graph, Var};
use crate::tensor::Tensor;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// In-place unnormalized 2D transform of every [h, w] plane in `buf`.
fn fft2_planes(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let plane = h * w;
    let row_fft = plan(w, inverse);
    let col_fft = plan(h, inverse);
    let mut col_buf = vec![Complex64::default(); h];
    for p in buf.chunks_exact_mut(plane) {
        for row in p.chunks_exact_mut(w) {
            row_fft.process(row);
        }
        for x in 0..w {
            for y in 0..h {
                col_buf[y] = p[y * w + x];
            }
            col_fft.process(&mut col_buf);
            for y in 0..h {
                p[y * w + x] = col_buf[y];
            }
        }
    }
}

fn to_complex(re: &[f64], im: Option<&[f64]>) -> Vec<Complex64> {
    match im {
        Some(im) => re
            .iter()
            .zip(im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect(),
        None => re.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
    }
}

fn trailing_hw(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "2D transform needs trailing [h, w] axes, got {:?}",
            shape
        )));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    if h == 0 || w == 0 {
        return Err(Error::shape("2D transform on empty spatial axes"));
    }
    Ok((h, w))
}

/// Unnormalized forward 2D DFT of a real field over the trailing two axes.
pub fn fft2(g: &Graph, x: Var) -> Result<CVar> {
    let vx = g.value(x);
    let (h, w) = trailing_hw(vx.shape())?;
    let mut buf = to_complex(vx.data(), None);
    fft2_planes(&mut buf, h, w, false);
    let re = Tensor::from_vec(vx.shape(), buf.iter().map(|c| c.re).collect())?;
    let im = Tensor::from_vec(vx.shape(), buf.iter().map(|c| c.im).collect())?;
    // The adjoint of the unnormalized forward DFT is the unnormalized
    // inverse; the real and imaginary outputs each propagate their own
    // seed and the tape sums the two contributions.
    let shape = vx.shape().to_vec();
    let shape2 = shape.clone();
    let re_node = g.op(re, &[x], Box::new(move |grad| {
        let mut buf = to_complex(grad.data(), None);
        fft2_planes(&mut buf, h, w, true);
        let dx: Vec<f64> = buf.iter().map(|c| c.re).collect();
        vec![(x, Tensor::from_vec(&shape, dx).expect("fft2 backward"))]
    }));
    let im_node = g.op(im, &[x], Box::new(move |grad| {
        let zeros = vec![0.0; grad.len()];
        let mut buf = to_complex(&zeros, Some(grad.data()));
        fft2_planes(&mut buf, h, w, true);
        let dx: Vec<f64> = buf.iter().map(|c| c.re).collect();
        vec![(x, Tensor::from_vec(&shape2, dx).expect("fft2 backward"))]
    }));
    Ok(CVar { re: re_node, im: im_node })
}

/// Normalized inverse 2D DFT over the trailing two axes; returns the real
/// part. ifft2(fft2(x)) == x for real x.
pub fn ifft2(g: &Graph, z: CVar) -> Result<Var> {
    let (vre, vim) = (g.value(z.re), g.value(z.im));
    if vre.shape() != vim.shape() {
        return Err(Error::shape(format!(
            "complex parts disagree: {:?} vs {:?}",
            vre.shape(),
            vim.shape()
        )));
    }
    let (h, w) = trailing_hw(vre.shape())?;
    let norm = 1.0 / (h * w) as f64;
    let mut buf = to_complex(vre.data(), Some(vim.data()));
    fft2_planes(&mut buf, h, w, true);
    let out = Tensor::from_vec(vre.shape(), buf.iter().map(|c| c.re * norm).collect())?;
    let shape = vre.shape().to_vec();
    Ok(g.op(out, &[z.re, z.im], Box::new(move |grad| {
        // d/dz of Re((1/N) * IDFT z) is (1/N) * DFT applied to the seed.
        let mut buf = to_complex(grad.data(), None);
        fft2_planes(&mut buf, h, w, false);
        let dre: Vec<f64> = buf.iter().map(|c| c.re * norm).collect();
        let dim: Vec<f64> = buf.iter().map(|c| c.im * norm).collect();
        vec![
            (z.re, Tensor::from_vec(&shape, dre).expect("ifft2 backward")),
            (z.im, Tensor::from_vec(&shape, dim).expect("ifft2 backward")),
        ]
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check::check_gradients;
    use crate::graph::ops;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_field_concentrates_at_dc() {
        let g = Graph::new();
        let x = g.input(Tensor::full(&[4, 4], 2.0));
        let z = fft2(&g, x).unwrap();
        let re = g.value(z.re);
        let im = g.value(z.im);
        assert!((re.data()[0] - 32.0).abs() < 1e-12, "DC bin {}", re.data()[0]);
        for i in 1..16 {
            assert!(re.data()[i].abs() < 1e-12, "bin {i} re {}", re.data()[i]);
        }
        for i in 0..16 {
            assert!(im.data()[i].abs() < 1e-12, "bin {i} im {}", im.data()[i]);
        }
    }

    #[test]
    fn unit_impulse_is_flat_spectrum() {
        let g = Graph::new();
        let mut data = vec![0.0; 12];
        data[0] = 1.0;
        let x = g.input(Tensor::from_vec(&[3, 4], data).unwrap());
        let z = fft2(&g, x).unwrap();
        for (&r, &i) in g.value(z.re).iter().zip(g.value(z.im).iter()) {
            assert!((r - 1.0).abs() < 1e-12 && i.abs() < 1e-12, "bin ({r}, {i})");
        }
    }

    #[test]
    fn round_trip_recovers_non_power_of_two_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let g = Graph::new();
        let xt = Tensor::rand_uniform(&mut rng, &[2, 3, 5, 7], -1.0, 1.0);
        let x = g.input(xt.clone());
        let z = fft2(&g, x).unwrap();
        let back = ifft2(&g, z).unwrap();
        let diff = g.value(back).max_abs_diff(&xt).unwrap();
        assert!(diff < 1e-10, "round trip error {diff}");
    }

    #[test]
    fn energy_matches_parseval_under_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let g = Graph::new();
        let xt = Tensor::rand_uniform(&mut rng, &[6, 9], -2.0, 2.0);
        let x = g.input(xt.clone());
        let z = fft2(&g, x).unwrap();
        let spatial: f64 = xt.iter().map(|v| v * v).sum();
        let spectral: f64 = g
            .value(z.re)
            .iter()
            .zip(g.value(z.im).iter())
            .map(|(&r, &i)| r * r + i * i)
            .sum();
        let scaled = spectral / 54.0;
        assert!(
            (spatial - scaled).abs() < 1e-8 * spatial.max(1.0),
            "Parseval broken: {spatial} vs {scaled}"
        );
    }

    #[test]
    fn gradients_match_finite_differences_through_fft_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let x: Vec<f64> = Tensor::rand_uniform(&mut rng, &[20], -1.0, 1.0).data().to_vec();
        // Loss touches both the real and imaginary spectra asymmetrically.
        let r = check_gradients(&[x.clone()], &[vec![4, 5]], |g, vars| {
            let z = fft2(g, vars[0])?;
            let re2 = ops::mul(g, z.re, z.re)?;
            let im_s = ops::scale(g, z.im, 0.37);
            let mix = ops::add(g, re2, im_s)?;
            ops::mean_all(g, mix)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "fft2 rel err {}", r.max_rel_err);

        // Full analysis-shrink-synthesis chain, the mixer's core loop.
        let r = check_gradients(&[x], &[vec![4, 5]], |g, vars| {
            let z = fft2(g, vars[0])?;
            let sr = ops::soft_shrink(g, z.re, 0.3)?;
            let si = ops::soft_shrink(g, z.im, 0.3)?;
            let back = ifft2(g, CVar { re: sr, im: si })?;
            let sq = ops::mul(g, back, back)?;
            ops::mean_all(g, sq)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "fft chain rel err {}", r.max_rel_err);
    }
}
