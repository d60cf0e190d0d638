//! Spatial-frequency attention fusion: inject each mixer branch's features
//! with a learned relation to the other branch, then concatenate.
//!
//! Fused output: [Fs + R(Fs, Ff) || Ff + R(Ff, Fs)], with separate
//! relation weights per direction (sharing is a config switch). Every
//! relation kind funnels through one final projection so zeroing that
//! projection makes the whole module an exact concatenation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::ops;
use crate::graph::{conv, norm, Graph, Var};
use crate::params::{BoundParams, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Relation function family (the ablation axis of the fusion module).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    /// Pointwise two-layer map over the channel concatenation of both maps.
    Mlp,
    /// Queries from the first map, keys/values from the second; tokens are
    /// spatial positions.
    CrossAttention,
    /// One pre-norm cross-attention block followed by a pointwise
    /// feed-forward.
    Transformer,
}

/// Fusion hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SfaConfig {
    pub kind: RelationKind,
    /// Attention head count (cross_attention / transformer kinds).
    pub heads: usize,
    /// Reuse one set of relation weights for both directions.
    #[serde(default)]
    pub share_weights: bool,
}

impl Default for SfaConfig {
    fn default() -> Self {
        SfaConfig { kind: RelationKind::Transformer, heads: 4, share_weights: false }
    }
}

/// Weights of one directed relation application.
#[derive(Clone, Debug)]
pub enum RelationParams {
    Mlp {
        w_in: ParamId,
        b_in: ParamId,
        proj_w: ParamId,
        proj_b: ParamId,
    },
    CrossAttention {
        wq: ParamId,
        wk: ParamId,
        wv: ParamId,
        proj_w: ParamId,
        proj_b: ParamId,
    },
    Transformer {
        norm_q_gamma: ParamId,
        norm_q_beta: ParamId,
        norm_kv_gamma: ParamId,
        norm_kv_beta: ParamId,
        wq: ParamId,
        wk: ParamId,
        wv: ParamId,
        attn_w: ParamId,
        attn_b: ParamId,
        norm_ff_gamma: ParamId,
        norm_ff_beta: ParamId,
        ff_w: ParamId,
        ff_b: ParamId,
        proj_w: ParamId,
        proj_b: ParamId,
    },
}

impl RelationParams {
    fn init(
        ps: &mut ParamSet,
        prefix: &str,
        kind: RelationKind,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let c = channels;
        match kind {
            RelationKind::Mlp => Ok(RelationParams::Mlp {
                w_in: ps.add_fan_in(format!("{prefix}.in.w"), &[c, 2 * c, 1, 1], 2 * c, rng)?,
                b_in: ps.add(format!("{prefix}.in.b"), Tensor::zeros(&[c]))?,
                proj_w: ps.add_fan_in(format!("{prefix}.proj.w"), &[c, c, 1, 1], c, rng)?,
                proj_b: ps.add(format!("{prefix}.proj.b"), Tensor::zeros(&[c]))?,
            }),
            RelationKind::CrossAttention => Ok(RelationParams::CrossAttention {
                wq: ps.add_fan_in(format!("{prefix}.wq"), &[c, c], c, rng)?,
                wk: ps.add_fan_in(format!("{prefix}.wk"), &[c, c], c, rng)?,
                wv: ps.add_fan_in(format!("{prefix}.wv"), &[c, c], c, rng)?,
                proj_w: ps.add_fan_in(format!("{prefix}.proj.w"), &[c, c], c, rng)?,
                proj_b: ps.add(format!("{prefix}.proj.b"), Tensor::zeros(&[c]))?,
            }),
            RelationKind::Transformer => Ok(RelationParams::Transformer {
                norm_q_gamma: ps.add(format!("{prefix}.norm_q.gamma"), Tensor::ones(&[c]))?,
                norm_q_beta: ps.add(format!("{prefix}.norm_q.beta"), Tensor::zeros(&[c]))?,
                norm_kv_gamma: ps.add(format!("{prefix}.norm_kv.gamma"), Tensor::ones(&[c]))?,
                norm_kv_beta: ps.add(format!("{prefix}.norm_kv.beta"), Tensor::zeros(&[c]))?,
                wq: ps.add_fan_in(format!("{prefix}.wq"), &[c, c], c, rng)?,
                wk: ps.add_fan_in(format!("{prefix}.wk"), &[c, c], c, rng)?,
                wv: ps.add_fan_in(format!("{prefix}.wv"), &[c, c], c, rng)?,
                attn_w: ps.add_fan_in(format!("{prefix}.attn_out.w"), &[c, c], c, rng)?,
                attn_b: ps.add(format!("{prefix}.attn_out.b"), Tensor::zeros(&[c]))?,
                norm_ff_gamma: ps.add(format!("{prefix}.norm_ff.gamma"), Tensor::ones(&[c]))?,
                norm_ff_beta: ps.add(format!("{prefix}.norm_ff.beta"), Tensor::zeros(&[c]))?,
                ff_w: ps.add_fan_in(format!("{prefix}.ff.w"), &[2 * c, c, 1, 1], c, rng)?,
                ff_b: ps.add(format!("{prefix}.ff.b"), Tensor::zeros(&[2 * c]))?,
                proj_w: ps.add_fan_in(format!("{prefix}.proj.w"), &[c, 2 * c, 1, 1], 2 * c, rng)?,
                proj_b: ps.add(format!("{prefix}.proj.b"), Tensor::zeros(&[c]))?,
            }),
        }
    }
}

/// Both directed relation applications of the fusion module.
#[derive(Clone, Debug)]
pub struct SfaParams {
    cfg: SfaConfig,
    channels: usize,
    forward: RelationParams,
    /// None when share_weights is set; the forward weights serve both
    /// directions.
    backward: Option<RelationParams>,
}

impl SfaParams {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        cfg: &SfaConfig,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("relation channels must be positive"));
        }
        if matches!(cfg.kind, RelationKind::CrossAttention | RelationKind::Transformer) {
            if cfg.heads == 0 || channels % cfg.heads != 0 {
                return Err(Error::config(format!(
                    "channels {channels} not divisible by heads {}",
                    cfg.heads
                )));
            }
        }
        let forward = RelationParams::init(ps, &format!("{prefix}.fwd"), cfg.kind, channels, rng)?;
        let backward = if cfg.share_weights {
            None
        } else {
            Some(RelationParams::init(ps, &format!("{prefix}.bwd"), cfg.kind, channels, rng)?)
        };
        Ok(SfaParams { cfg: *cfg, channels, forward, backward })
    }

    pub fn config(&self) -> &SfaConfig {
        &self.cfg
    }
}

fn check_pair(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != 4 || b.len() != 4 {
        return Err(Error::shape(format!(
            "relation expects [batch, channel, h, w] maps, got {a:?} and {b:?}"
        )));
    }
    if a != b {
        return Err(Error::shape(format!(
            "relation operands disagree: {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

/// Feature map [B, C, H, W] -> token matrix [B, HW, C].
fn map_to_tokens(g: &Graph, x: Var) -> Result<Var> {
    let s = g.shape(x);
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let r = ops::reshape(g, x, &[b, c, h * w])?;
    ops::permute(g, r, &[0, 2, 1])
}

fn tokens_to_map(g: &Graph, x: Var, c: usize, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(x);
    let b = s[0];
    let p = ops::permute(g, x, &[0, 2, 1])?;
    ops::reshape(g, p, &[b, c, h, w])
}

/// Linear map applied per token: x [B, T, C] x w [C, C_out].
fn token_linear(g: &Graph, x: Var, w: Var) -> Result<Var> {
    let s = g.shape(x);
    let (b, t, c) = (s[0], s[1], s[2]);
    let flat = ops::reshape(g, x, &[b * t, c])?;
    let out = ops::matmul(g, flat, w)?;
    let oc = g.shape(out)[1];
    ops::reshape(g, out, &[b, t, oc])
}

/// Split [B, T, C] into heads: [B*heads, T, C/heads].
fn split_heads(g: &Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x);
    let (b, t, c) = (s[0], s[1], s[2]);
    let r = ops::reshape(g, x, &[b, t, heads, c / heads])?;
    let p = ops::permute(g, r, &[0, 2, 1, 3])?;
    ops::reshape(g, p, &[b * heads, t, c / heads])
}

fn merge_heads(g: &Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x);
    let (bh, t, dk) = (s[0], s[1], s[2]);
    let b = bh / heads;
    let r = ops::reshape(g, x, &[b, heads, t, dk])?;
    let p = ops::permute(g, r, &[0, 2, 1, 3])?;
    ops::reshape(g, p, &[b, t, heads * dk])
}

/// Multi-head cross-attention over spatial tokens. Returns the attended
/// tokens and the attention weights [B*heads, T_q, T_kv] (rows sum to 1).
pub fn cross_attention_tokens(
    g: &Graph,
    q_tokens: Var,
    kv_tokens: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    heads: usize,
) -> Result<(Var, Var)> {
    let c = g.shape(q_tokens)[2];
    if heads == 0 || c % heads != 0 {
        return Err(Error::config(format!(
            "token width {c} not divisible by heads {heads}"
        )));
    }
    let q = split_heads(g, token_linear(g, q_tokens, wq)?, heads)?;
    let k = split_heads(g, token_linear(g, kv_tokens, wk)?, heads)?;
    let v = split_heads(g, token_linear(g, kv_tokens, wv)?, heads)?;
    let kt = ops::permute(g, k, &[0, 2, 1])?;
    let scores = ops::bmm(g, q, kt)?;
    let scaled = ops::scale(g, scores, 1.0 / ((c / heads) as f64).sqrt());
    let attn = ops::softmax_last(g, scaled)?;
    let ctx = ops::bmm(g, attn, v)?;
    Ok((merge_heads(g, ctx, heads)?, attn))
}

/// One directed relation application R(Fa, Fb): how much of Fb should
/// reshape Fa. Output shape equals Fa's.
pub fn relation(
    g: &Graph,
    fa: Var,
    fb: Var,
    params: &RelationParams,
    heads: usize,
    bound: &BoundParams,
) -> Result<Var> {
    let sa = g.shape(fa);
    check_pair(&sa, &g.shape(fb))?;
    let (c, h, w) = (sa[1], sa[2], sa[3]);
    match params {
        RelationParams::Mlp { w_in, b_in, proj_w, proj_b } => {
            let cat = ops::concat(g, &[fa, fb], 1)?;
            let hid = conv::conv2d(g, cat, bound.var(*w_in), Some(bound.var(*b_in)), 1, 0, 1)?;
            let act = ops::gelu(g, hid);
            conv::conv2d(g, act, bound.var(*proj_w), Some(bound.var(*proj_b)), 1, 0, 1)
        }
        RelationParams::CrossAttention { wq, wk, wv, proj_w, proj_b } => {
            let qt = map_to_tokens(g, fa)?;
            let kvt = map_to_tokens(g, fb)?;
            let (ctx, _) = cross_attention_tokens(
                g,
                qt,
                kvt,
                bound.var(*wq),
                bound.var(*wk),
                bound.var(*wv),
                heads,
            )?;
            let projected = token_linear(g, ctx, bound.var(*proj_w))?;
            let biased = ops::add_bias_last(g, projected, bound.var(*proj_b))?;
            tokens_to_map(g, biased, c, h, w)
        }
        RelationParams::Transformer {
            norm_q_gamma,
            norm_q_beta,
            norm_kv_gamma,
            norm_kv_beta,
            wq,
            wk,
            wv,
            attn_w,
            attn_b,
            norm_ff_gamma,
            norm_ff_beta,
            ff_w,
            ff_b,
            proj_w,
            proj_b,
        } => {
            let qn = norm::group_norm(g, fa, 1, bound.var(*norm_q_gamma), bound.var(*norm_q_beta), 1e-5)?;
            let kn =
                norm::group_norm(g, fb, 1, bound.var(*norm_kv_gamma), bound.var(*norm_kv_beta), 1e-5)?;
            let (ctx, _) = cross_attention_tokens(
                g,
                map_to_tokens(g, qn)?,
                map_to_tokens(g, kn)?,
                bound.var(*wq),
                bound.var(*wk),
                bound.var(*wv),
                heads,
            )?;
            let attn_out = ops::add_bias_last(g, token_linear(g, ctx, bound.var(*attn_w))?, bound.var(*attn_b))?;
            // Internal residual around attention; the feed-forward output is
            // the relation itself (the caller adds the outer residual).
            let u = ops::add(g, fa, tokens_to_map(g, attn_out, c, h, w)?)?;
            let un = norm::group_norm(g, u, 1, bound.var(*norm_ff_gamma), bound.var(*norm_ff_beta), 1e-5)?;
            let hid = conv::conv2d(g, un, bound.var(*ff_w), Some(bound.var(*ff_b)), 1, 0, 1)?;
            let act = ops::gelu(g, hid);
            conv::conv2d(g, act, bound.var(*proj_w), Some(bound.var(*proj_b)), 1, 0, 1)
        }
    }
}

/// Eq.-style fusion: [Fs + R(Fs, Ff) || Ff + R(Ff, Fs)], doubling the
/// channel count.
pub fn sfa_fuse(
    g: &Graph,
    fs: Var,
    ff: Var,
    params: &SfaParams,
    bound: &BoundParams,
) -> Result<Var> {
    let ss = g.shape(fs);
    check_pair(&ss, &g.shape(ff))?;
    if ss[1] != params.channels {
        return Err(Error::config(format!(
            "fusion configured for {} channels, got {}",
            params.channels, ss[1]
        )));
    }
    let heads = params.cfg.heads;
    let r_fwd = relation(g, fs, ff, &params.forward, heads, bound)?;
    let back = params.backward.as_ref().unwrap_or(&params.forward);
    let r_bwd = relation(g, ff, fs, back, heads, bound)?;
    let fs_hat = ops::add(g, fs, r_fwd)?;
    let ff_hat = ops::add(g, ff, r_bwd)?;
    ops::concat(g, &[fs_hat, ff_hat], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check::check_gradients_sampled;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const KINDS: [RelationKind; 3] =
        [RelationKind::Mlp, RelationKind::CrossAttention, RelationKind::Transformer];

    fn cfg(kind: RelationKind) -> SfaConfig {
        SfaConfig { kind, heads: 2, share_weights: false }
    }

    fn rand_map(rng: &mut impl rand::Rng, c: usize) -> Tensor {
        Tensor::rand_uniform(rng, &[2, c, 4, 4], -1.0, 1.0)
    }

    #[test]
    fn zeroed_final_projection_reduces_fusion_to_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for kind in KINDS {
            let mut ps = ParamSet::new();
            let params = SfaParams::init(&mut ps, "sfa", &cfg(kind), 4, &mut rng).unwrap();
            let zeroed = ps.zero_matching(".proj");
            assert!(zeroed >= 2, "{kind:?}: expected both directions' projections, got {zeroed}");
            let fs = rand_map(&mut rng, 4);
            let ff = rand_map(&mut rng, 4);
            let g = Graph::new();
            let bound = ps.bind(&g);
            let fused = sfa_fuse(&g, g.constant(fs.clone()), g.constant(ff.clone()), &params, &bound).unwrap();
            let expect = ops::concat(&g, &[g.constant(fs), g.constant(ff)], 1).unwrap();
            assert!(
                g.value(fused).bit_eq(&g.value(expect)),
                "{kind:?}: zero projection must make fusion an exact concatenation"
            );
        }
    }

    #[test]
    fn fusion_doubles_channels_and_preserves_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for kind in KINDS {
            let mut ps = ParamSet::new();
            let params = SfaParams::init(&mut ps, "sfa", &cfg(kind), 32, &mut rng).unwrap();
            let g = Graph::new();
            let bound = ps.bind(&g);
            let fs = g.constant(Tensor::rand_uniform(&mut rng, &[2, 32, 5, 6], -1.0, 1.0));
            let ff = g.constant(Tensor::rand_uniform(&mut rng, &[2, 32, 5, 6], -1.0, 1.0));
            let fused = sfa_fuse(&g, fs, ff, &params, &bound).unwrap();
            assert_eq!(g.shape(fused), vec![2, 64, 5, 6], "{kind:?} output shape");
        }
    }

    #[test]
    fn directed_applications_differ_on_asymmetric_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        for kind in KINDS {
            let mut ps = ParamSet::new();
            let params = SfaParams::init(&mut ps, "sfa", &cfg(kind), 4, &mut rng).unwrap();
            let fs = rand_map(&mut rng, 4);
            let ff = rand_map(&mut rng, 4);
            let g = Graph::new();
            let bound = ps.bind(&g);
            let fwd = relation(&g, g.constant(fs.clone()), g.constant(ff.clone()), &params.forward, 2, &bound).unwrap();
            let back = params.backward.as_ref().unwrap();
            let bwd = relation(&g, g.constant(ff), g.constant(fs), back, 2, &bound).unwrap();
            let diff = g.value(fwd).max_abs_diff(&g.value(bwd)).unwrap();
            assert!(diff > 1e-6, "{kind:?}: directions should differ, max diff {diff}");
        }
    }

    #[test]
    fn attention_rows_are_normalized_and_constant_keys_flatten_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let mut ps = ParamSet::new();
        let params =
            SfaParams::init(&mut ps, "sfa", &cfg(RelationKind::CrossAttention), 4, &mut rng).unwrap();
        let g = Graph::new();
        let bound = ps.bind(&g);
        let fa = g.constant(rand_map(&mut rng, 4));
        let fb = g.constant(rand_map(&mut rng, 4));
        let RelationParams::CrossAttention { wq, wk, wv, .. } = &params.forward else {
            panic!("expected cross-attention params");
        };
        let (_, attn) = cross_attention_tokens(
            &g,
            map_to_tokens(&g, fa).unwrap(),
            map_to_tokens(&g, fb).unwrap(),
            bound.var(*wq),
            bound.var(*wk),
            bound.var(*wv),
            2,
        )
        .unwrap();
        let av = g.value(attn);
        let t = av.shape()[2];
        for (r, row) in av.data().chunks_exact(t).enumerate() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "attention row {r} sums to {sum}");
        }

        // Constant-over-space values: attending anywhere returns the same
        // thing, so the relation output is constant over space too.
        let fb_const = g.constant(Tensor::full(&[2, 4, 4, 4], 0.7));
        let out = relation(&g, fa, fb_const, &params.forward, 2, &bound).unwrap();
        let ov = g.value(out);
        for b in 0..2 {
            for c in 0..4 {
                let plane = &ov.data()[(b * 4 + c) * 16..(b * 4 + c + 1) * 16];
                let spread = plane.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
                    - plane.iter().fold(f64::INFINITY, |m, &v| m.min(v));
                assert!(spread < 1e-10, "plane ({b},{c}) varies by {spread}");
            }
        }
    }

    #[test]
    fn gradients_reach_both_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        for kind in KINDS {
            let mut ps = ParamSet::new();
            let params = SfaParams::init(&mut ps, "sfa", &cfg(kind), 4, &mut rng).unwrap();
            let g = Graph::new();
            let bound = ps.bind(&g);
            let fs = g.input(rand_map(&mut rng, 4));
            let ff = g.input(rand_map(&mut rng, 4));
            let fused = sfa_fuse(&g, fs, ff, &params, &bound).unwrap();
            let sq = ops::mul(&g, fused, fused).unwrap();
            let loss = ops::mean_all(&g, sq).unwrap();
            let grads = g.backward(loss).unwrap();
            for (name, v) in [("spatial", fs), ("frequency", ff)] {
                let norm: f64 = grads
                    .get(v)
                    .unwrap_or_else(|| panic!("{kind:?}: no gradient for {name} branch"))
                    .iter()
                    .map(|x| x * x)
                    .sum();
                assert!(norm > 1e-12, "{kind:?}: {name}-branch gradient is zero");
            }
        }
    }

    #[test]
    fn shared_weights_halve_relation_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let count = |share: bool| {
            let mut ps = ParamSet::new();
            let c = SfaConfig { kind: RelationKind::Mlp, heads: 1, share_weights: share };
            SfaParams::init(&mut ps, "sfa", &c, 8, &mut rng).unwrap();
            ps.total_len()
        };
        assert_eq!(count(false), 2 * count(true));
    }

    #[test]
    fn rejects_mismatched_operands_and_bad_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(199);
        let mut ps = ParamSet::new();
        let params = SfaParams::init(&mut ps, "sfa", &cfg(RelationKind::Mlp), 4, &mut rng).unwrap();
        let g = Graph::new();
        let bound = ps.bind(&g);
        let fs = g.constant(Tensor::zeros(&[1, 4, 4, 4]));
        let ff = g.constant(Tensor::zeros(&[1, 4, 5, 4]));
        assert!(sfa_fuse(&g, fs, ff, &params, &bound).is_err());

        let mut ps2 = ParamSet::new();
        let bad = SfaConfig { kind: RelationKind::CrossAttention, heads: 3, share_weights: false };
        assert!(SfaParams::init(&mut ps2, "sfa", &bad, 4, &mut rng).is_err(), "4 % 3 != 0");
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for kind in KINDS {
            let mut ps = ParamSet::new();
            let params = SfaParams::init(&mut ps, "sfa", &cfg(kind), 4, &mut rng).unwrap();
            let fs = Tensor::rand_uniform(&mut rng, &[1, 4, 3, 3], -1.0, 1.0);
            let ff = Tensor::rand_uniform(&mut rng, &[1, 4, 3, 3], -1.0, 1.0);
            let mut data = vec![fs.data().to_vec(), ff.data().to_vec()];
            let mut shapes = vec![fs.shape().to_vec(), ff.shape().to_vec()];
            for (_, p) in ps.iter() {
                data.push(p.value.data().to_vec());
                shapes.push(p.value.shape().to_vec());
            }
            let r = check_gradients_sampled(
                &data,
                &shapes,
                |g, vars| {
                    let bound = BoundParams::from_vars(vars[2..].to_vec());
                    let fused = sfa_fuse(g, vars[0], vars[1], &params, &bound)?;
                    let sq = ops::mul(g, fused, fused)?;
                    ops::mean_all(g, sq)
                },
                5,
                103,
            )
            .unwrap();
            assert!(r.max_rel_err < 1e-4, "{kind:?} rel err {}", r.max_rel_err);
        }
    }
}
