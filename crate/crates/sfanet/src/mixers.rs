//! Token mixers: the parameter-free pooling mixer and the FFT-based
//! spectral mixer, the residual blocks that wrap them, and a scaling
//! benchmark contrasting both against quadratic self-attention.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::ops::{self, gemm};
use crate::graph::{conv, norm, pool, spectral, CVar, Graph, Var};
use crate::params::{BoundParams, ParamId, ParamSet};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Configs.
// ---------------------------------------------------------------------------

/// Window size of the pooling mixer.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoolMixerConfig {
    pub pool_size: usize,
}

impl Default for PoolMixerConfig {
    fn default() -> Self {
        PoolMixerConfig { pool_size: 3 }
    }
}

impl PoolMixerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size < 3 || self.pool_size % 2 == 0 {
            return Err(Error::config(format!(
                "pool_size must be odd and >= 3, got {}",
                self.pool_size
            )));
        }
        Ok(())
    }
}

/// Activation applied between the two complex layers of the spectral
/// mixer, elementwise on the real and imaginary parts independently.
/// `None` (the default) keeps the map linear, which preserves exact
/// translation equivariance at zero shrinkage.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralActivation {
    #[default]
    None,
    Gelu,
    LeakyRelu,
}

/// Spectral mixer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectralMixerConfig {
    pub embed_dim: usize,
    /// Block-diagonal partition count of the channel map.
    pub num_blocks: usize,
    /// Hidden width of each per-block map, as a multiple of the block size.
    pub hidden_factor: f64,
    /// Soft-threshold applied in the frequency domain.
    pub shrink_lambda: f64,
    #[serde(default)]
    pub activation: SpectralActivation,
}

impl Default for SpectralMixerConfig {
    fn default() -> Self {
        SpectralMixerConfig {
            embed_dim: 32,
            num_blocks: 4,
            hidden_factor: 1.0,
            shrink_lambda: 0.01,
            activation: SpectralActivation::None,
        }
    }
}

impl SpectralMixerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_blocks == 0 {
            return Err(Error::config("spectral mixer dims must be positive"));
        }
        if self.embed_dim % self.num_blocks != 0 {
            return Err(Error::config(format!(
                "embed_dim {} not divisible by num_blocks {}",
                self.embed_dim, self.num_blocks
            )));
        }
        if self.hidden_factor <= 0.0 {
            return Err(Error::config(format!(
                "hidden_factor must be positive, got {}",
                self.hidden_factor
            )));
        }
        if self.shrink_lambda < 0.0 {
            return Err(Error::config(format!(
                "shrink_lambda must be non-negative, got {}",
                self.shrink_lambda
            )));
        }
        Ok(())
    }

    pub fn block_size(&self) -> usize {
        self.embed_dim / self.num_blocks
    }

    pub fn hidden_size(&self) -> usize {
        ((self.block_size() as f64 * self.hidden_factor).round() as usize).max(1)
    }
}

// ---------------------------------------------------------------------------
// Pooling mixer.
// ---------------------------------------------------------------------------

/// Boundary-renormalized K x K window mean minus the center value.
/// Zero learnable parameters; O(H*W).
pub fn pool_mix(g: &Graph, x: Var, cfg: &PoolMixerConfig) -> Result<Var> {
    cfg.validate()?;
    pool::pool_mix(g, x, cfg.pool_size)
}

// ---------------------------------------------------------------------------
// Spectral mixer.
// ---------------------------------------------------------------------------

/// Weights of the per-frequency block-diagonal two-layer complex channel
/// map. Shared across every frequency (token), stored as
/// w1: [num_blocks, block, hidden], w2: [num_blocks, hidden, block].
#[derive(Clone, Debug)]
pub struct SpectralMixerParams {
    cfg: SpectralMixerConfig,
    w1_re: ParamId,
    w1_im: ParamId,
    w2_re: ParamId,
    w2_im: ParamId,
}

impl SpectralMixerParams {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        cfg: &SpectralMixerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let (nb, bs, hh) = (cfg.num_blocks, cfg.block_size(), cfg.hidden_size());
        // Fan-in counts the complex input width (re+im contribute jointly).
        Ok(SpectralMixerParams {
            cfg: *cfg,
            w1_re: ps.add_fan_in(format!("{prefix}.w1_re"), &[nb, bs, hh], 2 * bs, rng)?,
            w1_im: ps.add_fan_in(format!("{prefix}.w1_im"), &[nb, bs, hh], 2 * bs, rng)?,
            w2_re: ps.add_fan_in(format!("{prefix}.w2_re"), &[nb, hh, bs], 2 * hh, rng)?,
            w2_im: ps.add_fan_in(format!("{prefix}.w2_im"), &[nb, hh, bs], 2 * hh, rng)?,
        })
    }

    /// Identity-initialized maps (requires hidden width == block size):
    /// both layers are the complex identity, so the whole mixer reduces to
    /// ifft2(fft2(x)) when shrink_lambda is zero.
    pub fn init_identity(ps: &mut ParamSet, prefix: &str, cfg: &SpectralMixerConfig) -> Result<Self> {
        cfg.validate()?;
        let (nb, bs, hh) = (cfg.num_blocks, cfg.block_size(), cfg.hidden_size());
        if hh != bs {
            return Err(Error::config(format!(
                "identity init needs hidden == block size, got {hh} vs {bs}"
            )));
        }
        let eye = Tensor::from_fn(&[nb, bs, bs], |i| {
            let within = i % (bs * bs);
            if within / bs == within % bs {
                1.0
            } else {
                0.0
            }
        });
        Ok(SpectralMixerParams {
            cfg: *cfg,
            w1_re: ps.add(format!("{prefix}.w1_re"), eye.clone())?,
            w1_im: ps.add(format!("{prefix}.w1_im"), Tensor::zeros(&[nb, bs, bs]))?,
            w2_re: ps.add(format!("{prefix}.w2_re"), eye)?,
            w2_im: ps.add(format!("{prefix}.w2_im"), Tensor::zeros(&[nb, bs, bs]))?,
        })
    }

    pub fn config(&self) -> &SpectralMixerConfig {
        &self.cfg
    }
}

/// Complex right-multiplication of token rows by one block's weights:
/// (zr + i zi) x (wr + i wi).
fn cblock_matmul(
    g: &Graph,
    zr: Var,
    zi: Var,
    wr: Var,
    wi: Var,
) -> Result<(Var, Var)> {
    let rr = ops::matmul(g, zr, wr)?;
    let ii = ops::matmul(g, zi, wi)?;
    let ri = ops::matmul(g, zr, wi)?;
    let ir = ops::matmul(g, zi, wr)?;
    Ok((ops::sub(g, rr, ii)?, ops::add(g, ri, ir)?))
}

fn split_activation(g: &Graph, re: Var, im: Var, act: SpectralActivation) -> (Var, Var) {
    match act {
        SpectralActivation::None => (re, im),
        SpectralActivation::Gelu => (ops::gelu(g, re), ops::gelu(g, im)),
        SpectralActivation::LeakyRelu => (ops::leaky_relu(g, re, 0.01), ops::leaky_relu(g, im, 0.01)),
    }
}

/// FFT token mixing: fft2 -> token-shared block-diagonal two-layer complex
/// channel map -> soft shrinkage -> ifft2 (real part). Shape-preserving.
pub fn spectral_mix(
    g: &Graph,
    x: Var,
    cfg: &SpectralMixerConfig,
    params: &SpectralMixerParams,
    bound: &BoundParams,
) -> Result<Var> {
    cfg.validate()?;
    let shape = g.shape(x);
    if shape.len() != 4 {
        return Err(Error::shape(format!(
            "spectral_mix expects [batch, channel, h, w], got {:?}",
            shape
        )));
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if c != cfg.embed_dim {
        return Err(Error::config(format!(
            "spectral_mix configured for embed_dim {}, input has {c} channels",
            cfg.embed_dim
        )));
    }
    let (nb, bs, hh) = (cfg.num_blocks, cfg.block_size(), cfg.hidden_size());
    let tokens = b * h * w;

    let z = spectral::fft2(g, x)?;
    // Tokens-last layout so the shared weights sit on the right of the
    // matmul: [b, c, h*w] -> [b, h*w, c] -> [b*h*w, c].
    let to_tokens = |v: Var| -> Result<Var> {
        let r = ops::reshape(g, v, &[b, c, h * w])?;
        let p = ops::permute(g, r, &[0, 2, 1])?;
        ops::reshape(g, p, &[tokens, c])
    };
    let zr = to_tokens(z.re)?;
    let zi = to_tokens(z.im)?;

    let mut outs_re = Vec::with_capacity(nb);
    let mut outs_im = Vec::with_capacity(nb);
    for blk in 0..nb {
        let block_w = |id: ParamId, rows: usize, cols: usize| -> Result<Var> {
            let s = ops::slice_axis(g, bound.var(id), 0, blk, 1)?;
            ops::reshape(g, s, &[rows, cols])
        };
        let w1r = block_w(params.w1_re, bs, hh)?;
        let w1i = block_w(params.w1_im, bs, hh)?;
        let w2r = block_w(params.w2_re, hh, bs)?;
        let w2i = block_w(params.w2_im, hh, bs)?;
        let zbr = ops::slice_axis(g, zr, 1, blk * bs, bs)?;
        let zbi = ops::slice_axis(g, zi, 1, blk * bs, bs)?;
        let (h1r, h1i) = cblock_matmul(g, zbr, zbi, w1r, w1i)?;
        let (h1r, h1i) = split_activation(g, h1r, h1i, cfg.activation);
        let (o_r, o_i) = cblock_matmul(g, h1r, h1i, w2r, w2i)?;
        outs_re.push(o_r);
        outs_im.push(o_i);
    }
    let mixed_re = ops::concat(g, &outs_re, 1)?;
    let mixed_im = ops::concat(g, &outs_im, 1)?;
    let shrunk_re = ops::soft_shrink(g, mixed_re, cfg.shrink_lambda)?;
    let shrunk_im = ops::soft_shrink(g, mixed_im, cfg.shrink_lambda)?;

    let from_tokens = |v: Var| -> Result<Var> {
        let r = ops::reshape(g, v, &[b, h * w, c])?;
        let p = ops::permute(g, r, &[0, 2, 1])?;
        ops::reshape(g, p, &[b, c, h, w])
    };
    spectral::ifft2(
        g,
        CVar { re: from_tokens(shrunk_re)?, im: from_tokens(shrunk_im)? },
    )
}

// ---------------------------------------------------------------------------
// Residual mixer blocks (norm -> mixer -> scaled residual, norm -> MLP ->
// scaled residual).
// ---------------------------------------------------------------------------

/// Which token mixer a block hosts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    Pooling,
    Spectral,
}

/// Block hyperparameters shared by both kinds.
#[derive(Clone, Copy, Debug)]
pub struct MixerBlockConfig {
    pub kind: MixerKind,
    pub embed_dim: usize,
    pub norm_groups: usize,
    /// Channel-MLP expansion over embed_dim.
    pub mlp_ratio: f64,
    /// Initial value of the per-channel residual gains.
    pub layer_scale_init: f64,
    pub pool: PoolMixerConfig,
    pub spectral: SpectralMixerConfig,
}

impl MixerBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        if self.norm_groups == 0 || self.embed_dim % self.norm_groups != 0 {
            return Err(Error::config(format!(
                "embed_dim {} not divisible by norm_groups {}",
                self.embed_dim, self.norm_groups
            )));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        match self.kind {
            MixerKind::Pooling => self.pool.validate(),
            MixerKind::Spectral => {
                if self.spectral.embed_dim != self.embed_dim {
                    return Err(Error::config(format!(
                        "block embed_dim {} disagrees with spectral embed_dim {}",
                        self.embed_dim, self.spectral.embed_dim
                    )));
                }
                self.spectral.validate()
            }
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// One residual token-mixing block: x + s1 * mixer(norm1(x)), then
/// y + s2 * mlp(norm2(y)). The per-channel gains s1/s2 are the zeroable
/// output paths that turn the block into an exact identity.
#[derive(Clone, Debug)]
pub struct MixerBlock {
    cfg: MixerBlockConfig,
    spectral: Option<SpectralMixerParams>,
    norm1_gamma: ParamId,
    norm1_beta: ParamId,
    scale1: ParamId,
    norm2_gamma: ParamId,
    norm2_beta: ParamId,
    scale2: ParamId,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
}

impl MixerBlock {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        cfg: &MixerBlockConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let hidden = cfg.mlp_hidden();
        let spectral = match cfg.kind {
            MixerKind::Spectral => Some(SpectralMixerParams::init(
                ps,
                &format!("{prefix}.mixer"),
                &cfg.spectral,
                rng,
            )?),
            MixerKind::Pooling => None,
        };
        Ok(MixerBlock {
            cfg: *cfg,
            spectral,
            norm1_gamma: ps.add(format!("{prefix}.norm1.gamma"), Tensor::ones(&[c]))?,
            norm1_beta: ps.add(format!("{prefix}.norm1.beta"), Tensor::zeros(&[c]))?,
            scale1: ps.add(
                format!("{prefix}.scale1"),
                Tensor::full(&[c], cfg.layer_scale_init),
            )?,
            norm2_gamma: ps.add(format!("{prefix}.norm2.gamma"), Tensor::ones(&[c]))?,
            norm2_beta: ps.add(format!("{prefix}.norm2.beta"), Tensor::zeros(&[c]))?,
            scale2: ps.add(
                format!("{prefix}.scale2"),
                Tensor::full(&[c], cfg.layer_scale_init),
            )?,
            mlp_w1: ps.add_fan_in(format!("{prefix}.mlp.w1"), &[hidden, c, 1, 1], c, rng)?,
            mlp_b1: ps.add(format!("{prefix}.mlp.b1"), Tensor::zeros(&[hidden]))?,
            mlp_w2: ps.add_fan_in(format!("{prefix}.mlp.w2"), &[c, hidden, 1, 1], hidden, rng)?,
            mlp_b2: ps.add(format!("{prefix}.mlp.b2"), Tensor::zeros(&[c]))?,
        })
    }

    pub fn config(&self) -> &MixerBlockConfig {
        &self.cfg
    }

    pub fn forward(&self, g: &Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        mixer_block_forward(g, bound, x, self)
    }
}

/// Residual metaformer block around the configured token mixer.
pub fn mixer_block_forward(
    g: &Graph,
    bound: &BoundParams,
    x: Var,
    block: &MixerBlock,
) -> Result<Var> {
    let cfg = &block.cfg;
    let n1 = norm::group_norm(
        g,
        x,
        cfg.norm_groups,
        bound.var(block.norm1_gamma),
        bound.var(block.norm1_beta),
        1e-5,
    )?;
    let mixed = match cfg.kind {
        MixerKind::Pooling => pool_mix(g, n1, &cfg.pool)?,
        MixerKind::Spectral => {
            let params = block.spectral.as_ref().expect("spectral block has mixer params");
            spectral_mix(g, n1, &cfg.spectral, params, bound)?
        }
    };
    let gated = ops::mul_channel(g, mixed, bound.var(block.scale1))?;
    let y = ops::add(g, x, gated)?;

    let n2 = norm::group_norm(
        g,
        y,
        cfg.norm_groups,
        bound.var(block.norm2_gamma),
        bound.var(block.norm2_beta),
        1e-5,
    )?;
    let h1 = conv::conv2d(g, n2, bound.var(block.mlp_w1), Some(bound.var(block.mlp_b1)), 1, 0, 1)?;
    let a1 = ops::gelu(g, h1);
    let h2 = conv::conv2d(g, a1, bound.var(block.mlp_w2), Some(bound.var(block.mlp_b2)), 1, 0, 1)?;
    let gated2 = ops::mul_channel(g, h2, bound.var(block.scale2))?;
    ops::add(g, y, gated2)
}

// ---------------------------------------------------------------------------
// Scaling benchmark.
// ---------------------------------------------------------------------------

/// One timed configuration of one mixer.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BenchPoint {
    pub mixer: String,
    pub tokens: usize,
    pub channels: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Wall-time scaling report over token counts.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    /// Least-squares log-log slope of mean time vs token count, per mixer.
    pub slopes: BTreeMap<String, f64>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mixer,tokens,channels,mean_ms,std_ms\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                p.mixer, p.tokens, p.channels, p.mean_ms, p.std_ms
            ));
        }
        out
    }
}

/// Grid extents h*w == tokens with h the largest divisor <= sqrt(tokens).
fn grid_for(tokens: usize) -> (usize, usize) {
    let mut h = (tokens as f64).sqrt() as usize;
    while h > 1 && tokens % h != 0 {
        h -= 1;
    }
    (h.max(1), tokens / h.max(1))
}

/// Plain quadratic self-attention over tokens, untrained fixed weights.
/// Reference kernel for the complexity contrast only.
fn attention_reference(x: &[f64], n: usize, c: usize, wq: &[f64], wk: &[f64], wv: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; n * c];
    let mut k = vec![0.0; n * c];
    let mut v = vec![0.0; n * c];
    gemm(n, c, c, 1.0, x, false, wq, false, 0.0, &mut q);
    gemm(n, c, c, 1.0, x, false, wk, false, 0.0, &mut k);
    gemm(n, c, c, 1.0, x, false, wv, false, 0.0, &mut v);
    let mut scores = vec![0.0; n * n];
    gemm(n, c, n, 1.0 / (c as f64).sqrt(), &q, false, &k, true, 0.0, &mut scores);
    for row in scores.chunks_exact_mut(n) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in row.iter_mut() {
            *s = (*s - m).exp();
            sum += *s;
        }
        for s in row.iter_mut() {
            *s /= sum;
        }
    }
    let mut out = vec![0.0; n * c];
    gemm(n, n, c, 1.0, &scores, false, &v, false, 0.0, &mut out);
    out
}

fn time_runs(mut body: impl FnMut(), samples: usize, min_sample_ms: f64) -> (f64, f64) {
    // Calibrate repetitions so one sample is long enough to time reliably.
    let t0 = Instant::now();
    body();
    let once_ms = t0.elapsed().as_secs_f64() * 1e3;
    let reps = ((min_sample_ms / once_ms.max(1e-4)).ceil() as usize).clamp(1, 2000);
    let mut times = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t = Instant::now();
        for _ in 0..reps {
            body();
        }
        times.push(t.elapsed().as_secs_f64() * 1e3 / reps as f64);
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / times.len() as f64;
    (mean, var.sqrt())
}

fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(tokens, ms) in points {
        let x = (tokens as f64).ln();
        let y = ms.max(1e-9).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Time the pooling mixer, spectral mixer, and a quadratic self-attention
/// reference across token counts; fit log-log slopes.
pub fn bench_mixers(token_counts: &[usize], channels: usize) -> Result<BenchReport> {
    if token_counts.len() < 3 {
        return Err(Error::config("bench needs at least 3 token counts"));
    }
    let lo = *token_counts.iter().min().expect("non-empty");
    let hi = *token_counts.iter().max().expect("non-empty");
    if lo == 0 || hi / lo < 8 {
        return Err(Error::config(format!(
            "token counts must span at least an 8x range, got {lo}..{hi}"
        )));
    }
    if channels == 0 {
        return Err(Error::config("channels must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5fa);
    let spectral_cfg = SpectralMixerConfig {
        embed_dim: channels,
        num_blocks: if channels % 4 == 0 { 4 } else { 1 },
        ..SpectralMixerConfig::default()
    };
    let mut ps = ParamSet::new();
    let spectral_params = SpectralMixerParams::init(&mut ps, "bench", &spectral_cfg, &mut rng)?;
    let pool_cfg = PoolMixerConfig::default();
    let wq = Tensor::rand_uniform(&mut rng, &[channels, channels], -0.5, 0.5);
    let wk = Tensor::rand_uniform(&mut rng, &[channels, channels], -0.5, 0.5);
    let wv = Tensor::rand_uniform(&mut rng, &[channels, channels], -0.5, 0.5);

    let mut points = Vec::new();
    let mut series: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for &tokens in token_counts {
        let (h, w) = grid_for(tokens);
        let field = Tensor::rand_uniform(&mut rng, &[1, channels, h, w], -1.0, 1.0);
        let tokens_first = Tensor::rand_uniform(&mut rng, &[tokens * channels], -1.0, 1.0);

        let (mean, std) = time_runs(
            || {
                let g = Graph::new();
                let x = g.constant(field.clone());
                pool_mix(&g, x, &pool_cfg).expect("bench pool_mix");
            },
            5,
            20.0,
        );
        points.push(BenchPoint { mixer: "pooling".into(), tokens, channels, mean_ms: mean, std_ms: std });
        series.entry("pooling".into()).or_default().push((tokens, mean));

        let (mean, std) = time_runs(
            || {
                let g = Graph::new();
                let bound = ps.bind(&g);
                let x = g.constant(field.clone());
                spectral_mix(&g, x, &spectral_cfg, &spectral_params, &bound).expect("bench spectral_mix");
            },
            5,
            20.0,
        );
        points.push(BenchPoint { mixer: "spectral".into(), tokens, channels, mean_ms: mean, std_ms: std });
        series.entry("spectral".into()).or_default().push((tokens, mean));

        let (mean, std) = time_runs(
            || {
                attention_reference(
                    tokens_first.data(),
                    tokens,
                    channels,
                    wq.data(),
                    wk.data(),
                    wv.data(),
                );
            },
            5,
            20.0,
        );
        points.push(BenchPoint { mixer: "attention".into(), tokens, channels, mean_ms: mean, std_ms: std });
        series.entry("attention".into()).or_default().push((tokens, mean));
    }
    let slopes = series
        .into_iter()
        .map(|(name, pts)| (name, loglog_slope(&pts)))
        .collect();
    Ok(BenchReport { points, slopes })
}
