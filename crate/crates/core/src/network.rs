//! Factorized spatio-temporal denoiser.
//!
//! Frames are columns: activations are [channels, N] matrices, so a per-frame
//! 1x1 convolution is a plain matrix product. The static model (stage one)
//! uses per-frame residual blocks and cross-attention to text tokens; the
//! temporal extension inserts kernel-3 zero-padded temporal convolutions
//! after each 1x1 convolution and rotary-embedded temporal self-attention
//! after each cross-attention. All inserted output paths start at zero, so an
//! extended model reproduces the static model per frame until trained.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::rotation::POSE_DIM;
use crate::schedule::NoiseSchedule;
use crate::tape::{Graph, Var};
use crate::text::TextEmbedding;

pub const ROPE_BASE: f64 = 10000.0;

/// Denoiser output channel count: a v prediction and a variance weight per
/// pose channel.
pub const HEAD_CHANNELS: usize = 2 * POSE_DIM;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Channel width per U-level, shallow to deep.
    pub channel_widths: Vec<usize>,
    pub blocks_per_level: usize,
    pub heads: usize,
    pub d_text: usize,
    /// Width of the sinusoidal time features and of the conditioning vector.
    pub time_dim: usize,
    pub temporal_enabled: bool,
    pub temporal_kernel: usize,
}

impl NetworkConfig {
    /// Desk-scale default used by the CLI and tests.
    pub fn small(temporal_enabled: bool) -> Self {
        Self {
            channel_widths: vec![32, 64],
            blocks_per_level: 1,
            heads: 4,
            d_text: 32,
            time_dim: 32,
            temporal_enabled,
            temporal_kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_widths.is_empty() {
            return Err(Error::BadArgument("channel_widths must not be empty".into()));
        }
        if self.heads == 0 {
            return Err(Error::BadArgument("head count must be positive".into()));
        }
        for &w in &self.channel_widths {
            if w == 0 || w % self.heads != 0 {
                return Err(Error::BadArgument(format!(
                    "width {w} is not divisible by {} heads",
                    self.heads
                )));
            }
            if (w / self.heads) % 2 != 0 {
                return Err(Error::BadArgument(format!(
                    "head dim {} must be even for rotary embedding",
                    w / self.heads
                )));
            }
        }
        if self.blocks_per_level == 0 {
            return Err(Error::BadArgument("blocks_per_level must be positive".into()));
        }
        if self.d_text == 0 {
            return Err(Error::BadArgument("d_text must be positive".into()));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::BadArgument("time_dim must be even and >= 2".into()));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::BadArgument("temporal_kernel must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserModel {
    pub config: NetworkConfig,
    /// The schedule the model was trained against. The head predicts x0 and
    /// the signal/noise rates at t convert it to the v output, so the rates
    /// are part of the model, not just the training loop.
    pub schedule: NoiseSchedule,
    /// Sorted name -> array map; iteration order is the canonical layout.
    pub params: BTreeMap<String, Array2<f64>>,
}

enum Init {
    Zero,
    /// Gaussian scaled by 1/sqrt(fan_in).
    FanIn(usize),
}

struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn spec(name: String, rows: usize, cols: usize, init: Init) -> ParamSpec {
    ParamSpec {
        name,
        rows,
        cols,
        init,
    }
}

fn res_block_specs(out: &mut Vec<ParamSpec>, prefix: &str, w: usize, cfg: &NetworkConfig) {
    out.push(spec(format!("{prefix}.conv1.w"), w, w, Init::FanIn(w)));
    out.push(spec(format!("{prefix}.conv1.b"), w, 1, Init::Zero));
    if cfg.temporal_enabled {
        out.push(spec(
            format!("{prefix}.tconv1.w"),
            w,
            cfg.temporal_kernel * w,
            Init::Zero,
        ));
        out.push(spec(format!("{prefix}.tconv1.b"), w, 1, Init::Zero));
    }
    // Scale-shift conditioning: rows [0, w) are the gain, rows [w, 2w) the
    // shift. A pure bias cannot express the timestep-dependent input gain
    // that v prediction needs at low noise levels.
    out.push(spec(format!("{prefix}.mod.w"), 2 * w, cfg.time_dim, Init::FanIn(cfg.time_dim)));
    out.push(spec(format!("{prefix}.mod.b"), 2 * w, 1, Init::Zero));
    // Residual output projection starts at zero: the block is an identity at
    // init, which keeps deep stacks stable.
    out.push(spec(format!("{prefix}.conv2.w"), w, w, Init::Zero));
    out.push(spec(format!("{prefix}.conv2.b"), w, 1, Init::Zero));
    if cfg.temporal_enabled {
        out.push(spec(
            format!("{prefix}.tconv2.w"),
            w,
            cfg.temporal_kernel * w,
            Init::Zero,
        ));
        out.push(spec(format!("{prefix}.tconv2.b"), w, 1, Init::Zero));
    }
}

fn attn_block_specs(out: &mut Vec<ParamSpec>, prefix: &str, w: usize, cfg: &NetworkConfig) {
    out.push(spec(format!("{prefix}.attn.q.w"), w, w, Init::FanIn(w)));
    out.push(spec(format!("{prefix}.attn.q.b"), w, 1, Init::Zero));
    out.push(spec(format!("{prefix}.attn.k.w"), w, cfg.d_text, Init::FanIn(cfg.d_text)));
    out.push(spec(format!("{prefix}.attn.k.b"), w, 1, Init::Zero));
    out.push(spec(format!("{prefix}.attn.v.w"), w, cfg.d_text, Init::FanIn(cfg.d_text)));
    out.push(spec(format!("{prefix}.attn.v.b"), w, 1, Init::Zero));
    out.push(spec(format!("{prefix}.attn.out.w"), w, w, Init::Zero));
    out.push(spec(format!("{prefix}.attn.out.b"), w, 1, Init::Zero));
    if cfg.temporal_enabled {
        for name in ["q", "k", "v"] {
            out.push(spec(format!("{prefix}.tattn.{name}.w"), w, w, Init::FanIn(w)));
            out.push(spec(format!("{prefix}.tattn.{name}.b"), w, 1, Init::Zero));
        }
        out.push(spec(format!("{prefix}.tattn.out.w"), w, w, Init::Zero));
        out.push(spec(format!("{prefix}.tattn.out.b"), w, 1, Init::Zero));
    }
}

fn param_layout(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let widths = &cfg.channel_widths;
    let levels = widths.len();
    let cond = cfg.time_dim;

    out.push(spec("stem.w".into(), widths[0], POSE_DIM, Init::FanIn(POSE_DIM)));
    out.push(spec("stem.b".into(), widths[0], 1, Init::Zero));
    out.push(spec("time.w1".into(), cond, cfg.time_dim, Init::FanIn(cfg.time_dim)));
    out.push(spec("time.b1".into(), cond, 1, Init::Zero));
    out.push(spec("time.w2".into(), cond, cond, Init::FanIn(cond)));
    out.push(spec("time.b2".into(), cond, 1, Init::Zero));
    out.push(spec("textpool.w".into(), cond, cfg.d_text, Init::FanIn(cfg.d_text)));
    out.push(spec("textpool.b".into(), cond, 1, Init::Zero));
    out.push(spec("null_token".into(), cfg.d_text, 1, Init::FanIn(cfg.d_text)));

    for (l, &w) in widths.iter().enumerate() {
        for b in 0..cfg.blocks_per_level {
            res_block_specs(&mut out, &format!("down{l}.res{b}"), w, cfg);
        }
        attn_block_specs(&mut out, &format!("down{l}"), w, cfg);
        if l + 1 < levels {
            out.push(spec(format!("trans_down{l}.w"), widths[l + 1], w, Init::FanIn(w)));
            out.push(spec(format!("trans_down{l}.b"), widths[l + 1], 1, Init::Zero));
        }
    }

    let deep = widths[levels - 1];
    res_block_specs(&mut out, "mid.res0", deep, cfg);
    attn_block_specs(&mut out, "mid", deep, cfg);

    for l in (0..levels).rev() {
        let w = widths[l];
        out.push(spec(format!("up{l}.merge.w"), w, 2 * w, Init::FanIn(2 * w)));
        out.push(spec(format!("up{l}.merge.b"), w, 1, Init::Zero));
        for b in 0..cfg.blocks_per_level {
            res_block_specs(&mut out, &format!("up{l}.res{b}"), w, cfg);
        }
        attn_block_specs(&mut out, &format!("up{l}"), w, cfg);
        if l > 0 {
            out.push(spec(format!("trans_up{l}.w"), widths[l - 1], w, Init::FanIn(w)));
            out.push(spec(format!("trans_up{l}.b"), widths[l - 1], 1, Init::Zero));
        }
    }

    out.push(spec("head.w".into(), HEAD_CHANNELS, widths[0], Init::FanIn(widths[0])));
    out.push(spec("head.b".into(), HEAD_CHANNELS, 1, Init::Zero));
    out
}

/// Canonical parameter names for a config, in layout order.
pub fn param_names(cfg: &NetworkConfig) -> Vec<String> {
    param_layout(cfg).into_iter().map(|s| s.name).collect()
}

fn init_array(s: &ParamSpec, rng: &mut impl Rng) -> Array2<f64> {
    match s.init {
        Init::Zero => Array2::zeros((s.rows, s.cols)),
        Init::FanIn(fan) => {
            let scale = (1.0 / fan as f64).sqrt();
            Array2::from_shape_fn((s.rows, s.cols), |_| {
                rng.sample::<f64, _>(StandardNormal) * scale
            })
        }
    }
}

/// Fresh model with fan-in-scaled random weights and zero residual output
/// projections. Deterministic in `seed`.
pub fn init_model(
    config: &NetworkConfig,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<DenoiserModel> {
    config.validate()?;
    let mut rng = stream(seed, "model-init");
    let mut params = BTreeMap::new();
    for s in param_layout(config) {
        let arr = init_array(&s, &mut rng);
        params.insert(s.name, arr);
    }
    Ok(DenoiserModel {
        config: config.clone(),
        schedule: schedule.clone(),
        params,
    })
}

/// Copies a trained static model into a temporal config. Pretrained weights
/// are kept; temporal convolutions and temporal attention output projections
/// are zero-initialized, so per-frame outputs are unchanged at init.
pub fn extend_temporal(
    base: &DenoiserModel,
    config: &NetworkConfig,
    seed: u64,
) -> Result<DenoiserModel> {
    if base.config.temporal_enabled {
        return Err(Error::ConfigMismatch(
            "base model already has temporal layers".into(),
        ));
    }
    if !config.temporal_enabled {
        return Err(Error::ConfigMismatch(
            "target config must enable temporal layers".into(),
        ));
    }
    let mut expected = base.config.clone();
    expected.temporal_enabled = true;
    expected.temporal_kernel = config.temporal_kernel;
    if *config != expected {
        return Err(Error::ConfigMismatch(
            "temporal config must match the static config in widths, blocks, heads, d_text and time_dim"
                .into(),
        ));
    }
    config.validate()?;
    let mut rng = stream(seed, "extend-temporal");
    let mut params = BTreeMap::new();
    for s in param_layout(config) {
        let arr = match base.params.get(&s.name) {
            Some(existing) => existing.clone(),
            None => init_array(&s, &mut rng),
        };
        params.insert(s.name, arr);
    }
    Ok(DenoiserModel {
        config: config.clone(),
        schedule: base.schedule.clone(),
        params,
    })
}

impl DenoiserModel {
    pub fn param_count(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    /// Inference forward pass: v prediction and raw variance weights, both
    /// [135, N].
    pub fn forward(
        &self,
        x: &Array2<f64>,
        t: usize,
        text: &TextEmbedding,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut g = Graph::new();
        let vars = register_params(&mut g, self, false);
        let xv = g.constant(x.clone());
        let out = build_forward(&mut g, &self.config, &self.schedule, &vars, xv, t, text)?;
        let v = g.value(out.v).clone();
        let w = g.value(out.var_weights_raw).clone();
        for (label, arr) in [("v prediction", &v), ("variance weights", &w)] {
            if !arr.iter().all(|e| e.is_finite()) {
                return Err(Error::NonFiniteActivation(format!(
                    "{label} at t={t} contains a non-finite value"
                )));
            }
        }
        Ok((v, w))
    }
}

impl Denoiser for DenoiserModel {
    fn denoise(
        &self,
        x: &Array2<f64>,
        t: usize,
        text: &TextEmbedding,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.forward(x, t, text)
    }
}

/// Registers every model parameter in `g`, trainable or frozen.
pub fn register_params(
    g: &mut Graph,
    model: &DenoiserModel,
    trainable: bool,
) -> BTreeMap<String, Var> {
    model
        .params
        .iter()
        .map(|(name, value)| {
            let var = if trainable {
                g.param(name, value.clone())
            } else {
                g.constant(value.clone())
            };
            (name.clone(), var)
        })
        .collect()
}

/// Exact gradients of a scalar loss with respect to every model parameter.
/// Parameters the loss does not touch get zero gradients.
pub fn gradients<F>(model: &DenoiserModel, build_loss: F) -> Result<BTreeMap<String, Array2<f64>>>
where
    F: FnOnce(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = register_params(&mut g, model, true);
    let loss = build_loss(&mut g, &vars)?;
    let mut grads = g.backward(loss)?;
    for (name, value) in &model.params {
        grads
            .entry(name.clone())
            .or_insert_with(|| Array2::zeros(value.dim()));
    }
    Ok(grads)
}

pub struct ForwardOut {
    pub v: Var,
    pub var_weights_raw: Var,
}

fn pv(p: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    p.get(name)
        .copied()
        .ok_or_else(|| Error::ModelError(format!("missing parameter {name}")))
}

fn time_features(t: usize, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut out = Array2::zeros((dim, 1));
    for k in 0..half {
        let freq = ROPE_BASE.powf(-(k as f64) / half as f64);
        let angle = t as f64 * freq;
        out[(2 * k, 0)] = angle.sin();
        out[(2 * k + 1, 0)] = angle.cos();
    }
    out
}

/// Per-frame affine map: w.h + b broadcast over columns.
fn conv1x1(g: &mut Graph, p: &BTreeMap<String, Var>, prefix: &str, h: Var) -> Result<Var> {
    let w = pv(p, &format!("{prefix}.w"))?;
    let b = pv(p, &format!("{prefix}.b"))?;
    let hw = g.matmul(w, h)?;
    g.add_col(hw, b)
}

/// Residual temporal convolution over the frame axis with zero padding.
fn temporal_conv(
    g: &mut Graph,
    p: &BTreeMap<String, Var>,
    prefix: &str,
    h: Var,
    kernel: usize,
) -> Result<Var> {
    let half = (kernel / 2) as isize;
    let taps: Vec<Var> = (-half..=half).map(|off| g.shift_cols(h, off)).collect();
    let cat = g.concat_rows(&taps)?;
    let update = conv1x1(g, p, prefix, cat)?;
    g.add(h, update)
}

fn res_block(
    g: &mut Graph,
    p: &BTreeMap<String, Var>,
    prefix: &str,
    h: Var,
    cond: Var,
    cfg: &NetworkConfig,
) -> Result<Var> {
    let r = h;
    let mut h = g.layer_norm_cols(h);
    h = g.silu(h);
    h = conv1x1(g, p, &format!("{prefix}.conv1"), h)?;
    if cfg.temporal_enabled {
        h = temporal_conv(g, p, &format!("{prefix}.tconv1"), h, cfg.temporal_kernel)?;
    }
    let mw = pv(p, &format!("{prefix}.mod.w"))?;
    let mb = pv(p, &format!("{prefix}.mod.b"))?;
    let mc = g.matmul(mw, cond)?;
    let m = g.add(mc, mb)?;
    let width = g.value(h).nrows();
    let gamma = g.slice_rows(m, 0, width)?;
    let beta = g.slice_rows(m, width, 2 * width)?;
    let gain = g.add_scalar(gamma, 1.0);
    h = g.mul_col(h, gain)?;
    h = g.add_col(h, beta)?;
    h = conv1x1(g, p, &format!("{prefix}.conv2"), h)?;
    if cfg.temporal_enabled {
        h = temporal_conv(g, p, &format!("{prefix}.tconv2"), h, cfg.temporal_kernel)?;
    }
    g.add(r, h)
}

/// Multi-head scaled dot-product attention. Queries come from `q_src`
/// columns; keys and values from `kv_src` columns. When `rope` is set, query
/// and key head slices are rotated by their column position first.
fn multi_head_attention(
    g: &mut Graph,
    p: &BTreeMap<String, Var>,
    prefix: &str,
    q_src: Var,
    kv_src: Var,
    heads: usize,
    rope: bool,
) -> Result<Var> {
    let q = conv1x1(g, p, &format!("{prefix}.q"), q_src)?;
    let k = conv1x1(g, p, &format!("{prefix}.k"), kv_src)?;
    let v = conv1x1(g, p, &format!("{prefix}.v"), kv_src)?;
    let width = g.value(q).nrows();
    let head_dim = width / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let lo = i * head_dim;
        let hi = lo + head_dim;
        let mut qh = g.slice_rows(q, lo, hi)?;
        let mut kh = g.slice_rows(k, lo, hi)?;
        if rope {
            qh = g.rope(qh, ROPE_BASE)?;
            kh = g.rope(kh, ROPE_BASE)?;
        }
        let vh = g.slice_rows(v, lo, hi)?;
        let qt = g.transpose(qh);
        let scores = g.matmul(qt, kh)?;
        let scaled = g.scale(scores, scale);
        let att = g.softmax_rows(scaled);
        let att_t = g.transpose(att);
        outs.push(g.matmul(vh, att_t)?);
    }
    let cat = g.concat_rows(&outs)?;
    conv1x1(g, p, &format!("{prefix}.out"), cat)
}

/// Cross-attention to text tokens, then (if temporal) rotary temporal
/// self-attention across frames. Both are residual.
fn attn_block(
    g: &mut Graph,
    p: &BTreeMap<String, Var>,
    prefix: &str,
    h: Var,
    tokens: Var,
    cfg: &NetworkConfig,
) -> Result<Var> {
    let r = h;
    let hn = g.layer_norm_cols(h);
    let cross = multi_head_attention(g, p, &format!("{prefix}.attn"), hn, tokens, cfg.heads, false)?;
    let mut h = g.add(r, cross)?;
    if cfg.temporal_enabled {
        let r2 = h;
        let hn2 = g.layer_norm_cols(h);
        let temp = multi_head_attention(g, p, &format!("{prefix}.tattn"), hn2, hn2, cfg.heads, true)?;
        h = g.add(r2, temp)?;
    }
    Ok(h)
}

/// Builds the full denoiser graph on `g` and returns the output nodes.
/// `x` must be [135, N] with N >= 1.
pub fn build_forward(
    g: &mut Graph,
    cfg: &NetworkConfig,
    schedule: &NoiseSchedule,
    p: &BTreeMap<String, Var>,
    x: Var,
    t: usize,
    text: &TextEmbedding,
) -> Result<ForwardOut> {
    schedule.validate_t(t)?;
    let (c, n) = g.value(x).dim();
    if c != POSE_DIM || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "denoiser input must be [{POSE_DIM}, N>=1], got [{c}, {n}]"
        )));
    }
    if text.tokens.ncols() != cfg.d_text {
        return Err(Error::ShapeMismatch(format!(
            "text embedding dim {} does not match model d_text {}",
            text.tokens.ncols(),
            cfg.d_text
        )));
    }

    // Conditioning vector: time MLP plus projected pooled text. Null text
    // swaps in the learned null token for both the pooled path and the
    // cross-attention keys/values.
    let null_token = pv(p, "null_token")?;
    let (tokens, pooled) = if text.is_null {
        (null_token, null_token)
    } else {
        let tok = g.constant(text.tokens.t().to_owned());
        let pl = g.constant(
            text.pooled
                .clone()
                .into_shape_with_order((cfg.d_text, 1))
                .map_err(|_| Error::ShapeMismatch("pooled text dim".into()))?,
        );
        (tok, pl)
    };
    let tfeat = g.constant(time_features(t, cfg.time_dim));
    let t1 = {
        let w1 = pv(p, "time.w1")?;
        let b1 = pv(p, "time.b1")?;
        let h = g.matmul(w1, tfeat)?;
        g.add(h, b1)?
    };
    let t1s = g.silu(t1);
    let tvec = {
        let w2 = pv(p, "time.w2")?;
        let b2 = pv(p, "time.b2")?;
        let h = g.matmul(w2, t1s)?;
        g.add(h, b2)?
    };
    let pool = {
        let w = pv(p, "textpool.w")?;
        let b = pv(p, "textpool.b")?;
        let h = g.matmul(w, pooled)?;
        g.add(h, b)?
    };
    let cond = g.add(tvec, pool)?;

    let levels = cfg.channel_widths.len();
    let mut h = conv1x1(g, p, "stem", x)?;
    let mut skips = Vec::with_capacity(levels);
    for l in 0..levels {
        for b in 0..cfg.blocks_per_level {
            h = res_block(g, p, &format!("down{l}.res{b}"), h, cond, cfg)?;
        }
        h = attn_block(g, p, &format!("down{l}"), h, tokens, cfg)?;
        skips.push(h);
        if l + 1 < levels {
            h = conv1x1(g, p, &format!("trans_down{l}"), h)?;
        }
    }

    h = res_block(g, p, "mid.res0", h, cond, cfg)?;
    h = attn_block(g, p, "mid", h, tokens, cfg)?;

    for l in (0..levels).rev() {
        let cat = g.concat_rows(&[h, skips[l]])?;
        h = conv1x1(g, p, &format!("up{l}.merge"), cat)?;
        for b in 0..cfg.blocks_per_level {
            h = res_block(g, p, &format!("up{l}.res{b}"), h, cond, cfg)?;
        }
        h = attn_block(g, p, &format!("up{l}"), h, tokens, cfg)?;
        if l > 0 {
            h = conv1x1(g, p, &format!("trans_up{l}"), h)?;
        }
    }

    let hn = g.layer_norm_cols(h);
    let hs = g.silu(hn);
    let head = conv1x1(g, p, "head", hs)?;
    // The first 135 head channels estimate x0; v is derived from it through
    // the exact identity v = (a_t * x_t - x0) / s_t. Predicting x0 instead of
    // v directly keeps sampling chains contractive: a head that underfits
    // falls back to a smooth bias rather than echoing the noisy input.
    let x0_hat = g.slice_rows(head, 0, POSE_DIM)?;
    let var_weights_raw = g.slice_rows(head, POSE_DIM, HEAD_CHANNELS)?;
    let a_t = schedule.signal_rate(t);
    let s_t = schedule.noise_rate(t);
    let scaled_x = g.scale(x, a_t);
    let diff = g.sub(scaled_x, x0_hat)?;
    let v = g.scale(diff, 1.0 / s_t);
    Ok(ForwardOut {
        v,
        var_weights_raw,
    })
}

/// Rotary position embedding on a [heads, N, d] tensor: feature pair j of
/// the vector at position n is rotated by positions[n] * base^(-2j/d).
pub fn rotary_embed(x: &Array3<f64>, positions: &[f64]) -> Result<Array3<f64>> {
    let (heads, n, d) = x.dim();
    if d % 2 != 0 {
        return Err(Error::BadArgument(format!(
            "rotary embedding needs an even feature dim, got {d}"
        )));
    }
    if positions.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} positions for {} vectors",
            positions.len(),
            n
        )));
    }
    let mut out = Array3::zeros((heads, n, d));
    for h in 0..heads {
        for (i, &pos) in positions.iter().enumerate() {
            for j in 0..d / 2 {
                let theta = ROPE_BASE.powf(-2.0 * j as f64 / d as f64);
                let (sin, cos) = (pos * theta).sin_cos();
                let a = x[(h, i, 2 * j)];
                let b = x[(h, i, 2 * j + 1)];
                out[(h, i, 2 * j)] = a * cos - b * sin;
                out[(h, i, 2 * j + 1)] = a * sin + b * cos;
            }
        }
    }
    Ok(out)
}
