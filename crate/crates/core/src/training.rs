//! Two-stage training: static poses first, then temporal fine-tuning.
//!
//! Every random draw comes from a per-step stream keyed by (seed, step), so a
//! run is reproducible from config alone and a resumed run consumes the exact
//! streams the uninterrupted run would have. The hybrid objective is built on
//! the tape so one backward pass covers both the v regression and the
//! variance-weight term.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{checkpoint_bytes, Checkpoint};
use crate::dataset::{compute_stats, motion_to_array, standardize, ChannelStats};
use crate::diffusion::{normal_array, q_sample, v_from, x0_from};
use crate::error::{Error, Result};
use crate::motion::{fit_length, MotionSequence};
use crate::network::{
    build_forward, extend_temporal, init_model, param_names, register_params, DenoiserModel,
    NetworkConfig,
};
use crate::rng::indexed_stream;
use crate::rotation::PoseVector;
use crate::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::tape::{Graph, Var};
use crate::text::{TextEmbedding, TextEncoder};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Default global gradient-norm ceiling.
pub const DEFAULT_GRAD_CLIP: f64 = 1.0;
/// Fraction of batch items whose conditioning is replaced by the null token.
pub const DEFAULT_CFG_DROPOUT: f64 = 0.10;
/// Weight of the variational term in the hybrid loss.
pub const DEFAULT_LAMBDA_VLB: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pose,
    Motion,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Pose => write!(f, "pose"),
            Stage::Motion => write!(f, "motion"),
        }
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose" => Ok(Stage::Pose),
            "motion" => Ok(Stage::Motion),
            other => Err(Error::BadArgument(format!(
                "unknown stage {other:?} (expected pose|motion)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// Steps of linear lr ramp from lr/warmup to lr; 0 disables.
    pub warmup_steps: usize,
    pub cfg_dropout: f64,
    pub lambda_vlb: f64,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps; 0 = final only.
    pub checkpoint_interval: usize,
    /// Motion-stage clips are padded/cropped to this many frames.
    pub clip_length: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub schedule: ScheduleKind,
    pub timesteps: usize,
}

impl TrainConfig {
    pub fn defaults(stage: Stage, seed: u64) -> Self {
        Self {
            stage,
            batch_size: 16,
            steps: 400,
            lr: 2e-3,
            warmup_steps: 50,
            cfg_dropout: DEFAULT_CFG_DROPOUT,
            lambda_vlb: DEFAULT_LAMBDA_VLB,
            seed,
            checkpoint_interval: 0,
            clip_length: 24,
            grad_clip: DEFAULT_GRAD_CLIP,
            schedule: ScheduleKind::Cosine,
            timesteps: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::BadArgument("steps must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::BadArgument("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::BadArgument(format!(
                "learning rate {} must be finite and positive",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.cfg_dropout) {
            return Err(Error::BadArgument(format!(
                "cfg_dropout {} must lie in [0, 1]",
                self.cfg_dropout
            )));
        }
        if !self.lambda_vlb.is_finite() || self.lambda_vlb < 0.0 {
            return Err(Error::BadArgument(format!(
                "lambda_vlb {} must be finite and >= 0",
                self.lambda_vlb
            )));
        }
        if !self.grad_clip.is_finite() || self.grad_clip < 0.0 {
            return Err(Error::BadArgument(format!(
                "grad_clip {} must be finite and >= 0",
                self.grad_clip
            )));
        }
        if self.timesteps < 2 {
            return Err(Error::BadArgument("timesteps must be >= 2".into()));
        }
        if self.stage == Stage::Motion && self.clip_length < 2 {
            return Err(Error::BadArgument("clip_length must be >= 2".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state, keyed like the model parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
    pub step: usize,
}

impl AdamState {
    pub fn new(model: &DenoiserModel) -> Self {
        Self::for_params(&model.params)
    }

    /// Zero moments shaped like an arbitrary parameter map.
    pub fn for_params(params: &BTreeMap<String, Array2<f64>>) -> Self {
        let zeros = |p: &BTreeMap<String, Array2<f64>>| {
            p.iter()
                .map(|(k, a)| (k.clone(), Array2::zeros(a.dim())))
                .collect()
        };
        Self {
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }
}

/// Learning rate at a 0-based step: linear warmup, then constant.
pub fn lr_at(config: &TrainConfig, step: usize) -> f64 {
    if config.warmup_steps == 0 {
        return config.lr;
    }
    let ramp = (step + 1) as f64 / config.warmup_steps as f64;
    config.lr * ramp.min(1.0)
}

/// One bias-corrected Adam update. Gradients are first scaled so their global
/// norm is at most `grad_clip` (0 disables). Parameters missing from `grads`
/// are treated as zero-gradient: moments decay and the update still applies.
pub fn optimizer_step(
    params: &mut BTreeMap<String, Array2<f64>>,
    state: &mut AdamState,
    grads: &BTreeMap<String, Array2<f64>>,
    lr: f64,
    grad_clip: f64,
) -> Result<()> {
    for (name, g) in grads {
        if !params.contains_key(name) {
            return Err(Error::ModelError(format!(
                "gradient for unknown parameter {name:?}"
            )));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!(
                "gradient for {name:?} is not finite"
            )));
        }
    }
    let norm = grads
        .values()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let scale = if grad_clip > 0.0 && norm > grad_clip {
        grad_clip / norm
    } else {
        1.0
    };
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (name, p) in params.iter_mut() {
        let m = state.m.get_mut(name).ok_or_else(|| {
            Error::ModelError(format!("optimizer has no first moment for {name:?}"))
        })?;
        let v = state.v.get_mut(name).ok_or_else(|| {
            Error::ModelError(format!("optimizer has no second moment for {name:?}"))
        })?;
        match grads.get(name) {
            Some(g) => {
                ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g * scale;
                });
                ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                    let gs = g * scale;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gs * gs;
                });
            }
            None => {
                m.mapv_inplace(|m| ADAM_BETA1 * m);
                v.mapv_inplace(|v| ADAM_BETA2 * v);
            }
        }
        ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
            let mhat = m / bc1;
            let vhat = v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        });
    }
    Ok(())
}

/// Null-conditioning usage instrumentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainCounters {
    /// Items trained with their caption embedding.
    pub conditional_items: usize,
    /// Items trained with the null token (CFG dropout or caption-free item).
    pub null_items: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub step: usize,
    pub loss_simple: f64,
    pub loss_vlb: f64,
    pub lr: f64,
}

pub struct TrainResult {
    /// Full-precision trained model (the checkpoint stores f32).
    pub model: DenoiserModel,
    pub optimizer: AdamState,
    pub stats: ChannelStats,
    pub trace: Vec<TraceRow>,
    pub counters: TrainCounters,
    pub checkpoint: Checkpoint,
}

/// Serializes model + optimizer into the framework checkpoint container.
/// Tensors are namespaced `model.` / `opt.m.` / `opt.v.`.
pub fn model_checkpoint(
    model: &DenoiserModel,
    opt: &AdamState,
    step: usize,
    stage: Stage,
    schedule_kind: ScheduleKind,
    timesteps: usize,
    stats: &ChannelStats,
) -> Result<Checkpoint> {
    let config = serde_json::to_value(&model.config)
        .map_err(|e| Error::ParseError(format!("config serialization: {e}")))?;
    let stats_v = serde_json::to_value(stats)
        .map_err(|e| Error::ParseError(format!("stats serialization: {e}")))?;
    let meta = serde_json::json!({
        "kind": "denoiser",
        "stage": stage.to_string(),
        "step": step as u64,
        "opt_step": opt.step as u64,
        "config": config,
        "schedule": { "kind": schedule_kind.to_string(), "steps": timesteps as u64 },
        "stats": stats_v,
    });
    let mut ckpt = Checkpoint::new(meta);
    for (name, p) in &model.params {
        ckpt.tensors.insert(format!("model.{name}"), p.clone());
    }
    for (name, m) in &opt.m {
        ckpt.tensors.insert(format!("opt.m.{name}"), m.clone());
    }
    for (name, v) in &opt.v {
        ckpt.tensors.insert(format!("opt.v.{name}"), v.clone());
    }
    Ok(ckpt)
}

pub struct LoadedModel {
    pub model: DenoiserModel,
    pub optimizer: AdamState,
    pub step: usize,
    pub stage: Stage,
    pub schedule_kind: ScheduleKind,
    pub timesteps: usize,
    pub stats: ChannelStats,
}

/// Rebuilds a model (and optimizer moments, zero if absent) from a
/// checkpoint, validating the tensor directory against the config's layout.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<LoadedModel> {
    let kind = ckpt.meta_str("kind")?;
    if kind != "denoiser" {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint kind {kind:?}, expected \"denoiser\""
        )));
    }
    let stage: Stage = ckpt.meta_str("stage")?.parse()?;
    let step = ckpt.meta_u64("step")? as usize;
    let opt_step = ckpt.meta_u64("opt_step").unwrap_or(step as u64) as usize;
    let config: NetworkConfig = serde_json::from_value(ckpt.meta["config"].clone())
        .map_err(|e| Error::ParseError(format!("checkpoint config: {e}")))?;
    config.validate()?;
    let sched = &ckpt.meta["schedule"];
    let schedule_kind: ScheduleKind = sched["kind"]
        .as_str()
        .ok_or_else(|| Error::ParseError("checkpoint missing schedule.kind".into()))?
        .parse()?;
    let timesteps = sched["steps"]
        .as_u64()
        .ok_or_else(|| Error::ParseError("checkpoint missing schedule.steps".into()))?
        as usize;
    let stats: ChannelStats = serde_json::from_value(ckpt.meta["stats"].clone())
        .map_err(|e| Error::ParseError(format!("checkpoint stats: {e}")))?;

    let expected = param_names(&config);
    let mut params = BTreeMap::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for name in &expected {
        let p = ckpt
            .tensors
            .get(&format!("model.{name}"))
            .ok_or_else(|| Error::ConfigMismatch(format!("checkpoint missing tensor {name:?}")))?;
        params.insert(name.clone(), p.clone());
        let zero = || Array2::zeros(p.dim());
        m.insert(
            name.clone(),
            ckpt.tensors
                .get(&format!("opt.m.{name}"))
                .cloned()
                .unwrap_or_else(zero),
        );
        v.insert(
            name.clone(),
            ckpt.tensors
                .get(&format!("opt.v.{name}"))
                .cloned()
                .unwrap_or_else(zero),
        );
    }
    for tensor_name in ckpt.tensors.keys() {
        if let Some(name) = tensor_name.strip_prefix("model.") {
            if !params.contains_key(name) {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint tensor {name:?} is not in the config's layout"
                )));
            }
        }
    }
    let schedule = make_schedule(schedule_kind, timesteps)?;
    Ok(LoadedModel {
        model: DenoiserModel {
            config,
            schedule,
            params,
        },
        optimizer: AdamState {
            m,
            v,
            step: opt_step,
        },
        step,
        stage,
        schedule_kind,
        timesteps,
        stats,
    })
}

/// One batch item's random draws. Draw order within a step is fixed:
/// (index, t, noise elements, dropout uniform) per item.
#[derive(Debug, Clone)]
pub(crate) struct BatchDraw {
    pub index: usize,
    pub t: usize,
    pub noise: Array2<f64>,
    pub use_null: bool,
}

pub(crate) fn assemble_batch(
    seed: u64,
    step: usize,
    n_items: usize,
    item_shape: (usize, usize),
    batch_size: usize,
    timesteps: usize,
    cfg_dropout: f64,
) -> Vec<BatchDraw> {
    let mut rng = indexed_stream(seed, "train-step", step as u64);
    (0..batch_size)
        .map(|_| {
            let index = rng.random_range(0..n_items);
            let t = rng.random_range(1..=timesteps);
            let noise = normal_array(item_shape, &mut rng);
            let use_null = rng.random::<f64>() < cfg_dropout;
            BatchDraw {
                index,
                t,
                noise,
                use_null,
            }
        })
        .collect()
}

/// Builds one item's hybrid-loss terms on the tape and returns
/// (loss_simple node, loss_vlb node).
///
/// The variational term matches the closed-form evaluation in `diffusion`:
/// the p mean uses the x0 estimate with the prediction path detached, so only
/// the variance weights receive gradient from it. The detachment is realized
/// by folding the x0 estimate into constants. The near-zero KL clamp of the
/// closed form is omitted; it only binds within rounding error of zero.
fn item_loss(
    g: &mut Graph,
    net: &NetworkConfig,
    pvars: &BTreeMap<String, Var>,
    schedule: &NoiseSchedule,
    x0: &Array2<f64>,
    t: usize,
    noise: &Array2<f64>,
    text: &TextEmbedding,
) -> Result<(Var, Var)> {
    let x_t = q_sample(schedule, x0, t, noise)?;
    let target_v = v_from(x0, noise, t, schedule)?;
    let x_t_node = g.constant(x_t.clone());
    let out = build_forward(g, net, schedule, pvars, x_t_node, t, text)?;

    let diff = {
        let tv = g.constant(target_v);
        g.sub(out.v, tv)?
    };
    let sq = g.mul(diff, diff)?;
    let simple = g.mean(sq);

    // x0_hat from the current forward values; constant wrt the tape (detach).
    let x0_hat = x0_from(&x_t, g.value(out.v), t, schedule)?;
    let (c0, _c1) = schedule.posterior_mean_coefs(t);
    let d = if t == 1 {
        x0 - &(&x0_hat * c0)
    } else {
        (x0 - &x0_hat) * c0
    };
    let d2 = &d * &d;
    let count = x0.len() as f64;

    let log_beta = schedule.beta(t).ln();
    let log_beta_tilde = schedule.log_posterior_variance_clipped(t);
    let w = g.sigmoid(out.var_weights_raw);
    let w_scaled = g.scale(w, log_beta - log_beta_tilde);
    let log_var_p = g.add_scalar(w_scaled, log_beta_tilde);
    let neg = g.scale(log_var_p, -1.0);
    let inv_var_p = g.exp(neg);

    let sum_log_var = g.sum(log_var_p);
    let vlb = if t == 1 {
        // Continuous Gaussian NLL of x0 under p, summed over elements.
        let q = {
            let d2c = g.constant(d2);
            let prod = g.mul(d2c, inv_var_p)?;
            g.sum(prod)
        };
        let tot = g.add(sum_log_var, q)?;
        let tot = g.add_scalar(tot, count * (2.0 * std::f64::consts::PI).ln());
        g.scale(tot, 0.5)
    } else {
        // KL between the diagonal posteriors, summed over elements.
        let var_q = schedule.posterior_variance(t);
        let numer = d2 + var_q;
        let q = {
            let nc = g.constant(numer);
            let prod = g.mul(nc, inv_var_p)?;
            g.sum(prod)
        };
        let tot = g.add(sum_log_var, q)?;
        let tot = g.add_scalar(tot, -count * (var_q.ln() + 1.0));
        g.scale(tot, 0.5)
    };
    Ok((simple, vlb))
}

struct TrainItem {
    /// None trains the null-conditioning pathway.
    text: Option<TextEmbedding>,
    /// Standardized [135, N] state.
    x0: Array2<f64>,
}

fn write_loss_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut buf = String::from("step,loss_simple,loss_vlb,lr\n");
    for row in trace {
        buf.push_str(&format!(
            "{},{},{},{}\n",
            row.step, row.loss_simple, row.loss_vlb, row.lr
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(buf.as_bytes())?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_loop(
    mut model: DenoiserModel,
    mut opt: AdamState,
    start_step: usize,
    config: &TrainConfig,
    schedule: &NoiseSchedule,
    items: &[TrainItem],
    null_embedding: &TextEmbedding,
    stats: &ChannelStats,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    let item_shape = items[0].x0.dim();
    let mut trace = Vec::with_capacity(config.steps.saturating_sub(start_step));
    let mut counters = TrainCounters::default();

    for step in start_step..config.steps {
        let draws = assemble_batch(
            config.seed,
            step,
            items.len(),
            item_shape,
            config.batch_size,
            config.timesteps,
            config.cfg_dropout,
        );
        let mut g = Graph::new();
        let pvars = register_params(&mut g, &model, true);
        let mut simple_nodes = Vec::with_capacity(draws.len());
        let mut vlb_nodes = Vec::with_capacity(draws.len());
        for draw in &draws {
            let item = &items[draw.index];
            let text = match (&item.text, draw.use_null) {
                (Some(t), false) => {
                    counters.conditional_items += 1;
                    t
                }
                _ => {
                    counters.null_items += 1;
                    null_embedding
                }
            };
            let (s, v) = item_loss(
                &mut g, &model.config, &pvars, schedule, &item.x0, draw.t, &draw.noise, text,
            )?;
            simple_nodes.push(s);
            vlb_nodes.push(v);
        }
        let mean_of = |g: &mut Graph, nodes: &[Var]| -> Result<Var> {
            let mut acc = nodes[0];
            for &n in &nodes[1..] {
                acc = g.add(acc, n)?;
            }
            Ok(g.scale(acc, 1.0 / nodes.len() as f64))
        };
        let simple_mean = mean_of(&mut g, &simple_nodes)?;
        let vlb_mean = mean_of(&mut g, &vlb_nodes)?;
        let loss = {
            let weighted = g.scale(vlb_mean, config.lambda_vlb);
            g.add(simple_mean, weighted)?
        };
        let simple_value = g.value(simple_mean)[[0, 0]];
        let vlb_value = g.value(vlb_mean)[[0, 0]];
        if !simple_value.is_finite() || !vlb_value.is_finite() {
            return Err(Error::NonFiniteGradient(format!(
                "non-finite loss at step {step}: simple={simple_value} vlb={vlb_value}"
            )));
        }
        let mut grads = g.backward(loss).map_err(|e| match e {
            Error::NonFiniteGradient(msg) => {
                Error::NonFiniteGradient(format!("step {step}: {msg}"))
            }
            other => other,
        })?;
        for (name, value) in &model.params {
            grads
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(value.dim()));
        }
        let lr = lr_at(config, step);
        optimizer_step(&mut model.params, &mut opt, &grads, lr, config.grad_clip)?;
        trace.push(TraceRow {
            step,
            loss_simple: simple_value,
            loss_vlb: vlb_value,
            lr,
        });

        let done = step + 1;
        if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 && done < config.steps
        {
            if let Some(dir) = out_dir {
                let ckpt = model_checkpoint(
                    &model,
                    &opt,
                    done,
                    config.stage,
                    config.schedule,
                    config.timesteps,
                    stats,
                )?;
                crate::checkpoint::save_checkpoint(
                    &ckpt,
                    &dir.join(format!("checkpoint_step{done:06}.ckpt")),
                )?;
            }
        }
    }

    let checkpoint = model_checkpoint(
        &model,
        &opt,
        config.steps,
        config.stage,
        config.schedule,
        config.timesteps,
        stats,
    )?;
    if let Some(dir) = out_dir {
        crate::checkpoint::save_checkpoint(&checkpoint, &dir.join("checkpoint_final.ckpt"))?;
        write_loss_csv(&trace, &dir.join("loss.csv"))?;
    }
    Ok(TrainResult {
        model,
        optimizer: opt,
        stats: stats.clone(),
        trace,
        counters,
        checkpoint,
    })
}

fn resume_state(
    resume: &Checkpoint,
    net: &NetworkConfig,
    stage: Stage,
    config: &TrainConfig,
) -> Result<LoadedModel> {
    let loaded = model_from_checkpoint(resume)?;
    if loaded.stage != stage {
        return Err(Error::ConfigMismatch(format!(
            "resume checkpoint is stage {}, expected {stage}",
            loaded.stage
        )));
    }
    if loaded.model.config != *net {
        return Err(Error::ConfigMismatch(
            "resume checkpoint's network config differs from the requested one".into(),
        ));
    }
    if loaded.schedule_kind != config.schedule || loaded.timesteps != config.timesteps {
        return Err(Error::ConfigMismatch(format!(
            "resume checkpoint schedule {}/{} differs from config {}/{}",
            loaded.schedule_kind, loaded.timesteps, config.schedule, config.timesteps
        )));
    }
    Ok(loaded)
}

/// Stage 1: static-pose diffusion on (caption, zero-translation pose) pairs.
///
/// Returns the trained model plus its final checkpoint; `out_dir` (if given)
/// receives interval checkpoints, `checkpoint_final.ckpt`, and `loss.csv`.
/// `resume` continues a matching run from its recorded step counter.
pub fn train_pose(
    net: &NetworkConfig,
    config: &TrainConfig,
    pairs: &[(Option<String>, PoseVector)],
    provider: &dyn TextEncoder,
    out_dir: Option<&Path>,
    resume: Option<&Checkpoint>,
) -> Result<TrainResult> {
    config.validate()?;
    if config.stage != Stage::Pose {
        return Err(Error::BadArgument("config stage must be pose".into()));
    }
    if net.temporal_enabled {
        return Err(Error::ConfigMismatch(
            "pose stage needs temporal_enabled = false".into(),
        ));
    }
    if net.d_text != provider.dim() {
        return Err(Error::ConfigMismatch(format!(
            "text provider dim {} != network d_text {}",
            provider.dim(),
            net.d_text
        )));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for (i, (_, pose)) in pairs.iter().enumerate() {
        let tr = pose.translation();
        if tr.norm() != 0.0 {
            return Err(Error::BadArgument(format!(
                "static pair {i} has nonzero translation; zero it before training"
            )));
        }
    }

    // Stats over the pairs themselves, viewed as 1-frame motions.
    let singles: Vec<MotionSequence> = pairs
        .iter()
        .map(|(c, p)| MotionSequence::new(vec![p.clone()], 1.0, c.clone()))
        .collect::<Result<_>>()?;
    let stats = compute_stats(&singles)?;

    let schedule = make_schedule(config.schedule, config.timesteps)?;
    let null_embedding = provider.embed(None);
    let mut embed_cache: BTreeMap<&str, TextEmbedding> = BTreeMap::new();
    let items: Vec<TrainItem> = pairs
        .iter()
        .zip(&singles)
        .map(|((caption, _), single)| {
            let text = caption.as_deref().map(|c| {
                embed_cache
                    .entry(c)
                    .or_insert_with(|| provider.embed(Some(c)))
                    .clone()
            });
            Ok(TrainItem {
                text,
                x0: standardize(&motion_to_array(single), &stats)?,
            })
        })
        .collect::<Result<_>>()?;

    let (model, opt, start) = match resume {
        Some(ckpt) => {
            let loaded = resume_state(ckpt, net, Stage::Pose, config)?;
            (loaded.model, loaded.optimizer, loaded.step)
        }
        None => {
            let model = init_model(net, &schedule, config.seed)?;
            let opt = AdamState::new(&model);
            (model, opt, 0)
        }
    };
    train_loop(
        model,
        opt,
        start,
        config,
        &schedule,
        &items,
        &null_embedding,
        &stats,
        out_dir,
    )
}

/// Stage 2: temporal fine-tuning on motion clips, starting from a pose-stage
/// checkpoint extended with zero-initialized temporal layers. Channel stats
/// are recomputed from the clips because translation channels are live here.
/// `pose_checkpoint` may be omitted only when `resume` is given.
pub fn train_motion(
    net: &NetworkConfig,
    config: &TrainConfig,
    corpus: &[MotionSequence],
    pose_checkpoint: Option<&Checkpoint>,
    provider: &dyn TextEncoder,
    out_dir: Option<&Path>,
    resume: Option<&Checkpoint>,
) -> Result<TrainResult> {
    config.validate()?;
    if config.stage != Stage::Motion {
        return Err(Error::BadArgument("config stage must be motion".into()));
    }
    if !net.temporal_enabled {
        return Err(Error::ConfigMismatch(
            "motion stage needs temporal_enabled = true".into(),
        ));
    }
    if net.d_text != provider.dim() {
        return Err(Error::ConfigMismatch(format!(
            "text provider dim {} != network d_text {}",
            provider.dim(),
            net.d_text
        )));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let clips: Vec<MotionSequence> = corpus
        .iter()
        .map(|m| fit_length(m, config.clip_length))
        .collect::<Result<_>>()?;
    let stats = compute_stats(&clips)?;

    let schedule = make_schedule(config.schedule, config.timesteps)?;
    let null_embedding = provider.embed(None);
    let mut embed_cache: BTreeMap<&str, TextEmbedding> = BTreeMap::new();
    let items: Vec<TrainItem> = clips
        .iter()
        .map(|clip| {
            let text = clip.caption.as_deref().map(|c| {
                embed_cache
                    .entry(c)
                    .or_insert_with(|| provider.embed(Some(c)))
                    .clone()
            });
            Ok(TrainItem {
                text,
                x0: standardize(&motion_to_array(clip), &stats)?,
            })
        })
        .collect::<Result<_>>()?;

    let (model, opt, start) = match resume {
        Some(ckpt) => {
            let loaded = resume_state(ckpt, net, Stage::Motion, config)?;
            (loaded.model, loaded.optimizer, loaded.step)
        }
        None => {
            let ckpt = pose_checkpoint.ok_or_else(|| {
                Error::BadArgument("motion training needs a pose checkpoint or a resume".into())
            })?;
            let pose = model_from_checkpoint(ckpt)?;
            if pose.stage != Stage::Pose {
                return Err(Error::ConfigMismatch(format!(
                    "expected a pose-stage checkpoint, got stage {}",
                    pose.stage
                )));
            }
            if pose.schedule_kind != config.schedule || pose.timesteps != config.timesteps {
                return Err(Error::ConfigMismatch(format!(
                    "pose checkpoint schedule {}/{} differs from config {}/{}",
                    pose.schedule_kind, pose.timesteps, config.schedule, config.timesteps
                )));
            }
            let model = extend_temporal(&pose.model, net, config.seed)?;
            let opt = AdamState::new(&model);
            (model, opt, 0)
        }
    };
    train_loop(
        model,
        opt,
        start,
        config,
        &schedule,
        &items,
        &null_embedding,
        &stats,
        out_dir,
    )
}

/// Serialized checkpoint bytes; convenience for byte-determinism checks.
pub fn checkpoint_bytes_of(result: &TrainResult) -> Result<Vec<u8>> {
    checkpoint_bytes(&result.checkpoint)
}
