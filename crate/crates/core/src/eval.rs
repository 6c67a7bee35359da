//! Embedding-space evaluation: a contrastively trained text/motion evaluator
//! plus FID, R-Precision, Diversity, and nearest-neighbor retrieval.
//!
//! The motion side is a fixed statistics featurizer (FK joint trajectories
//! resampled to a common frame count) under a trainable affine map; the text
//! side is the frozen hashed embedding under another affine map. Both land in
//! the same D_e space, so every metric is a function of plain vectors.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::dataset::caption_family;
use crate::error::{Error, Result};
use crate::motion::{resample_motion, MotionSequence};
use crate::rng::{indexed_stream, stream};
use crate::skeleton::{default_skeleton, forward_kinematics, NUM_JOINTS};
use crate::tape::Graph;
use crate::text::{HashedTextProvider, TextEncoder};
use crate::training::{optimizer_step, AdamState, DEFAULT_GRAD_CLIP};

/// Motions are resampled to this many frames before featurization.
pub const EVAL_FRAMES: usize = 196;
/// Per joint: 3 position means, 3 position stds, mean speed, speed std.
pub const MOTION_FEATURES: usize = NUM_JOINTS * 8;
pub const INFO_NCE_TEMPERATURE: f64 = 0.07;
/// Added to both covariance diagonals before the Frechet computation.
pub const FID_JITTER: f64 = 1e-6;
/// R-Precision pool: 1 true caption + 31 distractors.
pub const R_PRECISION_POOL: usize = 32;
pub const DIVERSITY_PAIRS: usize = 300;

/// Anything that embeds motions and captions into one metric space.
pub trait Embedder {
    fn embed_motion(&self, motion: &MotionSequence) -> Result<Array1<f64>>;
    fn embed_caption(&self, caption: &str) -> Result<Array1<f64>>;
    fn dim(&self) -> usize;
    /// Stable identifier of the weights, for metric reports.
    fn checksum(&self) -> String;
}

/// FK joint-trajectory statistics of a motion resampled to `EVAL_FRAMES`:
/// per-joint position mean/std per axis, then per-joint speed mean/std.
pub fn motion_features(motion: &MotionSequence) -> Result<Array1<f64>> {
    let resampled;
    let m = if motion.frames.len() == EVAL_FRAMES {
        motion
    } else {
        resampled = resample_motion(motion, EVAL_FRAMES)?;
        &resampled
    };
    let skeleton = default_skeleton();
    let n = m.frames.len();
    let mut pos = vec![[0.0f64; 3]; NUM_JOINTS * n];
    for (i, frame) in m.frames.iter().enumerate() {
        let joints = forward_kinematics(&skeleton, frame)?;
        for (j, p) in joints.positions.iter().enumerate() {
            pos[j * n + i] = [p.x, p.y, p.z];
        }
    }
    let mut out = Array1::zeros(MOTION_FEATURES);
    let stds_off = NUM_JOINTS * 3;
    let speed_off = NUM_JOINTS * 6;
    let spstd_off = NUM_JOINTS * 7;
    for j in 0..NUM_JOINTS {
        let track = &pos[j * n..(j + 1) * n];
        for a in 0..3 {
            let mean = track.iter().map(|p| p[a]).sum::<f64>() / n as f64;
            let var = track.iter().map(|p| (p[a] - mean).powi(2)).sum::<f64>() / n as f64;
            out[j * 3 + a] = mean;
            out[stds_off + j * 3 + a] = var.sqrt();
        }
        let speeds: Vec<f64> = track
            .windows(2)
            .map(|w| {
                let d = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() * m.fps
            })
            .collect();
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        let var = speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / speeds.len() as f64;
        out[speed_off + j] = mean;
        out[spstd_off + j] = var.sqrt();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub d_e: usize,
    pub text_dim: usize,
    pub text_seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub temperature: f64,
}

impl EvalConfig {
    pub fn defaults(seed: u64) -> Self {
        Self {
            d_e: 64,
            text_dim: 32,
            text_seed: 101,
            steps: 300,
            lr: 1e-2,
            seed,
            temperature: INFO_NCE_TEMPERATURE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_e == 0 || self.text_dim == 0 {
            return Err(Error::BadArgument("embedding dims must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::BadArgument("evaluator steps must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::BadArgument(
                "lr and temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trained text/motion embedding pair sharing one D_e output space.
#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    pub d_e: usize,
    pub text: HashedTextProvider,
    /// Feature whitening fitted on the training corpus, [MOTION_FEATURES, 1].
    pub feat_mean: Array2<f64>,
    pub feat_std: Array2<f64>,
    /// motion.w [D_e, F], motion.b [D_e, 1], text.w [D_e, d_text], text.b.
    pub params: BTreeMap<String, Array2<f64>>,
}

fn init_eval_params(d_e: usize, text_dim: usize, seed: u64) -> BTreeMap<String, Array2<f64>> {
    use rand_distr::StandardNormal;
    let mut rng = stream(seed, "evaluator-init");
    let mut fan_in = |rows: usize, cols: usize| {
        let scale = 1.0 / (cols as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| {
            rng.sample::<f64, _>(StandardNormal) * scale
        })
    };
    BTreeMap::from([
        ("motion.w".to_string(), fan_in(d_e, MOTION_FEATURES)),
        ("motion.b".to_string(), Array2::zeros((d_e, 1))),
        ("text.w".to_string(), fan_in(d_e, text_dim)),
        ("text.b".to_string(), Array2::zeros((d_e, 1))),
    ])
}

impl EmbeddingProvider {
    /// Randomly initialized provider with identity whitening; finite and
    /// deterministic, but untrained.
    pub fn untrained(config: &EvalConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            d_e: config.d_e,
            text: HashedTextProvider::new(config.text_seed, config.text_dim),
            feat_mean: Array2::zeros((MOTION_FEATURES, 1)),
            feat_std: Array2::ones((MOTION_FEATURES, 1)),
            params: init_eval_params(config.d_e, config.text_dim, config.seed),
        })
    }

    fn whitened(&self, features: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(
            features
                .iter()
                .enumerate()
                .map(|(i, f)| (f - self.feat_mean[[i, 0]]) / self.feat_std[[i, 0]]),
        )
    }

    fn affine(&self, w: &str, b: &str, x: &Array1<f64>) -> Array1<f64> {
        let w = &self.params[w];
        let b = &self.params[b];
        Array1::from_iter(
            (0..w.nrows()).map(|i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                + b[[i, 0]]),
        )
    }
}

impl Embedder for EmbeddingProvider {
    fn embed_motion(&self, motion: &MotionSequence) -> Result<Array1<f64>> {
        let f = self.whitened(&motion_features(motion)?);
        Ok(self.affine("motion.w", "motion.b", &f))
    }

    fn embed_caption(&self, caption: &str) -> Result<Array1<f64>> {
        let pooled = self.text.embed(Some(caption)).pooled;
        Ok(self.affine("text.w", "text.b", &pooled))
    }

    fn dim(&self) -> usize {
        self.d_e
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"evaluator-v1");
        h.update((self.d_e as u64).to_le_bytes());
        h.update(self.text.seed.to_le_bytes());
        h.update((self.text.dim as u64).to_le_bytes());
        for arr in [&self.feat_mean, &self.feat_std] {
            for v in arr.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for (name, arr) in &self.params {
            h.update(name.as_bytes());
            for v in arr.iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Serializes a provider into the common checkpoint container.
pub fn evaluator_checkpoint(provider: &EmbeddingProvider) -> Checkpoint {
    let meta = serde_json::json!({
        "kind": "evaluator",
        "d_e": provider.d_e as u64,
        "text_seed": provider.text.seed,
        "text_dim": provider.text.dim as u64,
    });
    let mut ckpt = Checkpoint::new(meta);
    ckpt.tensors
        .insert("feat.mean".into(), provider.feat_mean.clone());
    ckpt.tensors
        .insert("feat.std".into(), provider.feat_std.clone());
    for (name, arr) in &provider.params {
        ckpt.tensors.insert(name.clone(), arr.clone());
    }
    ckpt
}

pub fn evaluator_from_checkpoint(ckpt: &Checkpoint) -> Result<EmbeddingProvider> {
    let kind = ckpt.meta_str("kind")?;
    if kind != "evaluator" {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint kind {kind:?}, expected \"evaluator\""
        )));
    }
    let d_e = ckpt.meta_u64("d_e")? as usize;
    let text_seed = ckpt.meta_u64("text_seed")?;
    let text_dim = ckpt.meta_u64("text_dim")? as usize;
    let tensor = |name: &str| -> Result<Array2<f64>> {
        ckpt.tensors
            .get(name)
            .cloned()
            .ok_or_else(|| Error::ConfigMismatch(format!("evaluator missing tensor {name:?}")))
    };
    let params = BTreeMap::from([
        ("motion.w".to_string(), tensor("motion.w")?),
        ("motion.b".to_string(), tensor("motion.b")?),
        ("text.w".to_string(), tensor("text.w")?),
        ("text.b".to_string(), tensor("text.b")?),
    ]);
    let expect = [
        ("motion.w", (d_e, MOTION_FEATURES)),
        ("motion.b", (d_e, 1)),
        ("text.w", (d_e, text_dim)),
        ("text.b", (d_e, 1)),
    ];
    for (name, dim) in expect {
        if params[name].dim() != dim {
            return Err(Error::ConfigMismatch(format!(
                "evaluator tensor {name:?} has shape {:?}, expected {dim:?}",
                params[name].dim()
            )));
        }
    }
    Ok(EmbeddingProvider {
        d_e,
        text: HashedTextProvider::new(text_seed, text_dim),
        feat_mean: tensor("feat.mean")?,
        feat_std: tensor("feat.std")?,
        params,
    })
}

/// Caption class used to group items: the motion-family label when the
/// caption parses, the raw caption otherwise.
fn caption_class(caption: &str) -> String {
    caption_family(caption)
        .map(|f| f.to_string())
        .unwrap_or_else(|| caption.to_string())
}

/// Trains the affine maps with symmetric InfoNCE. Each step's batch holds one
/// uniformly drawn item per caption class, so the matched pair is the only
/// positive in its row and column.
pub fn train_evaluator(corpus: &[MotionSequence], config: &EvalConfig) -> Result<EmbeddingProvider> {
    config.validate()?;
    let text = HashedTextProvider::new(config.text_seed, config.text_dim);

    struct Item {
        features: Array1<f64>,
        pooled: Array1<f64>,
    }
    let mut classes: BTreeMap<String, Vec<Item>> = BTreeMap::new();
    for motion in corpus {
        let Some(caption) = &motion.caption else {
            continue;
        };
        classes.entry(caption_class(caption)).or_default().push(Item {
            features: motion_features(motion)?,
            pooled: text.embed(Some(caption)).pooled,
        });
    }
    if classes.len() < 2 {
        return Err(Error::BadCorpus(format!(
            "contrastive training needs >= 2 caption classes, got {}",
            classes.len()
        )));
    }

    // Whitening over all captioned items.
    let all: Vec<&Item> = classes.values().flatten().collect();
    let nf = all.len() as f64;
    let mut feat_mean = Array2::zeros((MOTION_FEATURES, 1));
    let mut feat_std = Array2::zeros((MOTION_FEATURES, 1));
    for i in 0..MOTION_FEATURES {
        let mean = all.iter().map(|it| it.features[i]).sum::<f64>() / nf;
        let var = all
            .iter()
            .map(|it| (it.features[i] - mean).powi(2))
            .sum::<f64>()
            / nf;
        feat_mean[[i, 0]] = mean;
        feat_std[[i, 0]] = var.sqrt().max(1e-6);
    }
    let whiten = |f: &Array1<f64>| {
        Array1::from_iter(
            f.iter()
                .enumerate()
                .map(|(i, v)| (v - feat_mean[[i, 0]]) / feat_std[[i, 0]]),
        )
    };

    let mut params = init_eval_params(config.d_e, config.text_dim, config.seed);
    let mut opt = AdamState::for_params(&params);
    let batch = classes.len();
    let class_items: Vec<&Vec<Item>> = classes.values().collect();

    for step in 0..config.steps {
        let mut rng = indexed_stream(config.seed, "eval-step", step as u64);
        let mut feats = Array2::zeros((MOTION_FEATURES, batch));
        let mut texts = Array2::zeros((config.text_dim, batch));
        for (col, items) in class_items.iter().enumerate() {
            let item = &items[rng.random_range(0..items.len())];
            feats.column_mut(col).assign(&whiten(&item.features));
            texts.column_mut(col).assign(&item.pooled);
        }

        let mut g = Graph::new();
        let pvars: BTreeMap<String, crate::tape::Var> = params
            .iter()
            .map(|(k, v)| (k.clone(), g.param(k, v.clone())))
            .collect();
        let fc = g.constant(feats);
        let tc = g.constant(texts);
        let zm = {
            let wx = g.matmul(pvars["motion.w"], fc)?;
            g.add_col(wx, pvars["motion.b"])?
        };
        let zt = {
            let wx = g.matmul(pvars["text.w"], tc)?;
            g.add_col(wx, pvars["text.b"])?
        };
        let am = {
            let t = g.transpose(zm);
            g.normalize_rows(t)
        };
        let at = {
            let t = g.transpose(zt);
            g.normalize_rows(t)
        };
        let logits = {
            let att = g.transpose(at);
            let s = g.matmul(am, att)?;
            g.scale(s, 1.0 / config.temperature)
        };
        let loss_m = {
            let lsm = g.log_softmax_rows(logits);
            let d = g.diag_mean(lsm)?;
            g.scale(d, -1.0)
        };
        let loss_t = {
            let lt = g.transpose(logits);
            let lsm = g.log_softmax_rows(lt);
            let d = g.diag_mean(lsm)?;
            g.scale(d, -1.0)
        };
        let loss = {
            let s = g.add(loss_m, loss_t)?;
            g.scale(s, 0.5)
        };
        let mut grads = g.backward(loss).map_err(|e| match e {
            Error::NonFiniteGradient(msg) => {
                Error::NonFiniteGradient(format!("evaluator step {step}: {msg}"))
            }
            other => other,
        })?;
        for (name, value) in &params {
            grads
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(value.dim()));
        }
        optimizer_step(&mut params, &mut opt, &grads, config.lr, DEFAULT_GRAD_CLIP)?;
    }

    Ok(EmbeddingProvider {
        d_e: config.d_e,
        text,
        feat_mean,
        feat_std,
        params,
    })
}

/// Sample mean and population covariance of row-vector embeddings.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

pub fn fit_gaussian(set: &Array2<f64>) -> Result<GaussianFit> {
    let (n, d) = set.dim();
    if n < 2 {
        return Err(Error::TooFewSamples(format!(
            "covariance needs >= 2 samples, got {n}"
        )));
    }
    let mean = set.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let mut cov = Array2::zeros((d, d));
    for row in set.rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[[i, j]] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[[i, j]] /= n as f64;
            cov[[j, i]] = cov[[i, j]];
        }
    }
    Ok(GaussianFit { mean, cov })
}

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Symmetric PSD square root via eigendecomposition; eigenvalues below
/// -1e-8 violate the PSD contract and raise NumericalError.
fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    for &l in eig.eigenvalues.iter() {
        if l < -1e-8 {
            return Err(Error::NumericalError(format!(
                "covariance eigenvalue {l} is negative beyond tolerance"
            )));
        }
    }
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose())
}

/// Frechet distance between two Gaussian fits (jitter already applied):
/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the cross term
/// computed as the symmetric sqrt of S_a^{1/2} S_b S_a^{1/2}.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::ShapeMismatch(format!(
            "gaussian dims {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let mean_term = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>();
    let sa = to_na(&a.cov);
    let sb = to_na(&b.cov);
    let ra = sym_sqrt(&sa)?;
    let inner = &ra * &sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = inner.symmetric_eigen();
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let value = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    if value < -1e-6 {
        return Err(Error::NumericalError(format!(
            "frechet distance {value} is negative beyond tolerance"
        )));
    }
    Ok(value.max(0.0))
}

/// FID between two embedding sets (rows are samples). `FID_JITTER`*I is added
/// to both covariances for PSD safety.
pub fn fid(set_a: &Array2<f64>, set_b: &Array2<f64>) -> Result<f64> {
    if set_a.ncols() != set_b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dims {} vs {}",
            set_a.ncols(),
            set_b.ncols()
        )));
    }
    let mut a = fit_gaussian(set_a)?;
    let mut b = fit_gaussian(set_b)?;
    for g in [&mut a, &mut b] {
        for i in 0..g.cov.nrows() {
            g.cov[[i, i]] += FID_JITTER;
        }
    }
    frechet_distance(&a, &b)
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// Pool-of-32 retrieval accuracy over precomputed, index-aligned embeddings.
/// Items are shuffled by seed and split into pools of exactly 32; remainder
/// items are dropped. Distractors tied with the true caption do not outrank
/// it (duplicate captions in a pool favor the match).
fn r_precision_core(
    motion_emb: &[Array1<f64>],
    caption_emb: &[Array1<f64>],
    k: usize,
    seed: u64,
) -> Result<f64> {
    if k == 0 || k >= R_PRECISION_POOL {
        return Err(Error::BadArgument(format!(
            "top-k must lie in [1, {}]",
            R_PRECISION_POOL - 1
        )));
    }
    let n = motion_emb.len();
    if n < R_PRECISION_POOL {
        return Err(Error::TooFewSamples(format!(
            "r_precision needs >= {R_PRECISION_POOL} pairs, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "r-precision"));
    let mut hits = 0usize;
    let mut total = 0usize;
    for pool in order.chunks_exact(R_PRECISION_POOL) {
        for &i in pool {
            let true_sim = cosine(&motion_emb[i], &caption_emb[i]);
            let better = pool
                .iter()
                .filter(|&&j| j != i && cosine(&motion_emb[i], &caption_emb[j]) > true_sim)
                .count();
            hits += (better < k) as usize;
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// R-Precision over (caption, motion) pairs: the fraction of items whose true
/// caption ranks in the top k of its 32-caption pool by cosine similarity.
pub fn r_precision(
    provider: &dyn Embedder,
    pairs: &[(String, MotionSequence)],
    k: usize,
    seed: u64,
) -> Result<f64> {
    let mut caption_cache: BTreeMap<&str, Array1<f64>> = BTreeMap::new();
    let mut motion_emb = Vec::with_capacity(pairs.len());
    let mut caption_emb = Vec::with_capacity(pairs.len());
    for (caption, motion) in pairs {
        motion_emb.push(provider.embed_motion(motion)?);
        let e = match caption_cache.get(caption.as_str()) {
            Some(e) => e.clone(),
            None => {
                let e = provider.embed_caption(caption)?;
                caption_cache.insert(caption, e.clone());
                e
            }
        };
        caption_emb.push(e);
    }
    r_precision_core(&motion_emb, &caption_emb, k, seed)
}

/// Mean Euclidean distance over `pairs` seeded random index pairs (i != j).
pub fn diversity(embeddings: &Array2<f64>, pairs: usize, seed: u64) -> Result<f64> {
    let n = embeddings.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples(format!(
            "diversity needs >= 2 embeddings, got {n}"
        )));
    }
    if pairs == 0 {
        return Err(Error::BadArgument("diversity needs >= 1 pair".into()));
    }
    let mut rng = stream(seed, "diversity");
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let j = loop {
            let j = rng.random_range(0..n);
            if j != i {
                break j;
            }
        };
        let d = embeddings
            .row(i)
            .iter()
            .zip(embeddings.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        total += d;
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone)]
pub enum Query<'a> {
    Motion(&'a MotionSequence),
    Text(&'a str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
}

/// Top-k corpus motions by cosine similarity to the query; ties broken by
/// ascending corpus index.
pub fn nearest_neighbors(
    provider: &dyn Embedder,
    query: Query<'_>,
    corpus: &[MotionSequence],
    k: usize,
) -> Result<Vec<Neighbor>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if k == 0 || k > corpus.len() {
        return Err(Error::BadArgument(format!(
            "k {k} must lie in [1, {}]",
            corpus.len()
        )));
    }
    let q = match query {
        Query::Motion(m) => provider.embed_motion(m)?,
        Query::Text(c) => provider.embed_caption(c)?,
    };
    let mut scored: Vec<Neighbor> = corpus
        .iter()
        .enumerate()
        .map(|(index, m)| {
            Ok(Neighbor {
                index,
                similarity: cosine(&q, &provider.embed_motion(m)?),
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Metric bundle for one generated set against one reference set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fid: f64,
    /// Keys "top_1".."top_3"; means over repetitions.
    pub r_precision: BTreeMap<String, f64>,
    pub diversity: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub provider_checksum: String,
    pub repetitions: usize,
    /// 95% half-widths keyed like the metrics; present when repetitions > 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci95: Option<BTreeMap<String, f64>>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::ParseError(format!("metrics report: {e}")))
    }
}

fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// FID(generated, reference), R-Precision top-1..3 over the generated set's
/// captions, and Diversity of the generated embeddings. Repetitions re-seed
/// the pool shuffles and pair draws; FID has no sampling step and is computed
/// once.
pub fn compute_metrics(
    provider: &dyn Embedder,
    generated: &[MotionSequence],
    reference: &[MotionSequence],
    seed: u64,
    repetitions: usize,
) -> Result<MetricsReport> {
    if repetitions == 0 {
        return Err(Error::BadArgument("repetitions must be >= 1".into()));
    }
    let embed_set = |motions: &[MotionSequence]| -> Result<Array2<f64>> {
        if motions.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut out = Array2::zeros((motions.len(), provider.dim()));
        for (i, m) in motions.iter().enumerate() {
            let e = provider.embed_motion(m)?;
            out.row_mut(i).assign(&e);
        }
        Ok(out)
    };
    let gen_emb = embed_set(generated)?;
    let ref_emb = embed_set(reference)?;
    let fid_value = fid(&gen_emb, &ref_emb)?;

    let mut caption_cache: BTreeMap<&str, Array1<f64>> = BTreeMap::new();
    let mut motion_emb = Vec::new();
    let mut caption_emb = Vec::new();
    for (i, m) in generated.iter().enumerate() {
        let Some(caption) = &m.caption else { continue };
        motion_emb.push(gen_emb.row(i).to_owned());
        let e = match caption_cache.get(caption.as_str()) {
            Some(e) => e.clone(),
            None => {
                let e = provider.embed_caption(caption)?;
                caption_cache.insert(caption, e.clone());
                e
            }
        };
        caption_emb.push(e);
    }

    let mut r_prec = BTreeMap::new();
    let mut ci = BTreeMap::new();
    for k in 1..=3usize {
        let runs: Vec<f64> = (0..repetitions)
            .map(|rep| r_precision_core(&motion_emb, &caption_emb, k, seed + rep as u64))
            .collect::<Result<_>>()?;
        let (mean, half) = mean_and_ci(&runs);
        r_prec.insert(format!("top_{k}"), mean);
        ci.insert(format!("r_precision_top_{k}"), half);
    }
    let div_runs: Vec<f64> = (0..repetitions)
        .map(|rep| diversity(&gen_emb, DIVERSITY_PAIRS, seed + rep as u64))
        .collect::<Result<_>>()?;
    let (div_mean, div_half) = mean_and_ci(&div_runs);
    ci.insert("diversity".to_string(), div_half);

    Ok(MetricsReport {
        fid: fid_value,
        r_precision: r_prec,
        diversity: div_mean,
        n_samples: generated.len(),
        seed,
        provider_checksum: provider.checksum(),
        repetitions,
        ci95: (repetitions > 1).then_some(ci),
    })
}
