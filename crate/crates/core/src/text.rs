//! Frozen deterministic text embeddings.
//!
//! Stand-in for a large pretrained language model: each normalized token maps
//! to a fixed pseudorandom vector derived from a seed, so embeddings are
//! bit-reproducible, deterministic across platforms, and never trained.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Token-level and pooled text features.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    /// One row per token, shape [L, D_text]; L >= 1.
    pub tokens: Array2<f64>,
    /// Mean of the token rows, shape [D_text].
    pub pooled: Array1<f64>,
    /// Null conditioning marker; consumers substitute their learned null token.
    pub is_null: bool,
}

pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn embed(&self, caption: Option<&str>) -> TextEmbedding;
    /// Stable identifier of the provider's frozen table, for metric reports.
    fn checksum(&self) -> String;
}

/// Frozen hashed-token provider: lowercase, split on non-alphanumeric runs,
/// token -> seeded Gaussian vector scaled to unit expected norm.
#[derive(Debug, Clone)]
pub struct HashedTextProvider {
    pub seed: u64,
    pub dim: usize,
}

impl HashedTextProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim }
    }

    fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(b"text-token");
        hasher.update(token.as_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&hasher.finalize());
        let mut rng = ChaCha8Rng::from_seed(key);
        let scale = 1.0 / (self.dim as f64).sqrt();
        Array1::from_iter((0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale))
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

impl TextEncoder for HashedTextProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, caption: Option<&str>) -> TextEmbedding {
        let tokens = caption.map(tokenize).unwrap_or_default();
        if tokens.is_empty() {
            // Null (or content-free) caption: a single zero token row keeps
            // shapes valid; is_null tells the model to use its null embedding.
            return TextEmbedding {
                tokens: Array2::zeros((1, self.dim)),
                pooled: Array1::zeros(self.dim),
                is_null: true,
            };
        }
        let mut rows = Array2::zeros((tokens.len(), self.dim));
        for (i, tok) in tokens.iter().enumerate() {
            rows.row_mut(i).assign(&self.token_vector(tok));
        }
        let pooled = rows.mean_axis(ndarray::Axis(0)).expect("L >= 1");
        TextEmbedding {
            tokens: rows,
            pooled,
            is_null: false,
        }
    }

    fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"hashed-text-provider-v1");
        hasher.update(self.seed.to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Embeds a caption (None = null conditioning) with the given provider.
pub fn embed_text<P: TextEncoder + ?Sized>(provider: &P, caption: Option<&str>) -> TextEmbedding {
    provider.embed(caption)
}
