//! Deterministic test embedder: each token hashes to a seeded pseudorandom
//! vector, texts are mean-pooled over their tokens, and the result is
//! normalized. Stable across runs and platforms for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{EmbeddingProvider, EmbeddingVector, GatewayError};
use crate::metrics::tokenize;

pub struct HashEmbedder {
    seed: u64,
    dim: usize,
    id: String,
}

impl HashEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { seed, dim, id: format!("hash-embedder-v1:seed={seed}:dim={dim}") }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        (0..self.dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    fn text_vector(&self, text: &str) -> Vec<f32> {
        let tokens = tokenize(text);
        let mut pooled = vec![0.0f64; self.dim];
        if tokens.is_empty() {
            // No alphanumeric content: hash the raw text as a single token
            // so embed stays total.
            pooled = self.token_vector(text);
        } else {
            for token in tokens.tokens() {
                for (acc, v) in pooled.iter_mut().zip(self.token_vector(token)) {
                    *acc += v;
                }
            }
            for acc in pooled.iter_mut() {
                *acc /= tokens.len() as f64;
            }
        }
        let norm = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            pooled.iter().map(|v| (v / norm) as f32).collect()
        } else {
            let mut unit = vec![0.0f32; self.dim];
            unit[0] = 1.0;
            unit
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector::new(self.text_vector(t), self.id.clone()))
            .collect())
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> &str {
        &self.id
    }
}
