use std::hash::Hasher;

use fnv::FnvHasher;

use super::LlmError;

/// Default embedding dimension.
pub const EMBED_DIM: usize = 256;

/// Turns text into a fixed-length vector for similarity search.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError>;
}

/// Deterministic bag-of-words embedder: lowercase alphanumeric tokens hashed
/// into buckets, term frequencies L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: EMBED_DIM }
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        Ok(hash_embed(text, self.dim))
    }
}

pub fn default_embed(text: &str) -> Vec<f64> {
    hash_embed(text, EMBED_DIM)
}

fn hash_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let lower = text.to_lowercase();
    for token in lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let mut h = FnvHasher::default();
        h.write(token.as_bytes());
        v[(h.finish() % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
