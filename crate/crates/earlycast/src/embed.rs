//! Text embedding providers, cosine math, and an exact nearest-neighbor
//! index backing agent memories and persona clustering.
//!
//! The default provider is a seeded signed-bucket hash embedder: it is a
//! deterministic stand-in for a pretrained text encoder, so simulations and
//! detector tests run with no network. A JSON-over-HTTP provider with the
//! same contract is available for real encoders.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text is empty after whitespace normalization")]
    EmptyText,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("similarity undefined for a zero vector")]
    ZeroVector,
    #[error("remote embedding transport failure (status {status:?}): {message}")]
    Transport { status: Option<u16>, message: String },
    #[error("remote embedding response malformed: {0}")]
    BadResponse(String),
}

/// Default embedding width, matching common pretrained text encoders.
pub const DEFAULT_DIM: usize = 768;

/// Fixed seed for the hash provider so embeddings reproduce across
/// processes and machines.
pub const HASH_PROVIDER_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// A unit-norm dense vector of width `d_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Embedding {
        Embedding { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Arithmetic mean of a nonempty set of equal-width embeddings.
    /// The result is not re-normalized; centroids live off the unit sphere.
    pub fn centroid(members: &[&Embedding]) -> Embedding {
        assert!(!members.is_empty(), "centroid of empty set");
        let dim = members[0].dim();
        let mut acc = vec![0.0; dim];
        for m in members {
            assert_eq!(m.dim(), dim);
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        let n = members.len() as f64;
        for a in acc.iter_mut() {
            *a /= n;
        }
        Embedding::new(acc)
    }

    pub fn euclidean(&self, other: &Embedding) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Cosine similarity in `[-1, 1]`. Errors on dimension mismatch or a zero
/// vector, for which similarity is undefined.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.l2_norm(), b.l2_norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let dot: f64 = a.values.iter().zip(b.values.iter()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Something that turns text into a fixed-width embedding. Implementations
/// must be deterministic per instance: same text, same vector.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

/// Splits on Unicode non-alphanumeric boundaries and lowercases.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Seeded FNV-1a over bytes; stable across platforms and runs.
pub fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic signed-bucket hash embedder: each token hashes to one of
/// `dim` buckets with a ±1 sign, accumulated counts are L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> HashEmbedder {
        HashEmbedder {
            dim,
            seed: HASH_PROVIDER_SEED,
        }
    }

    pub fn with_seed(dim: usize, seed: u64) -> HashEmbedder {
        HashEmbedder { dim, seed }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.split_whitespace().next().is_none() {
            return Err(EmbedError::EmptyText);
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut acc = vec![0.0f64; self.dim];
        for token in &tokens {
            let h = fnv1a64(token.as_bytes(), self.seed);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Signed buckets cancelled exactly; fall back to a basis vector
            // keyed by the whole text so the contract (unit norm) holds.
            let h = fnv1a64(text.as_bytes(), self.seed);
            acc[(h % self.dim as u64) as usize] = 1.0;
        } else {
            for v in acc.iter_mut() {
                *v /= norm;
            }
        }
        Ok(Embedding::new(acc))
    }
}

/// Request body for the remote embedding endpoint.
#[derive(Debug, Serialize)]
pub struct RemoteEmbedRequest<'a> {
    pub text: &'a str,
    pub dim: usize,
}

/// Response body for the remote embedding endpoint.
#[derive(Debug, Deserialize)]
pub struct RemoteEmbedResponse {
    pub embedding: Vec<f64>,
}

/// JSON-over-HTTP embedding client. POSTs `{"text","dim"}` to the endpoint
/// and expects `{"embedding":[...]}` back; the vector is L2-normalized on
/// receipt. The auth token is read from the configured environment
/// variable, never from config files.
pub struct RemoteEmbedder {
    url: String,
    api_key_env: Option<String>,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, dim: usize, api_key_env: Option<String>) -> RemoteEmbedder {
        RemoteEmbedder {
            url: url.into(),
            api_key_env,
            dim,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.split_whitespace().next().is_none() {
            return Err(EmbedError::EmptyText);
        }
        let mut request = self
            .client
            .post(&self.url)
            .json(&RemoteEmbedRequest { text, dim: self.dim });
        if let Some(env_key) = &self.api_key_env {
            if let Ok(token) = std::env::var(env_key) {
                request = request.bearer_auth(token);
            }
        }
        let response = request.send().map_err(|e| EmbedError::Transport {
            status: e.status().map(|s| s.as_u16()),
            message: e.to_string(),
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(EmbedError::Transport {
                status: Some(status.as_u16()),
                message: format!("embedding endpoint returned {status}"),
            });
        }
        let body: RemoteEmbedResponse = response
            .json()
            .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        if body.embedding.len() != self.dim {
            return Err(EmbedError::DimensionMismatch(body.embedding.len(), self.dim));
        }
        let norm = body.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::BadResponse("zero embedding".into()));
        }
        Ok(Embedding::new(
            body.embedding.iter().map(|v| v / norm).collect(),
        ))
    }
}

/// Exact cosine nearest-neighbor index over an insertion-ordered store.
///
/// A linear scan is deliberate: stores stay small (≤ 10^4 vectors), and an
/// exact scan keeps retrieval semantics free of approximation artifacts.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    ids: Vec<String>,
    vectors: Vec<Embedding>,
}

impl VectorIndex {
    pub fn new() -> VectorIndex {
        VectorIndex::default()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Embedding) {
        if let Some(first) = self.vectors.first() {
            assert_eq!(first.dim(), vector.dim(), "index holds {}-d vectors", first.dim());
        }
        self.ids.push(id.into());
        self.vectors.push(vector);
    }

    /// Top-k by cosine similarity, descending; ties keep insertion order.
    /// Returns `min(k, len)` results.
    pub fn knn(&self, query: &Embedding, k: usize) -> Result<Vec<(String, f64)>, EmbedError> {
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(self.vectors.len());
        for (i, v) in self.vectors.iter().enumerate() {
            scored.push((i, cosine(query, v)?));
        }
        // Stable sort on similarity only, so equal scores keep insertion order.
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hash_provider_is_deterministic() {
        let p = HashEmbedder::new(64);
        assert_eq!(p.embed("abc").unwrap(), p.embed("abc").unwrap());
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let p = HashEmbedder::new(32);
        for text in ["abc", "one two three", "震惊 新闻 标题", "a b c d e f g h"] {
            let norm = p.embed(text).unwrap().l2_norm();
            assert!((norm - 1.0).abs() < 1e-9, "norm {norm} for {text:?}");
        }
    }

    #[test]
    fn distinct_texts_are_not_identical_directions() {
        let p = HashEmbedder::new(64);
        let a = p.embed("abc").unwrap();
        let b = p.embed("abd").unwrap();
        assert!(cosine(&a, &b).unwrap() < 1.0 - 1e-9);
    }

    #[test]
    fn empty_text_is_rejected() {
        let p = HashEmbedder::new(16);
        assert!(matches!(p.embed("   \t\n"), Err(EmbedError::EmptyText)));
    }

    #[test]
    fn cosine_orthogonal_identity_and_derived_case() {
        let e1 = Embedding::new(vec![1.0, 0.0]);
        let e2 = Embedding::new(vec![0.0, 1.0]);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert!((cosine(&e1, &e1).unwrap() - 1.0).abs() < 1e-15);
        // Hand evaluation: (1*2 + 2*1) / (sqrt(5) * sqrt(5)) = 4/5.
        let a = Embedding::new(vec![1.0, 2.0]);
        let b = Embedding::new(vec![2.0, 1.0]);
        assert!((cosine(&a, &b).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_vector_errors() {
        let z = Embedding::new(vec![0.0, 0.0]);
        let v = Embedding::new(vec![1.0, 0.0]);
        assert!(matches!(cosine(&z, &v), Err(EmbedError::ZeroVector)));
    }

    #[test]
    fn knn_exact_query_ranks_first_and_k_clamps() {
        let p = HashEmbedder::new(32);
        let mut index = VectorIndex::new();
        for (i, text) in ["alpha beta", "gamma delta", "epsilon zeta"].iter().enumerate() {
            index.insert(format!("doc{i}"), p.embed(text).unwrap());
        }
        let hits = index.knn(&p.embed("gamma delta").unwrap(), 1).unwrap();
        assert_eq!(hits[0].0, "doc1");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);

        let all = index.knn(&p.embed("alpha").unwrap(), 99).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn knn_matches_exhaustive_argmax_oracle() {
        let p = HashEmbedder::with_seed(24, 7);
        let texts = ["red fox", "blue bird", "green tree", "red bird", "blue fox"];
        let mut index = VectorIndex::new();
        let mut stored = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let e = p.embed(t).unwrap();
            stored.push(e.clone());
            index.insert(format!("v{i}"), e);
        }
        let query = p.embed("red bird fox").unwrap();
        let hits = index.knn(&query, 2).unwrap();

        // Oracle: brute-force scan with the public cosine.
        let mut sims: Vec<(usize, f64)> = stored
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cosine(&query, e).unwrap()))
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        assert_eq!(hits[0].0, format!("v{}", sims[0].0));
        assert_eq!(hits[1].0, format!("v{}", sims[1].0));
    }

    proptest! {
        // Full-index retrieval order equals a complete sort by cosine.
        #[test]
        fn knn_full_order_matches_sort_oracle(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dim = 8;
            let n = 1 + (seed as usize % 40);
            let mut index = VectorIndex::new();
            let mut vectors = Vec::new();
            for i in 0..n {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 { continue; }
                let e = Embedding::new(v.iter().map(|x| x / norm).collect());
                vectors.push(e.clone());
                index.insert(format!("n{i}"), e);
            }
            prop_assume!(!vectors.is_empty());
            let q = &vectors[0];
            let hits = index.knn(q, vectors.len()).unwrap();
            let mut oracle: Vec<f64> = vectors.iter().map(|v| cosine(q, v).unwrap()).collect();
            oracle.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (hit, want) in hits.iter().zip(oracle.iter()) {
                prop_assert!((hit.1 - want).abs() < 1e-12);
            }
        }
    }
}
