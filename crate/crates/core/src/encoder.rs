//! Sentence embeddings behind an injectable provider.
//!
//! Three providers are available: a binary cache keyed by review id (or by
//! text for term embeddings), a remote JSON service, and a deterministic
//! feature-hashing fallback that needs no model at all.

use std::collections::BTreeMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher13;

use crate::error::{Error, Result};

/// Dimension of the sentence encoder used for reviews.
pub const DEFAULT_DIMENSION: usize = 768;

const CACHE_MAGIC: &[u8; 4] = b"EMB1";

/// Dense sentence embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps a vector, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation(
                "embedding must have at least one dimension",
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "embedding entry {i} is not finite"
            )));
        }
        Ok(Embedding(values))
    }

    pub fn zeros(dimension: usize) -> Self {
        Embedding(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-norm copy; a zero vector is returned unchanged.
    pub fn normalized(&self) -> Embedding {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Embedding(self.0.iter().map(|v| v / n).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Source of embeddings. Implementations are shared read-only across threads.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding>;

    /// Embedding of a known review. Cache-backed providers look the id up;
    /// the rest embed the text.
    fn embed_review(&self, _id: &str, text: &str) -> Result<Embedding> {
        self.embed(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<Embedding> {
        (**self).embed(text)
    }
    fn embed_review(&self, id: &str, text: &str) -> Result<Embedding> {
        (**self).embed_review(id, text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        (**self).embed_batch(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<Embedding> {
        (**self).embed(text)
    }
    fn embed_review(&self, id: &str, text: &str) -> Result<Embedding> {
        (**self).embed_review(id, text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        (**self).embed_batch(texts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    CacheFile,
    RemoteService,
    HashedFallback,
}

fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::validation("cannot embed empty text"));
    }
    Ok(())
}

/// Feature-hashing encoder: lowercase, split on non-alphanumerics, hash each
/// token into one of `dimension` buckets with a ±1 sign from a second keyed
/// hash, sum and L2-normalize. Texts sharing tokens get higher cosine.
#[derive(Debug, Clone)]
pub struct HashedEncoder {
    dimension: usize,
    seed: u64,
}

impl HashedEncoder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::validation(
                "hashed encoder dimension must be positive",
            ));
        }
        Ok(HashedEncoder { dimension, seed })
    }

    fn hash(&self, key: u64, token: &str) -> u64 {
        let mut h = SipHasher13::new_with_keys(self.seed, key);
        h.write(token.as_bytes());
        h.finish()
    }
}

impl EmbeddingProvider for HashedEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        require_text(text)?;
        let mut v = vec![0.0; self.dimension];
        let lower = text.to_lowercase();
        let mut any = false;
        for token in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            any = true;
            let bucket = (self.hash(0x6275_636b, token) % self.dimension as u64) as usize;
            let sign = if self.hash(0x7369_676e, token) >> 63 == 0 {
                1.0
            } else {
                -1.0
            };
            v[bucket] += sign;
        }
        if !any {
            return Err(Error::validation(format!(
                "text `{text}` contains no tokens"
            )));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Colliding tokens with opposite signs can cancel out completely.
        if norm == 0.0 {
            return Ok(Embedding(v));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(Embedding(v))
    }
}

/// Embeddings keyed by review id (or by raw text for term entries).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    dimension: usize,
    entries: BTreeMap<String, Embedding>,
}

impl EmbeddingCache {
    pub fn new(dimension: usize) -> Self {
        EmbeddingCache {
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, embedding: Embedding) -> Result<()> {
        if embedding.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: embedding.dimension(),
            });
        }
        let key = key.into();
        if key.len() > u16::MAX as usize {
            return Err(Error::validation("cache keys are limited to 65535 bytes"));
        }
        self.entries.insert(key, embedding);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Embedding> {
        self.entries.get(key)
    }

    pub fn lookup(&self, key: &str) -> Result<&Embedding> {
        self.get(key)
            .ok_or_else(|| Error::MissingEmbedding(key.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Embedding)> {
        self.entries.iter()
    }
}

/// Writes the `EMB1` format: magic, u32 dimension, u64 count, then per record
/// a u16 key length, key bytes and `dimension` f32 values, all little-endian.
pub fn save_cache(cache: &EmbeddingCache, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_u32::<LittleEndian>(cache.dimension as u32)?;
    w.write_u64::<LittleEndian>(cache.entries.len() as u64)?;
    for (key, emb) in &cache.entries {
        w.write_u16::<LittleEndian>(key.len() as u16)?;
        w.write_all(key.as_bytes())?;
        for &v in emb.values() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<EmbeddingCache> {
    let mut r = BufReader::new(File::open(path)?);
    read_cache(&mut r)
}

fn corrupt(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Corruption(format!("{what}: {e}"))
}

fn read_cache(r: &mut impl Read) -> Result<EmbeddingCache> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(corrupt("header"))?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Corruption("bad magic, not an EMB1 cache".into()));
    }
    let dimension = r.read_u32::<LittleEndian>().map_err(corrupt("header"))? as usize;
    let count = r.read_u64::<LittleEndian>().map_err(corrupt("header"))?;
    if dimension == 0 {
        return Err(Error::Corruption("zero dimension in header".into()));
    }
    let mut cache = EmbeddingCache::new(dimension);
    for i in 0..count {
        let ctx = format!("record {i}");
        let len = r.read_u16::<LittleEndian>().map_err(corrupt(&ctx))? as usize;
        let mut key = vec![0u8; len];
        r.read_exact(&mut key).map_err(corrupt(&ctx))?;
        let key = String::from_utf8(key)
            .map_err(|_| Error::Corruption(format!("{ctx}: key is not UTF-8")))?;
        let mut values = Vec::with_capacity(dimension);
        for _ in 0..dimension {
            let v = r.read_f32::<LittleEndian>().map_err(|e| {
                Error::Corruption(format!(
                    "{ctx} (`{key}`) shorter than dimension {dimension}: {e}"
                ))
            })?;
            values.push(v as f64);
        }
        let emb = Embedding::new(values).map_err(|e| Error::Corruption(format!("{ctx}: {e}")))?;
        cache.entries.insert(key, emb);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Corruption(format!(
            "trailing bytes after {count} records of dimension {dimension}"
        )));
    }
    Ok(cache)
}

/// Serves embeddings out of an [`EmbeddingCache`].
#[derive(Debug, Clone)]
pub struct CacheProvider {
    cache: EmbeddingCache,
}

impl CacheProvider {
    pub fn new(cache: EmbeddingCache) -> Self {
        CacheProvider { cache }
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl EmbeddingProvider for CacheProvider {
    fn dimension(&self) -> usize {
        self.cache.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        require_text(text)?;
        self.cache.lookup(text).cloned()
    }

    fn embed_review(&self, id: &str, _text: &str) -> Result<Embedding> {
        self.cache.lookup(id).cloned()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub dimension: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_batch")]
    pub max_batch: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout() -> u64 {
    30
}
fn default_batch() -> usize {
    64
}
fn default_retries() -> u32 {
    2
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Client for an external encoder: `POST {"texts": [...]}` answered by
/// `{"embeddings": [[...], ...]}`. Calls block; batches larger than
/// `max_batch` are split.
pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.dimension == 0 || config.max_batch == 0 {
            return Err(Error::validation(
                "remote provider needs positive dimension and max_batch",
            ));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(RemoteProvider { config, agent })
    }

    fn request(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, String> {
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .send_json(EmbedRequest { texts })
            .map_err(|e| e.to_string())?;
        let body: EmbedResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(body.embeddings)
    }

    fn embed_chunk(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            match self.request(texts) {
                Ok(rows) => {
                    if rows.len() != texts.len() {
                        return Err(Error::Transport {
                            message: format!(
                                "asked for {} embeddings, got {}",
                                texts.len(),
                                rows.len()
                            ),
                            retries: 0,
                        });
                    }
                    return rows
                        .into_iter()
                        .map(|row| {
                            if row.len() != self.config.dimension {
                                return Err(Error::DimensionMismatch {
                                    expected: self.config.dimension,
                                    found: row.len(),
                                });
                            }
                            Embedding::new(row)
                        })
                        .collect();
                }
                Err(e) => last = e,
            }
        }
        Err(Error::Transport {
            message: last,
            retries: self.config.retries,
        })
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        require_text(text)?;
        Ok(self.embed_chunk(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        for t in texts {
            require_text(t)?;
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.max_batch) {
            out.extend(self.embed_chunk(chunk)?);
        }
        Ok(out)
    }
}

/// Wraps a provider and L2-normalizes everything it returns.
pub struct Normalized<P>(pub P);

impl<P: EmbeddingProvider> EmbeddingProvider for Normalized<P> {
    fn dimension(&self) -> usize {
        self.0.dimension()
    }
    fn embed(&self, text: &str) -> Result<Embedding> {
        Ok(self.0.embed(text)?.normalized())
    }
    fn embed_review(&self, id: &str, text: &str) -> Result<Embedding> {
        Ok(self.0.embed_review(id, text)?.normalized())
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        Ok(self
            .0
            .embed_batch(texts)?
            .iter()
            .map(Embedding::normalized)
            .collect())
    }
}
