//! Embedding providers and vector math.
//!
//! Every vector leaving [`EmbeddingProvider::embed_batch`] is unit-normalized,
//! so cosine similarity between provider outputs and index centroids is a dot
//! product.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{escape, unescape};

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalize `values` to unit length.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite vector entry".into()));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(EmbeddingVector(
            values.into_iter().map(|v| v / norm).collect(),
        ))
    }

    /// Wrap values that are already unit length (e.g. read back from an index
    /// file). Only finiteness is checked.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("invalid stored vector".into()));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// A text encoder. Implementations must be deterministic per instance and
/// keep a constant output dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Identifies the model; an index only links with the provider it was
    /// built with.
    fn tag(&self) -> &str;

    /// Raw vectors, one per text, in order. Need not be normalized.
    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;

    /// One unit-normalized vector per text, order-preserving.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let raw = self.embed_raw(texts)?;
        if raw.len() != texts.len() {
            return Err(Error::Provider {
                provider: self.tag().to_string(),
                text: texts[0].to_string(),
                msg: format!("returned {} vectors for {} texts", raw.len(), texts.len()),
            });
        }
        raw.into_iter()
            .zip(texts)
            .map(|(v, text)| {
                if v.len() != self.dimension() {
                    return Err(Error::Provider {
                        provider: self.tag().to_string(),
                        text: text.to_string(),
                        msg: format!("dimension {} != {}", v.len(), self.dimension()),
                    });
                }
                EmbeddingVector::normalized(v).map_err(|e| Error::Provider {
                    provider: self.tag().to_string(),
                    text: text.to_string(),
                    msg: e.to_string(),
                })
            })
            .collect()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn tag(&self) -> &str {
        (**self).tag()
    }
    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        (**self).embed_raw(texts)
    }
}

// ---------------------------------------------------------------------------
// Deterministic character n-gram embedder

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix64 finalizer; FNV alone leaves the low bits poorly mixed.
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

const BOUNDARY_START: char = '\u{2}';
const BOUNDARY_END: char = '\u{3}';

/// Hash character 1- to 3-grams of `text` (with boundary markers) into
/// `dimension` signed buckets and normalize. Case-sensitive and platform
/// independent.
pub fn test_embed(text: &str, dimension: usize, seed: u64) -> Result<EmbeddingVector> {
    if dimension < 8 {
        return Err(Error::InvalidArgument(format!(
            "test embedder needs dimension ≥ 8, got {dimension}"
        )));
    }
    let chars: Vec<char> = std::iter::once(BOUNDARY_START)
        .chain(text.chars())
        .chain(std::iter::once(BOUNDARY_END))
        .collect();
    let mut v = vec![0.0f64; dimension];
    let mut buf = String::new();
    for n in 1..=3 {
        for gram in chars.windows(n) {
            buf.clear();
            buf.extend(gram);
            let h = fnv1a(seed, buf.as_bytes());
            let bucket = (h % dimension as u64) as usize;
            v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
    }
    if v.iter().all(|x| *x == 0.0) {
        // Signed counts cancelled exactly; fall back to a whole-text bucket.
        let h = fnv1a(seed ^ 0x5a5a, text.as_bytes());
        v[(h % dimension as u64) as usize] = 1.0;
    }
    EmbeddingVector::normalized(v)
}

#[derive(Debug, Clone)]
pub struct TestEmbedder {
    dimension: usize,
    seed: u64,
    tag: String,
}

impl TestEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension < 8 {
            return Err(Error::InvalidArgument(format!(
                "test embedder needs dimension ≥ 8, got {dimension}"
            )));
        }
        Ok(TestEmbedder {
            dimension,
            seed,
            tag: format!("test-ngram:{dimension}:{seed}"),
        })
    }
}

impl EmbeddingProvider for TestEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| test_embed(t, self.dimension, self.seed).map(EmbeddingVector::into_values))
            .collect()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| test_embed(t, self.dimension, self.seed))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Precomputed vector file store

/// Exact-text lookup into precomputed vectors.
///
/// File layout: a header `dimension=<D> provider=<tag>`, then one
/// `<escaped text>\t<f> <f> ...` line per entry.
#[derive(Debug, Clone)]
pub struct FileStore {
    dimension: usize,
    tag: String,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileStore {
    pub fn new(dimension: usize, tag: impl Into<String>) -> Self {
        FileStore {
            dimension,
            tag: tag.into(),
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: vector.len(),
            });
        }
        self.vectors.insert(text.into(), vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Record the vectors `provider` produces for `texts`, under the
    /// provider's tag.
    pub fn capture(provider: &dyn EmbeddingProvider, texts: &[&str]) -> Result<Self> {
        let mut store = FileStore::new(provider.dimension(), provider.tag());
        for (text, v) in texts.iter().zip(provider.embed_raw(texts)?) {
            store.insert(*text, v)?;
        }
        Ok(store)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        const WHAT: &str = "vector store";
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::format(WHAT, 1, "empty file"))?;
        let (mut dimension, mut tag) = (None, None);
        for part in header.split_whitespace() {
            if let Some(d) = part.strip_prefix("dimension=") {
                dimension = d.parse::<usize>().ok();
            } else if let Some(t) = part.strip_prefix("provider=") {
                tag = Some(t.to_string());
            }
        }
        let (Some(dimension), Some(tag)) = (dimension, tag) else {
            return Err(Error::format(
                WHAT,
                1,
                "expected `dimension=<D> provider=<tag>`",
            ));
        };
        if dimension == 0 {
            return Err(Error::format(WHAT, 1, "dimension must be positive"));
        }
        let mut store = FileStore::new(dimension, tag);
        for (n, line) in lines.enumerate() {
            let line = line?;
            let lineno = n + 2;
            if line.is_empty() {
                continue;
            }
            let (text, floats) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::format(WHAT, lineno, "missing tab"))?;
            let v = parse_floats(floats).map_err(|m| Error::format(WHAT, lineno, m))?;
            if v.len() != dimension {
                return Err(Error::format(
                    WHAT,
                    lineno,
                    format!("expected {dimension} floats, got {}", v.len()),
                ));
            }
            store.vectors.insert(unescape(text), v);
        }
        Ok(store)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f))
    }

    /// Entries are written in sorted text order so output is reproducible.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dimension={} provider={}", self.dimension, self.tag)?;
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        for k in keys {
            writeln!(out, "{}\t{}", escape(k), format_floats(&self.vectors[k]))?;
        }
        Ok(())
    }
}

impl EmbeddingProvider for FileStore {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| Error::MissingVector {
                        provider: self.tag.clone(),
                        text: t.to_string(),
                    })
            })
            .collect()
    }
}

/// Space-separated shortest round-trip decimals.
pub fn format_floats(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 20);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&x.to_string());
    }
    s
}

pub fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(' ')
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| format!("bad float {p:?}")))
        .collect()
}

// ---------------------------------------------------------------------------
// External embedding service client

#[derive(Debug, Serialize)]
struct ServiceRequest<'a> {
    id: u64,
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct ServiceResponse {
    id: u64,
    #[serde(default)]
    vectors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    error: Option<String>,
}

/// Where the service lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceEndpoint {
    /// Unix domain socket path.
    Socket(String),
    /// Shell command speaking the protocol on stdin/stdout.
    Command(String),
}

impl ServiceEndpoint {
    /// `unix:<path>` or `cmd:<shell command>`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(p) = s.strip_prefix("unix:") {
            Ok(ServiceEndpoint::Socket(p.to_string()))
        } else if let Some(c) = s.strip_prefix("cmd:") {
            Ok(ServiceEndpoint::Command(c.to_string()))
        } else {
            Err(Error::InvalidArgument(format!(
                "service endpoint must be unix:<path> or cmd:<command>, got {s:?}"
            )))
        }
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Connection {
    fn open(endpoint: &ServiceEndpoint) -> std::io::Result<Self> {
        match endpoint {
            #[cfg(unix)]
            ServiceEndpoint::Socket(path) => {
                let stream = std::os::unix::net::UnixStream::connect(path)?;
                Ok(Connection {
                    reader: Box::new(BufReader::new(stream.try_clone()?)),
                    writer: Box::new(stream),
                    child: None,
                })
            }
            #[cfg(not(unix))]
            ServiceEndpoint::Socket(_) => Err(std::io::Error::new(
                std::io::ErrorKind::Unsupported,
                "unix sockets unavailable on this platform",
            )),
            ServiceEndpoint::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    reader: Box::new(BufReader::new(stdout)),
                    writer: Box::new(stdin),
                    child: Some(child),
                })
            }
        }
    }

    fn round_trip(&mut self, request: &str) -> std::io::Result<String> {
        self.writer.write_all(request.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "service closed the connection",
            ));
        }
        Ok(line)
    }
}

/// Client for the newline-delimited JSON embedding service.
///
/// Each connection carries one request at a time; concurrent callers spread
/// over up to `pool_size` connections.
pub struct ServiceProvider {
    endpoint: ServiceEndpoint,
    tag: String,
    dimension: usize,
    max_batch: usize,
    slots: Vec<Mutex<Option<Connection>>>,
    next_slot: AtomicUsize,
    next_id: AtomicUsize,
}

impl std::fmt::Debug for ServiceProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceProvider")
            .field("endpoint", &self.endpoint)
            .field("tag", &self.tag)
            .field("dimension", &self.dimension)
            .finish()
    }
}

impl ServiceProvider {
    /// Connect and learn the dimension from a probe request.
    pub fn connect(
        endpoint: ServiceEndpoint,
        tag: impl Into<String>,
        pool_size: usize,
        max_batch: usize,
    ) -> Result<Self> {
        let mut provider = ServiceProvider {
            endpoint,
            tag: tag.into(),
            dimension: 0,
            max_batch: max_batch.max(1),
            slots: (0..pool_size.max(1)).map(|_| Mutex::new(None)).collect(),
            next_slot: AtomicUsize::new(0),
            next_id: AtomicUsize::new(1),
        };
        let probe = provider.request(&["probe"])?;
        provider.dimension = probe[0].len();
        if provider.dimension == 0 {
            return Err(provider.failure("probe", "service reported dimension 0"));
        }
        Ok(provider)
    }

    fn failure(&self, text: &str, msg: impl Into<String>) -> Error {
        Error::Provider {
            provider: self.tag.clone(),
            text: text.to_string(),
            msg: msg.into(),
        }
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let first = texts.first().copied().unwrap_or_default();
        let id = self.next_id.fetch_add(1, Ordering::Relaxed) as u64;
        let body = serde_json::to_string(&ServiceRequest { id, texts })?;
        let slot = self.next_slot.fetch_add(1, Ordering::Relaxed) % self.slots.len();
        let mut guard = self.slots[slot].lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(
                Connection::open(&self.endpoint)
                    .map_err(|e| self.failure(first, format!("connect: {e}")))?,
            );
        }
        let line = match guard.as_mut().expect("connected").round_trip(&body) {
            Ok(line) => line,
            Err(e) => {
                // Drop the broken connection so the next call reconnects.
                *guard = None;
                return Err(self.failure(first, e.to_string()));
            }
        };
        drop(guard);
        let resp: ServiceResponse = serde_json::from_str(line.trim_end())
            .map_err(|e| self.failure(first, format!("bad response: {e}")))?;
        if resp.id != id {
            return Err(self.failure(first, format!("response id {} != request id {id}", resp.id)));
        }
        if let Some(err) = resp.error {
            return Err(self.failure(first, err));
        }
        let vectors = resp
            .vectors
            .ok_or_else(|| self.failure(first, "response has neither vectors nor error"))?;
        if vectors.len() != texts.len() {
            return Err(self.failure(
                first,
                format!("{} vectors for {} texts", vectors.len(), texts.len()),
            ));
        }
        let dim = resp.dim.unwrap_or_else(|| vectors[0].len());
        for (v, t) in vectors.iter().zip(texts) {
            if v.len() != dim || (self.dimension != 0 && dim != self.dimension) {
                return Err(self.failure(t, format!("vector dimension {} inconsistent", v.len())));
            }
        }
        Ok(vectors)
    }
}

impl EmbeddingProvider for ServiceProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.max_batch) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Provider selection

/// Textual provider selector:
/// `test:<dim>:<seed>`, `file:<path>`, or `service:<endpoint>[#<tag>]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProviderSpec {
    Test {
        dimension: usize,
        seed: u64,
    },
    File(String),
    Service {
        endpoint: String,
        tag: Option<String>,
    },
}

impl ProviderSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized provider spec {s:?}"));
        if let Some(rest) = s.strip_prefix("test:") {
            let (d, seed) = rest.split_once(':').unwrap_or((rest, "0"));
            Ok(ProviderSpec::Test {
                dimension: d.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            })
        } else if let Some(p) = s.strip_prefix("file:") {
            Ok(ProviderSpec::File(p.to_string()))
        } else if let Some(rest) = s.strip_prefix("service:") {
            let (endpoint, tag) = match rest.rsplit_once('#') {
                Some((e, t)) => (e.to_string(), Some(t.to_string())),
                None => (rest.to_string(), None),
            };
            ServiceEndpoint::parse(&endpoint)?;
            Ok(ProviderSpec::Service { endpoint, tag })
        } else {
            Err(bad())
        }
    }

    pub fn open(&self, pool_size: usize) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            ProviderSpec::Test { dimension, seed } => {
                Box::new(TestEmbedder::new(*dimension, *seed)?)
            }
            ProviderSpec::File(path) => Box::new(FileStore::open(Path::new(path))?),
            ProviderSpec::Service { endpoint, tag } => Box::new(ServiceProvider::connect(
                ServiceEndpoint::parse(endpoint)?,
                tag.clone().unwrap_or_else(|| format!("service:{endpoint}")),
                pool_size,
                64,
            )?),
        })
    }
}

impl std::fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProviderSpec::Test { dimension, seed } => write!(f, "test:{dimension}:{seed}"),
            ProviderSpec::File(p) => write!(f, "file:{p}"),
            ProviderSpec::Service {
                endpoint,
                tag: None,
            } => write!(f, "service:{endpoint}"),
            ProviderSpec::Service {
                endpoint,
                tag: Some(t),
            } => write!(f, "service:{endpoint}#{t}"),
        }
    }
}

impl TryFrom<String> for ProviderSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ProviderSpec::parse(&s)
    }
}

impl From<ProviderSpec> for String {
    fn from(p: ProviderSpec) -> String {
        p.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cos(a: &str, b: &str) -> f64 {
        test_embed(a, 64, 0)
            .unwrap()
            .dot(&test_embed(b, 64, 0).unwrap())
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = cosine_similarity(&[1.0, 0.0], &[s, s]).unwrap();
        assert!((c - 2f64.sqrt() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn test_embed_is_deterministic_and_unit() {
        assert_eq!(
            test_embed("Tokyo", 32, 1).unwrap(),
            test_embed("Tokyo", 32, 1).unwrap()
        );
        assert_ne!(
            test_embed("Tokyo", 32, 1).unwrap(),
            test_embed("Tokyo", 32, 2).unwrap()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let len = rng.gen_range(1..30);
            let s: String = (0..len).map(|_| rng.gen_range('!'..='~')).collect();
            let v = test_embed(&s, 48, 9).unwrap();
            assert!((l2_norm(v.values()) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn test_embed_pinned_values() {
        // Guards against silent changes to the hashing scheme.
        let v = test_embed("Tokyo", 8, 0).unwrap();
        let expected = EmbeddingVector::normalized(pinned_counts("Tokyo", 8, 0)).unwrap();
        assert_eq!(v, expected);
    }

    // Independent re-derivation of the bucket counts.
    fn pinned_counts(text: &str, dim: usize, seed: u64) -> Vec<f64> {
        let padded: Vec<char> = format!("\u{2}{text}\u{3}").chars().collect();
        let mut v = vec![0.0; dim];
        for n in 1..=3 {
            for i in 0..=padded.len().saturating_sub(n) {
                let g: String = padded[i..i + n].iter().collect();
                let h = fnv1a(seed, g.as_bytes());
                v[(h % dim as u64) as usize] += if h >> 63 == 0 { 1.0 } else { -1.0 };
            }
        }
        v
    }

    #[test]
    fn similar_strings_score_higher() {
        assert!(cos("Istanbul", "istanbul, turkey") > cos("Istanbul", "Lima, Peru"));
    }

    #[test]
    fn empty_string_embeds_to_fixed_vector() {
        let a = test_embed("", 16, 3).unwrap();
        assert_eq!(a, test_embed("", 16, 3).unwrap());
        assert!((l2_norm(a.values()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_dimension_rejected() {
        assert!(test_embed("x", 7, 0).is_err());
        assert!(TestEmbedder::new(4, 0).is_err());
    }

    #[test]
    fn embed_batch_duplicates() {
        let p = TestEmbedder::new(16, 0).unwrap();
        let out = p.embed_batch(&["a", "a"]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn file_store_normalizes_and_reports_missing() {
        let mut store = FileStore::new(2, "fixture");
        store.insert("x", vec![3.0, 4.0]).unwrap();
        let out = store.embed_batch(&["x"]).unwrap();
        assert_eq!(out[0].values(), &[0.6, 0.8]);
        match store.embed_batch(&["x", "y"]) {
            Err(Error::MissingVector { text, .. }) => assert_eq!(text, "y"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_store_rejects_zero_vector() {
        let mut store = FileStore::new(2, "fixture");
        store.insert("zero", vec![0.0, 0.0]).unwrap();
        assert!(
            matches!(store.embed_batch(&["zero"]), Err(Error::Provider { text, .. }) if text == "zero")
        );
    }

    #[test]
    fn file_store_round_trips_through_text() {
        let p = TestEmbedder::new(12, 4).unwrap();
        let texts = ["Tokyo", "tab\there", "new\nline", "", "福島県いわき市"];
        let store = FileStore::capture(&p, &texts).unwrap();
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"dimension=12 provider=test-ngram:12:4\n"));
        let back = FileStore::read(buf.as_slice()).unwrap();
        assert_eq!(back.tag(), p.tag());
        assert_eq!(
            back.embed_batch(&texts).unwrap(),
            p.embed_batch(&texts).unwrap()
        );
    }

    #[test]
    fn file_store_bad_header() {
        assert!(FileStore::read("dim=3\n".as_bytes()).is_err());
        assert!(FileStore::read("dimension=2 provider=p\nx\t1 2 3\n".as_bytes()).is_err());
    }

    #[test]
    fn provider_spec_parsing() {
        assert_eq!(
            ProviderSpec::parse("test:64:7").unwrap(),
            ProviderSpec::Test {
                dimension: 64,
                seed: 7
            }
        );
        assert_eq!(
            ProviderSpec::parse("service:unix:/tmp/s.sock#minilm").unwrap(),
            ProviderSpec::Service {
                endpoint: "unix:/tmp/s.sock".into(),
                tag: Some("minilm".into())
            }
        );
        for s in ["test:64:7", "file:/x/y.vec", "service:cmd:python serve.py"] {
            assert_eq!(ProviderSpec::parse(s).unwrap().to_string(), s);
        }
        assert!(ProviderSpec::parse("bogus").is_err());
        assert!(ProviderSpec::parse("service:http://x").is_err());
    }

    fn arb_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim).prop_filter("non-zero", |v| l2_norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_bounded_scale_invariant(a in arb_vec(6), b in arb_vec(6), alpha in 0.01f64..100.0) {
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert!((ab - cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-9);
            let scaled: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            prop_assert!((cosine_similarity(&scaled, &b).unwrap() - ab).abs() < 1e-9);
        }

        #[test]
        fn batch_is_bitwise_deterministic(texts in prop::collection::vec(".{0,12}", 1..10)) {
            let p = TestEmbedder::new(16, 1).unwrap();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            prop_assert_eq!(p.embed_batch(&refs).unwrap(), p.embed_batch(&refs).unwrap());
        }
    }
}
