//! Content-addressed response caches, persisted as versioned JSON lines so a
//! rerun can skip provider calls for work already done.
//!
//! Embedding cache lines:
//! `{"v":1,"kind":"vector","model_id":..,"hash":..,"vector":[..]}` and
//! `{"v":1,"kind":"info","provider":..,"info":{..}}`.
//! Chat cache lines: `{"v":1,"model_id":..,"hash":..,"response":{..}}`.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, EmbeddingProviderInfo, ProviderError, Result,
};

const VERSION: u32 = 1;

pub(crate) fn content_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

struct Appender(Mutex<Option<BufWriter<File>>>);

impl Appender {
    fn open(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(io_err(p))?;
                }
                Some(BufWriter::new(
                    OpenOptions::new().create(true).append(true).open(p).map_err(io_err(p))?,
                ))
            }
            None => None,
        };
        Ok(Self(Mutex::new(file)))
    }

    fn append<T: Serialize>(&self, records: &[T]) {
        let mut guard = self.0.lock().expect("cache writer poisoned");
        let Some(w) = guard.as_mut() else { return };
        let result = records
            .iter()
            .try_for_each(|r| {
                serde_json::to_writer(&mut *w, r).map_err(std::io::Error::from)?;
                w.write_all(b"\n")
            })
            .and_then(|()| w.flush());
        if let Err(e) = result {
            warn!("cache write failed: {e}");
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ProviderError + '_ {
    move |e| ProviderError::Unavailable(format!("cache file {}: {e}", path.display()))
}

fn load_lines<T: DeserializeOwned>(path: Option<&Path>) -> Result<Vec<T>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(r) => out.push(r),
            Err(e) => warn!("{}:{}: ignoring bad cache line: {e}", path.display(), n + 1),
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EmbedLine {
    Info {
        v: u32,
        provider: String,
        info: EmbeddingProviderInfo,
    },
    Vector {
        v: u32,
        model_id: String,
        hash: String,
        vector: Vec<f64>,
    },
}

/// Embedding provider wrapper keyed by `(model_id, sha256(text))`.
pub struct CachedEmbedder<P> {
    inner: P,
    provider_label: String,
    info: Mutex<Option<EmbeddingProviderInfo>>,
    vectors: Mutex<HashMap<(String, String), Vec<f64>>>,
    writer: Appender,
    misses: AtomicUsize,
}

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    /// `provider_label` identifies the backend (endpoint URL, mock seed) so a
    /// cached `/info` is only reused for the same backend.
    pub fn open(inner: P, path: Option<&Path>, provider_label: impl Into<String>) -> Result<Self> {
        let provider_label = provider_label.into();
        let mut info = None;
        let mut vectors = HashMap::new();
        for line in load_lines::<EmbedLine>(path)? {
            match line {
                EmbedLine::Info { v, provider, info: i } if v == VERSION && provider == provider_label => {
                    info = Some(i)
                }
                EmbedLine::Vector {
                    v,
                    model_id,
                    hash,
                    vector,
                } if v == VERSION => {
                    vectors.insert((model_id, hash), vector);
                }
                _ => {}
            }
        }
        Ok(Self {
            inner,
            provider_label,
            info: Mutex::new(info),
            vectors: Mutex::new(vectors),
            writer: Appender::open(path)?,
            misses: AtomicUsize::new(0),
        })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// Texts that had to be sent to the wrapped provider.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn info(&self) -> Result<EmbeddingProviderInfo> {
        let mut guard = self.info.lock().expect("cache poisoned");
        if let Some(info) = guard.as_ref() {
            return Ok(info.clone());
        }
        let info = self.inner.info()?;
        self.writer.append(&[EmbedLine::Info {
            v: VERSION,
            provider: self.provider_label.clone(),
            info: info.clone(),
        }]);
        *guard = Some(info.clone());
        Ok(info)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let model_id = self.info()?.model_id;
        let keys: Vec<(String, String)> = texts
            .iter()
            .map(|t| (model_id.clone(), content_hash(&[t])))
            .collect();

        let mut out: Vec<Option<Vec<f64>>> = {
            let map = self.vectors.lock().expect("cache poisoned");
            keys.iter().map(|k| map.get(k).cloned()).collect()
        };
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if missing.is_empty() {
            return Ok(out.into_iter().map(Option::unwrap).collect());
        }

        let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
        let fresh = self.inner.embed_batch(&batch)?;
        if fresh.len() != batch.len() {
            return Err(ProviderError::BadResponse(format!(
                "{} vectors for {} texts",
                fresh.len(),
                batch.len()
            )));
        }
        self.misses.fetch_add(batch.len(), Ordering::SeqCst);

        let mut lines = Vec::with_capacity(fresh.len());
        {
            let mut map = self.vectors.lock().expect("cache poisoned");
            for (&i, v) in missing.iter().zip(fresh) {
                map.insert(keys[i].clone(), v.clone());
                lines.push(EmbedLine::Vector {
                    v: VERSION,
                    model_id: keys[i].0.clone(),
                    hash: keys[i].1.clone(),
                    vector: v.clone(),
                });
                out[i] = Some(v);
            }
        }
        self.writer.append(&lines);
        Ok(out.into_iter().map(Option::unwrap).collect())
    }

    fn count_tokens(&self, text: &str) -> usize {
        self.inner.count_tokens(text)
    }
}

#[derive(Serialize, Deserialize)]
struct ChatLine {
    v: u32,
    model_id: String,
    hash: String,
    response: ChatResponse,
}

/// Chat provider wrapper keyed by the full request. Cached responses replay
/// their original token usage so cost accounting is stable across reruns.
pub struct CachedChat<P> {
    inner: P,
    entries: Mutex<HashMap<String, ChatResponse>>,
    writer: Appender,
    misses: AtomicUsize,
}

fn request_hash(r: &ChatRequest) -> String {
    content_hash(&[
        &r.model_id,
        &r.prompt,
        &r.temperature.to_string(),
        &r.max_output_tokens.to_string(),
    ])
}

impl<P: ChatProvider> CachedChat<P> {
    pub fn open(inner: P, path: Option<&Path>) -> Result<Self> {
        let entries = load_lines::<ChatLine>(path)?
            .into_iter()
            .filter(|l| l.v == VERSION)
            .map(|l| (l.hash, l.response))
            .collect();
        Ok(Self {
            inner,
            entries: Mutex::new(entries),
            writer: Appender::open(path)?,
            misses: AtomicUsize::new(0),
        })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }
}

impl<P: ChatProvider> ChatProvider for CachedChat<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let hash = request_hash(request);
        if let Some(r) = self.entries.lock().expect("cache poisoned").get(&hash) {
            return Ok(r.clone());
        }
        let response = self.inner.complete(request)?;
        self.misses.fetch_add(1, Ordering::SeqCst);
        self.entries
            .lock()
            .expect("cache poisoned")
            .insert(hash.clone(), response.clone());
        self.writer.append(&[ChatLine {
            v: VERSION,
            model_id: request.model_id.clone(),
            hash,
            response: response.clone(),
        }]);
        Ok(response)
    }
}
