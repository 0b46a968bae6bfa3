use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, GenerationRequest, GenerationResponse};

/// One line of the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub digest: String,
    pub model: String,
    pub request: GenerationRequest,
    pub response: GenerationResponse,
}

/// Append-only JSONL store of backend responses keyed by request digest.
///
/// The first record for a digest wins; later duplicates in the file are
/// ignored on load.
pub struct ReplayStore {
    path: Option<PathBuf>,
    index: RwLock<HashMap<String, GenerationResponse>>,
    writer: Mutex<Option<File>>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            index: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (creating if absent) the store at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let mut index = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| store_err(&path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| store_err(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                    BackendError::Store(format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                index.entry(rec.digest).or_insert(rec.response);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| store_err(dir, e))?;
        }
        Ok(Self {
            path: Some(path),
            index: RwLock::new(index),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<GenerationResponse> {
        self.index.read().expect("store poisoned").get(digest).cloned()
    }

    /// Appends a record unless its digest is already present.
    pub fn insert(&self, model: &str, request: &GenerationRequest, response: &GenerationResponse) -> Result<String, BackendError> {
        let digest = request_digest(model, request);
        let mut writer = self.writer.lock().expect("store poisoned");
        if self.index.read().expect("store poisoned").contains_key(&digest) {
            return Ok(digest);
        }
        if let Some(path) = &self.path {
            if writer.is_none() {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| store_err(path, e))?;
                *writer = Some(f);
            }
            let rec = ReplayRecord {
                digest: digest.clone(),
                model: model.to_string(),
                request: request.clone(),
                response: response.clone(),
            };
            let mut line = serde_json::to_string(&rec).map_err(|e| BackendError::Store(e.to_string()))?;
            line.push('\n');
            let f = writer.as_mut().expect("writer opened");
            f.write_all(line.as_bytes()).map_err(|e| store_err(path, e))?;
            f.flush().map_err(|e| store_err(path, e))?;
        }
        self.index
            .write()
            .expect("store poisoned")
            .insert(digest.clone(), response.clone());
        Ok(digest)
    }
}

fn store_err(path: &Path, e: std::io::Error) -> BackendError {
    BackendError::Store(format!("{}: {e}", path.display()))
}

/// Hex sha256 over the canonical JSON of the fields that determine a response.
pub fn request_digest(model: &str, request: &GenerationRequest) -> String {
    // serde_json::json! builds a BTreeMap-backed object: keys come out sorted.
    let canonical = serde_json::json!({
        "prompt_text": request.prompt_text,
        "decode": request.decode,
        "temperature": request.temperature,
        "top_p": request.top_p,
        "n": request.n,
        "max_new_tokens": request.max_new_tokens,
        "seed": request.seed,
        "model": model,
        "call_ordinal": request.call_ordinal,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

pub enum ReplayMode {
    /// Serve hits from the store; forward misses to the inner backend and record them.
    Record(Box<dyn Backend>),
    /// Serve hits only; a miss is an error.
    Replay,
}

/// Wraps a store so that repeated runs see byte-identical responses.
pub struct ReplayBackend {
    model: String,
    store: std::sync::Arc<ReplayStore>,
    mode: ReplayMode,
}

impl ReplayBackend {
    /// `model` keys the store; in record mode it is normally the inner backend id.
    pub fn new(model: impl Into<String>, store: std::sync::Arc<ReplayStore>, mode: ReplayMode) -> Self {
        Self {
            model: model.into(),
            store,
            mode,
        }
    }

    pub fn record(inner: Box<dyn Backend>, store: std::sync::Arc<ReplayStore>) -> Self {
        let model = inner.id().to_string();
        Self::new(model, store, ReplayMode::Record(inner))
    }

    pub fn replay(model: impl Into<String>, store: std::sync::Arc<ReplayStore>) -> Self {
        Self::new(model, store, ReplayMode::Replay)
    }

    pub fn store(&self) -> &ReplayStore {
        &self.store
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        &self.model
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let digest = request_digest(&self.model, request);
        if let Some(hit) = self.store.get(&digest) {
            return Ok(hit);
        }
        match &self.mode {
            ReplayMode::Replay => Err(BackendError::ReplayMiss(digest)),
            ReplayMode::Record(inner) => {
                let response = inner.generate(request)?;
                response.check(request)?;
                self.store.insert(&self.model, request, &response)?;
                log::debug!("recorded response {digest}");
                Ok(response)
            }
        }
    }
}
