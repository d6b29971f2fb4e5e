//! Localization and verification providers.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::mapping::{heuristic_localize_numbered, json_objects, lcs_ratio, serialize_mapping, similarity_tokens};
use super::prompt::{Prompt, TemplateId};
use super::LocalizeError;
use crate::source::PATCH_MARKER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Remote,
    Replay,
    Heuristic,
}

impl fmt::Display for ProviderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderMode::Remote => "remote",
            ProviderMode::Replay => "replay",
            ProviderMode::Heuristic => "heuristic",
        })
    }
}

impl std::str::FromStr for ProviderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "remote" => Ok(ProviderMode::Remote),
            "replay" => Ok(ProviderMode::Replay),
            "heuristic" => Ok(ProviderMode::Heuristic),
            other => Err(format!("unknown provider mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub mode: ProviderMode,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    /// Directory of `<sha256>.txt` responses for replay mode.
    pub replay_dir: Option<PathBuf>,
    /// Context budget in model tokens.
    pub context_tokens: usize,
    /// Model tokens assumed per lexer token.
    pub token_safety_factor: f64,
    pub request_timeout_secs: u64,
    pub retry_backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o".into(),
            temperature: 1.0,
            max_retries: 3,
            mode: ProviderMode::Heuristic,
            api_key_env: "PATCHPROBE_API_KEY".into(),
            replay_dir: None,
            context_tokens: 32_000,
            token_safety_factor: 2.0,
            request_timeout_secs: 120,
            retry_backoff_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=2.0).contains(&self.temperature) || self.temperature.is_nan() {
            return Err(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.mode == ProviderMode::Replay && self.replay_dir.is_none() {
            return Err("replay mode needs replay_dir".into());
        }
        if self.mode == ProviderMode::Remote && self.endpoint.is_empty() {
            return Err("remote mode needs an endpoint".into());
        }
        if self.token_safety_factor <= 0.0 {
            return Err("token_safety_factor must be positive".into());
        }
        Ok(())
    }
}

/// Stable replay key for a prompt.
pub fn prompt_hash(rendered: &str) -> String {
    let digest = Sha256::digest(rendered.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &Prompt) -> Result<String, LocalizeError>;
}

pub fn make_provider(cfg: &ProviderConfig) -> Result<Box<dyn Provider>, String> {
    cfg.validate()?;
    Ok(match cfg.mode {
        ProviderMode::Remote => Box::new(RemoteProvider::new(cfg.clone())),
        ProviderMode::Replay => Box::new(ReplayProvider::new(cfg.replay_dir.clone().unwrap_or_default())),
        ProviderMode::Heuristic => Box::new(HeuristicProvider),
    })
}

/// Chat-completion style HTTP endpoint.
pub struct RemoteProvider {
    cfg: ProviderConfig,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(cfg: ProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.request_timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        RemoteProvider { cfg, agent }
    }

    fn once(&self, body: &str) -> Result<String, (bool, LocalizeError)> {
        let mut req = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| (true, LocalizeError::TransportError(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, LocalizeError::TransportError(e.to_string())))?;
        match status {
            200..=299 => Ok(extract_content(&text)),
            429 => Err((true, LocalizeError::RateLimited(format!("http 429 from {}", self.cfg.endpoint)))),
            500..=599 => Err((true, LocalizeError::TransportError(format!("http {status}")))),
            _ => Err((false, LocalizeError::TransportError(format!("http {status}: {}", text.trim())))),
        }
    }
}

/// Message text from common chat-completion response shapes.
fn extract_content(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return body.to_string();
    };
    let candidates = [
        v.pointer("/choices/0/message/content"),
        v.pointer("/content/0/text"),
        v.pointer("/output_text"),
        v.pointer("/message/content"),
    ];
    let found = candidates
        .into_iter()
        .flatten()
        .find_map(|c| c.as_str().map(str::to_string));
    found.unwrap_or_else(|| body.to_string())
}

impl Provider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LocalizeError> {
        let body = json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt.rendered_text}],
        })
        .to_string();
        let mut attempt = 0;
        loop {
            match self.once(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, e)) => {
                    if !retryable || attempt >= self.cfg.max_retries {
                        return Err(e);
                    }
                    log::warn!("provider request failed ({e}); retrying");
                    let wait = self.cfg.retry_backoff_ms.saturating_mul(1 << attempt.min(6));
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
            }
        }
    }
}

/// Canned responses keyed by the SHA-256 of the rendered prompt.
pub struct ReplayProvider {
    dir: PathBuf,
}

impl ReplayProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayProvider { dir: dir.into() }
    }

    pub fn path_for(&self, prompt: &Prompt) -> PathBuf {
        self.dir.join(format!("{}.txt", prompt_hash(&prompt.rendered_text)))
    }
}

impl Provider for ReplayProvider {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LocalizeError> {
        let path = self.path_for(prompt);
        std::fs::read_to_string(&path).map_err(|_| LocalizeError::ReplayMiss(prompt_hash(&prompt.rendered_text)))
    }
}

/// Offline provider: token-LCS matching for localization prompts and a
/// match-quality comparison for verification prompts.
pub struct HeuristicProvider;

/// `N: text` lines of a numbered listing; the marker flag is set when the
/// text ends with the patch marker.
pub fn numbered_lines(block: &str) -> Vec<(usize, String, bool)> {
    block
        .lines()
        .filter_map(|l| {
            let (n, rest) = l.split_once(':')?;
            let n: usize = n.trim().parse().ok()?;
            let text = rest.strip_prefix(' ').unwrap_or(rest);
            let trimmed = text.trim_end();
            match trimmed.strip_suffix(PATCH_MARKER) {
                Some(t) => Some((n, t.trim_end().to_string(), true)),
                None => Some((n, text.to_string(), false)),
            }
        })
        .collect()
}

fn localize_blocks(query_block: &str, corpus_block: &str) -> String {
    let q = numbered_lines(query_block);
    let c = numbered_lines(corpus_block);
    let query: Vec<(usize, &str)> = q.iter().filter(|l| l.2).map(|l| (l.0, l.1.as_str())).collect();
    let corpus: Vec<(usize, &str)> = c.iter().map(|l| (l.0, l.1.as_str())).collect();
    serialize_mapping(&heuristic_localize_numbered(&query, &corpus))
}

struct Scored {
    key: String,
    ratio: f64,
}

fn scored_lines(result: &Value) -> Vec<Scored> {
    let mut out = Vec::new();
    if let Some(m) = result.get("matches").and_then(Value::as_array) {
        for e in m {
            let src = e.get("source").and_then(Value::as_str).unwrap_or("");
            let best = e
                .get("pseudo")
                .and_then(Value::as_array)
                .map(|ps| {
                    ps.iter()
                        .filter_map(Value::as_str)
                        .map(|p| lcs_ratio(src, p))
                        .fold(0.0, f64::max)
                })
                .unwrap_or(0.0);
            out.push(Scored { key: similarity_tokens(src).join(" "), ratio: best });
        }
    }
    if let Some(u) = result.get("unmatched").and_then(Value::as_array) {
        for e in u {
            let src = e.get("source").and_then(Value::as_str).unwrap_or("");
            out.push(Scored { key: similarity_tokens(src).join(" "), ratio: 0.0 });
        }
    }
    out.retain(|s| !s.key.is_empty());
    out
}

/// Mean match ratio over lines not shared with the other version.
fn unique_score(mine: &[Scored], other: &[Scored]) -> Option<f64> {
    let uniq: Vec<f64> = mine
        .iter()
        .filter(|s| !other.iter().any(|o| o.key == s.key))
        .map(|s| s.ratio)
        .collect();
    (!uniq.is_empty()).then(|| uniq.iter().sum::<f64>() / uniq.len() as f64)
}

pub const HEURISTIC_VERIFY_THRESHOLD: f64 = 0.6;

fn verify_blocks(patch_json: &str, vul_json: &str) -> String {
    let parse = |s: &str| json_objects(s).next().unwrap_or(Value::Null);
    let p = scored_lines(&parse(patch_json));
    let v = scored_lines(&parse(vul_json));
    let (sp, sv) = (unique_score(&p, &v), unique_score(&v, &p));
    let version = match (sp, sv) {
        (Some(a), Some(b)) if (a - b).abs() > 1e-9 => {
            if a > b { "patched" } else { "pre-patch" }
        }
        (Some(a), None) => {
            if a >= HEURISTIC_VERIFY_THRESHOLD { "patched" } else { "pre-patch" }
        }
        (None, Some(b)) => {
            if b >= HEURISTIC_VERIFY_THRESHOLD { "pre-patch" } else { "patched" }
        }
        _ => "undecided",
    };
    json!({
        "version": version,
        "reason": format!("unique-line match quality patched={sp:?} pre-patch={sv:?}"),
    })
    .to_string()
}

impl Provider for HeuristicProvider {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LocalizeError> {
        let get = |k: &str| prompt.placeholder(k).unwrap_or("");
        Ok(match prompt.template_id {
            TemplateId::Localization => localize_blocks(get("source_code"), get("pseudo_code")),
            TemplateId::ReverseLocalization => localize_blocks(get("pseudo_code"), get("source_code")),
            TemplateId::Verification => verify_blocks(get("patch_result_json"), get("vul_result_json")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub template_id: TemplateId,
    pub prompt_sha256: String,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Counts traffic and keeps a transcript for one case.
pub struct AuditProvider<'a> {
    inner: &'a dyn Provider,
    prompts: AtomicUsize,
    responses: AtomicUsize,
    log: Mutex<Vec<AuditEntry>>,
}

impl<'a> AuditProvider<'a> {
    pub fn new(inner: &'a dyn Provider) -> Self {
        AuditProvider {
            inner,
            prompts: AtomicUsize::new(0),
            responses: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> usize {
        self.prompts.load(Ordering::Relaxed)
    }

    pub fn responses(&self) -> usize {
        self.responses.load(Ordering::Relaxed)
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.log.lock().map(|l| l.clone()).unwrap_or_default()
    }
}

impl Provider for AuditProvider<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LocalizeError> {
        self.prompts.fetch_add(1, Ordering::Relaxed);
        let r = self.inner.complete(prompt);
        if r.is_ok() {
            self.responses.fetch_add(1, Ordering::Relaxed);
        }
        if let Ok(mut log) = self.log.lock() {
            log.push(AuditEntry {
                template_id: prompt.template_id,
                prompt_sha256: prompt_hash(&prompt.rendered_text),
                prompt: prompt.rendered_text.clone(),
                response: r.as_ref().ok().cloned(),
                error: r.as_ref().err().map(|e| e.to_string()),
            });
        }
        r
    }
}

/// Writes every successful response into a replay directory.
pub struct RecordingProvider<'a> {
    inner: &'a dyn Provider,
    dir: PathBuf,
}

impl<'a> RecordingProvider<'a> {
    pub fn new(inner: &'a dyn Provider, dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(RecordingProvider { inner, dir: dir.to_path_buf() })
    }
}

impl Provider for RecordingProvider<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LocalizeError> {
        let text = self.inner.complete(prompt)?;
        let path = self.dir.join(format!("{}.txt", prompt_hash(&prompt.rendered_text)));
        std::fs::write(&path, &text).map_err(|e| LocalizeError::TransportError(format!("{}: {e}", path.display())))?;
        Ok(text)
    }
}
