use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{
    BatchReply, BatchRequest, DenoiseBody, DenoiseReply, DescriptorReply, ErrorReply, GenerateBody,
    GenerateReply, PROTOCOL_VERSION,
};
use crate::backend::{Backend, BackendDescriptor, DenoiseRequest, GenerationRequest, GenerationResult};
use crate::error::{Error, Result};
use crate::imaging::TensorBuffer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    /// Concurrent HTTP requests allowed from one client.
    pub max_in_flight: usize,
    /// Extra attempts after a transport failure.
    pub retry_limit: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_ms: 60_000,
            max_in_flight: 4,
            retry_limit: 2,
        }
    }
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig { base_url: base_url.into(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::InvalidConfig(format!("base_url {:?} is not an http URL", self.base_url)));
        }
        Ok(())
    }
}

/// Counting semaphore bounding requests in flight.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Backend served over HTTP. The descriptor, including the full noise
/// schedule, is fetched once at connect time.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    descriptor: BackendDescriptor,
    gate: Gate,
}

impl RemoteBackend {
    pub fn connect(cfg: RemoteConfig) -> Result<Self> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut backend = RemoteBackend {
            gate: Gate::new(cfg.max_in_flight),
            cfg,
            agent,
            descriptor: BackendDescriptor {
                name: String::new(),
                working_shape: vec![],
                schedule: Default::default(),
                supports_batching: true,
            },
        };
        let reply: DescriptorReply = backend.call("GET", "/v1/descriptor", None)?;
        backend.descriptor = reply.to_descriptor()?;
        log::info!(
            "connected to {} ({}, shape {:?}, T = {})",
            backend.cfg.base_url,
            backend.descriptor.name,
            backend.descriptor.working_shape,
            backend.descriptor.schedule.t_total()
        );
        Ok(backend)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// `GET /v1/health`; true when the server reports ready.
    pub fn health(&self) -> Result<bool> {
        match self.call::<serde_json::Value>("GET", "/v1/health", None) {
            Ok(_) => Ok(true),
            Err(Error::ServerError { status: 503, .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    /// One request with transport-level retries. Any HTTP response, error
    /// status included, ends the attempt loop.
    fn call<T: DeserializeOwned>(&self, method: &str, path: &str, body: Option<&[u8]>) -> Result<T> {
        let url = self.url(path);
        let _permit = self.gate.acquire();
        let mut last = String::new();
        for attempt in 0..=self.cfg.retry_limit {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                log::debug!("retrying {method} {url} (attempt {})", attempt + 1);
            }
            let sent = match (method, body) {
                ("GET", _) => self.agent.get(&url).call(),
                (_, Some(b)) => self.agent.post(&url).header("content-type", "application/json").send(b),
                (_, None) => self.agent.post(&url).send_empty(),
            };
            let mut resp = match sent {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = match resp.body_mut().with_config().limit(u64::MAX).read_to_string() {
                Ok(t) => t,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            if status != 200 {
                let message = serde_json::from_str::<ErrorReply>(&text)
                    .map(|e| e.error)
                    .unwrap_or(text);
                return Err(Error::ServerError { status, message });
            }
            return serde_json::from_str(&text)
                .map_err(|e| Error::ProtocolMismatch(format!("{path}: undecodable reply: {e}")));
        }
        Err(Error::Unreachable(format!(
            "{url} after {} attempts: {last}",
            self.cfg.retry_limit + 1
        )))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let bytes = serde_json::to_vec(body)?;
        self.call("POST", path, Some(&bytes))
    }

    fn checked(&self, t: TensorBuffer) -> Result<TensorBuffer> {
        t.ensure_shape(&self.descriptor.working_shape).map_err(|e| {
            Error::ProtocolMismatch(format!("server returned a tensor of the wrong shape: {e}"))
        })?;
        Ok(t)
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<GenerationResult> {
        req.validate()?;
        let reply: GenerateReply = self.post("/v1/generate", &GenerateBody::from_request(req)?)?;
        let mut out = reply.to_result()?;
        out.encoding = self.checked(out.encoding)?;
        Ok(out)
    }

    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<TensorBuffer> {
        req.validate(&self.descriptor)?;
        let body = DenoiseBody::from_request(req, req.cond.to_png_b64()?);
        let reply: DenoiseReply = self.post("/v1/denoise", &body)?;
        self.checked(reply.epsilon.to_tensor()?)
    }

    fn denoise_batch(&self, reqs: &[DenoiseRequest<'_>]) -> Result<Vec<TensorBuffer>> {
        if reqs.is_empty() {
            return Ok(vec![]);
        }
        // Scoring batches share one conditioning image; encode it once.
        let mut pngs: HashMap<*const crate::imaging::ImageBuffer, String> = HashMap::new();
        let mut items = Vec::with_capacity(reqs.len());
        for r in reqs {
            r.validate(&self.descriptor)?;
            let key = r.cond as *const _;
            let png = match pngs.get(&key) {
                Some(p) => p.clone(),
                None => {
                    let p = r.cond.to_png_b64()?;
                    pngs.insert(key, p.clone());
                    p
                }
            };
            items.push(DenoiseBody::from_request(r, png));
        }
        let reply: BatchReply = self.post(
            "/v1/denoise_batch",
            &BatchRequest { version: PROTOCOL_VERSION, items },
        )?;
        if reply.items.len() != reqs.len() {
            return Err(Error::ProtocolMismatch(format!(
                "batch of {} answered with {} items",
                reqs.len(),
                reply.items.len()
            )));
        }
        let mut out = Vec::with_capacity(reqs.len());
        let mut failures: Vec<Option<String>> = Vec::with_capacity(reqs.len());
        for item in reply.items {
            let decoded = match (item.ok, item.epsilon) {
                (true, Some(eps)) => eps.to_tensor().and_then(|t| self.checked(t)),
                (true, None) => Err(Error::ProtocolMismatch("ok item without epsilon".into())),
                (false, _) => Err(Error::ServerError {
                    status: 200,
                    message: item.error.unwrap_or_else(|| "unspecified failure".into()),
                }),
            };
            match decoded {
                Ok(t) => {
                    failures.push(None);
                    out.push(t);
                }
                Err(e) => failures.push(Some(e.to_string())),
            }
        }
        if failures.iter().any(Option::is_some) {
            return Err(Error::PartialFailure { items: failures });
        }
        Ok(out)
    }
}
