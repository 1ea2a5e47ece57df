//! Client for the backend HTTP protocol (see [`super::protocol`]).

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::{BinaryMask, RasterImage};
use crate::seed::{hash_str, mix64};
use crate::vocab::Category;

use super::protocol::{
    decode_mask, decode_raster, encode_mask, encode_raster, CapabilitiesResponse, EmbedRequest,
    EmbedResponse, ErrorEnvelope, GenerateRequest, ImageResponse, InpaintRequest, SegmentRequest,
    SegmentResponse, WireEmbedItem, FORMAT_VERSION, REQUEST_ID_HEADER,
};
use super::{Backend, CapabilitySet, EmbedItem, GenerationRequest, SegmentationResult};

pub const MAX_ATTEMPTS: u32 = 3;
const BACKOFF_BASE: Duration = Duration::from_millis(100);

pub struct HttpBackend {
    base: String,
    client: reqwest::blocking::Client,
    nonce: u64,
    counter: AtomicU64,
    caps: OnceLock<CapabilitySet>,
    backoff: Duration,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base", &self.base)
            .finish()
    }
}

/// Responses that carry the echoed request id.
trait Echo {
    fn request_id(&self) -> &str;
}

macro_rules! echo {
    ($($t:ty),*) => {$(
        impl Echo for $t {
            fn request_id(&self) -> &str { &self.request_id }
        }
    )*};
}
echo!(
    CapabilitiesResponse,
    ImageResponse,
    SegmentResponse,
    EmbedResponse
);

impl HttpBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            base: endpoint.trim_end_matches('/').to_string(),
            client,
            nonce: mix64(hash_str(endpoint) ^ std::process::id() as u64),
            counter: AtomicU64::new(0),
            caps: OnceLock::new(),
            backoff: BACKOFF_BASE,
        })
    }

    /// Shorten the retry backoff (tests).
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn next_request_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("{:016x}-{n}", self.nonce)
    }

    fn send_with_retry<F>(&self, build: F) -> Result<reqwest::blocking::Response>
    where
        F: Fn() -> reqwest::blocking::RequestBuilder,
    {
        let mut last = None;
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match build().send() {
                Ok(resp) => return Ok(resp),
                // Only transport failures are retried; a backend that answered
                // with an error is never asked again.
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Transport(format!(
            "{} after {MAX_ATTEMPTS} attempts: {}",
            self.base,
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    fn finish<R: DeserializeOwned + Echo>(
        &self,
        resp: reqwest::blocking::Response,
        request_id: &str,
    ) -> Result<R> {
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(match serde_json::from_slice::<ErrorEnvelope>(&bytes) {
                Ok(env) => Error::Backend(format!(
                    "{} ({}): {}{}",
                    env.error.code,
                    status.as_u16(),
                    env.error.message,
                    env.error
                        .failed_step
                        .map(|s| format!(" [failed step {s}]"))
                        .unwrap_or_default()
                )),
                Err(_) => Error::Backend(format!("HTTP {}", status.as_u16())),
            });
        }
        let parsed: R = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        if parsed.request_id() != request_id {
            return Err(Error::Protocol(format!(
                "response request_id `{}` does not match `{request_id}`",
                parsed.request_id()
            )));
        }
        Ok(parsed)
    }

    fn post<Q: Serialize, R: DeserializeOwned + Echo>(
        &self,
        path: &str,
        request_id: &str,
        body: &Q,
    ) -> Result<R> {
        let url = format!("{}{path}", self.base);
        let payload = serde_json::to_vec(body)?;
        let resp = self.send_with_retry(|| {
            self.client
                .post(&url)
                .header("content-type", "application/json")
                .header(REQUEST_ID_HEADER, request_id)
                .body(payload.clone())
        })?;
        self.finish(resp, request_id)
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn capabilities(&self) -> Result<CapabilitySet> {
        if let Some(c) = self.caps.get() {
            return Ok(*c);
        }
        let rid = self.next_request_id();
        let url = format!("{}/v1/capabilities", self.base);
        let resp =
            self.send_with_retry(|| self.client.get(&url).header(REQUEST_ID_HEADER, &rid))?;
        let parsed: CapabilitiesResponse = self.finish(resp, &rid)?;
        if parsed.format_version != FORMAT_VERSION {
            return Err(Error::Protocol(format!(
                "server speaks format_version {}",
                parsed.format_version
            )));
        }
        Ok(*self.caps.get_or_init(|| parsed.capabilities))
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RasterImage> {
        let rid = self.next_request_id();
        let body = GenerateRequest {
            format_version: FORMAT_VERSION,
            request_id: rid.clone(),
            prompt: request.prompt.clone(),
            seed: request.seed,
            width: request.width,
            height: request.height,
        };
        let resp: ImageResponse = self.post("/v1/generate", &rid, &body)?;
        decode_raster(&resp.image)
    }

    fn segment(&self, image: &RasterImage, category: &Category) -> Result<SegmentationResult> {
        let rid = self.next_request_id();
        let body = SegmentRequest {
            format_version: FORMAT_VERSION,
            request_id: rid.clone(),
            image: encode_raster(image)?,
            category: category.to_string(),
        };
        let resp: SegmentResponse = self.post("/v1/segment", &rid, &body)?;
        Ok(SegmentationResult {
            mask: decode_mask(&resp.mask)?,
            bbox: resp.bbox,
            confidence: resp.confidence,
        })
    }

    fn inpaint(
        &self,
        image: &RasterImage,
        mask: &BinaryMask,
        prompt: &str,
        seed: u64,
    ) -> Result<RasterImage> {
        let rid = self.next_request_id();
        let body = InpaintRequest {
            format_version: FORMAT_VERSION,
            request_id: rid.clone(),
            image: encode_raster(image)?,
            mask: encode_mask(mask)?,
            prompt: prompt.to_string(),
            seed,
        };
        let resp: ImageResponse = self.post("/v1/inpaint", &rid, &body)?;
        decode_raster(&resp.image)
    }

    fn embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f32>>> {
        let rid = self.next_request_id();
        let body = EmbedRequest {
            format_version: FORMAT_VERSION,
            request_id: rid.clone(),
            items: items
                .iter()
                .map(WireEmbedItem::from_item)
                .collect::<Result<_>>()?,
        };
        let resp: EmbedResponse = self.post("/v1/embed", &rid, &body)?;
        if resp.embeddings.iter().any(|e| e.len() != resp.dim) {
            return Err(Error::Protocol(
                "embedding length disagrees with `dim`".into(),
            ));
        }
        Ok(resp.embeddings)
    }
}
