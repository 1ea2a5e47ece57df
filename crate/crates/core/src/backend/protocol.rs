//! JSON wire format of the backend HTTP protocol, version 1.
//!
//! | endpoint            | method | request             | response             |
//! |---------------------|--------|---------------------|----------------------|
//! | `/v1/capabilities`  | GET    | header `x-request-id` | [`CapabilitiesResponse`] |
//! | `/v1/generate`      | POST   | [`GenerateRequest`] | [`ImageResponse`]    |
//! | `/v1/segment`       | POST   | [`SegmentRequest`]  | [`SegmentResponse`]  |
//! | `/v1/inpaint`       | POST   | [`InpaintRequest`]  | [`ImageResponse`]    |
//! | `/v1/embed`         | POST   | [`EmbedRequest`]    | [`EmbedResponse`]    |
//!
//! Images travel as standard (padded) base64 of PNG bytes: RGBA for rasters,
//! 1-channel 0/255 for masks. Every envelope carries `format_version` and
//! echoes the caller's `request_id`. Failures use HTTP 4xx/5xx with an
//! [`ErrorEnvelope`] body.
//!
//! [`handle`] implements the server side of the protocol over any
//! [`Backend`], which is what the in-process test server wraps.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BinaryMask, PixelRect, RasterImage};
use crate::vocab::Category;

use super::{Backend, CapabilitySet, EmbedItem, GenerationRequest};

pub const FORMAT_VERSION: u32 = 1;
pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitiesResponse {
    pub format_version: u32,
    pub request_id: String,
    pub capabilities: CapabilitySet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub format_version: u32,
    pub request_id: String,
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub format_version: u32,
    pub request_id: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub format_version: u32,
    pub request_id: String,
    pub image: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub format_version: u32,
    pub request_id: String,
    pub mask: String,
    pub bbox: PixelRect,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub format_version: u32,
    pub request_id: String,
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "lowercase")]
pub enum WireEmbedItem {
    /// base64 PNG
    Image(String),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub format_version: u32,
    pub request_id: String,
    pub items: Vec<WireEmbedItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub format_version: u32,
    pub request_id: String,
    pub dim: usize,
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub failed_step: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub format_version: u32,
    pub request_id: Option<String>,
    pub error: ErrorBody,
}

pub fn encode_raster(img: &RasterImage) -> Result<String> {
    Ok(B64.encode(img.to_png()?))
}

pub fn decode_raster(s: &str) -> Result<RasterImage> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Protocol(format!("bad base64 image: {e}")))?;
    RasterImage::from_png(&bytes)
}

pub fn encode_mask(mask: &BinaryMask) -> Result<String> {
    Ok(B64.encode(mask.to_png()?))
}

pub fn decode_mask(s: &str) -> Result<BinaryMask> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Protocol(format!("bad base64 mask: {e}")))?;
    BinaryMask::from_png(&bytes)
}

impl WireEmbedItem {
    pub fn from_item(item: &EmbedItem) -> Result<Self> {
        Ok(match item {
            EmbedItem::Image(img) => WireEmbedItem::Image(encode_raster(img)?),
            EmbedItem::Text(t) => WireEmbedItem::Text(t.clone()),
        })
    }

    pub fn into_item(self) -> Result<EmbedItem> {
        Ok(match self {
            WireEmbedItem::Image(s) => EmbedItem::Image(decode_raster(&s)?),
            WireEmbedItem::Text(t) => EmbedItem::Text(t),
        })
    }
}

/// Map a library error onto an error code.
pub fn error_code(err: &Error) -> (&'static str, u16) {
    match err {
        Error::InvalidInput(_)
        | Error::UnknownCategory(_)
        | Error::Protocol(_)
        | Error::Json(_)
        | Error::Image(_) => ("bad_request", 400),
        Error::MissingCapability(_) => ("unsupported", 501),
        Error::NotFound(_) => ("not_found", 404),
        _ => ("backend_error", 500),
    }
}

/// A response produced by [`handle`].
#[derive(Debug, Clone, PartialEq)]
pub struct WireResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

fn ok_json<T: Serialize>(v: &T) -> WireResponse {
    WireResponse {
        status: 200,
        body: serde_json::to_vec(v).expect("serializable"),
    }
}

pub fn error_response(request_id: Option<String>, err: &Error) -> WireResponse {
    let (code, status) = error_code(err);
    let env = ErrorEnvelope {
        format_version: FORMAT_VERSION,
        request_id,
        error: ErrorBody {
            code: code.to_string(),
            message: err.to_string(),
            failed_step: match err {
                Error::Step { step, .. } => Some(*step as u32),
                _ => None,
            },
        },
    };
    WireResponse {
        status,
        body: serde_json::to_vec(&env).expect("serializable"),
    }
}

/// Serve one protocol request against `backend`.
pub fn handle(
    backend: &dyn Backend,
    method: &str,
    path: &str,
    header_request_id: Option<&str>,
    body: &[u8],
) -> WireResponse {
    // Pull the request id first so error envelopes can echo it.
    let body_request_id = serde_json::from_slice::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v.get("request_id")
                .and_then(|r| r.as_str())
                .map(str::to_string)
        });
    let request_id = body_request_id.or(header_request_id.map(str::to_string));
    match dispatch(backend, method, path, request_id.clone(), body) {
        Ok(resp) => resp,
        Err(e) => error_response(request_id, &e),
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Protocol(format!("unsupported format_version {v}")));
    }
    Ok(())
}

fn dispatch(
    backend: &dyn Backend,
    method: &str,
    path: &str,
    request_id: Option<String>,
    body: &[u8],
) -> Result<WireResponse> {
    let rid = || request_id.clone().unwrap_or_default();
    match (method, path) {
        ("GET", "/v1/capabilities") => Ok(ok_json(&CapabilitiesResponse {
            format_version: FORMAT_VERSION,
            request_id: rid(),
            capabilities: backend.capabilities()?,
        })),
        ("POST", "/v1/generate") => {
            let req: GenerateRequest = serde_json::from_slice(body)?;
            check_version(req.format_version)?;
            let img = backend.generate(&GenerationRequest {
                prompt: req.prompt,
                seed: req.seed,
                width: req.width,
                height: req.height,
            })?;
            Ok(ok_json(&ImageResponse {
                format_version: FORMAT_VERSION,
                request_id: req.request_id,
                image: encode_raster(&img)?,
            }))
        }
        ("POST", "/v1/segment") => {
            let req: SegmentRequest = serde_json::from_slice(body)?;
            check_version(req.format_version)?;
            let img = decode_raster(&req.image)?;
            let res = backend.segment(&img, &Category::new(&req.category)?)?;
            Ok(ok_json(&SegmentResponse {
                format_version: FORMAT_VERSION,
                request_id: req.request_id,
                mask: encode_mask(&res.mask)?,
                bbox: res.bbox,
                confidence: res.confidence,
            }))
        }
        ("POST", "/v1/inpaint") => {
            let req: InpaintRequest = serde_json::from_slice(body)?;
            check_version(req.format_version)?;
            let img = decode_raster(&req.image)?;
            let mask = decode_mask(&req.mask)?;
            if !mask.same_dims(&img) {
                return Err(Error::InvalidInput("mask/image size mismatch".into()));
            }
            let out = backend.inpaint(&img, &mask, &req.prompt, req.seed)?;
            Ok(ok_json(&ImageResponse {
                format_version: FORMAT_VERSION,
                request_id: req.request_id,
                image: encode_raster(&out)?,
            }))
        }
        ("POST", "/v1/embed") => {
            let req: EmbedRequest = serde_json::from_slice(body)?;
            check_version(req.format_version)?;
            if req.items.is_empty() {
                return Err(Error::InvalidInput("embed batch is empty".into()));
            }
            let items = req
                .items
                .into_iter()
                .map(WireEmbedItem::into_item)
                .collect::<Result<Vec<_>>>()?;
            let embeddings = backend.embed(&items)?;
            Ok(ok_json(&EmbedResponse {
                format_version: FORMAT_VERSION,
                request_id: req.request_id,
                dim: embeddings.first().map_or(0, Vec::len),
                embeddings,
            }))
        }
        _ => Ok(WireResponse {
            status: 404,
            body: serde_json::to_vec(&ErrorEnvelope {
                format_version: FORMAT_VERSION,
                request_id,
                error: ErrorBody {
                    code: "not_found".into(),
                    message: format!("no route for {method} {path}"),
                    failed_step: None,
                },
            })?,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ProceduralBackend;

    #[test]
    fn generate_round_trip_through_handler() {
        let b = ProceduralBackend::new();
        let req = GenerateRequest {
            format_version: 1,
            request_id: "r1".into(),
            prompt: "a photo of a single and fully visible dog".into(),
            seed: 7,
            width: 16,
            height: 16,
        };
        let resp = handle(
            &b,
            "POST",
            "/v1/generate",
            None,
            &serde_json::to_vec(&req).unwrap(),
        );
        assert_eq!(resp.status, 200);
        let body: ImageResponse = serde_json::from_slice(&resp.body).unwrap();
        assert_eq!(body.request_id, "r1");
        let img = decode_raster(&body.image).unwrap();
        assert_eq!((img.width(), img.height()), (16, 16));
    }

    #[test]
    fn malformed_base64_is_a_400_envelope() {
        let b = ProceduralBackend::new();
        let body = serde_json::json!({
            "format_version": 1, "request_id": "r9", "image": "!!!", "mask": "!!!",
            "prompt": "x", "seed": 1
        });
        let resp = handle(&b, "POST", "/v1/inpaint", None, body.to_string().as_bytes());
        assert_eq!(resp.status, 400);
        let env: ErrorEnvelope = serde_json::from_slice(&resp.body).unwrap();
        assert_eq!(env.error.code, "bad_request");
        assert_eq!(env.request_id.as_deref(), Some("r9"));
    }

    #[test]
    fn capability_request_echoes_header_id() {
        let b = ProceduralBackend::new();
        let resp = handle(&b, "GET", "/v1/capabilities", Some("abc"), b"");
        let body: CapabilitiesResponse = serde_json::from_slice(&resp.body).unwrap();
        assert_eq!(body.request_id, "abc");
        assert_eq!(body.capabilities, CapabilitySet::ALL);
    }

    #[test]
    fn wire_field_names_are_stable() {
        let v = serde_json::to_value(EmbedRequest {
            format_version: 1,
            request_id: "x".into(),
            items: vec![WireEmbedItem::Text("hi".into())],
        })
        .unwrap();
        assert_eq!(
            v,
            serde_json::json!({"format_version":1,"request_id":"x","items":[{"kind":"text","data":"hi"}]})
        );
        let e = serde_json::to_value(ErrorEnvelope {
            format_version: 1,
            request_id: None,
            error: ErrorBody {
                code: "c".into(),
                message: "m".into(),
                failed_step: Some(1),
            },
        })
        .unwrap();
        assert_eq!(
            e,
            serde_json::json!({"format_version":1,"request_id":null,"error":{"code":"c","message":"m","failed_step":1}})
        );
    }
}
