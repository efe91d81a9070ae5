//! JSON wire format for remote guidance.
//!
//! Request body:
//!
//! ```text
//! { "kind": "residual" | "refine", "width": W, "height": H, "rgb_b64": "...",
//!   "camera": { "azimuth", "elevation", "radius", "fov_y" },
//!   "timestep": t,
//!   "conditioning": { "type": "image" | "text",
//!                     "ref_rgb_b64"?, "delta"?: { "azimuth", "elevation", "radius" },
//!                     "prompt"? },
//!   "background"?: [r, g, b] }
//! ```
//!
//! Response body: `{ "residual_b64": "..." }`, `{ "refined_b64": "..." }` or
//! `{ "error": "..." }`. Image planes are row-major, pixel-interleaved RGB,
//! little-endian `float32`, base64-encoded with the standard alphabet. The
//! reference image is resampled to `W x H` before encoding.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Conditioning, GuidanceError, GuidanceRequest, GuidanceResponse, RequestKind};
use crate::scene::{Camera, ImageBuffer, PoseDelta, SignedImage};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireCamera {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub fov_y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireDelta {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireConditioning {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_rgb_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<WireDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireRequest {
    pub kind: String,
    pub width: u32,
    pub height: u32,
    pub rgb_b64: String,
    pub camera: WireCamera,
    pub timestep: f64,
    pub conditioning: WireConditioning,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct WireResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn encode_plane(pixels: &[[f64; 3]]) -> String {
    let mut bytes = Vec::with_capacity(pixels.len() * 12);
    for p in pixels {
        for &v in p {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    STANDARD.encode(bytes)
}

/// Decodes a plane of exactly `count` RGB pixels.
pub fn decode_plane(b64: &str, count: usize, field: &str) -> Result<Vec<[f64; 3]>, GuidanceError> {
    let bytes = STANDARD.decode(b64).map_err(|e| GuidanceError::Malformed(format!("{field}: {e}")))?;
    if bytes.len() != count * 12 {
        return Err(GuidanceError::Malformed(format!(
            "{field}: {} bytes, expected {} for {count} pixels",
            bytes.len(),
            count * 12
        )));
    }
    let out: Vec<[f64; 3]> = bytes
        .chunks_exact(12)
        .map(|c| std::array::from_fn(|k| f64::from(f32::from_le_bytes([c[4 * k], c[4 * k + 1], c[4 * k + 2], c[4 * k + 3]]))))
        .collect();
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GuidanceError::Malformed(format!("{field}: non-finite value")));
    }
    Ok(out)
}

pub fn to_wire(request: &GuidanceRequest) -> WireRequest {
    let (w, h) = (request.image.width, request.image.height);
    let conditioning = match &request.conditioning {
        Conditioning::Image { reference, delta } => WireConditioning {
            kind: "image".into(),
            ref_rgb_b64: Some(encode_plane(&reference.resample(w, h).rgb)),
            delta: Some(WireDelta { azimuth: delta.azimuth, elevation: delta.elevation, radius: delta.radius }),
            prompt: None,
        },
        Conditioning::Text { prompt } => {
            WireConditioning { kind: "text".into(), ref_rgb_b64: None, delta: None, prompt: Some(prompt.clone()) }
        }
    };
    let c = &request.camera;
    WireRequest {
        kind: request.kind.as_str().into(),
        width: w,
        height: h,
        rgb_b64: encode_plane(&request.image.rgb),
        camera: WireCamera { azimuth: c.azimuth, elevation: c.elevation, radius: c.radius, fov_y: c.fov_y },
        timestep: request.timestep,
        conditioning,
        background: Some(request.background),
    }
}

pub fn encode_request(request: &GuidanceRequest) -> String {
    serde_json::to_string(&to_wire(request)).expect("wire request serializes")
}

/// Server-side decoding. The transmitted image carries no alpha plane, so alpha is 1.
pub fn decode_request(body: &str) -> Result<GuidanceRequest, GuidanceError> {
    let bad = GuidanceError::InvalidRequest;
    let wire: WireRequest = serde_json::from_str(body).map_err(|e| bad(e.to_string()))?;
    let kind = match wire.kind.as_str() {
        "residual" => RequestKind::Residual,
        "refine" => RequestKind::Refine,
        k => return Err(bad(format!("kind: unknown value `{k}`"))),
    };
    let n = wire.width as usize * wire.height as usize;
    let as_request = |e: GuidanceError| match e {
        GuidanceError::Malformed(m) => bad(m),
        other => other,
    };
    let rgb = decode_plane(&wire.rgb_b64, n, "rgb_b64").map_err(as_request)?;
    let image = ImageBuffer { width: wire.width, height: wire.height, rgb, alpha: vec![1.0; n] };
    let conditioning = match wire.conditioning.kind.as_str() {
        "image" => {
            let b64 = wire.conditioning.ref_rgb_b64.as_deref().ok_or_else(|| bad("ref_rgb_b64: missing".into()))?;
            let rgb = decode_plane(b64, n, "ref_rgb_b64").map_err(as_request)?;
            let d = wire.conditioning.delta.clone().ok_or_else(|| bad("delta: missing".into()))?;
            Conditioning::Image {
                reference: ImageBuffer { width: wire.width, height: wire.height, rgb, alpha: vec![1.0; n] },
                delta: PoseDelta { azimuth: d.azimuth, elevation: d.elevation, radius: d.radius },
            }
        }
        "text" => Conditioning::Text {
            prompt: wire.conditioning.prompt.clone().ok_or_else(|| bad("prompt: missing".into()))?,
        },
        k => return Err(bad(format!("conditioning.type: unknown value `{k}`"))),
    };
    let c = &wire.camera;
    let request = GuidanceRequest {
        kind,
        image,
        camera: Camera::orbit(c.azimuth, c.elevation, c.radius, c.fov_y, wire.width, wire.height),
        background: wire.background.unwrap_or([1.0; 3]),
        timestep: wire.timestep,
        conditioning,
    };
    request.validate()?;
    Ok(request)
}

pub fn encode_response(response: &GuidanceResponse) -> String {
    let wire = match response {
        GuidanceResponse::Residual(r) => WireResponse { residual_b64: Some(encode_plane(&r.data)), ..Default::default() },
        GuidanceResponse::Refined(img) => WireResponse { refined_b64: Some(encode_plane(&img.rgb)), ..Default::default() },
    };
    serde_json::to_string(&wire).expect("wire response serializes")
}

pub fn encode_error(message: &str) -> String {
    serde_json::to_string(&WireResponse { error: Some(message.into()), ..Default::default() }).expect("serializes")
}

/// Parses a response body for `request`. Refined images keep the request's alpha plane.
pub fn decode_response(body: &str, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| GuidanceError::Malformed(e.to_string()))?;
    if let Some(e) = wire.error {
        return Err(GuidanceError::Server(e));
    }
    let (w, h) = (request.image.width, request.image.height);
    let n = w as usize * h as usize;
    let response = match (request.kind, wire.residual_b64, wire.refined_b64) {
        (RequestKind::Residual, Some(b64), None) => {
            GuidanceResponse::Residual(SignedImage { width: w, height: h, data: decode_plane(&b64, n, "residual_b64")? })
        }
        (RequestKind::Refine, None, Some(b64)) => {
            let mut img = ImageBuffer { width: w, height: h, rgb: decode_plane(&b64, n, "refined_b64")?, alpha: request.image.alpha.clone() };
            img.clamp();
            GuidanceResponse::Refined(img)
        }
        (kind, _, _) => {
            return Err(GuidanceError::Malformed(format!("expected exactly one `{}` payload", match kind {
                RequestKind::Residual => "residual_b64",
                RequestKind::Refine => "refined_b64",
            })))
        }
    };
    response.check(request)?;
    Ok(response)
}
