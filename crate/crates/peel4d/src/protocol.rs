//! Wire format of the frame-streaming service.
//!
//! Client → server: text messages with a JSON render request
//! `{"type":"render","id":7,"pose":{"R":[9 row-major],"t":[3]},"time":0.5,"width":256,"height":256}`,
//! optionally with `"intrinsics":{"fx","fy","cx","cy"}`. `R`, `t` map world
//! to camera coordinates (+z forward, y down).
//!
//! Server → client: binary frames with a 24-byte little-endian header
//! (`FRM0`, id, width, height, encoding, payload length) and the payload,
//! or text messages `{"type":"error","id":7,"reason":"..."}`.

use serde::{Deserialize, Serialize};

pub const FRAME_MAGIC: &[u8; 4] = b"FRM0";
pub const HEADER_BYTES: usize = 24;
/// Frames with at least this many pixels are sent PNG-encoded.
pub const PNG_MIN_PIXELS: usize = 512 * 512;
pub const DEFAULT_MAX_RESOLUTION: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Encoding {
    RawRgb8 = 0,
    Png = 1,
}

impl Encoding {
    pub fn for_size(width: u32, height: u32) -> Self {
        if (width as usize) * (height as usize) >= PNG_MIN_PIXELS {
            Encoding::Png
        } else {
            Encoding::RawRgb8
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub id: u32,
    pub pose: Pose,
    /// Normalized time, clamped to `[0, 1]`.
    pub time: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestError {
    pub id: Option<u32>,
    pub reason: String,
}

#[derive(Deserialize)]
struct Envelope {
    #[serde(rename = "type")]
    kind: String,
    #[serde(flatten)]
    body: serde_json::Value,
}

/// Parses and validates one text message.
pub fn parse_request(text: &str, max_resolution: u32) -> Result<RenderRequest, RequestError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| RequestError { id: None, reason: format!("invalid JSON: {e}") })?;
    let id = value.get("id").and_then(|v| v.as_u64()).and_then(|v| u32::try_from(v).ok());
    let fail = |reason: String| RequestError { id, reason };
    let env: Envelope = serde_json::from_value(value).map_err(|e| fail(format!("invalid message: {e}")))?;
    if env.kind != "render" {
        return Err(fail(format!("unknown message type {:?}", env.kind)));
    }
    let mut req: RenderRequest = serde_json::from_value(env.body).map_err(|e| fail(format!("invalid render request: {e}")))?;
    if req.width == 0 || req.height == 0 || req.width > max_resolution || req.height > max_resolution {
        return Err(fail(format!("resolution {}x{} outside 1..={max_resolution}", req.width, req.height)));
    }
    if !req.pose.r.iter().chain(&req.pose.t).all(|v| v.is_finite()) {
        return Err(fail("pose is not finite".into()));
    }
    req.time = if req.time.is_finite() { req.time.clamp(0.0, 1.0) } else { 0.0 };
    Ok(req)
}

pub fn request_json(req: &RenderRequest) -> String {
    let mut v = serde_json::to_value(req).unwrap();
    v.as_object_mut().unwrap().insert("type".into(), "render".into());
    v.to_string()
}

pub fn error_json(err: &RequestError) -> String {
    serde_json::json!({ "type": "error", "id": err.id, "reason": err.reason }).to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub encoding: Encoding,
    pub payload_len: u32,
}

pub fn encode_frame(header: &FrameHeader, payload: &[u8]) -> Vec<u8> {
    assert_eq!(header.payload_len as usize, payload.len());
    let mut out = Vec::with_capacity(HEADER_BYTES + payload.len());
    out.extend_from_slice(FRAME_MAGIC);
    for v in [header.id, header.width, header.height, header.encoding as u32, header.payload_len] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(payload);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame shorter than its header")]
    Short,
    #[error("bad frame magic")]
    Magic,
    #[error("unknown encoding {0}")]
    Encoding(u32),
    #[error("payload length {declared} does not match {actual} bytes")]
    Length { declared: u32, actual: usize },
}

pub fn decode_frame(bytes: &[u8]) -> Result<(FrameHeader, &[u8]), FrameError> {
    if bytes.len() < HEADER_BYTES {
        return Err(FrameError::Short);
    }
    if &bytes[..4] != FRAME_MAGIC {
        return Err(FrameError::Magic);
    }
    let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let encoding = match u(3) {
        0 => Encoding::RawRgb8,
        1 => Encoding::Png,
        e => return Err(FrameError::Encoding(e)),
    };
    let header = FrameHeader { id: u(0), width: u(1), height: u(2), encoding, payload_len: u(4) };
    let payload = &bytes[HEADER_BYTES..];
    if payload.len() != header.payload_len as usize {
        return Err(FrameError::Length { declared: header.payload_len, actual: payload.len() });
    }
    Ok((header, payload))
}
