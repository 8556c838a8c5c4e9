//! Client side of the external denoiser protocol.
//!
//! Every message is a frame: `"LNRF"`, u16 version, u8 type, u32 request id,
//! u64 payload length, payload. Integers are little-endian and tensors are
//! channel-major f32.
//!
//! | type | payload |
//! |------|---------|
//! | 0 handshake | request empty; reply u32 C, H, W, timestep count |
//! | 1 denoise-req | u32 t, u32 prompt length, prompt, C·H·W f32 |
//! | 2 denoise-resp | u32 t, u32 C, H, W, C·H·W f32 |
//! | 3 decode-req | C·H·W f32 |
//! | 4 decode-resp | u32 0, u32 C, H, W, C·H·W f32 in [0, 1] |
//! | 255 error | UTF-8 message |

use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::error::GuidanceError;
use crate::guidance::denoiser::{Decoder, Denoiser};
use crate::latent::LatentImage;

pub const MAGIC: [u8; 4] = *b"LNRF";
pub const PROTOCOL_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 19;
/// Environment variable naming the default endpoint.
pub const BRIDGE_ENV: &str = "LNRF_BRIDGE";
/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Handshake = 0,
    DenoiseReq = 1,
    DenoiseResp = 2,
    DecodeReq = 3,
    DecodeResp = 4,
    Error = 255,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Handshake,
            1 => Self::DenoiseReq,
            2 => Self::DenoiseResp,
            3 => Self::DecodeReq,
            4 => Self::DecodeResp,
            255 => Self::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub version: u16,
    pub msg_type: u8,
    pub request_id: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, request_id: u32, payload: Vec<u8>) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            msg_type: msg_type as u8,
            request_id,
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.msg_type);
        out.extend_from_slice(&self.request_id.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one frame from the front of `buf`, returning it and the number
    /// of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), GuidanceError> {
        if buf.len() < HEADER_LEN {
            return Err(GuidanceError::Protocol(format!(
                "short header: {} of {HEADER_LEN} bytes",
                buf.len()
            )));
        }
        let (version, msg_type, request_id, len) =
            parse_header(buf[..HEADER_LEN].try_into().unwrap())?;
        let total = HEADER_LEN + len as usize;
        if buf.len() < total {
            return Err(GuidanceError::Protocol(format!(
                "truncated payload: have {}, header says {len}",
                buf.len() - HEADER_LEN
            )));
        }
        Ok((
            Frame {
                version,
                msg_type,
                request_id,
                payload: buf[HEADER_LEN..total].to_vec(),
            },
            total,
        ))
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(u16, u8, u32, u64), GuidanceError> {
    if h[..4] != MAGIC {
        return Err(GuidanceError::Protocol(format!(
            "bad magic {:02x?}",
            &h[..4]
        )));
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    let msg_type = h[6];
    let request_id = u32::from_le_bytes(h[7..11].try_into().unwrap());
    let len = u64::from_le_bytes(h[11..19].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(GuidanceError::Protocol(format!(
            "payload length {len} exceeds limit"
        )));
    }
    Ok((version, msg_type, request_id, len))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), GuidanceError> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, GuidanceError> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)?;
    let (version, msg_type, request_id, len) = parse_header(&h)?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(Frame {
        version,
        msg_type,
        request_id,
        payload,
    })
}

/// Appends the tensor as little-endian f32.
pub fn put_tensor(out: &mut Vec<u8>, img: &LatentImage) {
    out.reserve(img.data().len() * 4);
    for v in img.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn get_tensor(
    bytes: &[u8],
    shape: (usize, usize, usize),
) -> Result<LatentImage, GuidanceError> {
    let (c, h, w) = shape;
    let n = c * h * w;
    if bytes.len() != n * 4 {
        return Err(GuidanceError::Protocol(format!(
            "tensor payload is {} bytes, expected {}",
            bytes.len(),
            n * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(LatentImage::from_vec(c, h, w, data))
}

fn u32_at(p: &[u8], i: usize) -> Result<u32, GuidanceError> {
    p.get(i..i + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| GuidanceError::Protocol("payload too short".into()))
}

pub fn denoise_request_payload(x_t: &LatentImage, t: u32, prompt: &str) -> Vec<u8> {
    let mut p = Vec::with_capacity(8 + prompt.len() + x_t.data().len() * 4);
    p.extend_from_slice(&t.to_le_bytes());
    p.extend_from_slice(&(prompt.len() as u32).to_le_bytes());
    p.extend_from_slice(prompt.as_bytes());
    put_tensor(&mut p, x_t);
    p
}

/// Parses a denoise request given the advertised latent shape.
pub fn parse_denoise_request(
    p: &[u8],
    shape: (usize, usize, usize),
) -> Result<(u32, String, LatentImage), GuidanceError> {
    let t = u32_at(p, 0)?;
    let n = u32_at(p, 4)? as usize;
    let prompt = p
        .get(8..8 + n)
        .ok_or_else(|| GuidanceError::Protocol("prompt overruns payload".into()))?;
    let prompt = String::from_utf8(prompt.to_vec())
        .map_err(|_| GuidanceError::Protocol("prompt is not UTF-8".into()))?;
    Ok((t, prompt, get_tensor(&p[8 + n..], shape)?))
}

/// 16-byte preamble `(u32 tag, u32 C, u32 H, u32 W)` followed by the tensor.
pub fn tensor_response_payload(tag: u32, img: &LatentImage) -> Vec<u8> {
    let (c, h, w) = img.shape();
    let mut p = Vec::with_capacity(16 + c * h * w * 4);
    for v in [tag, c as u32, h as u32, w as u32] {
        p.extend_from_slice(&v.to_le_bytes());
    }
    put_tensor(&mut p, img);
    p
}

pub fn parse_tensor_response(p: &[u8]) -> Result<(u32, LatentImage), GuidanceError> {
    let tag = u32_at(p, 0)?;
    let shape = (
        u32_at(p, 4)? as usize,
        u32_at(p, 8)? as usize,
        u32_at(p, 12)? as usize,
    );
    Ok((tag, get_tensor(&p[16..], shape)?))
}

/// Flag value if given, else the `LNRF_BRIDGE` environment variable.
pub fn resolve_endpoint(flag: Option<&str>) -> Option<String> {
    flag.map(str::to_owned)
        .or_else(|| std::env::var(BRIDGE_ENV).ok())
        .filter(|s| !s.is_empty())
}

/// One TCP connection to a denoiser server. Requests are strictly
/// sequential.
#[derive(Debug)]
pub struct BridgeClient {
    stream: TcpStream,
    next_id: u32,
    shape: (usize, usize, usize),
    timesteps: u32,
}

impl BridgeClient {
    /// Connects and performs the handshake.
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, GuidanceError> {
        let addr = endpoint.to_socket_addrs()?.next().ok_or_else(|| {
            GuidanceError::Protocol(format!("endpoint `{endpoint}` did not resolve"))
        })?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let mut client = Self {
            stream,
            next_id: 1,
            shape: (0, 0, 0),
            timesteps: 0,
        };
        let reply = client.round_trip(MsgType::Handshake, Vec::new(), MsgType::Handshake)?;
        let p = &reply.payload;
        if p.len() != 16 {
            return Err(GuidanceError::Protocol(format!(
                "handshake payload is {} bytes",
                p.len()
            )));
        }
        client.shape = (
            u32_at(p, 0)? as usize,
            u32_at(p, 4)? as usize,
            u32_at(p, 8)? as usize,
        );
        client.timesteps = u32_at(p, 12)?;
        Ok(client)
    }

    /// Advertised latent shape `(C, H, W)`.
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn timesteps(&self) -> u32 {
        self.timesteps
    }

    fn round_trip(
        &mut self,
        kind: MsgType,
        payload: Vec<u8>,
        expect: MsgType,
    ) -> Result<Frame, GuidanceError> {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        write_frame(&mut self.stream, &Frame::new(kind, id, payload))?;
        let reply = read_frame(&mut self.stream)?;
        if reply.msg_type == MsgType::Error as u8 {
            return Err(GuidanceError::Remote {
                request_id: reply.request_id,
                message: String::from_utf8_lossy(&reply.payload).into_owned(),
            });
        }
        if reply.request_id != id {
            return Err(GuidanceError::Protocol(format!(
                "reply to request {} carries id {}",
                id, reply.request_id
            )));
        }
        if reply.msg_type != expect as u8 {
            return Err(GuidanceError::Protocol(format!(
                "request {id}: expected message type {}, got {}",
                expect as u8, reply.msg_type
            )));
        }
        Ok(reply)
    }
}

impl Denoiser for BridgeClient {
    fn predict_eps(
        &mut self,
        x_t: &LatentImage,
        t: usize,
        prompt: &str,
    ) -> Result<LatentImage, GuidanceError> {
        if x_t.shape() != self.shape {
            return Err(GuidanceError::ShapeMismatch {
                expected: self.shape,
                got: x_t.shape(),
            });
        }
        let payload = denoise_request_payload(x_t, t as u32, prompt);
        let reply = self.round_trip(MsgType::DenoiseReq, payload, MsgType::DenoiseResp)?;
        let (_, eps) = parse_tensor_response(&reply.payload)?;
        Ok(eps)
    }
}

impl Decoder for BridgeClient {
    fn decode(&mut self, latent: &LatentImage) -> Result<LatentImage, GuidanceError> {
        if latent.shape() != self.shape {
            return Err(GuidanceError::ShapeMismatch {
                expected: self.shape,
                got: latent.shape(),
            });
        }
        let mut payload = Vec::new();
        put_tensor(&mut payload, latent);
        let reply = self.round_trip(MsgType::DecodeReq, payload, MsgType::DecodeResp)?;
        let (_, img) = parse_tensor_response(&reply.payload)?;
        if img.channels() != 3 {
            return Err(GuidanceError::Protocol(format!(
                "decoder returned {} channels",
                img.channels()
            )));
        }
        Ok(img)
    }
}
