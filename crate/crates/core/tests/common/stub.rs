//! In-process denoiser server speaking the bridge protocol. Predicts zero
//! noise and decodes with the linear preview, upscaled 8x by nearest
//! neighbour.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::JoinHandle;

use latentnerf::guidance::bridge::{
    parse_denoise_request, tensor_response_payload, Frame, MsgType, HEADER_LEN, MAGIC,
};
use latentnerf::latent::LatentImage;
use latentnerf::refine::{display_map, init_rgb_adapter, rgb_preview};

pub const DECODE_SCALE: usize = 8;

/// How the stub answers denoise requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behaviour {
    Normal,
    /// Error frame for every denoise request with an odd timestep.
    ErrorOnOddT,
    BadMagic,
    WrongRequestId,
    WrongType,
    TruncatedTensor,
    WrongShape,
    HugeLength,
    /// Reads requests and never answers.
    Silent,
    /// Echoes every frame back unchanged, handshake included.
    Echo,
}

pub struct Stub {
    pub endpoint: String,
    _thread: JoinHandle<()>,
}

pub fn spawn(shape: (usize, usize, usize), timesteps: u32, behaviour: Behaviour) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = listener.local_addr().unwrap().to_string();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(conn) = conn else { return };
            std::thread::spawn(move || serve(conn, shape, timesteps, behaviour));
        }
    });
    Stub {
        endpoint,
        _thread: thread,
    }
}

fn send(s: &mut TcpStream, f: &Frame) -> bool {
    s.write_all(&f.encode()).is_ok()
}

fn serve(mut s: TcpStream, shape: (usize, usize, usize), timesteps: u32, behaviour: Behaviour) {
    loop {
        let mut h = [0u8; HEADER_LEN];
        if s.read_exact(&mut h).is_err() {
            return;
        }
        let id = u32::from_le_bytes(h[7..11].try_into().unwrap());
        if h[..4] != MAGIC {
            // header untrusted: report and resynchronise on the next header
            if !send(
                &mut s,
                &Frame::new(MsgType::Error, 0, b"bad magic".to_vec()),
            ) {
                return;
            }
            continue;
        }
        let len = u64::from_le_bytes(h[11..19].try_into().unwrap()) as usize;
        let mut payload = vec![0u8; len];
        if s.read_exact(&mut payload).is_err() {
            return;
        }
        let kind = h[6];
        if behaviour == Behaviour::Echo {
            let mut f = Frame::new(MsgType::Handshake, id, payload);
            f.msg_type = kind;
            f.version = u16::from_le_bytes([h[4], h[5]]);
            if !send(&mut s, &f) {
                return;
            }
            continue;
        }
        let reply = match MsgType::from_u8(kind) {
            Some(MsgType::Handshake) => {
                let mut p = Vec::new();
                for v in [shape.0 as u32, shape.1 as u32, shape.2 as u32, timesteps] {
                    p.extend_from_slice(&v.to_le_bytes());
                }
                Frame::new(MsgType::Handshake, id, p)
            }
            Some(MsgType::DenoiseReq) => match parse_denoise_request(&payload, shape) {
                Err(e) => Frame::new(MsgType::Error, id, e.to_string().into_bytes()),
                Ok((t, _, x)) => {
                    if behaviour == Behaviour::Silent {
                        continue;
                    }
                    if behaviour == Behaviour::ErrorOnOddT && t % 2 == 1 {
                        Frame::new(MsgType::Error, id, format!("odd timestep {t}").into_bytes())
                    } else {
                        denoise_reply(id, t, &x, behaviour)
                    }
                }
            },
            Some(MsgType::DecodeReq) => {
                match latentnerf::guidance::bridge::get_tensor(&payload, shape) {
                    Err(e) => Frame::new(MsgType::Error, id, e.to_string().into_bytes()),
                    Ok(z) => Frame::new(
                        MsgType::DecodeResp,
                        id,
                        tensor_response_payload(0, &decode(&z)),
                    ),
                }
            }
            _ => Frame::new(
                MsgType::Error,
                id,
                format!("unexpected message type {kind}").into_bytes(),
            ),
        };
        let mut bytes = reply.encode();
        if reply.msg_type == MsgType::DenoiseResp as u8 {
            match behaviour {
                Behaviour::BadMagic => bytes[..4].copy_from_slice(b"XXXX"),
                Behaviour::HugeLength => {
                    bytes[11..19].copy_from_slice(&u64::MAX.to_le_bytes());
                    bytes.truncate(HEADER_LEN);
                }
                _ => {}
            }
        }
        if s.write_all(&bytes).is_err() {
            return;
        }
    }
}

fn denoise_reply(id: u32, t: u32, x: &LatentImage, behaviour: Behaviour) -> Frame {
    let (c, h, w) = x.shape();
    let eps = LatentImage::zeros(c, h, w);
    let mut f = Frame::new(MsgType::DenoiseResp, id, tensor_response_payload(t, &eps));
    match behaviour {
        Behaviour::WrongRequestId => f.request_id = id.wrapping_add(100),
        Behaviour::WrongType => f.msg_type = MsgType::DecodeResp as u8,
        Behaviour::TruncatedTensor => {
            f.payload.truncate(f.payload.len() - 4);
        }
        Behaviour::WrongShape => {
            f.payload = tensor_response_payload(t, &LatentImage::zeros(c, h, w + 1))
        }
        _ => {}
    }
    f
}

/// Linear preview mapped to display range, upscaled by nearest neighbour.
pub fn decode(z: &LatentImage) -> LatentImage {
    let rgb = rgb_preview(z, &init_rgb_adapter()).map(display_map);
    let (h, w) = (z.height() * DECODE_SCALE, z.width() * DECODE_SCALE);
    LatentImage::from_fn(3, h, w, |c, y, x| {
        rgb.get(c, y / DECODE_SCALE, x / DECODE_SCALE)
    })
}
