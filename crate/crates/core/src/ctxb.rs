//! Raw binary sidecar format for integer and float rasters.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CTXB"
//! 4       4     width  (u32)
//! 8       4     height (u32)
//! 12      4     dtype code (u32): 1 = i32, 2 = f32, 3 = f64, 4 = u8
//! 16      ..    payload, row-major, channels interleaved
//! ```
//!
//! The channel count is implied by the payload length, which must be an
//! exact multiple of `width * height * size_of(dtype)`.

use crate::error::{Error, Result};
use crate::image::{Image, Raster};

pub const MAGIC: &[u8; 4] = b"CTXB";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Dtype {
    I32 = 1,
    F32 = 2,
    F64 = 3,
    U8 = 4,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::I32 | Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            1 => Dtype::I32,
            2 => Dtype::F32,
            3 => Dtype::F64,
            4 => Dtype::U8,
            other => return Err(Error::Ctxb(format!("unknown dtype code {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::I32(_) => Dtype::I32,
            Payload::F32(_) => Dtype::F32,
            Payload::F64(_) => Dtype::F64,
            Payload::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::I32(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ctxb {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub payload: Payload,
}

impl Ctxb {
    pub fn encode(&self) -> Vec<u8> {
        let dtype = self.payload.dtype();
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() * dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(dtype as u32).to_le_bytes());
        match &self.payload {
            Payload::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Ctxb> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Ctxb(format!(
                "truncated header: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Ctxb("bad magic".into()));
        }
        let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let (width, height) = (word(4), word(8));
        let dtype = Dtype::from_code(word(12))?;
        let body = &bytes[HEADER_LEN..];

        let pixels = (width as u64) * (height as u64);
        let stride = pixels
            .checked_mul(dtype.size() as u64)
            .ok_or_else(|| Error::Ctxb("dimensions overflow".into()))?;
        let channels = if stride == 0 {
            if !body.is_empty() {
                return Err(Error::Ctxb("payload present for an empty raster".into()));
            }
            0
        } else {
            if body.len() as u64 % stride != 0 {
                return Err(Error::Ctxb(format!(
                    "payload of {} bytes is not a multiple of {}x{}x{}",
                    body.len(),
                    width,
                    height,
                    dtype.size()
                )));
            }
            let c = body.len() as u64 / stride;
            if c == 0 {
                return Err(Error::Ctxb("empty payload".into()));
            }
            u32::try_from(c).map_err(|_| Error::Ctxb("too many channels".into()))?
        };

        let payload = match dtype {
            Dtype::I32 => Payload::I32(
                body.chunks_exact(4)
                    .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            Dtype::F32 => Payload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            Dtype::F64 => Payload::F64(
                body.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::U8 => Payload::U8(body.to_vec()),
        };
        Ok(Ctxb {
            width,
            height,
            channels,
            payload,
        })
    }

    pub fn from_face_index(r: &Raster<i32>) -> Ctxb {
        Ctxb {
            width: r.width() as u32,
            height: r.height() as u32,
            channels: 1,
            payload: Payload::I32(r.data().to_vec()),
        }
    }

    pub fn from_image_f64(img: &Image) -> Ctxb {
        Ctxb {
            width: img.width() as u32,
            height: img.height() as u32,
            channels: img.channels() as u32,
            payload: Payload::F64(img.data().to_vec()),
        }
    }

    pub fn from_image_f32(img: &Image) -> Ctxb {
        Ctxb {
            width: img.width() as u32,
            height: img.height() as u32,
            channels: img.channels() as u32,
            payload: Payload::F32(img.data().iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn to_face_index(&self) -> Result<Raster<i32>> {
        match &self.payload {
            Payload::I32(v) if self.channels == 1 => {
                Raster::from_vec(self.width as usize, self.height as usize, v.clone())
            }
            _ => Err(Error::Ctxb("expected a single-channel i32 raster".into())),
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        let data: Vec<f64> = match &self.payload {
            Payload::F64(v) => v.clone(),
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::I32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::U8(v) => v.iter().map(|&x| x as f64 / 255.0).collect(),
        };
        Image::from_vec(
            self.width as usize,
            self.height as usize,
            self.channels as usize,
            data,
        )
    }
}
