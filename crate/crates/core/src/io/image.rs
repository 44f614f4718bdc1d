//! Pre-aligned face crops: binary PPM (P6, maxval 255) or raw `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INPUT_SIDE: usize = 112;
const RAW_LEN: usize = 3 * INPUT_SIDE * INPUT_SIDE * 4;

/// Decodes an image to `[3, 112, 112]`. PPM samples map to `v / 127.5 - 1`;
/// raw inputs are `3 * 112 * 112` little-endian `f32` in channel-major order.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.len() == RAW_LEN {
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(vec![3, INPUT_SIDE, INPUT_SIDE], data)
    } else {
        Err(Error::Format(format!(
            "not a P6 PPM and not a raw {RAW_LEN}-byte f32 image ({} bytes)",
            bytes.len()
        )))
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_image(&std::fs::read(path)?)
}

fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed PPM header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("malformed PPM header".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval must be 255, got {maxval}")));
    }
    if w != INPUT_SIDE || h != INPUT_SIDE {
        return Err(Error::Format(format!(
            "expected a {INPUT_SIDE}x{INPUT_SIDE} aligned crop, got {w}x{h}"
        )));
    }
    let pixels = &bytes[pos..];
    if pixels.len() != 3 * w * h {
        return Err(Error::Format(format!(
            "PPM pixel data has {} bytes, expected {}",
            pixels.len(),
            3 * w * h
        )));
    }
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Encodes interleaved RGB bytes as a P6 PPM.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}
