//! Image decoding and resizing. Images are `(3, H, W)` f32 tensors in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::io::{read_tensor, TENSOR_MAGIC};
use crate::tensor::{Precision, Tensor};

/// Decodes a binary PPM (P6), JPEG, PNG or a raw `TKTN` tensor of shape `(3, H, W)`.
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(TENSOR_MAGIC) {
        let t = read_tensor(&mut &bytes[..])?;
        if t.rank() != 3 || t.shape()[0] != 3 {
            return Err(Error::Format(format!("raw image must be (3,H,W), got {:?}", t.shape())));
        }
        Ok(t.cast(Precision::F32))
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) || bytes.starts_with(b"\x89PNG") {
        decode_compressed(bytes)
    } else {
        Err(Error::Format("unsupported image format (expected PPM, JPEG, PNG or TKTN)".into()))
    }
}

fn decode_compressed(bytes: &[u8]) -> Result<Tensor> {
    let rgb = image::load_from_memory(bytes)
        .map_err(|e| Error::Format(format!("image decode: {e}")))?
        .to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = w * h;
    let mut out = vec![0f32; 3 * plane];
    for (p, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + p] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}

/// Splits the PPM header into whitespace-separated tokens, skipping comments.
fn ppm_header(bytes: &[u8]) -> Result<([usize; 3], usize)> {
    let mut fields = [0usize; 3];
    let mut pos = 2;
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated PPM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed PPM header".into()));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("PPM header value out of range".into()))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("truncated PPM header".into()));
    }
    Ok((fields, pos + 1))
}

fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let ([w, h, maxval], start) = ppm_header(bytes)?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("unsupported PPM geometry {w}x{h} maxval {maxval}")));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = w * h * 3 * bpp;
    let raster = bytes
        .get(start..start + need)
        .ok_or_else(|| Error::Format(format!("truncated PPM raster: need {need} bytes")))?;
    let plane = w * h;
    let mut out = vec![0f32; 3 * plane];
    let scale = maxval as f32;
    for p in 0..plane {
        for c in 0..3 {
            let v = if bpp == 1 {
                raster[p * 3 + c] as f32
            } else {
                u16::from_be_bytes([raster[(p * 3 + c) * 2], raster[(p * 3 + c) * 2 + 1]]) as f32
            };
            out[c * plane + p] = v / scale;
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}

/// 8-bit binary PPM of a `(3, H, W)` image; values are clamped and rounded.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = chw(img)?;
    if c != 3 {
        return Err(Error::shape("encode_ppm", format!("expected 3 channels, got {c}")));
    }
    let v = img.to_f32_vec();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            out.push((v[ch * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub(crate) fn chw(img: &Tensor) -> Result<[usize; 3]> {
    img.shape()
        .try_into()
        .map_err(|_| Error::shape("image", format!("expected (C,H,W), got {:?}", img.shape())))
}

/// Source coordinate and weights along one axis, half-pixel centers, edge clamped.
fn axis_taps(out: usize, inp: usize) -> Vec<(usize, usize, f32)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers (corners not aligned).
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = chw(img)?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::Invalid("resize extents must be positive".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let src = img.to_f32_vec();
    let ys = axis_taps(out_h, h);
    let xs = axis_taps(out_w, w);
    let mut out = vec![0f32; c * out_h * out_w];
    for ch in 0..c {
        let s = &src[ch * h * w..(ch + 1) * h * w];
        let o = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = s[y0 * w + x0] + (s[y0 * w + x1] - s[y0 * w + x0]) * fx;
                let bot = s[y1 * w + x0] + (s[y1 * w + x1] - s[y1 * w + x0]) * fx;
                o[oy * out_w + ox] = top + (bot - top) * fy;
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out).map(|t| t.cast(img.precision()))
}
