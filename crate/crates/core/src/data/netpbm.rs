//! Binary NetPBM (P5 grayscale, P6 RGB) with maxval 255, plus PNG decoding.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format { offset, reason: reason.into() }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    payload_offset: usize,
}

fn skip_space_and_comments(buf: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' && buf[pos] != b'\r' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn header_uint(buf: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let start = skip_space_and_comments(buf, pos);
    let mut end = start;
    while end < buf.len() && buf[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(format_err(start, format!("expected {what}")));
    }
    if end < buf.len() && !buf[end].is_ascii_whitespace() && buf[end] != b'#' {
        return Err(format_err(end, format!("unexpected byte after {what}")));
    }
    let text = std::str::from_utf8(&buf[start..end]).expect("ascii digits");
    let v = text.parse::<usize>().map_err(|_| format_err(start, format!("{what} out of range")))?;
    Ok((v, end))
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    let channels = match buf.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err(0, "expected magic P5 or P6")),
    };
    if buf.get(2).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        return Err(format_err(2, "expected whitespace after magic"));
    }
    let (width, pos) = header_uint(buf, 2, "width")?;
    let (height, pos) = header_uint(buf, pos, "height")?;
    let (maxval_start, maxval_end) = {
        let s = skip_space_and_comments(buf, pos);
        let (v, e) = header_uint(buf, pos, "maxval")?;
        if v != 255 {
            return Err(format_err(s, format!("maxval must be 255, got {v}")));
        }
        (s, e)
    };
    if width == 0 || height == 0 {
        return Err(format_err(maxval_start, format!("zero image extent {width}x{height}")));
    }
    match buf.get(maxval_end) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(format_err(maxval_end, "expected single whitespace after maxval")),
    }
    Ok(Header { channels, width, height, payload_offset: maxval_end + 1 })
}

/// Decodes a P5 or P6 file into `[1, h, w]` or `[3, h, w]` with values 0..=255.
pub fn decode_netpbm(buf: &[u8]) -> Result<Tensor> {
    let h = parse_header(buf)?;
    let n = h
        .channels
        .checked_mul(h.width)
        .and_then(|v| v.checked_mul(h.height))
        .ok_or_else(|| format_err(h.payload_offset, "image size overflow"))?;
    let available = buf.len() - h.payload_offset;
    if available < n {
        return Err(format_err(buf.len(), format!("truncated payload: need {n} bytes, found {available}")));
    }
    if available > n {
        return Err(format_err(h.payload_offset + n, format!("{} trailing bytes after payload", available - n)));
    }
    let payload = &buf[h.payload_offset..];
    Ok(planar_from_interleaved(payload, h.channels, h.height, h.width))
}

fn planar_from_interleaved(bytes: &[u8], channels: usize, height: usize, width: usize) -> Tensor {
    let plane = height * width;
    let mut data = vec![0.0; channels * plane];
    for (p, px) in bytes.chunks_exact(channels).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            data[c * plane + p] = f64::from(b);
        }
    }
    Tensor::from_parts_unchecked(vec![channels, height, width], data)
}

fn to_byte(v: f64) -> Result<u8> {
    if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
        Ok(v as u8)
    } else {
        Err(Error::Encode(format!("pixel value {v} is not an integer in 0..=255")))
    }
}

/// Encodes `[1, h, w]` as P5 or `[3, h, w]` as P6. Values must be integers in 0..=255.
pub fn encode_netpbm(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims3()?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Encode(format!("NetPBM needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = img.data();
    out.reserve(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            out.push(to_byte(data[ch * plane + p])?);
        }
    }
    Ok(out)
}

/// Decodes an 8-bit PNG. Palette images are expanded, alpha is dropped,
/// 16-bit samples are reduced to their high byte.
pub fn decode_png(buf: &[u8]) -> Result<Tensor> {
    let png_err = |e: png::DecodingError| format_err(0, format!("PNG: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(buf));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| format_err(0, "PNG: image too large"))?;
    let mut bytes = vec![0u8; size];
    let info = reader.next_frame(&mut bytes).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let (src_ch, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(format_err(0, "PNG: palette was not expanded")),
    };
    let mut packed = Vec::with_capacity(keep * w * h);
    for row in bytes.chunks(stride).take(h) {
        for px in row[..w * src_ch].chunks_exact(src_ch) {
            packed.extend_from_slice(&px[..keep]);
        }
    }
    Ok(planar_from_interleaved(&packed, keep, h, w))
}

/// Encodes `[1, h, w]` or `[3, h, w]` as an 8-bit PNG.
pub fn encode_png(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims3()?;
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::Encode(format!("PNG writer needs 1 or 3 channels, got {c}"))),
    };
    let plane = h * w;
    let mut packed = Vec::with_capacity(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            packed.push(to_byte(img.data()[ch * plane + p])?);
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let enc_err = |e: png::EncodingError| Error::Encode(format!("PNG: {e}"));
        let mut writer = enc.write_header().map_err(enc_err)?;
        writer.write_image_data(&packed).map_err(enc_err)?;
    }
    Ok(out)
}

/// Decodes NetPBM or PNG, chosen by the leading bytes.
pub fn decode_image(buf: &[u8]) -> Result<Tensor> {
    if buf.starts_with(PNG_SIGNATURE) {
        decode_png(buf)
    } else {
        decode_netpbm(buf)
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&buf).map_err(|e| match e {
        Error::Format { offset, reason } => Error::Format { offset, reason: format!("{}: {reason}", path.display()) },
        other => other,
    })
}

/// Writes NetPBM (P5/P6 by channel count).
pub fn write_image(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_netpbm(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a binary `[1, h, w]` mask as P5 with values {0, 255}.
pub fn write_mask(path: impl AsRef<Path>, mask: &Tensor) -> Result<()> {
    let (c, _, _) = mask.dims3()?;
    if c != 1 {
        return Err(Error::Encode(format!("mask must have 1 channel, got {c}")));
    }
    if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Encode(format!("mask value {v} is not binary")));
    }
    write_image(path, &mask.map(|v| v * 255.0))
}

/// Maps 8-bit mask levels to {0, 1}: values >= 128 are lesion.
pub fn mask_binarize(img: &Tensor) -> Tensor {
    img.map(|v| if v >= 128.0 { 1.0 } else { 0.0 })
}
