//! Image decoding and bilinear resizing. Images are `[h, w, 3]` f32 tensors
//! with values in `[0, 255]`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn decode_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decode a Netpbm image (P2, P3, P5, P6). Grayscale is replicated to three
/// channels. With the `image-formats` feature, PNG and JPEG are accepted too.
pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| decode_err(path, e.to_string()))?;
    if bytes.len() >= 2 && bytes[0] == b'P' && matches!(bytes[1], b'2' | b'3' | b'5' | b'6') {
        return decode_pnm(&bytes).map_err(|reason| decode_err(path, reason));
    }
    decode_other(path, &bytes)
}

#[cfg(feature = "image-formats")]
fn decode_other(path: &Path, bytes: &[u8]) -> Result<Tensor<f32>> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| decode_err(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f32::from).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

#[cfg(not(feature = "image-formats"))]
fn decode_other(path: &Path, _bytes: &[u8]) -> Result<Tensor<f32>> {
    Err(decode_err(
        path,
        "unsupported format (expected Netpbm P2/P3/P5/P6)",
    ))
}

struct Header {
    kind: u8,
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(b: &[u8]) -> std::result::Result<Header, String> {
    let kind = b[1];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match b.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while b.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while b.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&b[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header number")?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!(
            "invalid header values {width}x{height} max {maxval}"
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !b.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing separator after header".into());
    }
    Ok(Header {
        kind,
        width,
        height,
        maxval: maxval as u32,
        data_start: pos + 1,
    })
}

fn decode_pnm(b: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let h = parse_header(b)?;
    let channels = if matches!(h.kind, b'3' | b'6') { 3 } else { 1 };
    let count = h.width * h.height * channels;
    let scale = 255.0 / h.maxval as f32;
    let raw: Vec<u32> = match h.kind {
        b'5' | b'6' => {
            let wide = h.maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            let body = b
                .get(h.data_start..h.data_start + need)
                .ok_or_else(|| format!("truncated raster: need {need} bytes"))?;
            if wide {
                body.chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
                    .collect()
            } else {
                body.iter().map(|&v| v as u32).collect()
            }
        }
        _ => {
            let text =
                std::str::from_utf8(&b[h.data_start..]).map_err(|_| "non-ASCII plain raster")?;
            let vals: Vec<u32> = text
                .split_ascii_whitespace()
                .take(count)
                .map(|t| t.parse::<u32>().map_err(|_| format!("bad sample {t:?}")))
                .collect::<std::result::Result<_, _>>()?;
            if vals.len() < count {
                return Err(format!(
                    "truncated raster: {} of {count} samples",
                    vals.len()
                ));
            }
            vals
        }
    };
    if raw.iter().any(|&v| v > h.maxval) {
        return Err("sample exceeds maxval".into());
    }
    let mut data = Vec::with_capacity(h.width * h.height * 3);
    if channels == 3 {
        data.extend(raw.iter().map(|&v| v as f32 * scale));
    } else {
        for &v in &raw {
            let g = v as f32 * scale;
            data.extend([g, g, g]);
        }
    }
    Tensor::new(vec![h.height, h.width, 3], data).map_err(|e| e.to_string())
}

/// Write an `[h, w, 3]` image as binary PPM, rounding and clamping to 0..=255.
pub fn write_ppm(mut w: impl Write, image: &Tensor<f32>) -> Result<()> {
    let dims = image.dims();
    if dims.len() != 3 || dims[2] != 3 {
        return Err(Error::InvalidShape(format!(
            "PPM needs [h, w, 3], got {dims:?}"
        )));
    }
    let mut buf = format!("P6\n{} {}\n255\n", dims[1], dims[0]).into_bytes();
    buf.extend(
        image
            .data()
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8),
    );
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ppm(&mut f, image)?;
    f.flush()?;
    Ok(())
}

/// Bilinear resize of an `[h, w, c]` image with half-pixel centers. Aspect
/// ratio is not preserved.
pub fn resize(image: &Tensor<f32>, target: (usize, usize)) -> Result<Tensor<f32>> {
    let dims = image.dims();
    if dims.len() != 3 {
        return Err(Error::InvalidShape(format!(
            "resize needs [h, w, c], got {dims:?}"
        )));
    }
    let (h, w, c) = (dims[0], dims[1], dims[2]);
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidShape(format!("resize target {th}x{tw}")));
    }
    if (th, tw) == (h, w) {
        return Ok(image.clone());
    }
    let src = image.data();
    let axis = |o: usize, out: usize, inp: usize| {
        let s = ((o as f32 + 0.5) * inp as f32 / out as f32 - 0.5).clamp(0.0, (inp - 1) as f32);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, s - i0 as f32)
    };
    let mut out = Vec::with_capacity(th * tw * c);
    for oy in 0..th {
        let (y0, y1, fy) = axis(oy, th, h);
        for ox in 0..tw {
            let (x0, x1, fx) = axis(ox, tw, w);
            for ch in 0..c {
                let p = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![th, tw, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_file(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    #[test]
    fn p6_exact_pixels() {
        let mut bytes = b"P6\n# two by two\n2 2\n255\n".to_vec();
        let px = [0u8, 10, 20, 30, 40, 50, 60, 70, 80, 255, 128, 1];
        bytes.extend_from_slice(&px);
        let f = tmp_file(&bytes);
        let t = decode_image(f.path()).unwrap();
        assert_eq!(t.dims(), &[2, 2, 3]);
        let expected: Vec<f32> = px.iter().map(|&v| v as f32).collect();
        assert_eq!(t.data(), expected.as_slice());
    }

    #[test]
    fn grayscale_replicated() {
        let f = tmp_file(b"P5 2 1 255 \x07\xff");
        let t = decode_image(f.path()).unwrap();
        assert_eq!(t.data(), &[7.0, 7.0, 7.0, 255.0, 255.0, 255.0]);
        let f = tmp_file(b"P2\n1 1\n15\n15\n");
        assert_eq!(decode_image(f.path()).unwrap().data(), &[255.0; 3]);
    }

    #[test]
    fn truncated_is_decode_error() {
        let f = tmp_file(b"P6\n2 2\n255\n\x01\x02\x03");
        assert!(matches!(decode_image(f.path()), Err(Error::Decode { .. })));
        let f = tmp_file(b"not an image");
        assert!(matches!(decode_image(f.path()), Err(Error::Decode { .. })));
    }

    #[test]
    fn ppm_round_trip() {
        let img = Tensor::from_fn(vec![3, 4, 3], |i| (i * 7 % 256) as f32).unwrap();
        let mut buf = Vec::new();
        write_ppm(&mut buf, &img).unwrap();
        let f = tmp_file(&buf);
        assert_eq!(decode_image(f.path()).unwrap(), img);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Tensor::from_fn(vec![5, 7, 3], |i| (i % 251) as f32).unwrap();
        assert_eq!(resize(&img, (5, 7)).unwrap(), img);
        let flat = Tensor::full(vec![768, 1024, 3], 42.0f32).unwrap();
        let r = resize(&flat, (300, 300)).unwrap();
        assert_eq!(r.dims(), &[300, 300, 3]);
        assert!(r.data().iter().all(|&v| (v - 42.0).abs() < 1e-4));
    }
}
