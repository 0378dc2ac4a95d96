//! Binary PPM (P6) and PGM (P5) images with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(malformed(path, "file too short"));
    }
    let magic = [bytes[0], bytes[1]];
    if magic != *b"P6" && magic != *b"P5" {
        return Err(malformed(path, "expected P6 or P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
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
        if start == pos {
            return Err(malformed(path, "missing header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(path, "header field out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed(
            path,
            "header must end with a single whitespace byte",
        ));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(malformed(
            path,
            format!("unsupported maxval {maxval}, expected 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero image dimension"));
    }
    Ok(Header {
        magic,
        width,
        height,
        data_start: pos + 1,
    })
}

/// Decodes a P6 or P5 file into a `[3, H, W]` tensor with values in `[0, 1]`.
/// Grayscale images are replicated across the three channels.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let header = parse_header(bytes, path)?;
    let plane = header.width * header.height;
    let channels = if header.magic == *b"P6" { 3 } else { 1 };
    let payload = &bytes[header.data_start..];
    if payload.len() < plane * channels {
        return Err(malformed(
            path,
            format!(
                "expected {} pixel bytes, found {}",
                plane * channels,
                payload.len()
            ),
        ));
    }
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            let byte = if channels == 3 {
                payload[3 * i + c]
            } else {
                payload[i]
            };
            data[c * plane + i] = byte as f32 / 255.0;
        }
    }
    Tensor::new([3, header.height, header.width], data)
}

pub fn read_pnm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    decode_pnm(&bytes, path)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `[3, H, W]` tensor in `[0, 1]` as P6.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::Shape(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for i in 0..plane {
        for ch in 0..3 {
            out.push(to_byte(image.data()[ch * plane + i] as f64));
        }
    }
    Ok(out)
}

/// Encodes an `[H, W]` map in `[0, 1]` as P5.
pub fn encode_pgm(map: &[f64], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(map.iter().map(|&v| to_byte(v)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_ppm_decodes_bytes_over_255() {
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 153]);
        let t = decode_pnm(&bytes, Path::new("x.ppm")).unwrap();
        assert_eq!(t.shape(), &[3, 2, 2]);
        assert_eq!(t.channel(0), &[1.0, 0.0, 0.0, 0.2]);
        assert_eq!(t.channel(1), &[0.0, 1.0, 0.0, 0.4]);
        assert_eq!(t.channel(2), &[0.0, 0.0, 1.0, 0.6]);
    }

    #[test]
    fn pgm_is_replicated() {
        let mut bytes = b"P5 3 1 255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let t = decode_pnm(&bytes, Path::new("x.pgm")).unwrap();
        assert_eq!(t.channel(0), t.channel(2));
        assert_eq!(t.channel(1), &[0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn malformed_headers_are_rejected() {
        for bad in [
            &b"P3\n1 1\n255\n"[..],
            b"P6\n1\n",
            b"P6\n1 1\n65535\n\0\0",
            b"P6\n2 2\n255\n\0\0\0",
        ] {
            assert!(matches!(
                decode_pnm(bad, Path::new("bad")),
                Err(Error::Image { .. })
            ));
        }
    }

    #[test]
    fn ppm_round_trip() {
        let img = Tensor::from_fn([3, 3, 2], |i| (i * 13 % 256) as f32 / 255.0);
        let back = decode_pnm(&encode_ppm(&img).unwrap(), Path::new("rt")).unwrap();
        assert_eq!(back, img);
    }
}
