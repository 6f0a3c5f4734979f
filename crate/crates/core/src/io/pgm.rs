//! Binary PGM (P5) mask images: foreground 255, background 0, maxval 255.

use std::io::Write;
use std::path::Path;

use crate::error::IoError;

/// Encodes one H x W binary frame. `mask` holds 0/1 values row-major.
pub fn encode(mask: &[u8], h: usize, w: usize) -> Vec<u8> {
    assert_eq!(mask.len(), h * w);
    let header = format!("P5\n{w} {h}\n255\n");
    let mut out = Vec::with_capacity(header.len() + mask.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(mask.iter().map(|&m| if m != 0 { 255u8 } else { 0u8 }));
    out
}

pub fn write_file(path: &Path, mask: &[u8], h: usize, w: usize) -> Result<(), IoError> {
    let bytes = encode(mask, h, w);
    let mut f = std::fs::File::create(path)
        .map_err(|e| IoError::file(path.display().to_string(), e))?;
    f.write_all(&bytes)
        .map_err(|e| IoError::file(path.display().to_string(), e))?;
    Ok(())
}

/// Decodes a P5 file produced by [`encode`]; returns (h, w, 0/1 mask).
pub fn decode(bytes: &[u8], origin: &str) -> Result<(usize, usize, Vec<u8>), IoError> {
    let err = |reason: &str| IoError::format(origin, reason);
    let text_end = bytes
        .windows(1)
        .enumerate()
        .scan(0u8, |newlines, (i, b)| {
            if b[0] == b'\n' {
                *newlines += 1;
            }
            Some((i, *newlines))
        })
        .find(|&(_, n)| n == 3)
        .map(|(i, _)| i + 1)
        .ok_or_else(|| err("missing P5 header"))?;
    let header = std::str::from_utf8(&bytes[..text_end]).map_err(|_| err("header not UTF-8"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("P5") {
        return Err(err("not a P5 file"));
    }
    let w: usize = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err("bad width"))?;
    let h: usize = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err("bad height"))?;
    if fields.next() != Some("255") {
        return Err(err("maxval must be 255"));
    }
    let payload = &bytes[text_end..];
    if payload.len() != h * w {
        return Err(err(&format!(
            "payload {} bytes, expected {}",
            payload.len(),
            h * w
        )));
    }
    Ok((h, w, payload.iter().map(|&b| u8::from(b >= 128)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mask: Vec<u8> = (0..12).map(|i| (i % 3 == 0) as u8).collect();
        let bytes = encode(&mask, 3, 4);
        let (h, w, back) = decode(&bytes, "mem").unwrap();
        assert_eq!((h, w), (3, 4));
        assert_eq!(back, mask);
        assert_eq!(encode(&back, h, w), bytes);
    }

    #[test]
    fn header_shape() {
        let bytes = encode(&[1], 1, 1);
        assert!(bytes.starts_with(b"P5\n1 1\n255\n"));
        assert_eq!(bytes.last(), Some(&255u8));
    }
}
