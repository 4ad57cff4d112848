//! Portable float map reading and writing.
//!
//! Rows are stored bottom to top. A negative scale marks little-endian
//! samples, a positive one big-endian. Files are always written
//! little-endian with scale `-1.0`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

fn pfm_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Pfm {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Encode an image. Samples are stored as `f32`.
pub fn encode_pfm(image: &Image) -> Result<Vec<u8>> {
    let tag = match image.channels {
        3 => "PF",
        1 => "Pf",
        c => return Err(Error::InvalidInput(format!("PFM supports 1 or 3 channels, not {c}"))),
    };
    let header = format!("{tag}\n{} {}\n-1.0\n", image.width, image.height);
    let row_len = image.width * image.channels;
    let mut out = Vec::with_capacity(header.len() + 4 * image.data.len());
    out.extend_from_slice(header.as_bytes());
    for y in (0..image.height).rev() {
        for &v in &image.data[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Decode PFM bytes; `path` only labels errors.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut pos = 0;
    let mut token = |what: &str| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(pfm_err(path, format!("missing {what} at byte {start}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token("magic")?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(pfm_err(path, format!("bad magic {other:?}"))),
    };
    let parse_dim = |s: String, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| pfm_err(path, format!("bad {what} {s:?}")))
    };
    let width = parse_dim(token("width")?, "width")?;
    let height = parse_dim(token("height")?, "height")?;
    let scale_tok = token("scale")?;
    let scale: f64 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| pfm_err(path, format!("bad scale {scale_tok:?}")))?;
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(pfm_err(path, format!("header not terminated at byte {pos}")));
    }
    pos += 1;
    let count = width * height * channels;
    let needed = pos + 4 * count;
    if bytes.len() < needed {
        return Err(pfm_err(
            path,
            format!("truncated payload at byte {}: expected {needed} bytes", bytes.len()),
        ));
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let mut data = vec![0.0; count];
    for (k, chunk) in bytes[pos..needed].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        if !v.is_finite() {
            return Err(pfm_err(path, format!("non-finite sample at byte {}", pos + 4 * k)));
        }
        let (file_row, col) = (k / row_len, k % row_len);
        data[(height - 1 - file_row) * row_len + col] = v as f64;
    }
    Image::from_vec(width, height, channels, data)
}

pub fn write_pfm(path: &Path, image: &Image) -> Result<()> {
    let bytes = encode_pfm(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem.pfm")
    }

    #[test]
    fn single_pixel_round_trip() {
        let img = Image::from_vec(1, 1, 3, vec![0.25, 0.5, 1.0]).unwrap();
        let bytes = encode_pfm(&img).unwrap();
        assert_eq!(decode_pfm(&bytes, p()).unwrap(), img);
        assert_eq!(encode_pfm(&decode_pfm(&bytes, p()).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn both_endiannesses_agree() {
        let vals = [1.5f32, -2.25, 3.0e-3, 7.0];
        let mut le = b"Pf\n2 2\n-1.0\n".to_vec();
        let mut be = b"Pf\n2 2\n1.0\n".to_vec();
        for v in vals {
            le.extend_from_slice(&v.to_le_bytes());
            be.extend_from_slice(&v.to_be_bytes());
        }
        let a = decode_pfm(&le, p()).unwrap();
        let b = decode_pfm(&be, p()).unwrap();
        assert_eq!(a, b);
        // first stored row is the bottom one
        assert_eq!(a.at(0, 1)[0], 1.5);
        assert_eq!(a.at(1, 0)[0], 7.0);
    }

    #[test]
    fn truncation_names_offset() {
        let img = Image::zeros(4, 4, 3);
        let mut bytes = encode_pfm(&img).unwrap();
        bytes.truncate(bytes.len() - 5);
        let err = decode_pfm(&bytes, p()).unwrap_err().to_string();
        assert!(err.contains("truncated payload at byte"), "{err}");
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_pfm(b"P6\n1 1\n-1\n", p()).is_err());
        assert!(decode_pfm(b"PF\n0 1\n-1\n", p()).is_err());
        assert!(decode_pfm(b"PF\n1 1\n0\n", p()).is_err());
        assert!(decode_pfm(b"PF\n1", p()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        let img = Image::from_vec(2, 1, 1, vec![0.1f32 as f64, 2.0]).unwrap();
        write_pfm(&path, &img).unwrap();
        assert_eq!(read_pfm(&path).unwrap(), img);
        assert!(matches!(read_pfm(&dir.path().join("missing.pfm")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn lossless_for_finite_f32(
            w in 1usize..6, h in 1usize..6, rgb in any::<bool>(),
            seed in proptest::collection::vec(-1e30f32..1e30, 75)
        ) {
            let c = if rgb { 3 } else { 1 };
            let data: Vec<f64> = seed.iter().take(w * h * c).map(|&v| v as f64).collect();
            let img = Image::from_vec(w, h, c, data).unwrap();
            let bytes = encode_pfm(&img).unwrap();
            let back = decode_pfm(&bytes, p()).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode_pfm(&back).unwrap(), bytes);
        }
    }
}
