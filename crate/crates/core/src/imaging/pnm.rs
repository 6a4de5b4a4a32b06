//! 16-bit binary PGM (P5) / PPM (P6) with big-endian samples, maxval 65535.

use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

const MAXVAL: f64 = 65535.0;

pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    out.reserve(img.len() * 2);
    for &v in img.data() {
        let code = (v.clamp(0.0, 1.0) * MAXVAL).round() as u16;
        out.extend_from_slice(&code.to_be_bytes());
    }
    out
}

fn bad(reason: impl Into<String>) -> Error {
    Error::BadImageFile {
        path: None,
        reason: reason.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(bad(format!("unsupported magic {m:?}"))),
    };
    let num = |s: String| {
        s.parse::<usize>()
            .map_err(|_| bad(format!("bad header field {s:?}")))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 65535 {
        return Err(bad(format!("maxval {maxval} (only 65535 is supported)")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = width * height * channels * 2;
    if bytes.len() < start + need {
        return Err(bad("truncated raster"));
    }
    let data = bytes[start..start + need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / MAXVAL)
        .collect();
    Image::from_vec(width, height, channels, data)
}

pub fn write(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::BadImageFile { reason, .. } => Error::BadImageFile {
            path: Some(path.to_path_buf()),
            reason,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let img = Image::filled(2, 1, 1, 1.0);
        let bytes = encode(&img);
        assert_eq!(&bytes[..bytes.len() - 4], b"P5\n2 1\n65535\n");
        assert_eq!(&bytes[bytes.len() - 4..], &[0xff, 0xff, 0xff, 0xff]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"P3\n1 1\n255\n").is_err());
        assert!(decode(b"P5\n2 2\n65535\n\x00\x01").is_err());
        assert!(decode(b"P5\n1 1\n255\n\x00").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn bytes_roundtrip(w in 1usize..6, h in 1usize..6, rgb in any::<bool>(), codes in prop::collection::vec(any::<u16>(), 108)) {
            let c = if rgb { 3 } else { 1 };
            let data = codes[..w * h * c].iter().map(|&v| v as f64 / 65535.0).collect();
            let img = Image::from_vec(w, h, c, data).unwrap();
            let bytes = encode(&img);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
