//! Binary portable graymap (P5) and pixmap (P6) images, 8 bits per sample.

use std::fs;
use std::path::Path;

use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse { offset, msg: msg.into() }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

/// Returns the value, its first byte and the byte after it.
fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize, usize)> {
    let start = skip_space_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(parse_err(start, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let v = text.parse::<usize>().map_err(|_| parse_err(start, format!("{what} out of range")))?;
    Ok((v, start, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(parse_err(0, "missing 'P5'/'P6' magic"));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        _ => return Err(parse_err(1, "only binary P5 and P6 images are supported")),
    };
    let (width, wpos, pos) = read_uint(bytes, 2, "width")?;
    let (height, hpos, pos) = read_uint(bytes, pos, "height")?;
    let (maxval, mpos, pos) = read_uint(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(if width == 0 { wpos } else { hpos }, "image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(mpos, format!("maxval {maxval} is not an 8-bit depth")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(parse_err(pos, "expected a single whitespace byte before pixel data")),
    }
    Ok(Header { channels, width, height, maxval, data_start: pos + 1 })
}

/// Decodes an 8-bit P5/P6 image into `[1,H,W]` values in [−1, 1]; colour
/// images are averaged to one channel.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes)?;
    let n = h.width * h.height * h.channels;
    let avail = bytes.len() - h.data_start;
    if avail < n {
        return Err(parse_err(bytes.len(), format!("pixel data truncated: {avail} of {n} bytes")));
    }
    let px = &bytes[h.data_start..h.data_start + n];
    let scale = h.maxval as f64;
    let data = px
        .chunks(h.channels)
        .map(|c| {
            let mean = c.iter().map(|&b| b as f64).sum::<f64>() / h.channels as f64;
            2.0 * (mean / scale) - 1.0
        })
        .collect();
    Tensor::new(&[1, h.height, h.width], data)
}

/// Encodes a `[1,H,W]` image in [−1, 1] as P5 with maxval 255; values
/// outside the range are clamped.
pub fn encode_image(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims3()?;
    if c != 1 {
        return Err(dim_err!("graymap output needs one channel, got {}", c));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8));
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_image(&fs::read(path)?)
}

pub fn save_image(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_image(img)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_within_quantization() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::rand_uniform(&[1, 7, 9], -1.0, 1.0, &mut r);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img) <= 2.0 / 255.0);
    }

    #[test]
    fn hand_written_graymap() {
        let mut bytes = b"P5\n# two by two\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 51, 204]);
        let img = decode_image(&bytes).unwrap();
        let want = [0.0, 255.0, 51.0, 204.0].map(|v: f64| 2.0 * v / 255.0 - 1.0);
        assert_eq!(img.shape(), &[1, 2, 2]);
        assert_eq!(img.data(), &want);
    }

    #[test]
    fn colour_is_averaged() {
        let mut bytes = b"P6 1 1 255\n".to_vec();
        bytes.extend([0u8, 51, 102]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.data(), &[2.0 * 51.0 / 255.0 - 1.0]);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let cases: [(&[u8], usize); 6] = [
            (b"", 0),
            (b"P2\n1 1\n255\n", 1),
            (b"P5\n2 x\n255\n", 5),
            (b"P5\n2 2\n65535\n", 7),
            (b"P5\n0 2\n255\n", 3),
            (b"P5\n2 2\n255\n\x01\x02", 13),
        ];
        for (bytes, offset) in cases {
            match decode_image(bytes) {
                Err(Error::Parse { offset: o, .. }) => assert_eq!(o, offset, "{:?}", String::from_utf8_lossy(bytes)),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn encode_rejects_multichannel() {
        assert!(encode_image(&Tensor::zeros(&[2, 2, 2])).is_err());
    }
}
