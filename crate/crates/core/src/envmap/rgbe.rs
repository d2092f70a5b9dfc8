//! Radiance RGBE (`.hdr`) reader and writer.
//!
//! Only the standard `-Y <height> +X <width>` orientation is handled. Both
//! adaptive run-length scanlines and flat/old-style RLE scanlines are read;
//! the writer emits adaptive RLE whenever the width allows it.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AspectPolicy, EnvironmentMap, Range, Rgb};
use crate::error::{Error, Result};

const MIN_RLE_WIDTH: usize = 8;
const MAX_RLE_WIDTH: usize = 0x7fff;

/// Converts a linear RGB triple to shared-exponent RGBE bytes.
pub fn encode_pixel(rgb: Rgb) -> [u8; 4] {
    let v = rgb[0].max(rgb[1]).max(rgb[2]);
    if v < 1e-32 {
        return [0; 4];
    }
    let (mantissa, exponent) = frexp(v);
    let scale = mantissa * 256.0 / v;
    [
        (rgb[0] * scale) as u8,
        (rgb[1] * scale) as u8,
        (rgb[2] * scale) as u8,
        (exponent + 128) as u8,
    ]
}

/// Inverse of [`encode_pixel`], reconstructing at the mantissa bucket centre.
pub fn decode_pixel(rgbe: [u8; 4]) -> Rgb {
    if rgbe[3] == 0 {
        return [0.0; 3];
    }
    let f = 2f64.powi(rgbe[3] as i32 - (128 + 8));
    [
        (rgbe[0] as f64 + 0.5) * f,
        (rgbe[1] as f64 + 0.5) * f,
        (rgbe[2] as f64 + 0.5) * f,
    ]
}

/// `v = m · 2^e` with `m` in `[0.5, 1)`.
fn frexp(v: f64) -> (f64, i32) {
    let e = v.log2().floor() as i32 + 1;
    let mut m = v / 2f64.powi(e);
    let mut e = e;
    // Correct off-by-one from log2 rounding near powers of two.
    if m >= 1.0 {
        m *= 0.5;
        e += 1;
    } else if m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    (m, e)
}

/// Reads an RGBE file, requiring a 2:1 aspect.
pub fn load_hdr(path: impl AsRef<Path>) -> Result<EnvironmentMap> {
    load_hdr_with_policy(path, AspectPolicy::Strict)
}

pub fn load_hdr_with_policy(path: impl AsRef<Path>, policy: AspectPolicy) -> Result<EnvironmentMap> {
    let bytes = fs::read(path)?;
    decode(&bytes, policy)
}

/// Decodes an in-memory RGBE image.
pub fn decode(bytes: &[u8], policy: AspectPolicy) -> Result<EnvironmentMap> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let (width, height) = read_header(&mut cursor)?;
    let mut pixels = Vec::with_capacity(width * height);
    let mut scanline = vec![[0u8; 4]; width];
    for row in 0..height {
        read_scanline(&mut cursor, &mut scanline, row)?;
        pixels.extend(scanline.iter().map(|&p| decode_pixel(p)));
    }
    EnvironmentMap::with_policy(width, height, pixels, Range::Hdr, policy)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn line(&mut self) -> Option<&str> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).ok()
    }

    fn byte(&mut self) -> Option<u8> {
        let b = *self.bytes.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    fn take4(&mut self) -> Option<[u8; 4]> {
        let s = self.bytes.get(self.pos..self.pos + 4)?;
        self.pos += 4;
        Some([s[0], s[1], s[2], s[3]])
    }

    fn peek4(&self) -> Option<[u8; 4]> {
        let s = self.bytes.get(self.pos..self.pos + 4)?;
        Some([s[0], s[1], s[2], s[3]])
    }
}

fn read_header(c: &mut Cursor<'_>) -> Result<(usize, usize)> {
    let magic = c
        .line()
        .ok_or_else(|| Error::MalformedHeader("missing magic line".into()))?;
    if !(magic.starts_with("#?RADIANCE") || magic.starts_with("#?RGBE")) {
        return Err(Error::MalformedHeader(format!("bad magic {magic:?}")));
    }
    loop {
        let line = c
            .line()
            .ok_or_else(|| Error::MalformedHeader("unterminated header".into()))?;
        if line.is_empty() {
            break;
        }
        if let Some(format) = line.strip_prefix("FORMAT=") {
            if format.trim() != "32-bit_rle_rgbe" {
                return Err(Error::UnsupportedImage(format!("pixel format {format}")));
            }
        }
    }
    let res = c
        .line()
        .ok_or_else(|| Error::MalformedHeader("missing resolution line".into()))?;
    let parts: Vec<&str> = res.split_whitespace().collect();
    match parts.as_slice() {
        ["-Y", h, "+X", w] => {
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::MalformedHeader(format!("bad resolution {res:?}")))
            };
            let (w, h) = (parse(w)?, parse(h)?);
            if w == 0 || h == 0 {
                return Err(Error::InvalidDimensions { width: w, height: h });
            }
            Ok((w, h))
        }
        [_, _, _, _] => Err(Error::UnsupportedImage(format!(
            "orientation {res:?}; only -Y H +X W is supported"
        ))),
        _ => Err(Error::MalformedHeader(format!("bad resolution {res:?}"))),
    }
}

fn read_scanline(c: &mut Cursor<'_>, out: &mut [[u8; 4]], row: usize) -> Result<()> {
    let width = out.len();
    let truncated = || Error::TruncatedScanline { row };
    let head = c.peek4().ok_or_else(truncated)?;
    let adaptive = (MIN_RLE_WIDTH..=MAX_RLE_WIDTH).contains(&width)
        && head[0] == 2
        && head[1] == 2
        && head[2] & 0x80 == 0;
    if !adaptive {
        return read_flat(c, out, row);
    }
    c.take4();
    let encoded_width = ((head[2] as usize) << 8) | head[3] as usize;
    if encoded_width != width {
        return Err(Error::MalformedHeader(format!(
            "scanline {row} width {encoded_width} != {width}"
        )));
    }
    for channel in 0..4 {
        let mut x = 0;
        while x < width {
            let count = c.byte().ok_or_else(truncated)? as usize;
            if count > 128 {
                let run = count - 128;
                let value = c.byte().ok_or_else(truncated)?;
                if x + run > width {
                    return Err(Error::MalformedHeader(format!("run overflows row {row}")));
                }
                for px in &mut out[x..x + run] {
                    px[channel] = value;
                }
                x += run;
            } else {
                if count == 0 || x + count > width {
                    return Err(Error::MalformedHeader(format!("bad literal count in row {row}")));
                }
                for px in &mut out[x..x + count] {
                    px[channel] = c.byte().ok_or_else(truncated)?;
                }
                x += count;
            }
        }
    }
    Ok(())
}

/// Flat pixels, with the old-style `(1, 1, 1, n)` repeat records.
fn read_flat(c: &mut Cursor<'_>, out: &mut [[u8; 4]], row: usize) -> Result<()> {
    let mut x = 0;
    let mut shift = 0;
    while x < out.len() {
        let px = c.take4().ok_or(Error::TruncatedScanline { row })?;
        if px[0] == 1 && px[1] == 1 && px[2] == 1 {
            if x == 0 {
                return Err(Error::MalformedHeader(format!(
                    "repeat record at start of row {row}"
                )));
            }
            let count = (px[3] as usize) << shift;
            let prev = out[x - 1];
            if x + count > out.len() {
                return Err(Error::MalformedHeader(format!("run overflows row {row}")));
            }
            for p in &mut out[x..x + count] {
                *p = prev;
            }
            x += count;
            shift += 8;
        } else {
            out[x] = px;
            x += 1;
            shift = 0;
        }
    }
    Ok(())
}

/// Writes `map` as an RGBE file. Values must be finite and non-negative.
pub fn save_hdr(map: &EnvironmentMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(map)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Encodes `map` to RGBE bytes.
pub fn encode(map: &EnvironmentMap) -> Result<Vec<u8>> {
    for (index, p) in map.pixels().iter().enumerate() {
        for &value in p {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidValue { index, value });
            }
        }
    }
    let (w, h) = map.dims();
    let mut out = Vec::with_capacity(w * h * 4 + 128);
    out.extend_from_slice(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n");
    out.extend_from_slice(format!("-Y {h} +X {w}\n").as_bytes());
    let mut row = vec![[0u8; 4]; w];
    let mut channel = vec![0u8; w];
    for y in 0..h {
        for (x, px) in row.iter_mut().enumerate() {
            *px = encode_pixel(map.get(x, y));
        }
        if !(MIN_RLE_WIDTH..=MAX_RLE_WIDTH).contains(&w) {
            for px in &row {
                out.extend_from_slice(px);
            }
            continue;
        }
        out.extend_from_slice(&[2, 2, (w >> 8) as u8, (w & 0xff) as u8]);
        for ch in 0..4 {
            for (dst, px) in channel.iter_mut().zip(&row) {
                *dst = px[ch];
            }
            rle_channel(&channel, &mut out);
        }
    }
    Ok(out)
}

fn rle_channel(data: &[u8], out: &mut Vec<u8>) {
    const MIN_RUN: usize = 4;
    let mut cur = 0;
    while cur < data.len() {
        // Find the next run of at least MIN_RUN identical bytes.
        let mut beg_run = cur;
        let mut run_count = 0;
        while run_count < MIN_RUN && beg_run < data.len() {
            beg_run += run_count;
            run_count = 1;
            while beg_run + run_count < data.len()
                && run_count < 127
                && data[beg_run] == data[beg_run + run_count]
            {
                run_count += 1;
            }
        }
        if run_count < MIN_RUN {
            beg_run = data.len();
        }
        // Short run right before the long one is cheaper as a run too.
        if beg_run - cur > 1 && beg_run - cur < MIN_RUN {
            let mut nonrun = cur + 1;
            while nonrun < beg_run && data[nonrun] == data[cur] {
                nonrun += 1;
            }
            if nonrun == beg_run {
                out.push((128 + beg_run - cur) as u8);
                out.push(data[cur]);
                cur = beg_run;
            }
        }
        while cur < beg_run {
            let n = (beg_run - cur).min(128);
            out.push(n as u8);
            out.extend_from_slice(&data[cur..cur + n]);
            cur += n;
        }
        if run_count >= MIN_RUN {
            out.push((128 + run_count) as u8);
            out.push(data[beg_run]);
            cur += run_count;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-30)
    }

    #[test]
    fn pixel_codec_reference_values() {
        // Hand-derived: 1.0 = 0.5 * 2^1 -> mantissa byte 128, exponent 129.
        assert_eq!(encode_pixel([1.0, 1.0, 1.0]), [128, 128, 128, 129]);
        assert_eq!(encode_pixel([0.5, 0.25, 0.0]), [128, 64, 0, 128]);
        assert_eq!(encode_pixel([0.0; 3]), [0; 4]);
        let d = decode_pixel([128, 128, 128, 129]);
        assert!(rel(d[0], 1.0) < 0.004);
        let big = decode_pixel(encode_pixel([1000.0; 3]));
        assert!(rel(big[0], 1000.0) < 0.005);
    }

    #[test]
    fn zero_length_is_malformed() {
        assert!(matches!(
            decode(&[], AspectPolicy::Strict),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            decode(b"P6\n", AspectPolicy::Strict),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn truncated_is_detected() {
        let m = EnvironmentMap::uniform(16, 8, [0.7, 0.2, 3.0], Range::Hdr).unwrap();
        let bytes = encode(&m).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            decode(cut, AspectPolicy::Strict),
            Err(Error::TruncatedScanline { row: 7 })
        ));
    }

    #[test]
    fn aspect_policy() {
        let m = EnvironmentMap::with_policy(12, 4, vec![[1.0; 3]; 48], Range::Hdr, AspectPolicy::Lenient)
            .unwrap();
        let bytes = encode(&m).unwrap();
        assert!(matches!(
            decode(&bytes, AspectPolicy::Strict),
            Err(Error::InvalidAspect { .. })
        ));
        assert_eq!(decode(&bytes, AspectPolicy::Lenient).unwrap().dims(), (12, 4));
    }

    #[test]
    fn uniform_half_and_ten_thousand() {
        for v in [0.5, 1e4] {
            let m = EnvironmentMap::uniform(64, 32, [v; 3], Range::Hdr).unwrap();
            let back = decode(&encode(&m).unwrap(), AspectPolicy::Strict).unwrap();
            for p in back.pixels() {
                assert!(rel(p[0], v) < 0.01);
            }
        }
    }

    #[test]
    fn negative_rejected() {
        let m = EnvironmentMap::from_parts(4, 2, vec![[-1.0, 0.0, 0.0]; 8], Range::Hdr);
        assert!(matches!(encode(&m), Err(Error::InvalidValue { .. })));
    }

    #[test]
    fn reads_flat_and_old_rle() {
        // 4x2 is below the adaptive-RLE width, so the writer emits flat pixels.
        let m = EnvironmentMap::from_fn(4, 2, Range::Hdr, |x, y| [x as f64, y as f64, 1.0]).unwrap();
        let back = decode(&encode(&m).unwrap(), AspectPolicy::Strict).unwrap();
        for (p, q) in m.pixels().iter().zip(back.pixels()) {
            // Shared exponent: error is relative to the largest channel.
            let top = p.iter().cloned().fold(0.0, f64::max);
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() <= top / 128.0);
            }
        }
        let mut bytes = b"#?RADIANCE\n\n-Y 1 +X 2\n".to_vec();
        bytes.extend_from_slice(&[128, 64, 0, 128, 1, 1, 1, 1]);
        let old = decode(&bytes, AspectPolicy::Strict).unwrap();
        assert_eq!(old.get(0, 0), old.get(1, 0));
    }

    #[test]
    fn unsupported_orientation() {
        let bytes = b"#?RADIANCE\n\n+Y 1 +X 2\n\0\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(
            decode(&bytes, AspectPolicy::Strict),
            Err(Error::UnsupportedImage(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_within_quantization(
            values in proptest::collection::vec(1e-3f64..1e5, 3 * 32 * 16),
            run in 0usize..20,
        ) {
            // Mix literal stretches with long runs to exercise both RLE paths.
            let mut px: Vec<Rgb> = values.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            for p in px.iter_mut().skip(3).take(run) {
                *p = [2.0, 2.0, 2.0];
            }
            let m = EnvironmentMap::new(32, 16, px, Range::Hdr).unwrap();
            let back = decode(&encode(&m).unwrap(), AspectPolicy::Strict).unwrap();
            for (p, q) in m.pixels().iter().zip(back.pixels()) {
                let max = p[0].max(p[1]).max(p[2]);
                for c in 0..3 {
                    // Shared exponent: error bounded relative to the brightest channel.
                    prop_assert!((p[c] - q[c]).abs() <= max / 128.0);
                }
            }
        }
    }
}
