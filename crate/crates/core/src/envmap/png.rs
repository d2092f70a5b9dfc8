//! 8-bit (and 16-bit, for high-intensity maps) PNG I/O.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GenericImageView, ImageBuffer, ImageFormat, Luma, Rgb as PixRgb};
use serde::{Deserialize, Serialize};

use super::{AspectPolicy, EnvironmentMap, HighIntensityMap, Range, Rgb};
use crate::error::{Error, Result};

/// Transfer function between stored 8-bit code values and linear RGB.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    #[default]
    Srgb,
    Linear,
}

impl Transfer {
    pub fn name(self) -> &'static str {
        match self {
            Transfer::Srgb => "srgb",
            Transfer::Linear => "linear",
        }
    }

    pub fn decode(self, v: f64) -> f64 {
        match self {
            Transfer::Linear => v,
            Transfer::Srgb => {
                if v <= 0.04045 {
                    v / 12.92
                } else {
                    ((v + 0.055) / 1.055).powf(2.4)
                }
            }
        }
    }

    pub fn encode(self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match self {
            Transfer::Linear => v,
            Transfer::Srgb => {
                if v <= 0.003_130_8 {
                    v * 12.92
                } else {
                    1.055 * v.powf(1.0 / 2.4) - 0.055
                }
            }
        }
    }

    fn lut(self) -> [f64; 256] {
        let mut t = [0.0; 256];
        for (i, v) in t.iter_mut().enumerate() {
            *v = self.decode(i as f64 / 255.0);
        }
        t
    }
}

impl std::str::FromStr for Transfer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srgb" => Ok(Transfer::Srgb),
            "linear" => Ok(Transfer::Linear),
            other => Err(Error::InvalidParameter(format!("unknown transfer {other:?}"))),
        }
    }
}

/// Bit depth used when writing high-intensity maps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn to_u16(v: f64) -> u16 {
    (v * 65535.0).round().clamp(0.0, 65535.0) as u16
}

fn open(bytes: &[u8]) -> Result<DynamicImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?)
}

/// Decoded RGB frame of arbitrary size, values linear in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl RgbFrame {
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }
}

/// Decodes an 8-bit RGB/RGBA/gray PNG into linear values.
pub fn decode_rgb(bytes: &[u8], transfer: Transfer) -> Result<RgbFrame> {
    let img = open(bytes)?;
    match img {
        DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_) => {}
        other => {
            return Err(Error::UnsupportedImage(format!(
                "expected an 8-bit PNG, found {:?}",
                other.color()
            )))
        }
    }
    let (w, h) = img.dimensions();
    let lut = transfer.lut();
    let rgb = img.to_rgb8();
    let pixels = rgb
        .pixels()
        .map(|p| [lut[p[0] as usize], lut[p[1] as usize], lut[p[2] as usize]])
        .collect();
    Ok(RgbFrame {
        width: w as usize,
        height: h as usize,
        pixels,
    })
}

pub fn load_rgb_frame(path: impl AsRef<Path>, transfer: Transfer) -> Result<RgbFrame> {
    decode_rgb(&std::fs::read(path)?, transfer)
}

/// Loads an LDR environment map; values decoded through `transfer`.
pub fn load_ldr(path: impl AsRef<Path>, transfer: Transfer) -> Result<EnvironmentMap> {
    decode_ldr(&std::fs::read(path)?, transfer, AspectPolicy::Strict)
}

pub fn decode_ldr(bytes: &[u8], transfer: Transfer, policy: AspectPolicy) -> Result<EnvironmentMap> {
    let frame = decode_rgb(bytes, transfer)?;
    EnvironmentMap::with_policy(frame.width, frame.height, frame.pixels, Range::Ldr, policy)
}

/// Encodes a map as 8-bit RGB PNG, clamping to `[0, 1]` first.
pub fn encode_ldr(map: &EnvironmentMap, transfer: Transfer) -> Result<Vec<u8>> {
    let (w, h) = map.dims();
    let raw: Vec<u8> = map
        .pixels()
        .iter()
        .flat_map(|p| p.map(|c| to_u8(transfer.encode(c))))
        .collect();
    let buf: ImageBuffer<PixRgb<u8>, _> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).ok_or_else(|| Error::Codec("buffer size".into()))?;
    write_png(DynamicImage::ImageRgb8(buf))
}

pub fn save_ldr(map: &EnvironmentMap, path: impl AsRef<Path>, transfer: Transfer) -> Result<()> {
    std::fs::write(path, encode_ldr(map, transfer)?)?;
    Ok(())
}

fn write_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// High-intensity maps are stored linearly (no transfer function).
pub fn encode_high_intensity(hi: &HighIntensityMap, depth: BitDepth) -> Result<Vec<u8>> {
    let (w, h) = (hi.width() as u32, hi.height() as u32);
    let img = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = hi.values().iter().flat_map(|p| p.map(to_u8)).collect();
            DynamicImage::ImageRgb8(
                ImageBuffer::from_raw(w, h, raw).ok_or_else(|| Error::Codec("buffer size".into()))?,
            )
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = hi.values().iter().flat_map(|p| p.map(to_u16)).collect();
            DynamicImage::ImageRgb16(
                ImageBuffer::from_raw(w, h, raw).ok_or_else(|| Error::Codec("buffer size".into()))?,
            )
        }
    };
    write_png(img)
}

pub fn save_high_intensity(hi: &HighIntensityMap, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    std::fs::write(path, encode_high_intensity(hi, depth)?)?;
    Ok(())
}

/// Reads an 8- or 16-bit PNG as a high-intensity map. Single-channel images
/// are replicated across RGB.
pub fn decode_high_intensity(bytes: &[u8]) -> Result<HighIntensityMap> {
    let img = open(bytes)?;
    let (w, h) = img.dimensions();
    let values: Vec<Rgb> = match &img {
        DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_) => img
            .to_rgb8()
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 255.0))
            .collect(),
        DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => img
            .to_rgb16()
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 65535.0))
            .collect(),
        other => {
            return Err(Error::UnsupportedImage(format!(
                "unsupported bit depth {:?}",
                other.color()
            )))
        }
    };
    HighIntensityMap::new(w as usize, h as usize, values)
}

pub fn load_high_intensity(path: impl AsRef<Path>) -> Result<HighIntensityMap> {
    decode_high_intensity(&std::fs::read(path)?)
}

/// Encodes a boolean grid as an 8-bit grayscale PNG (255 = true).
pub fn encode_mask_bits(width: usize, height: usize, bits: &[bool]) -> Result<Vec<u8>> {
    let raw: Vec<u8> = bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::Codec("buffer size".into()))?;
    write_png(DynamicImage::ImageLuma8(buf))
}

/// Decodes a grayscale PNG; values above 127 are true.
pub fn decode_mask_bits(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let img = open(bytes)?;
    let (w, h) = img.dimensions();
    let bits = img.to_luma8().pixels().map(|p| p[0] > 127).collect();
    Ok((w as usize, h as usize, bits))
}

/// Writes an indexed 8-bit PNG with the given RGB palette.
pub fn encode_indexed(width: usize, height: usize, indices: &[u8], palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = ::png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(::png::ColorType::Indexed);
        enc.set_depth(::png::BitDepth::Eight);
        enc.set_palette(palette.iter().flatten().copied().collect::<Vec<u8>>());
        let mut writer = enc.write_header().map_err(|e| Error::Codec(e.to_string()))?;
        writer
            .write_image_data(indices)
            .map_err(|e| Error::Codec(e.to_string()))?;
    }
    Ok(out)
}

/// Reads raw palette indices from an indexed PNG, or gray levels from an
/// 8-bit grayscale PNG.
pub fn decode_indexed(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut decoder = ::png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(::png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Codec(e.to_string()))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    let color = info.color_type;
    let depth = info.bit_depth;
    if depth != ::png::BitDepth::Eight
        || !matches!(color, ::png::ColorType::Indexed | ::png::ColorType::Grayscale)
    {
        return Err(Error::UnsupportedImage(format!(
            "label images must be 8-bit indexed or grayscale, found {color:?}/{depth:?}"
        )));
    }
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(w * h)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Codec(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    Ok((w, h, buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_reference_values() {
        assert_eq!(Transfer::Srgb.decode(1.0), 1.0);
        assert_eq!(Transfer::Srgb.decode(0.0), 0.0);
        // sRGB 188/255 decodes to ~0.503 linear.
        let mid = Transfer::Srgb.decode(188.0 / 255.0);
        assert!((mid - 0.5).abs() < 0.005, "{mid}");
        for i in 0..=255 {
            let v = i as f64 / 255.0;
            assert!((Transfer::Srgb.encode(Transfer::Srgb.decode(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn ldr_codec_levels() {
        let white = EnvironmentMap::uniform(8, 4, [1.0; 3], Range::Ldr).unwrap();
        let bytes = encode_ldr(&white, Transfer::Srgb).unwrap();
        let back = decode_ldr(&bytes, Transfer::Srgb, AspectPolicy::Strict).unwrap();
        assert!(back.pixels().iter().all(|p| *p == [1.0; 3]));
        let black = EnvironmentMap::uniform(8, 4, [0.0; 3], Range::Ldr).unwrap();
        let bytes = encode_ldr(&black, Transfer::Srgb).unwrap();
        let back = decode_ldr(&bytes, Transfer::Srgb, AspectPolicy::Strict).unwrap();
        assert!(back.pixels().iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn ldr_round_trip_within_one_code() {
        let m = EnvironmentMap::from_fn(16, 8, Range::Ldr, |x, y| {
            [x as f64 / 15.0, y as f64 / 7.0, ((x * y) % 5) as f64 / 4.0]
        })
        .unwrap();
        for t in [Transfer::Srgb, Transfer::Linear] {
            let back = decode_ldr(&encode_ldr(&m, t).unwrap(), t, AspectPolicy::Strict).unwrap();
            for (p, q) in m.pixels().iter().zip(back.pixels()) {
                for c in 0..3 {
                    let (a, b) = (t.encode(p[c]), t.encode(q[c]));
                    assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_image_rejected() {
        assert!(decode_rgb(b"definitely not a png", Transfer::Srgb).is_err());
    }

    #[test]
    fn sixteen_bit_rgb_rejected_as_ldr() {
        let hi = HighIntensityMap::new(4, 2, vec![[0.25; 3]; 8]).unwrap();
        let bytes = encode_high_intensity(&hi, BitDepth::Sixteen).unwrap();
        assert!(matches!(
            decode_rgb(&bytes, Transfer::Linear),
            Err(Error::UnsupportedImage(_))
        ));
        let back = decode_high_intensity(&bytes).unwrap();
        assert!((back.values()[0][0] - 0.25).abs() < 1e-4);
    }

    #[test]
    fn indexed_round_trip() {
        let palette: Vec<[u8; 3]> = (0..150u8).map(|i| [i, 255 - i, i / 2]).collect();
        let idx: Vec<u8> = (0..32).map(|i| (i * 7 % 150) as u8).collect();
        let bytes = encode_indexed(8, 4, &idx, &palette).unwrap();
        let (w, h, back) = decode_indexed(&bytes).unwrap();
        assert_eq!((w, h), (8, 4));
        assert_eq!(back, idx);
    }
}
