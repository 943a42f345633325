//! 8-bit PNG reading and writing for RGB images and grayscale masks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use peel4d_core::image::{Image, Mask};

#[derive(Debug, thiserror::Error)]
pub enum PngError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Decode(#[from] png::DecodingError),
    #[error("{0}")]
    Encode(#[from] png::EncodingError),
    #[error("expected an 8-bit {expected} image, found {found}")]
    Format { expected: &'static str, found: String },
}

/// Decoded 8-bit pixels, `channels` bytes per pixel.
pub struct Pixels {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn decode(bytes: impl std::io::Read) -> Result<Pixels, PngError> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    if info.bit_depth != png::BitDepth::Eight {
        return Err(PngError::Format { expected: "8-bit", found: format!("{:?} bit depth", info.bit_depth) });
    }
    let channels = info.color_type.samples();
    Ok(Pixels { width: info.width as usize, height: info.height as usize, channels, data: buf })
}

fn read(path: &Path) -> Result<Pixels, PngError> {
    decode(BufReader::new(File::open(path)?))
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Image {
    Image { width, height, data: rgb.iter().map(|&b| b as f32 / 255.0).collect() }
}

pub fn image_to_rgb8(img: &Image) -> Vec<u8> {
    img.data.iter().map(|&v| to_u8(v as f64)).collect()
}

pub fn read_rgb(path: &Path) -> Result<Image, PngError> {
    let p = read(path)?;
    let rgb: Vec<u8> = match p.channels {
        3 => p.data,
        4 => p.data.chunks_exact(4).flat_map(|c| [c[0], c[1], c[2]]).collect(),
        n => return Err(PngError::Format { expected: "RGB", found: format!("{n} channels") }),
    };
    Ok(image_from_rgb8(p.width, p.height, &rgb))
}

/// Raw 8-bit grayscale values.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>), PngError> {
    let p = read(path)?;
    if p.channels != 1 {
        return Err(PngError::Format { expected: "grayscale", found: format!("{} channels", p.channels) });
    }
    Ok((p.width, p.height, p.data))
}

pub fn encode_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>, PngError> {
    let mut out = Vec::new();
    write_to(&mut out, width, height, png::ColorType::Rgb, rgb)?;
    Ok(out)
}

fn write_to(w: impl Write, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<(), PngError> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

pub fn write_rgb(path: &Path, img: &Image) -> Result<(), PngError> {
    let f = BufWriter::new(File::create(path)?);
    write_to(f, img.width, img.height, png::ColorType::Rgb, &image_to_rgb8(img))
}

/// Writes a mask as 0 / 255 grayscale.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), PngError> {
    let data: Vec<u8> = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let f = BufWriter::new(File::create(path)?);
    write_to(f, mask.width, mask.height, png::ColorType::Grayscale, &data)
}

pub fn decode_rgb8(bytes: &[u8]) -> Result<Pixels, PngError> {
    decode(Cursor::new(bytes))
}
