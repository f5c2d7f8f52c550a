//! PNG reading and writing for rasters.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{normalize_ingest, Raster};

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an 8- or 16-bit grayscale or RGB PNG (alpha is dropped).
pub fn read_png(path: &Path) -> Result<Raster> {
    let file = File::open(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_channels, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(png_err(path, format!("unsupported color type {other:?}"))),
    };
    let bits = match info.bit_depth {
        png::BitDepth::Eight => 8u8,
        png::BitDepth::Sixteen => 16,
        other => return Err(png_err(path, format!("unsupported bit depth {other:?}"))),
    };
    let bytes = &buf[..info.buffer_size()];
    let samples: Vec<u16> = if bits == 8 {
        bytes.iter().map(|b| u16::from(*b)).collect()
    } else {
        bytes.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    };
    let raw: Vec<u16> = samples
        .chunks_exact(src_channels)
        .flat_map(|px| px[..keep].to_vec())
        .collect();
    normalize_ingest(&raw, w, h, keep, bits)
}

/// Writes an 8-bit PNG, rounding values to the nearest level.
pub fn write_png(raster: &Raster, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        raster.width() as u32,
        raster.height() as u32,
    );
    encoder.set_color(if raster.channels() == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    let bytes: Vec<u8> = raster
        .data()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    writer.write_image_data(&bytes).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))?;
    Ok(())
}

/// In-memory PNG encoding of an 8-bit raster.
pub fn encode_png(raster: &Raster) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, raster.width() as u32, raster.height() as u32);
        encoder.set_color(if raster.channels() == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Format(e.to_string()))?;
        let bytes: Vec<u8> = raster
            .data()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_round_trip() {
        let data: Vec<f32> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as f32 / 255.0).collect();
        let r = Raster::new(4, 3, 3, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_png(&r, &p).unwrap();
        assert_eq!(read_png(&p).unwrap(), r);

        let g = Raster::new(2, 2, 1, vec![0.0, 1.0, 128.0 / 255.0, 3.0 / 255.0]).unwrap();
        write_png(&g, &p).unwrap();
        assert_eq!(read_png(&p).unwrap(), g);
        assert!(!encode_png(&g).unwrap().is_empty());
    }
}
