use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes an 8-bit grayscale PNG.
pub(crate) fn write_gray(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    encode_gray(file, width, height, pixels)
}

pub(crate) fn encode_gray<W: std::io::Write>(w: W, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    let mut enc = png::Encoder::new(w, width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer.finish().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}
