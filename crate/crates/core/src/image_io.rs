//! PNG encoding of frames, with an optional raw depth sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use crate::experiment::write_atomic;
use crate::sim::Frame;
use crate::{Error, Result};

/// 8-bit RGB PNG, default compression. Identical frames give identical bytes.
pub fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width as u32, frame.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        w.write_image_data(&frame.rgb).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB PNG. Depth is unknown (infinite) and no hit ids are set.
pub fn decode_png(bytes: &[u8]) -> Result<Frame> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("unsupported PNG layout {:?}/{:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok(Frame::from_rgb(info.width as usize, info.height as usize, buf))
}

fn depth_path(png_path: &Path) -> PathBuf {
    png_path.with_extension("depth")
}

/// Writes `path` (PNG) and a sibling `.depth` file of little-endian f32 values.
pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    write_atomic(path, &encode_png(frame)?)?;
    let depth: Vec<u8> = frame.depth.iter().flat_map(|d| d.to_le_bytes()).collect();
    write_atomic(&depth_path(path), &depth)
}

/// Reads a frame written by [`write_frame`]; the depth sidecar is optional.
pub fn read_frame(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut frame = decode_png(&bytes)?;
    let dp = depth_path(path);
    if dp.exists() {
        let raw = fs::read(&dp).map_err(|e| Error::io(&dp, e))?;
        if raw.len() != frame.pixel_count() * 4 {
            return Err(Error::Data(format!("depth sidecar {} has the wrong size", dp.display())));
        }
        frame.depth = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
    }
    Ok(frame)
}
