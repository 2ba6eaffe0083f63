use rayon::prelude::*;

use super::camera::{Camera, CameraIntrinsics, Pose};
use super::scene::SceneModel;
use crate::{Error, Result};

/// Color of pixels whose ray hits nothing.
pub const BACKGROUND: [u8; 3] = [128, 128, 128];

/// An RGB image with per-pixel range (meters along the ray) and primitive id.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Row-major, three bytes per pixel.
    pub rgb: Vec<u8>,
    /// Row-major, `+inf` where nothing was hit.
    pub depth: Vec<f32>,
    pub hit_id: Vec<Option<u32>>,
}

impl Frame {
    pub fn background(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            rgb: BACKGROUND.repeat(n),
            depth: vec![f32::INFINITY; n],
            hit_id: vec![None; n],
        }
    }

    /// Frame with the given colors and no geometry (depth `+inf`, no hits).
    pub fn from_rgb(width: usize, height: usize, rgb: Vec<u8>) -> Self {
        assert_eq!(rgb.len(), width * height * 3, "rgb buffer size mismatch");
        let n = width * height;
        Self {
            width,
            height,
            rgb,
            depth: vec![f32::INFINITY; n],
            hit_id: vec![None; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Quantizes a real intensity in `[0,1]` to 8 bits, rounding half up.
pub(crate) fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Quantizes a shaded real color.
pub fn quantize_color(c: [f64; 3]) -> [u8; 3] {
    c.map(quantize)
}

/// Raycasts the scene from `pose`: nearest hit per pixel, headlight diffuse shading.
pub fn render(scene: &SceneModel, pose: &Pose, intrinsics: &CameraIntrinsics) -> Result<Frame> {
    let cam = Camera::new(pose, intrinsics)?;
    if let Some(p) = scene.primitives.iter().find(|p| p.contains(cam.origin)) {
        return Err(Error::Geometry(format!("camera is inside primitive {}", p.id)));
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut frame = Frame::background(w, h);
    let light = scene.light;
    frame
        .rgb
        .par_chunks_mut(w * 3)
        .zip(frame.depth.par_chunks_mut(w))
        .zip(frame.hit_id.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, ((rgb, depth), hit))| {
            for col in 0..w {
                let dir = cam.ray_dir(col, row);
                if let Some((t, n, idx)) = scene.trace(cam.origin, dir) {
                    let prim = &scene.primitives[idx];
                    let s = light.shade(n, dir);
                    rgb[col * 3] = quantize(prim.albedo.x * s);
                    rgb[col * 3 + 1] = quantize(prim.albedo.y * s);
                    rgb[col * 3 + 2] = quantize(prim.albedo.z * s);
                    depth[col] = t as f32;
                    hit[col] = Some(prim.id);
                }
            }
        });
    Ok(frame)
}
