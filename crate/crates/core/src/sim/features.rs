use serde::{Deserialize, Serialize};

use super::render::Frame;
use crate::{Error, Result};

/// Shape of the pooled feature map: `rows x cols x channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
}

impl Default for FeatureShape {
    fn default() -> Self {
        Self { d1: 8, d2: 8, d3: 3 }
    }
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        self.d1 * self.d2 * self.d3
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalized observation features in `[-1, 1]`, laid out row, column, channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub shape: FeatureShape,
    pub features: Vec<f64>,
    /// Viewpoint the observation was captured from, if any.
    pub action: Option<usize>,
}

impl Observation {
    pub fn zeros(shape: FeatureShape) -> Self {
        Self {
            shape,
            features: vec![0.0; shape.len()],
            action: None,
        }
    }
}

/// Average-pools the frame into `d1 x d2` cells per channel and maps `[0,255]` to `[-1,1]`.
pub fn extract_features(frame: &Frame, shape: FeatureShape) -> Result<Observation> {
    let FeatureShape { d1, d2, d3 } = shape;
    if d3 != 3 {
        return Err(Error::Config(format!("feature depth must be 3 (rgb), got {d3}")));
    }
    if d1 == 0 || d2 == 0 || frame.height % d1 != 0 || frame.width % d2 != 0 {
        return Err(Error::Config(format!(
            "feature grid {d1}x{d2} does not divide frame {}x{}",
            frame.height, frame.width
        )));
    }
    let (ch, cw) = (frame.height / d1, frame.width / d2);
    let count = (ch * cw) as f64;
    let mut features = Vec::with_capacity(shape.len());
    for gr in 0..d1 {
        for gc in 0..d2 {
            let mut sums = [0u64; 3];
            for r in gr * ch..(gr + 1) * ch {
                let start = (r * frame.width + gc * cw) * 3;
                for px in frame.rgb[start..start + cw * 3].chunks_exact(3) {
                    for c in 0..3 {
                        sums[c] += px[c] as u64;
                    }
                }
            }
            for s in sums {
                let v = (s as f64 / count) / 127.5 - 1.0;
                features.push(v.clamp(-1.0, 1.0));
            }
        }
    }
    Ok(Observation {
        shape,
        features,
        action: None,
    })
}
