//! Reconstruction fidelity (PSNR, SSIM) and trajectory efficiency (path length).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::sim::{Frame, Pose};
use crate::{Error, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn check_mask(a: &Frame, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != a.pixel_count() {
            return Err(Error::Domain("mask size does not match frame".into()));
        }
        if !m.iter().any(|&v| v) {
            return Err(Error::Domain("mask selects no pixels".into()));
        }
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all three channels jointly.
///
/// Returns `f64::INFINITY` when the (masked) images are identical.
pub fn psnr(a: &Frame, b: &Frame, mask: Option<&[bool]>) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Domain("frame dimensions differ".into()));
    }
    check_mask(a, mask)?;
    let mut sse = 0.0;
    let mut n = 0usize;
    for (p, (pa, pb)) in a.rgb.chunks_exact(3).zip(b.rgb.chunks_exact(3)).enumerate() {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for ch in 0..3 {
            let d = pa[ch] as f64 - pb[ch] as f64;
            sse += d * d;
        }
        n += 3;
    }
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

fn luminance(f: &Frame) -> Vec<f64> {
    f.rgb
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-(x * x) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering; output is `(w-10) x (h-10)`.
fn filter(img: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for r in 0..h {
        let row = &img[r * w..(r + 1) * w];
        for c in 0..ow {
            tmp[r * ow + c] = k.iter().zip(&row[c..c + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..WINDOW).map(|i| k[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Single-scale SSIM on Rec.601 luminance with an 11x11 Gaussian window (sigma 1.5).
///
/// Averages the SSIM map over window centers; with a mask, only over centers
/// where the mask is set.
pub fn ssim(a: &Frame, b: &Frame, mask: Option<&[bool]>) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Domain("frame dimensions differ".into()));
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::Domain(format!(
            "frame {}x{} smaller than the {WINDOW}x{WINDOW} window",
            a.width, a.height
        )));
    }
    check_mask(a, mask)?;
    let (w, h) = (a.width, a.height);
    let ya = luminance(a);
    let yb = luminance(b);
    let aa: Vec<f64> = ya.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = yb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ya.iter().zip(&yb).map(|(x, y)| x * y).collect();
    let k = gaussian_window();
    let mu_a = filter(&ya, w, h, &k);
    let mu_b = filter(&yb, w, h, &k);
    let e_aa = filter(&aa, w, h, &k);
    let e_bb = filter(&bb, w, h, &k);
    let e_ab = filter(&ab, w, h, &k);

    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let ow = w - WINDOW + 1;
    let half = WINDOW / 2;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, ((((ma, mb), saa), sbb), sab)) in mu_a.iter().zip(&mu_b).zip(&e_aa).zip(&e_bb).zip(&e_ab).enumerate() {
        if let Some(m) = mask {
            let (r, c) = (i / ow + half, i % ow + half);
            if !m[r * w + c] {
                continue;
            }
        }
        let var_a = saa - ma * ma;
        let var_b = sbb - mb * mb;
        let cov = sab - ma * mb;
        let v = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Domain("mask selects no SSIM window centers".into()));
    }
    Ok((sum / n as f64).clamp(-1.0, 1.0))
}

/// Total Euclidean distance between consecutive camera positions.
pub fn path_length(poses: &[Pose]) -> Result<f64> {
    if poses.is_empty() {
        return Err(Error::Domain("path length of an empty pose sequence".into()));
    }
    Ok(poses.windows(2).map(|w| w[0].position.distance(w[1].position)).sum())
}

/// Decibel value whose infinite case serializes as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Db(pub f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() && self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Db(v)),
            Raw::Str(s) if s == "inf" => Ok(Db(f64::INFINITY)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid dB value {s:?}"))),
        }
    }
}

impl std::fmt::Display for Db {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{:.4}", self.0)
        }
    }
}

/// Metrics at one evaluation pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    pub pose_index: usize,
    pub psnr: Db,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub masked_psnr: Option<Db>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub masked_ssim: Option<f64>,
}

impl PoseMetrics {
    /// Full-frame and (when the mask is non-empty) ROI-masked metrics of `rendered` against `reference`.
    pub fn compute(pose_index: usize, reference: &Frame, rendered: &Frame, mask: &[bool]) -> Result<Self> {
        let psnr_full = psnr(reference, rendered, None)?;
        let ssim_full = ssim(reference, rendered, None)?;
        let (masked_psnr, masked_ssim) = if mask.iter().any(|&m| m) {
            let p = psnr(reference, rendered, Some(mask))?;
            // the mask may cover only border pixels that host no window center
            let s = ssim(reference, rendered, Some(mask)).ok();
            (Some(Db(p)), s)
        } else {
            (None, None)
        };
        Ok(Self {
            pose_index,
            psnr: Db(psnr_full),
            ssim: ssim_full,
            masked_psnr,
            masked_ssim,
        })
    }
}

/// Aggregated fidelity and efficiency metrics of one reconstruction (or a mean over several).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: Db,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub masked_psnr: Option<Db>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub masked_ssim: Option<f64>,
    pub path_length: f64,
    pub per_pose: Vec<PoseMetrics>,
    /// LPIPS needs a pretrained network and is not computed.
    pub lpips: Option<f64>,
}

impl MetricReport {
    pub fn from_poses(per_pose: Vec<PoseMetrics>, path_length: f64) -> Self {
        let n = per_pose.len().max(1) as f64;
        let psnr = per_pose.iter().map(|p| p.psnr.0).sum::<f64>() / n;
        let ssim = per_pose.iter().map(|p| p.ssim).sum::<f64>() / n;
        let mp: Vec<f64> = per_pose.iter().filter_map(|p| p.masked_psnr.map(|d| d.0)).collect();
        let ms: Vec<f64> = per_pose.iter().filter_map(|p| p.masked_ssim).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Self {
            psnr: Db(psnr),
            ssim,
            masked_psnr: mean(&mp).map(Db),
            masked_ssim: mean(&ms),
            path_length,
            per_pose,
            lpips: None,
        }
    }
}
