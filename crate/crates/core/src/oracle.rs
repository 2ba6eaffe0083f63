//! Synthetic operator that prefers the reconstruction with better ROI quality.
//!
//! Score = `w_s` x mean ROI-masked SSIM over the eval poses (floored at 0)
//! + `w_c` x fraction of ROI-surface voxels that are occupied.

use serde::{Deserialize, Serialize};

use crate::metrics::ssim;
use crate::pref::Mu;
use crate::recon::{render_voxels, roi_mask_of, VoxelReconstruction};
use crate::sim::{render, Camera, CameraIntrinsics, Frame, Pose, SceneModel, ViewSphere};
use crate::{Error, Result};

/// Held-out viewing positions used to judge reconstructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalPoseConfig {
    /// Number of poses kept (closest to the ROI direction).
    pub count: usize,
    /// Candidate ring density; candidates sit half a step off the action azimuths.
    pub azimuth_count: usize,
    pub elevations_deg: Vec<f64>,
}

impl Default for EvalPoseConfig {
    fn default() -> Self {
        Self {
            count: 8,
            azimuth_count: 24,
            elevations_deg: vec![30.0, 50.0],
        }
    }
}

impl EvalPoseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.azimuth_count == 0 || self.elevations_deg.is_empty() {
            return Err(Error::Config("eval pose set must be non-empty".into()));
        }
        if self.count > self.azimuth_count * self.elevations_deg.len() {
            return Err(Error::Config("more eval poses requested than candidates".into()));
        }
        Ok(())
    }

    /// Eval poses on the radius of `sphere`, ordered by distance to the ROI centroid.
    pub fn poses(&self, scene: &SceneModel, sphere: &ViewSphere) -> Result<Vec<Pose>> {
        self.validate()?;
        let step = std::f64::consts::TAU / self.azimuth_count as f64;
        let mut cands = Vec::new();
        for el in &self.elevations_deg {
            for k in 0..self.azimuth_count {
                let pose = sphere.orbit_pose((k as f64 + 0.5) * step, el.to_radians(), sphere.radius);
                cands.push(pose);
            }
        }
        let roi = scene.roi_centroid();
        // stable sort keeps candidate order on ties
        cands.sort_by(|a, b| a.position.distance(roi).total_cmp(&b.position.distance(roi)));
        cands.truncate(self.count);
        Ok(cands)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub w_s: f64,
    pub w_c: f64,
    /// Score gap below which a pair is skipped.
    pub delta: f64,
    pub eval: EvalPoseConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            w_s: 0.7,
            w_c: 0.3,
            delta: 0.01,
            eval: EvalPoseConfig::default(),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_s < 0.0 || self.w_c < 0.0 || ((self.w_s + self.w_c) - 1.0).abs() > 1e-12 {
            return Err(Error::Config("oracle weights must be non-negative and sum to 1".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Config("oracle tie threshold must be non-negative".into()));
        }
        self.eval.validate()
    }
}

/// Voxels of a `resolution^3` grid over the scene bounds that contain a visible ROI surface point.
///
/// Visibility is sampled densely from an orbit of the view-sphere radius at
/// `samples x samples` pixels per view.
pub fn roi_surface_voxels(scene: &SceneModel, sphere: &ViewSphere, resolution: usize, samples: usize) -> Result<Vec<bool>> {
    let grid = VoxelReconstruction::empty(resolution, scene.bounds);
    let mut surface = vec![false; grid.len()];
    let intr = CameraIntrinsics {
        width: samples,
        height: samples,
        fov_y: 50f64.to_radians(),
    };
    for el in [10.0f64, 25.0, 40.0, 55.0, 70.0, 85.0] {
        for k in 0..24 {
            let phi = std::f64::consts::TAU * k as f64 / 24.0;
            let pose = sphere.orbit_pose(phi, el.to_radians(), sphere.radius);
            let frame = render(scene, &pose, &intr)?;
            let cam = Camera::new(&pose, &intr)?;
            for row in 0..samples {
                for col in 0..samples {
                    let p = row * samples + col;
                    let Some(id) = frame.hit_id[p] else { continue };
                    if !scene.roi_ids.contains(&id) {
                        continue;
                    }
                    let hit = cam.origin + cam.ray_dir(col, row) * frame.depth[p] as f64;
                    if let Some(v) = grid.voxel_of(hit) {
                        surface[v] = true;
                    }
                }
            }
        }
    }
    Ok(surface)
}

/// Precomputed references for scoring many reconstructions of one scene.
#[derive(Debug, Clone)]
pub struct Oracle {
    config: OracleConfig,
    scene: SceneModel,
    intrinsics: CameraIntrinsics,
    poses: Vec<Pose>,
    references: Vec<Frame>,
    masks: Vec<Vec<bool>>,
    resolution: usize,
    surface: Vec<bool>,
    surface_count: usize,
}

impl Oracle {
    pub fn new(
        scene: &SceneModel,
        sphere: &ViewSphere,
        intrinsics: &CameraIntrinsics,
        resolution: usize,
        config: &OracleConfig,
    ) -> Result<Self> {
        config.validate()?;
        let poses = config.eval.poses(scene, sphere)?;
        Self::with_poses(scene, sphere, intrinsics, resolution, config, poses)
    }

    /// Uses an explicit eval pose list; poses with an empty ROI mask are dropped.
    pub fn with_poses(
        scene: &SceneModel,
        sphere: &ViewSphere,
        intrinsics: &CameraIntrinsics,
        resolution: usize,
        config: &OracleConfig,
        poses: Vec<Pose>,
    ) -> Result<Self> {
        config.validate()?;
        let mut kept = Vec::new();
        let mut references = Vec::new();
        let mut masks = Vec::new();
        for pose in poses {
            let frame = render(scene, &pose, intrinsics)?;
            let mask = roi_mask_of(scene, &frame);
            if mask.iter().any(|&m| m) {
                kept.push(pose);
                references.push(frame);
                masks.push(mask);
            }
        }
        if kept.is_empty() {
            return Err(Error::Domain("no eval pose sees the region of interest".into()));
        }
        let surface = roi_surface_voxels(scene, sphere, resolution, 160)?;
        let surface_count = surface.iter().filter(|&&s| s).count();
        if surface_count == 0 {
            return Err(Error::Domain("region of interest has no visible surface".into()));
        }
        Ok(Self {
            config: config.clone(),
            scene: scene.clone(),
            intrinsics: *intrinsics,
            poses: kept,
            references,
            masks,
            resolution,
            surface,
            surface_count,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn eval_poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn references(&self) -> &[Frame] {
        &self.references
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn scene(&self) -> &SceneModel {
        &self.scene
    }

    /// Fraction of ROI-surface voxels occupied in `recon`.
    pub fn coverage(&self, recon: &VoxelReconstruction) -> Result<f64> {
        if recon.resolution != self.resolution || recon.bounds != self.scene.bounds {
            return Err(Error::Domain("reconstruction grid differs from the oracle's".into()));
        }
        let hit = self
            .surface
            .iter()
            .zip(&recon.occupied)
            .filter(|(s, o)| **s && **o)
            .count();
        Ok(hit as f64 / self.surface_count as f64)
    }

    /// Mean ROI-masked SSIM over eval poses, each floored at 0.
    pub fn clarity(&self, recon: &VoxelReconstruction) -> Result<f64> {
        let mut total = 0.0;
        for ((pose, reference), mask) in self.poses.iter().zip(&self.references).zip(&self.masks) {
            let img = render_voxels(recon, pose, &self.intrinsics, &self.scene.light)?;
            total += ssim(&img, reference, Some(mask))?.max(0.0);
        }
        Ok(total / self.poses.len() as f64)
    }

    pub fn score(&self, recon: &VoxelReconstruction) -> Result<f64> {
        Ok(self.config.w_s * self.clarity(recon)? + self.config.w_c * self.coverage(recon)?)
    }

    pub fn label(&self, left: &VoxelReconstruction, right: &VoxelReconstruction) -> Result<Option<Mu>> {
        Ok(oracle_label(self.score(left)?, self.score(right)?, self.config.delta))
    }
}

/// One-shot scoring; builds the reference set for `eval_poses` on every call.
pub fn score_reconstruction(
    recon: &VoxelReconstruction,
    scene: &SceneModel,
    sphere: &ViewSphere,
    eval_poses: &[Pose],
    intrinsics: &CameraIntrinsics,
    config: &OracleConfig,
) -> Result<f64> {
    Oracle::with_poses(scene, sphere, intrinsics, recon.resolution, config, eval_poses.to_vec())?.score(recon)
}

/// `Left` / `Right` when one score beats the other by more than `delta`, otherwise a skip.
pub fn oracle_label(score_left: f64, score_right: f64, delta: f64) -> Option<Mu> {
    if score_left > score_right + delta {
        Some(Mu::Left)
    } else if score_right > score_left + delta {
        Some(Mu::Right)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::{fuse, Capture};
    use crate::sim::{build_scene, SceneConfig};

    #[test]
    fn label_thresholds() {
        assert_eq!(oracle_label(0.9, 0.5, 0.01), Some(Mu::Left));
        assert_eq!(oracle_label(0.5, 0.9, 0.01), Some(Mu::Right));
        assert_eq!(oracle_label(0.700, 0.705, 0.01), None);
        assert_eq!(oracle_label(0.5, 0.5, 0.0), None);
    }

    #[test]
    fn config_validation() {
        assert!(OracleConfig::default().validate().is_ok());
        let bad = OracleConfig {
            w_s: 0.5,
            w_c: 0.6,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let neg = OracleConfig {
            delta: -0.1,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn eval_poses_face_the_roi() {
        let scene = build_scene(4, &SceneConfig::default()).unwrap();
        let sphere = ViewSphere::default();
        let poses = EvalPoseConfig::default().poses(&scene, &sphere).unwrap();
        assert_eq!(poses.len(), 8);
        let roi = scene.roi_centroid();
        let all = {
            let c = EvalPoseConfig {
                count: 48,
                ..Default::default()
            };
            c.poses(&scene, &sphere).unwrap()
        };
        let worst_kept = poses.iter().map(|p| p.position.distance(roi)).fold(0.0, f64::max);
        assert!(all[8..].iter().all(|p| p.position.distance(roi) >= worst_kept));
    }

    #[test]
    fn empty_reconstruction_scores_background_clarity_only() {
        let scene = build_scene(1, &SceneConfig::default()).unwrap();
        let sphere = ViewSphere::default();
        let intr = CameraIntrinsics::default();
        let oracle = Oracle::new(&scene, &sphere, &intr, 24, &OracleConfig::default()).unwrap();
        let empty = VoxelReconstruction::empty(24, scene.bounds);
        assert_eq!(oracle.coverage(&empty).unwrap(), 0.0);
        let s = oracle.score(&empty).unwrap();
        assert!((s - 0.7 * oracle.clarity(&empty).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn more_views_score_higher_and_scores_are_deterministic() {
        let scene = build_scene(2, &SceneConfig::default()).unwrap();
        let sphere = ViewSphere::default();
        let intr = CameraIntrinsics::default();
        let oracle = Oracle::new(&scene, &sphere, &intr, 24, &OracleConfig::default()).unwrap();
        let caps: Vec<Capture> = (1..=sphere.len())
            .map(|a| {
                let pose = sphere.viewpoint_pose(a).unwrap();
                Capture {
                    frame: render(&scene, &pose, &intr).unwrap(),
                    pose,
                    intrinsics: intr,
                    action: a,
                }
            })
            .collect();
        let full = fuse(&caps, scene.bounds, 24).unwrap();
        let one = fuse(&caps[..1], scene.bounds, 24).unwrap();
        let s_full = oracle.score(&full).unwrap();
        let s_one = oracle.score(&one).unwrap();
        assert!(s_full >= s_one, "{s_full} < {s_one}");
        assert_eq!(s_full.to_bits(), oracle.score(&full.clone()).unwrap().to_bits());
        assert_eq!(oracle.label(&full, &one).unwrap(), oracle.label(&one, &full).unwrap().map(Mu::flip));
    }
}
