//! Viewpoint-selection environment over a discrete view sphere.
//!
//! The scene is static, so every viewpoint's capture is rendered once and
//! cached; stepping the environment is a table lookup.

use rand::Rng;

use crate::recon::Capture;
use crate::sim::{
    extract_features, render, CameraIntrinsics, FeatureShape, Frame, Observation, Pose, SceneModel, Vec3, ViewSphere,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ViewpointEnv {
    shape: FeatureShape,
    episode_len: usize,
    allow_repeats: bool,
    observations: Vec<Observation>,
    positions: Vec<Vec3>,
    captures: Vec<Capture>,
}

impl ViewpointEnv {
    /// Renders every viewpoint of `sphere` and pools its features.
    pub fn from_scene(
        scene: &SceneModel,
        sphere: &ViewSphere,
        intrinsics: &CameraIntrinsics,
        shape: FeatureShape,
        episode_len: usize,
        allow_repeats: bool,
    ) -> Result<Self> {
        sphere.validate(Some(&scene.bounds))?;
        if episode_len == 0 {
            return Err(Error::Config("episode length must be positive".into()));
        }
        if !allow_repeats && episode_len > sphere.len() {
            return Err(Error::Config(format!(
                "{episode_len} distinct captures requested from {} viewpoints",
                sphere.len()
            )));
        }
        let mut observations = Vec::with_capacity(sphere.len());
        let mut captures = Vec::with_capacity(sphere.len());
        for a in 1..=sphere.len() {
            let pose = sphere.viewpoint_pose(a)?;
            let frame = render(scene, &pose, intrinsics)?;
            let mut obs = extract_features(&frame, shape)?;
            obs.action = Some(a);
            observations.push(obs);
            captures.push(Capture {
                frame,
                pose,
                intrinsics: *intrinsics,
                action: a,
            });
        }
        let positions = captures.iter().map(|c| c.pose.position).collect();
        Ok(Self {
            shape,
            episode_len,
            allow_repeats,
            observations,
            positions,
            captures,
        })
    }

    /// A contextless bandit: constant observation, one step per episode.
    pub fn bandit(action_count: usize, shape: FeatureShape) -> Self {
        let observations = (1..=action_count)
            .map(|a| Observation {
                action: Some(a),
                ..Observation::zeros(shape)
            })
            .collect();
        let positions = (0..action_count)
            .map(|k| {
                let phi = std::f64::consts::TAU * k as f64 / action_count as f64;
                Vec3::new(phi.cos(), phi.sin(), 0.0)
            })
            .collect();
        Self {
            shape,
            episode_len: 1,
            allow_repeats: true,
            observations,
            positions,
            captures: Vec::new(),
        }
    }

    pub fn action_count(&self) -> usize {
        self.observations.len()
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn allow_repeats(&self) -> bool {
        self.allow_repeats
    }

    pub fn feature_shape(&self) -> FeatureShape {
        self.shape
    }

    /// Observation captured at a 1-based viewpoint.
    pub fn observation(&self, action: usize) -> &Observation {
        &self.observations[action - 1]
    }

    pub fn position(&self, action: usize) -> Vec3 {
        self.positions[action - 1]
    }

    pub fn capture(&self, action: usize) -> Option<&Capture> {
        self.captures.get(action - 1)
    }

    pub fn frame(&self, action: usize) -> Option<&Frame> {
        self.capture(action).map(|c| &c.frame)
    }

    pub fn pose(&self, action: usize) -> Option<Pose> {
        self.capture(action).map(|c| c.pose)
    }

    pub fn sample_start<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(1..=self.action_count())
    }

    /// Captures of an episode, in action order.
    pub fn captures_for(&self, actions: &[usize]) -> Result<Vec<Capture>> {
        actions
            .iter()
            .map(|&a| {
                self.capture(a)
                    .cloned()
                    .ok_or_else(|| Error::Domain(format!("no capture for viewpoint {a}")))
            })
            .collect()
    }

    /// Path through the start position and every visited viewpoint.
    pub fn path_length(&self, start: usize, actions: &[usize]) -> f64 {
        let mut prev = self.position(start);
        let mut total = 0.0;
        for &a in actions {
            let p = self.position(a);
            total += prev.distance(p);
            prev = p;
        }
        total
    }
}
