//! Synthetic scene, camera model, raycasting renderer and observation features.

mod camera;
mod features;
mod render;
mod scene;
pub mod vec3;

pub use camera::{CameraIntrinsics, Pose, ViewSphere};
pub use features::{extract_features, FeatureShape, Observation};
pub use render::{quantize_color, render, Frame, BACKGROUND};
pub(crate) use camera::Camera;
pub use scene::{build_scene, Light, Primitive, PrimitiveKind, SceneConfig, SceneModel};
pub use vec3::{Aabb, Vec3};
