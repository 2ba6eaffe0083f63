//! prefview-core: preference-guided active viewpoint selection at desk scale.
//!
//! A simulated camera moves over a discrete view sphere around a synthetic
//! scene. Every ten captures are fused into a voxel reconstruction; pairs of
//! reconstructions are compared by an operator (a human through the feedback
//! service, or the synthetic [`oracle`]). A Bradley-Terry reward model is fit
//! to those comparisons and a PPO policy learns to pick viewpoints that score
//! well under it.
//!
//! Pipeline modules:
//!
//! 1. [`sim`]: scene, view sphere, raycaster, pooled observation features.
//! 2. [`recon`]: depth-supported voxel fusion and voxel re-rendering.
//! 3. [`metrics`]: PSNR, SSIM, path length.
//! 4. [`pref`]: reward network and preference training.
//! 5. [`ppo`]: clipped-surrogate policy optimization over viewpoints.
//! 6. [`oracle`]: ROI-focused synthetic labeler.
//! 7. [`labels`], [`experiment`]: persistence and the online loop.

pub mod checkpoint;
pub mod env;
pub mod error;
pub mod experiment;
pub mod image_io;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod ppo;
pub mod pref;
pub mod recon;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
