//! Localized editing of 3D Gaussian splatting scenes.
//!
//! A user-selected box of an existing scene is optimized against guidance
//! from a (possibly remote) diffusion model in two stages: a coarse stage
//! driven by blended global/local score-distillation gradients, and a
//! pixel-level refinement stage supervised by composited pseudo ground
//! truth images.
//!
//! The diffusion model itself lives behind [`guidance::GuidanceProvider`];
//! [`guidance::MockProvider`] is an analytic stand-in that makes every stage
//! testable offline, and [`guidance::RemoteProvider`] speaks the HTTP wire
//! protocol.

pub mod camera;
pub mod fixtures;
pub mod guidance;
pub mod image;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod sh;

pub use camera::{CameraPose, Intrinsics, PoseSamplerConfig};
pub use image::{Mask, RgbImage, ScalarImage};
pub use render::{AttributeGradients, RenderOutput, RenderSettings};
pub use scene::{BoundingBox3D, EditSet, EditTask, Gaussian, GaussianScene, Trainable};
