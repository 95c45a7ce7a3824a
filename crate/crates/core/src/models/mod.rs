//! Forward operators and the stand-in generator.

pub mod blur;
pub mod csmri;
pub mod eikonal;
pub mod generator;
pub mod noise;

pub use blur::{blur, blur_adjoint, BlurStage};
pub use csmri::{make_mask, CsMriStage};
pub use eikonal::{eikonal_adjoint, eikonal_solve, velocity_map, EikonalGeometry, EikonalStage, VelocityStage};
pub use generator::{toy_generator, ToyGenerator};
pub use noise::{add_noise_8bit, add_noise_snr, traveltime_noise};
