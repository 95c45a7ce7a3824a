//! Inversion driver: configuration, objective, multi-start runs, metrics and
//! the gradient-check registry.

pub mod config;
pub mod metrics;
pub mod problem;
pub mod registry;
pub mod run;

pub use config::{InversionConfig, ProblemKind, ReparamKind, TruthKind};
pub use metrics::{psnr, ssim, IMAGE_PEAK};
pub use problem::{blocks_image, Objective, ProblemData};
pub use registry::{gradcheck, GradcheckResult, GRADCHECK_IDS};
pub use run::{run_inversion, InversionOutcome, InversionReport, RestartReport};
