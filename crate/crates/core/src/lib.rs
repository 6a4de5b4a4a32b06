//! Event-assisted deblurring reconstruction on a 2D canvas.
//!
//! A known scene is captured by a simulated asynchronous rig: a motion-blurred
//! RGB camera and an event sensor that share a clock but no trigger. The sharp
//! scene is recovered as an optimized 2D Gaussian mixture under a five-term
//! objective (blur synthesis, event photometric, weighted event structure and
//! two consistency regularizers) with a two-stage training protocol.
//!
//! Modules, bottom-up:
//!
//! * [`imaging`]: rasters, separable filters, SSIM, normalization, PNM I/O.
//! * [`structure`]: local-contrast structure maps and event confidence masks.
//! * [`eventsim`]: event trigger model, accumulation, intensity reconstruction,
//!   brightness balancing and the AEVT container.
//! * [`splat`]: the Gaussian mixture, camera warps, renderer and its adjoint,
//!   exposure blur synthesis and the deformation MLP.
//! * [`losses`]: the objective terms with image-space gradients.
//! * [`optim`]: Adam, the two training stages and the gradient checker.
//! * [`capture`]: scene synthesis and the dual-sensor capture simulator.
//! * [`pipeline`]: run configuration, metrics and end-to-end orchestration.

pub mod capture;
pub mod error;
pub mod eventsim;
pub mod imaging;
pub mod losses;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod splat;
pub mod structure;

pub use error::{Error, Result};
pub use imaging::Image;
