//! Distributed sparse-view Gaussian reconstruction.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! 1. **Initialization** ([`init`]): image pairs go through a feed-forward
//!    predictor interface producing pixel-aligned pointmaps and raw Gaussian
//!    attributes; a confidence-weighted global alignment fuses the pairs into
//!    one frame and global/local scale calibration sizes the splats.
//! 2. **Per-device training** ([`train`]): differentiable rasterization
//!    ([`raster`]) with photometric + depth-correlation losses ([`loss`]),
//!    periodic densification, and optional shape freezing.
//! 3. **Aggregation** ([`aggregate`], [`dist`]): devices upload their models
//!    over a length-prefixed wire protocol; the server region-filters, merges,
//!    and distills the union against teacher-rendered pseudo-GT views.
//!
//! [`data`] provides the synthetic desk-scale benchmark scenes and the
//! bit-exact on-disk formats; [`bench`] holds the fixed-seed benchmark and
//! ablation harness.

pub mod aggregate;
pub mod bench;
pub mod cli;
pub mod data;
pub mod dist;
pub mod init;
pub mod loss;
pub mod raster;
pub mod scene;
pub mod sh;
pub mod train;

mod error;

pub use error::{Error, Result};
