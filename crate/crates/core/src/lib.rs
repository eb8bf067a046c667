//! Split-and-merge table structure recognition kernel.
//!
//! Decodes separation-line keypoint predictions into a grid lattice, merges
//! grids into cells through a four-symbol action codec, and scores results.
//! Also hosts the head forward passes, training losses, a synthetic data
//! generator and the interchange formats used by the command-line tool.

pub mod bundle;
pub mod config;
pub mod container;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod heads;
pub mod kor;
pub mod losses;
pub mod merge;
pub mod metrics;
pub mod pipeline;
pub mod runner;
pub mod syngen;
pub mod timing;

pub use bundle::{PredictionBundle, StructureFile};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use geometry::{CellSpan, GridLattice, ImageSize, Point, QuadBox, TableStructure};
pub use kor::{Axis, SeparationLine};
pub use losses::TableStyle;
pub use merge::{MergeAction, MergeActionMap};
pub use pipeline::{decode_bundle, Decoded};
