//! Run configuration shared by every command and written next to outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kor::{DEFAULT_START_THRESHOLD, DEFAULT_STRIDE};
use crate::losses::{DEFAULT_FOCAL_ALPHA, DEFAULT_FOCAL_GAMMA};
use crate::metrics::{CELL_IOU, GRID_IOU};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Keypoint sampling stride in pixels.
    pub stride: u32,
    /// Start-point binarization threshold.
    pub start_threshold: f64,
    pub cell_iou: f64,
    pub grid_iou: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub seed: u64,
    /// Worker threads; `None` lets the pool decide.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stride: DEFAULT_STRIDE,
            start_threshold: DEFAULT_START_THRESHOLD,
            cell_iou: CELL_IOU,
            grid_iou: GRID_IOU,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            focal_alpha: DEFAULT_FOCAL_ALPHA,
            seed: 0,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        if self.stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if !unit_open(self.start_threshold) {
            return Err(Error::invalid(format!(
                "start threshold {} outside (0, 1)",
                self.start_threshold
            )));
        }
        for (name, v) in [("cell IoU", self.cell_iou), ("grid IoU", self.grid_iou)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!(
                    "{name} threshold {v} outside (0, 1]"
                )));
            }
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "focal gamma {} must be finite and >= 0",
                self.focal_gamma
            )));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "focal alpha {} outside (0, 1]",
                self.focal_alpha
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("worker count must be positive"));
        }
        Ok(())
    }
}
