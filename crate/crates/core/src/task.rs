//! A single planning query.

use serde::{Deserialize, Serialize};

use crate::geometry::{FreeSpace, Pose2};
use crate::vehicle::{footprint, VehicleParams};

/// Start and goal poses (both with zero steering) inside a free space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInput {
    #[serde(rename = "quads")]
    pub fs: FreeSpace,
    pub q0: Pose2,
    pub qd: Pose2,
}

impl TaskInput {
    pub fn new(fs: FreeSpace, q0: Pose2, qd: Pose2) -> Self {
        Self { fs, q0, qd }
    }

    /// True when both endpoint footprints lie inside the free space.
    pub fn endpoints_free(&self, params: &VehicleParams) -> bool {
        [self.q0, self.qd]
            .iter()
            .all(|p| footprint(p, params).points.iter().all(|&c| self.fs.contains(c)))
    }
}
