use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("no delta for label {0}")]
    MissingDelta(i32),

    #[error("object {0} has no labeled points")]
    NoSuchObject(usize),

    #[error("end-effector never came within the contact threshold of object {0}")]
    NoContactDetected(usize),

    #[error("object {found} was contacted before object {expected}")]
    NonSequentialContact { expected: usize, found: usize },

    #[error("motion planning failed after {iterations} iterations")]
    PlanningFailed { iterations: usize },

    #[error("start or goal of the plan lies within clearance of an obstacle")]
    StartOrGoalInCollision,

    #[error("target for object {object} at ({x:.3}, {y:.3}) is outside the reachable workspace")]
    UnreachableTarget { object: usize, x: f64, y: f64 },

    #[error("only {found} object points matched the static snapshot (need at least {needed})")]
    DegenerateSplit { found: usize, needed: usize },

    #[error("obstacle blocks skill waypoint at frame {frame}")]
    ObstacleBlocksSkill { frame: usize },

    #[error("workspace contains no grid points")]
    EmptyWorkspace,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("demonstration failed validation: {0}")]
    Validation(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
