//! Synthesis of spatially augmented robot demonstrations from a single source
//! demonstration, plus a kinematic tabletop simulator that captures source
//! demonstrations and replays generated ones as a success oracle.

pub mod adapter;
pub mod augment;
pub mod demo_store;
pub mod error;
pub mod evaluation;
pub mod parser;
pub mod pipeline;
pub mod planner;
pub mod pointcloud;
pub mod se3;
pub mod sim;
pub mod synth;

pub use demo_store::{ArmFrame, Demonstration, Frame};
pub use error::{Error, Result};
pub use parser::{Segment, SegmentIndex, SegmentKind};
pub use pointcloud::LabeledCloud;
pub use se3::{ConfigDelta, Pose};
