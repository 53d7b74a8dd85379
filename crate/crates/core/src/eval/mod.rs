//! Trajectory and reconstruction metrics.

mod cloud;
mod metrics;
mod resources;
mod trajectory;

pub use cloud::{cloud_distance, CloudDistance, MIN_NORMAL_NEIGHBORS};
pub use metrics::{
    align_rigid, associate, ate, final_drift, rpe_distance, AteReport, Pair, RpeReport, Stats,
};
pub use resources::{resources_csv, summarize, ResourceLog, ResourceSample, ResourceSummary};
pub use trajectory::Trajectory;
