//! LiDAR SLAM (NDT scan-to-submap registration seeded by an EKF motion prior,
//! keyframe loop closure with an SE(3) pose graph) feeding colored TSDF fusion
//! and marching-cubes meshing, plus trajectory and reconstruction metrics and a
//! synthetic-world dataset generator.

pub mod colorize;
pub mod config;
pub mod ekf;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod mesher;
pub mod ndt;
pub mod par;
pub mod pipeline;
pub mod ply;
pub mod pose_graph;
pub mod slam;
pub mod spatial;
pub mod synth;
pub mod tsdf;

pub use config::Config;
pub use error::{Error, Result};
pub use geometry::{
    transform_cloud, CameraModel, Image, ImuSample, LidarScan, PointCloud, Pose, Rgb, Timestamp, TriangleMesh,
    WheelOdomSample,
};
