//! Pipeline configuration: one TOML file with `[ingest]`, `[ekf]`, `[slam]`,
//! `[loop]`, `[tsdf]`, `[mesher]`, `[colorize]` and `[eval]` sections. Missing
//! keys take the defaults below (the Summit column of the reference parameter
//! table where one exists).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ingest: IngestConfig,
    pub ekf: EkfConfig,
    pub slam: SlamConfig,
    #[serde(rename = "loop")]
    pub loop_closure: LoopConfig,
    pub tsdf: TsdfConfig,
    pub mesher: MesherConfig,
    pub colorize: ColorizeConfig,
    pub eval: EvalConfig,
    pub pipeline: PipelineConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Largest |image stamp − scan stamp| accepted, seconds.
    pub max_skew: f64,
    /// Keep every N-th point of each scan before SLAM.
    pub downsample: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { max_skew: 0.05, downsample: 1 }
    }
}

/// Noise terms are standard deviations; process noise per √s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfConfig {
    pub process_attitude: f64,
    pub process_position: f64,
    pub process_speed: f64,
    pub measurement_attitude: f64,
    pub measurement_speed: f64,
    /// Replaces wheel odometry with a constant forward speed (handheld data).
    pub constant_speed: Option<f64>,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            process_attitude: 0.01,
            process_position: 0.05,
            process_speed: 0.1,
            measurement_attitude: 0.02,
            measurement_speed: 0.05,
            constant_speed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlamConfig {
    pub ndt_resolution: f64,
    pub vg_size_input: f64,
    pub vg_size_map: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub num_targeted_cloud: usize,
    pub guard_threshold: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Coarser grids (each twice the previous cell size) aligned before the
    /// `ndt_resolution` grid.
    pub coarse_levels: usize,
}

impl Default for SlamConfig {
    fn default() -> Self {
        SlamConfig {
            ndt_resolution: 1.0,
            vg_size_input: 0.1,
            vg_size_map: 0.1,
            min_range: 1.0,
            max_range: 50.0,
            num_targeted_cloud: 20,
            guard_threshold: 0.5,
            max_iterations: 30,
            step_tolerance: 1e-4,
            coarse_levels: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub enabled: bool,
    pub ndt_resolution: f64,
    pub voxel_leaf_size: f64,
    /// Milliseconds of dataset time between detection attempts.
    pub detection_period: f64,
    pub threshold_loop_closure: f64,
    pub distance_loop_closure: f64,
    pub search_range: f64,
    pub num_submap_searched: usize,
    pub num_adjacent_pose_constraints: usize,
    pub keyframe_spacing: f64,
    pub keyframe_yaw_deg: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            enabled: true,
            ndt_resolution: 1.0,
            voxel_leaf_size: 0.1,
            detection_period: 4000.0,
            threshold_loop_closure: 15.0,
            distance_loop_closure: 50.0,
            search_range: 50.0,
            num_submap_searched: 20,
            num_adjacent_pose_constraints: 20,
            keyframe_spacing: 1.0,
            keyframe_yaw_deg: 15.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrationMethod {
    Merged,
    Fast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsdfConfig {
    pub voxel_size: f64,
    pub voxels_per_side: usize,
    pub carving: bool,
    pub use_free_space: bool,
    pub method: IntegrationMethod,
    pub constant_weight: bool,
    pub allow_clear: bool,
    pub min_ray_length: f64,
    pub max_ray_length: f64,
    /// Defaults to four voxels when absent.
    pub truncation: Option<f64>,
    pub max_weight: f64,
}

impl Default for TsdfConfig {
    fn default() -> Self {
        TsdfConfig {
            voxel_size: 0.125,
            voxels_per_side: 8,
            carving: false,
            use_free_space: false,
            method: IntegrationMethod::Merged,
            constant_weight: false,
            allow_clear: false,
            min_ray_length: 0.5,
            max_ray_length: 200.0,
            truncation: None,
            max_weight: 1e4,
        }
    }
}

impl TsdfConfig {
    pub fn truncation_distance(&self) -> f64 {
        self.truncation.unwrap_or(4.0 * self.voxel_size)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MesherConfig {
    /// Write `mesh_<frame>.ply` every N frames; 0 disables.
    pub export_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorizeConfig {
    /// Points closer than this along the optical axis are treated as behind the camera.
    pub min_depth: f64,
}

impl Default for ColorizeConfig {
    fn default() -> Self {
        ColorizeConfig { min_depth: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub normal_scale: f64,
    pub projection_scale: f64,
    pub max_match: f64,
    pub rpe_window: f64,
    pub yaw_smoothing: usize,
    pub max_gap: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            normal_scale: 0.5,
            projection_scale: 0.5,
            max_match: 2.0,
            rpe_window: 10.0,
            yaw_smoothing: 50,
            max_gap: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Run every stage on the calling thread instead of the staged pipeline.
    pub sequential: bool,
    /// Resource sampling interval, seconds; 0 disables the sampler.
    pub resource_interval: f64,
    /// Build the mesh; disable for localisation-only runs.
    pub mapping: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { sequential: false, resource_interval: 0.5, mapping: true }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound { what: "config file".into(), path: path.into() },
            _ => Error::io(path, e),
        })?;
        toml::from_str::<Config>(&text)
            .map_err(|e| Error::format(path, e.to_string()))
            .and_then(|c| c.validate().map(|_| c))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive")))
            }
        };
        pos(self.slam.ndt_resolution, "slam.ndt_resolution")?;
        pos(self.loop_closure.ndt_resolution, "loop.ndt_resolution")?;
        pos(self.tsdf.voxel_size, "tsdf.voxel_size")?;
        pos(self.tsdf.truncation_distance(), "tsdf.truncation")?;
        pos(self.ingest.max_skew, "ingest.max_skew")?;
        if self.ingest.downsample == 0 {
            return Err(Error::invalid("ingest.downsample must be ≥ 1"));
        }
        if self.slam.num_targeted_cloud == 0 {
            return Err(Error::invalid("slam.num_targeted_cloud must be ≥ 1"));
        }
        if !self.tsdf.voxels_per_side.is_power_of_two() {
            return Err(Error::invalid("tsdf.voxels_per_side must be a power of two"));
        }
        if self.tsdf.use_free_space || self.tsdf.allow_clear {
            return Err(Error::invalid("tsdf.use_free_space and tsdf.allow_clear are not supported"));
        }
        if self.slam.min_range > self.slam.max_range {
            return Err(Error::invalid("slam.min_range exceeds slam.max_range"));
        }
        Ok(())
    }
}
