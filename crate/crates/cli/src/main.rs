//! `lidarmesh` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lidarmesh::eval::{self, Trajectory};
use lidarmesh::pipeline::{self, MESH};
use lidarmesh::synth::{generate_dataset, SynthConfig};
use lidarmesh::{ply, Config, Error};

#[derive(Parser)]
#[command(name = "lidarmesh", version, about = "LiDAR SLAM with colored TSDF meshing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: trajectories, mesh, resource log and summary.
    Run(RunArgs),
    /// Localisation only (no mapping).
    Slam(RunArgs),
    /// Fuse the dataset's scans at the poses of a trajectory file and mesh them.
    Mesh {
        #[command(flatten)]
        common: Common,
        /// Trajectory in the stamped text format.
        #[arg(long)]
        trajectory: PathBuf,
        /// Output directory; the mesh is written as mesh.ply.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write each scan, colored from its images, as a PLY cloud.
    Colorize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trajectory metrics: final drift, and ATE/RPE against a reference.
    EvalTraj {
        /// Estimated trajectory.
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Skip the rigid alignment before ATE.
        #[arg(long)]
        no_align: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cloud-to-cloud distance between two PLY files (clouds or meshes).
    EvalMesh {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// Synth config (scene and trajectory); defaults to the 200 m canyon loop.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the trajectory noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_loop_closure: bool,
    /// Write mesh_<frame>.ply every N frames (overrides the config).
    #[arg(long)]
    export_every: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<Config, Error> {
    match path {
        Some(p) => Config::load(p).map_err(|e| e.in_stage("config")),
        None => Ok(Config::default()),
    }
}

fn run(args: RunArgs, mapping: bool) -> Result<(), Error> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    cfg.pipeline.mapping = mapping;
    if args.no_loop_closure {
        cfg.loop_closure.enabled = false;
    }
    let every = args.export_every.unwrap_or(cfg.mesher.export_every);
    let report = pipeline::run(&cfg, &args.common.dataset, Some(&args.out), every)?;
    let summary = fs::read_to_string(args.out.join(pipeline::SUMMARY)).map_err(|e| Error::io(&args.out, e))?;
    print!("{summary}");
    log::info!("{} frames in {:.1} s", report.frames, report.wall_time);
    Ok(())
}

fn eval_traj(est: &Path, reference: Option<&Path>, no_align: bool, config: Option<&Path>) -> Result<(), Error> {
    let cfg = load_config(config)?.eval;
    let est = Trajectory::load(est)?;
    println!("final_drift: {:.9} m", eval::final_drift(&est)?);
    if let Some(r) = reference {
        let reference = Trajectory::load(r)?;
        let a = eval::ate(&est, &reference, !no_align, cfg.max_gap)?;
        println!("ATE: rmse {:.9} m, mean {:.9} m, std {:.9} m over {} poses", a.rmse, a.mean, a.std, a.pairs);
        match eval::rpe_distance(&est, &reference, cfg.rpe_window, cfg.max_gap, cfg.yaw_smoothing) {
            Ok(r) => println!("RPE: rmse {:.9} m over {} windows of {} m", r.rmse, r.windows, cfg.rpe_window),
            Err(Error::TooShort(w)) => println!("RPE: trajectory shorter than the {w} m window"),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn eval_mesh(eval_path: &Path, reference: &Path, config: Option<&Path>) -> Result<(), Error> {
    let cfg = load_config(config)?.eval;
    let e = ply::read_cloud(eval_path)?;
    let r = ply::read_cloud(reference)?;
    let d = eval::cloud_distance(&e.points, &r.points, &cfg);
    println!("Mean = {:.4} m, Std = {:.4} m", d.mean, d.std);
    println!("p90 = {:.4} m", d.p90);
    println!("kept {} of {} points", d.kept.len(), e.len());
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run(a) => run(a, true),
        Command::Slam(a) => run(a, false),
        Command::Mesh { common, trajectory, out } => {
            let cfg = load_config(common.config.as_deref())?;
            let t = Trajectory::load(&trajectory).map_err(|e| e.in_stage("ingest"))?;
            let mesh = pipeline::fuse(&cfg, &common.dataset, &t, cfg.eval.max_gap)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e).in_stage("output"))?;
            ply::write_mesh(&mesh, &out.join(MESH)).map_err(|e| e.in_stage("output"))?;
            println!("Mesh: {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
            Ok(())
        }
        Command::Colorize { common, out } => {
            let cfg = load_config(common.config.as_deref())?;
            let n = pipeline::colorize_dataset(&cfg, &common.dataset, &out)?;
            println!("{n} colored scans written to {}", out.display());
            Ok(())
        }
        Command::EvalTraj { est, reference, no_align, config } => {
            eval_traj(&est, reference.as_deref(), no_align, config.as_deref()).map_err(|e| e.in_stage("eval"))
        }
        Command::EvalMesh { eval, reference, config } => {
            eval_mesh(&eval, &reference, config.as_deref()).map_err(|e| e.in_stage("eval"))
        }
        Command::Synth { config, out, seed } => {
            let mut sc = match config {
                Some(p) => SynthConfig::load(&p).map_err(|e| e.in_stage("config"))?,
                None => SynthConfig::canyon_loop(0),
            };
            if let Some(s) = seed {
                sc.trajectory.seed = s;
            }
            let m = generate_dataset(&sc.scene, &sc.trajectory, &out).map_err(|e| e.in_stage("synth"))?;
            println!("{} scans written to {}", m.scans.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
