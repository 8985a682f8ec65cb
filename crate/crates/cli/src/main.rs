use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use deformreg_core::augment::frame_rng;
use deformreg_core::mesh::primitives::organ_phantom;
use deformreg_core::mesh::save_mesh;
use deformreg_core::pipeline::synthetic::synthetic_corpus;
use deformreg_core::pipeline::{
    build_shape_model_cmd, evaluate_records, generate_dataset_cmd, load_records, refine_cmd, render_overlay,
    save_overlay, save_records, track_sequence_cmd, DatasetManifest, FrameRecord, RunConfig,
};
use deformreg_core::{LabelImageSet, RigidPose, ShapeModel};
use nalgebra::Point3;

#[derive(Parser)]
#[command(name = "deformreg", version, about = "Deformable 3D-2D contour registration")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Optimize the pose only, keeping the shape at the model mean.
    #[arg(long, global = true)]
    rigid_only: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the corpus to the canonical mesh and build the PCA shape model.
    BuildModel,
    /// Render, filter and augment a synthetic training set.
    GenData,
    /// Refine pose and shape for one frame of contour masks.
    Register {
        /// Directory with the frame's channel PNGs; defaults to paths.masks_dir.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Initial pose as `tx,ty,tz,rx,ry,rz` (mm, degrees).
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        init: RigidPose,
        #[arg(long, default_value = "frame")]
        id: String,
    },
    /// Register an ordered sequence, chaining each result into the next frame.
    Track {
        /// Directory of frame directories, processed in name order.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        init: RigidPose,
    },
    /// Target registration error of estimated records against ground truth.
    Evaluate {
        #[arg(long)]
        records: PathBuf,
        /// Ground-truth records, or a dataset `manifest.json`.
        #[arg(long)]
        gt: PathBuf,
        /// Target point `x,y,z` in canonical model coordinates (mm).
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        target: Point3<f64>,
    },
    /// Draw the contours of a registered record over an optional background.
    RenderOverlay {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        background: Option<PathBuf>,
    },
    /// Print the default configuration as TOML.
    InitConfig,
    /// Write a synthetic canonical mesh and a deformed, misaligned corpus.
    SynthCorpus {
        /// Number of corpus meshes.
        #[arg(short = 'n', long, default_value_t = 12)]
        count: usize,
        /// Icosphere subdivision level of the phantom.
        #[arg(long, default_value_t = 3)]
        subdivisions: u32,
    },
}

fn parse_numbers<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_pose(s: &str) -> Result<RigidPose, String> {
    let [tx, ty, tz, rx, ry, rz] = parse_numbers::<6>(s)?;
    Ok(RigidPose::new([rx, ry, rz], [tx, ty, tz]))
}

fn parse_point(s: &str) -> Result<Point3<f64>, String> {
    let [x, y, z] = parse_numbers::<3>(s)?;
    Ok(Point3::new(x, y, z))
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.paths.output_dir = Some(out.clone());
    }
    if g.rigid_only {
        cfg.refine.rigid_only = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(cfg: &RunConfig) -> Result<ShapeModel> {
    let path = cfg.require("model", &cfg.paths.model)?;
    ShapeModel::load(&path).with_context(|| format!("loading model {}", path.display()))
}

/// Ground truth from a records file or a dataset manifest.
fn load_ground_truth(path: &Path) -> Result<Vec<FrameRecord>> {
    if let Ok(m) = DatasetManifest::load(path) {
        return Ok(m.frames);
    }
    load_records(path).with_context(|| format!("reading ground truth {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    if let Command::InitConfig = cli.command {
        print!("{}", RunConfig::default().to_toml()?);
        return Ok(());
    }
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::InitConfig => unreachable!(),
        Command::BuildModel => {
            let model = build_shape_model_cmd(&cfg)?;
            println!(
                "model: {} components over {} vertices, sigma {:?}",
                model.components(),
                model.vertex_count(),
                model.sigma().as_slice()
            );
        }
        Command::GenData => {
            let m = generate_dataset_cmd(&cfg)?;
            println!(
                "dataset: {} frames ({} train / {} val) from {} attempts",
                m.frames.len(),
                m.train.len(),
                m.val.len(),
                m.attempts
            );
        }
        Command::Register { masks, init, id } => {
            let model = load_model(&cfg)?;
            let dir = match masks {
                Some(d) => d,
                None => cfg.require("masks_dir", &cfg.paths.masks_dir)?,
            };
            let set = LabelImageSet::load(&dir).with_context(|| format!("loading masks from {}", dir.display()))?;
            let out = cfg.output_dir()?;
            let (rec, r) = refine_cmd(&cfg, &model, &init, &set, &id, Some(&out))?;
            println!(
                "{}: cost {:.3} -> {:.3}, pose {:?}, shape {:?}",
                rec.id, r.cost_initial, r.cost_final, rec.pose, rec.shape
            );
        }
        Command::Track { frames, init } => {
            let model = load_model(&cfg)?;
            let records = track_sequence_cmd(&cfg, &model, &init, &frames)?;
            let out = cfg.output_dir()?;
            save_records(out.join("records.json"), &records)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            println!("tracked {} frames ({failed} failed) -> {}", records.len(), out.join("records.json").display());
        }
        Command::Evaluate { records, gt, target } => {
            let model = load_model(&cfg)?;
            let metrics = evaluate_records(&load_records(&records)?, &load_ground_truth(&gt)?, &target, &model)?;
            let out = cfg.output_dir()?;
            std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
            println!(
                "TRE over {} frames: mean {:.3} mm, median {:.3} mm, max {:.3} mm",
                metrics.count, metrics.mean_tre_mm, metrics.median_tre_mm, metrics.max_tre_mm
            );
        }
        Command::RenderOverlay { record, background } => {
            let model = load_model(&cfg)?;
            let out = cfg.output_dir()?;
            for rec in load_records(&record)? {
                let img = render_overlay(&model.eval(&rec.shape), &rec.pose, &cfg.camera, background.as_deref())?;
                let path = out.join(format!("{}_overlay.png", rec.id));
                save_overlay(&img, &path)?;
                println!("{}", path.display());
            }
        }
        Command::SynthCorpus { count, subdivisions } => {
            if count == 0 {
                bail!("count must be at least 1");
            }
            let out = cfg.output_dir()?;
            let base = organ_phantom(subdivisions);
            save_mesh(out.join("canonical.obj"), &base)?;
            let corpus_dir = out.join("corpus");
            std::fs::create_dir_all(&corpus_dir)?;
            let meshes = synthetic_corpus(&base, count, true, &mut frame_rng(cfg.seed, 0));
            for (i, m) in meshes.iter().enumerate() {
                save_mesh(corpus_dir.join(format!("case_{i:03}.ply")), m)?;
            }
            println!("wrote {} and {count} meshes in {}", out.join("canonical.obj").display(), corpus_dir.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
