use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use texrec_core::pipeline::{
    run_dump_labels, run_dump_system, run_synth, run_texture, PipelineConfig, TextureOptions,
};
use texrec_core::synth::{Perturbation, SceneKind, SceneSpec, TextureKind};
use texrec_core::Real;

/// Texture reconstruction for triangle meshes from posed keyframes.
#[derive(Parser)]
#[command(name = "texrec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Texture a mesh from keyframes and write OBJ/MTL/PNG plus a report.
    Texture(TextureArgs),
    /// Generate a synthetic scene, corrupt it, run the pipeline, evaluate.
    Synth(SynthArgs),
    /// Run the pipeline on real inputs and print metrics without exporting.
    Eval(TextureArgs),
    /// Run view selection only and export per-face labels as a colored PLY.
    DumpLabels(DumpLabelsArgs),
    /// Assemble the pose-correction system and dump it in MatrixMarket form.
    DumpSystem(DumpSystemArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Mesh (Wavefront OBJ)
    #[arg(long)]
    mesh: PathBuf,
    /// Trajectory file: `id tx ty tz qx qy qz qw` per keyframe (camera-to-world)
    #[arg(long)]
    trajectory: PathBuf,
    /// Intrinsics JSON (shared object or per-keyframe array)
    #[arg(long)]
    intrinsics: PathBuf,
    /// Directory with keyframe PNGs named `<id>.png` or zero-padded
    #[arg(long)]
    images: PathBuf,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Margin width around fragment borders, meters
    #[arg(long)]
    margin: Option<Real>,
    /// View-selection smoothness weight
    #[arg(long)]
    lambda1: Option<Real>,
    /// Alignment ridge weight
    #[arg(long)]
    lambda2: Option<Real>,
    /// Lowe ratio bound for matching
    #[arg(long)]
    ratio: Option<Real>,
    /// 3D match gate, meters
    #[arg(long)]
    max_3d_dist: Option<Real>,
    /// Border-weight decay scale, meters
    #[arg(long)]
    sigma: Option<Real>,
    /// Max keypoints per keyframe
    #[arg(long)]
    max_keypoints: Option<usize>,
    /// One round of Huber reweighting in the alignment solve
    #[arg(long)]
    huber: bool,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Root random seed
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, texrec_core::Error> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = self.margin {
            cfg.margin = Some(v);
        }
        if let Some(v) = self.lambda1 {
            cfg.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            cfg.lambda2 = Some(v);
        }
        if let Some(v) = self.ratio {
            cfg.ratio = v;
        }
        if let Some(v) = self.max_3d_dist {
            cfg.max_3d_dist = Some(v);
        }
        if let Some(v) = self.sigma {
            cfg.sigma = Some(v);
        }
        if let Some(v) = self.max_keypoints {
            cfg.detector.max_keypoints = v;
        }
        if self.huber {
            cfg.huber = true;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TextureArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output directory (optional for `eval`)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the scene, textured mesh and report
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scene kind: plane, heightfield, box
    #[arg(long, default_value = "plane")]
    scene: String,
    /// Approximate face count
    #[arg(long, default_value_t = 20_000)]
    faces: usize,
    /// Number of keyframes
    #[arg(long, default_value_t = 11)]
    keyframes: usize,
    /// Surface texture: checker, noise
    #[arg(long, default_value = "checker")]
    texture: String,
    /// Render resolution as WxH
    #[arg(long, default_value = "640x480")]
    resolution: String,
    /// Scene extent in meters
    #[arg(long, default_value_t = 2.0)]
    extent: Real,
    /// Pose rotation perturbation, radians
    #[arg(long, default_value_t = 0.0)]
    perturb_rot: Real,
    /// Pose translation perturbation, meters
    #[arg(long, default_value_t = 0.0)]
    perturb_trans: Real,
    /// Brightness offset on odd keyframes, gray levels
    #[arg(long, default_value_t = 0.0)]
    perturb_brightness: Real,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DumpLabelsArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output PLY path
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DumpSystemArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output directory for A_pose.mtx, b_pose.txt and keypoints.txt
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn parse_resolution(s: &str) -> Result<(u32, u32), texrec_core::Error> {
    let mut it = s.split('x');
    let bad = || texrec_core::Error::Config(format!("invalid resolution `{s}`, expected WxH"));
    let w = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let h = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((w, h))
}

fn run() -> Result<(), texrec_core::Error> {
    match Cli::parse().command {
        Command::Texture(args) => {
            let cfg = args.config.build()?;
            let out = args
                .out
                .as_deref()
                .ok_or_else(|| texrec_core::Error::Config("texture requires --out".into()))?;
            let report = run_texture(&TextureOptions {
                mesh_path: &args.input.mesh,
                trajectory_path: &args.input.trajectory,
                intrinsics_path: &args.input.intrinsics,
                images_dir: &args.input.images,
                out_dir: Some(out),
                config: cfg,
            })?;
            log::info!(
                "textured {} fragments over {} faces; seam rms {:.2} -> {:.2}",
                report.scene.fragments,
                report.scene.faces,
                report.metrics.seam_rms_before,
                report.metrics.seam_rms_after
            );
        }
        Command::Eval(args) => {
            let cfg = args.config.build()?;
            let report = run_texture(&TextureOptions {
                mesh_path: &args.input.mesh,
                trajectory_path: &args.input.trajectory,
                intrinsics_path: &args.input.intrinsics,
                images_dir: &args.input.images,
                out_dir: args.out.as_deref(),
                config: cfg,
            })?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report"));
        }
        Command::Synth(args) => {
            let mut cfg = args.config.build()?;
            let (w, h) = parse_resolution(&args.resolution)?;
            let kind = match args.scene.as_str() {
                "plane" => SceneKind::Plane,
                "heightfield" => SceneKind::HeightField {
                    amplitude: 0.03 * args.extent,
                },
                "box" => SceneKind::OpenBox,
                other => {
                    return Err(texrec_core::Error::Config(format!(
                        "unknown scene kind `{other}`"
                    )))
                }
            };
            let texture = match args.texture.as_str() {
                "checker" => TextureKind::CheckerRandom {
                    cell: args.extent / 16.0,
                },
                "noise" => TextureKind::SmoothNoise {
                    scale: args.extent / 6.0,
                },
                other => {
                    return Err(texrec_core::Error::Config(format!(
                        "unknown texture kind `{other}`"
                    )))
                }
            };
            let seed = cfg.seed;
            cfg.seed = seed;
            let spec = SceneSpec {
                kind,
                texture,
                target_faces: args.faces,
                n_keyframes: args.keyframes,
                image_width: w,
                image_height: h,
                extent: args.extent,
                seed,
            };
            let pert = Perturbation {
                rot_angle: args.perturb_rot,
                trans_offset: args.perturb_trans,
                brightness: args.perturb_brightness,
                seed,
            };
            let report = run_synth(&spec, &pert, &cfg, args.out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report"));
        }
        Command::DumpLabels(args) => {
            let cfg = args.config.build()?;
            run_dump_labels(
                &TextureOptions {
                    mesh_path: &args.input.mesh,
                    trajectory_path: &args.input.trajectory,
                    intrinsics_path: &args.input.intrinsics,
                    images_dir: &args.input.images,
                    out_dir: None,
                    config: cfg,
                },
                &args.out,
            )?;
        }
        Command::DumpSystem(args) => {
            let cfg = args.config.build()?;
            run_dump_system(
                &TextureOptions {
                    mesh_path: &args.input.mesh,
                    trajectory_path: &args.input.trajectory,
                    intrinsics_path: &args.input.intrinsics,
                    images_dir: &args.input.images,
                    out_dir: None,
                    config: cfg,
                },
                &args.out,
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TEXREC_LOG", "warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, texrec_core::Error::GaugeDeficient { .. }) {
                eprintln!("hint: pass --lambda2 with a small positive value (e.g. 1e-6)");
            }
            ExitCode::FAILURE
        }
    }
}
