//! End-to-end texturing pipeline: keypoint extraction (step 0), view
//! selection (step 1), alignment-system construction and solve (steps 2a-2b)
//! and colour-corrected atlas construction (step 2c).

use std::path::Path;
use std::time::Instant;

use crate::align::{
    assemble_system, default_lambda2, solve_corrections, solve_with_huber, Solution, SparseSystem,
};
use crate::atlas::{build_charts, export_textured_mesh, pack_charts, Atlas};
use crate::camera::Keyframe;
use crate::colour::{sample_seams, seam_rms, solve_colour, ColourCorrection, SeamSample};
use crate::error::{Error, Result};
use crate::features::{
    detect_keypoints, lift_keypoints, match_keypoints_for, select_margin_keypoints,
    DetectorConfig, Keypoint3D, MarginKeypoint, MatchPair, MatchParams,
};
use crate::labeling::{
    build_psi_table, extract_fragments, fragment_borders, fragment_of_face, solve_labeling,
    BorderGroup, EnergyParams, Fragment, Labeling,
};
use crate::mesh::{face_adjacency, Mesh};
use crate::raster::{rasterize, RasterMap};
use crate::synth::{evaluate, EvalReport, FragmentInfo, Metrics, SceneStats};
use crate::Real;

/// All pipeline knobs. `None` fields fall back to scale-aware defaults
/// derived from the scene.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    /// margin width around borders, meters; default 0.05 x bbox diagonal
    pub margin: Option<Real>,
    /// smoothness weight of view selection
    pub lambda1: Real,
    /// ridge weight of the alignment solve; default is scale-free
    pub lambda2: Option<Real>,
    pub detector: DetectorConfig,
    /// Lowe ratio bound
    pub ratio: Real,
    /// 3D match gate, meters; default = margin
    pub max_3d_dist: Option<Real>,
    /// weight decay scale, meters; default = margin / 2
    pub sigma: Option<Real>,
    /// seam sample spacing, meters; default = median mesh edge length
    pub seam_step: Option<Real>,
    /// colour smoothness = factor x (seam samples / mesh edges)
    pub smooth_weight_factor: Real,
    pub atlas_pad: u32,
    pub atlas_max_side: u32,
    /// one round of Huber reweighting on the alignment solve
    pub huber: bool,
    /// worker threads; 0 = library default
    pub threads: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            margin: None,
            lambda1: 1.0,
            lambda2: None,
            detector: DetectorConfig::default(),
            ratio: 0.8,
            max_3d_dist: None,
            sigma: None,
            seam_step: None,
            smooth_weight_factor: 0.1,
            atlas_pad: 2,
            atlas_max_side: 8192,
            huber: false,
            threads: 0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting (config file syntax).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid value `{value}` for `{what}`"));
        match key {
            "margin" => self.margin = Some(value.parse().map_err(|_| bad(key))?),
            "lambda1" => self.lambda1 = value.parse().map_err(|_| bad(key))?,
            "lambda2" => self.lambda2 = Some(value.parse().map_err(|_| bad(key))?),
            "ratio" => self.ratio = value.parse().map_err(|_| bad(key))?,
            "max_3d_dist" => self.max_3d_dist = Some(value.parse().map_err(|_| bad(key))?),
            "sigma" => self.sigma = Some(value.parse().map_err(|_| bad(key))?),
            "seam_step" => self.seam_step = Some(value.parse().map_err(|_| bad(key))?),
            "smooth_weight_factor" => {
                self.smooth_weight_factor = value.parse().map_err(|_| bad(key))?
            }
            "atlas_pad" => self.atlas_pad = value.parse().map_err(|_| bad(key))?,
            "atlas_max_side" => self.atlas_max_side = value.parse().map_err(|_| bad(key))?,
            "huber" => self.huber = value.parse().map_err(|_| bad(key))?,
            "threads" => self.threads = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "max_keypoints" => {
                self.detector.max_keypoints = value.parse().map_err(|_| bad(key))?
            }
            "patch_size" => self.detector.patch_size = value.parse().map_err(|_| bad(key))?,
            "harris_k" => self.detector.harris_k = value.parse().map_err(|_| bad(key))?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a `key = value` config file ('#' comments allowed).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(path, lineno + 1, "expected `key = value`"));
            };
            self.apply_kv(key.trim(), value.trim())
                .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        }
        Ok(())
    }
}

/// FNV-1a hash of the serialized config, hex-encoded.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serialize");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Wall-clock seconds per Algorithm step.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct StageTimings {
    pub step0_s: Real,
    pub step1_s: Real,
    pub step2a_s: Real,
    pub step2b_s: Real,
    pub step2c_s: Real,
    pub step2_s: Real,
    pub total_s: Real,
    /// sparse solves performed in step 2b (1, or 2 with Huber reweighting)
    pub solve_passes: usize,
}

/// Everything the pipeline produced.
#[derive(Debug)]
pub struct PipelineResult {
    pub labeling: Labeling,
    pub fragments: Vec<Fragment>,
    pub borders: Vec<BorderGroup>,
    /// lifted keypoints per keyframe
    pub keypoints: Vec<Vec<Keypoint3D>>,
    pub matches: Vec<MatchPair>,
    pub system: SparseSystem,
    pub solution: Solution,
    pub colour: ColourCorrection,
    pub seam_samples: Vec<SeamSample>,
    pub seam_rms_before: Real,
    pub seam_rms_after: Real,
    pub atlas: Atlas,
    pub timings: StageTimings,
    pub margin_used: Real,
    pub lambda2_used: Real,
}

struct FrontEnd {
    raster_maps: Vec<RasterMap>,
    labeling: Labeling,
    fragments: Vec<Fragment>,
    borders: Vec<BorderGroup>,
    keypoints: Vec<Vec<Keypoint3D>>,
    step0_s: Real,
    step1_s: Real,
}

/// Steps 0 and 1: depth maps, detection, lifting, view selection.
fn front_end(mesh: &Mesh, keyframes: &[Keyframe], cfg: &PipelineConfig) -> Result<FrontEnd> {
    for kf in keyframes {
        kf.validate()?;
    }

    let t0 = Instant::now();
    let raster_maps: Vec<RasterMap> = crate::par::par_map_slice(keyframes, |kf| {
        rasterize(mesh, &kf.pose, &kf.intrinsics)
    });
    let detections = crate::par::par_map_slice(keyframes, |kf| {
        detect_keypoints(&kf.image, &cfg.detector)
    });
    let step0_raster_detect = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let adjacency = face_adjacency(mesh);
    let params = EnergyParams {
        lambda1: cfg.lambda1,
        ..EnergyParams::default()
    };
    let depth_maps: Vec<_> = raster_maps.iter().map(|r| r.depth.clone()).collect();
    let psi = build_psi_table(mesh, keyframes, &depth_maps, &params);
    let labeling = solve_labeling(&psi, &adjacency, &params);
    let fragments = extract_fragments(&labeling, &adjacency);
    let borders = fragment_borders(&fragments, &adjacency, mesh);
    let step1_s = t1.elapsed().as_secs_f64();

    // lifting belongs to step 0 but needs the fragment map
    let t2 = Instant::now();
    let frag_of = fragment_of_face(&fragments, mesh.faces.len());
    let keypoints: Vec<Vec<Keypoint3D>> = crate::par::par_map_range(keyframes.len(), |i| {
        lift_keypoints(&detections[i], i, &keyframes[i], &raster_maps[i], &frag_of)
    });
    let step0_s = step0_raster_detect + t2.elapsed().as_secs_f64();

    log::info!(
        "step0: {} keypoints lifted over {} keyframes; step1: {} fragments, {} border groups",
        keypoints.iter().map(Vec::len).sum::<usize>(),
        keyframes.len(),
        fragments.len(),
        borders.len()
    );

    Ok(FrontEnd {
        raster_maps,
        labeling,
        fragments,
        borders,
        keypoints,
        step0_s,
        step1_s,
    })
}

/// Step 2a: margin selection, matching and system assembly.
fn construct_system(
    mesh: &Mesh,
    keyframes: &[Keyframe],
    fe: &FrontEnd,
    cfg: &PipelineConfig,
) -> Result<(Vec<MatchPair>, SparseSystem, Real)> {
    let margin = cfg.margin.unwrap_or(0.05 * mesh.bbox_diagonal());
    let match_params = MatchParams {
        ratio: cfg.ratio,
        max_3d_dist: cfg.max_3d_dist.unwrap_or(margin),
        sigma: cfg.sigma.unwrap_or(margin / 2.0),
    };

    // Matching is per border pair between the two fragments' keyframes:
    // set_i holds keyframe-i keypoints inside the margin band (either side
    // of the border), set_j the same for keyframe j.
    let per_group: Vec<Vec<MatchPair>> = crate::par::par_map_slice(&fe.borders, |group| {
        let (fi, fj) = group.fragments;
        let li = fe.fragments[fi as usize].label as usize;
        let lj = fe.fragments[fj as usize].label as usize;
        let (set_i, set_j): (Vec<MarginKeypoint>, Vec<MarginKeypoint>) = select_margin_keypoints(
            group,
            &fe.keypoints[li],
            &fe.keypoints[lj],
            margin,
            mesh,
            &keyframes[li],
            &keyframes[lj],
            &fe.raster_maps[li].depth,
            &fe.raster_maps[lj].depth,
        );
        match_keypoints_for(&set_i, &set_j, (fi, fj), &match_params)
    });
    let matches: Vec<MatchPair> = per_group.into_iter().flatten().collect();

    let fragment_ids: Vec<u32> = fe.fragments.iter().map(|f| f.id).collect();
    let system = assemble_system(&matches, &fragment_ids)?;
    Ok((matches, system, margin))
}

/// Runs the full pipeline.
pub fn run(mesh: &Mesh, keyframes: &[Keyframe], cfg: &PipelineConfig) -> Result<PipelineResult> {
    crate::par::with_threads(cfg.threads, || run_inner(mesh, keyframes, cfg))
}

fn run_inner(
    mesh: &Mesh,
    keyframes: &[Keyframe],
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let t_total = Instant::now();
    let fe = front_end(mesh, keyframes, cfg)?;

    let t2a = Instant::now();
    let (matches, system, margin_used) = construct_system(mesh, keyframes, &fe, cfg)?;
    let step2a_s = t2a.elapsed().as_secs_f64();

    let t2b = Instant::now();
    let lambda2 = cfg.lambda2.unwrap_or_else(|| default_lambda2(&system));
    let (solution, solve_passes) = if cfg.huber {
        let fragment_ids: Vec<u32> = fe.fragments.iter().map(|f| f.id).collect();
        (
            solve_with_huber(&matches, &fragment_ids, lambda2, 0.5 * margin_used)?,
            2,
        )
    } else {
        (solve_corrections(&system, lambda2)?, 1)
    };
    let step2b_s = t2b.elapsed().as_secs_f64();
    log::info!(
        "step2: {} matches, residual {:.3e}, lambda2 {:.3e}",
        matches.len(),
        solution.residual_norm,
        lambda2
    );

    let t2c = Instant::now();
    let depth_maps: Vec<_> = fe.raster_maps.iter().map(|r| r.depth.clone()).collect();
    let seam_step = cfg.seam_step.unwrap_or_else(|| mesh.median_edge_length());
    let seam_samples = sample_seams(
        &fe.borders,
        &fe.fragments,
        &solution,
        keyframes,
        &depth_maps,
        mesh,
        seam_step,
    );
    let n_edges = mesh.edges().len().max(1);
    let smooth_weight =
        (cfg.smooth_weight_factor * seam_samples.len() as Real / n_edges as Real).max(1e-6);
    let colour = solve_colour(
        &seam_samples,
        mesh,
        &fe.fragments,
        keyframes.len(),
        smooth_weight,
    );
    let seam_rms_before = seam_rms(
        &seam_samples,
        &ColourCorrection::zero(keyframes.len()),
        &fe.fragments,
    );
    let seam_rms_after = seam_rms(&seam_samples, &colour, &fe.fragments);

    let charts = build_charts(mesh, &fe.fragments, &solution, &colour, keyframes, cfg.atlas_pad);
    let atlas = pack_charts(&charts, cfg.atlas_pad, cfg.atlas_max_side, mesh.faces.len())?;
    let step2c_s = t2c.elapsed().as_secs_f64();

    let timings = StageTimings {
        step0_s: fe.step0_s,
        step1_s: fe.step1_s,
        step2a_s,
        step2b_s,
        step2c_s,
        step2_s: step2a_s + step2b_s + step2c_s,
        total_s: t_total.elapsed().as_secs_f64(),
        solve_passes,
    };

    Ok(PipelineResult {
        labeling: fe.labeling,
        fragments: fe.fragments,
        borders: fe.borders,
        keypoints: fe.keypoints,
        matches,
        system,
        solution,
        colour,
        seam_samples,
        seam_rms_before,
        seam_rms_after,
        atlas,
        timings,
        margin_used,
        lambda2_used: lambda2,
    })
}

/// Builds the report entry for every fragment.
fn fragment_infos(result: &PipelineResult) -> Vec<FragmentInfo> {
    result
        .fragments
        .iter()
        .map(|f| {
            let w = result.solution.correction(f.id);
            FragmentInfo {
                id: f.id,
                keyframe: f.label as u64,
                faces: f.faces.len(),
                correction: [w[0], w[1], w[2], w[3], w[4], w[5]],
                chart: result
                    .atlas
                    .placements
                    .iter()
                    .find(|p| p.fragment == f.id)
                    .cloned(),
            }
        })
        .collect()
}

fn build_report(
    result: &PipelineResult,
    keyframes: &[Keyframe],
    mesh: &Mesh,
    cfg: &PipelineConfig,
    perturbation: Option<crate::synth::Perturbation>,
) -> EvalReport {
    let metrics: Metrics = evaluate(result, keyframes);
    let unlabeled: Vec<u32> = (0..mesh.faces.len())
        .filter(|&f| result.labeling.get(f).is_none())
        .map(|f| f as u32)
        .collect();
    EvalReport {
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        perturbation,
        scene: SceneStats {
            faces: mesh.faces.len(),
            keyframes: keyframes.len(),
            fragments: result.fragments.len(),
            unlabeled_faces: unlabeled.len(),
        },
        metrics,
        timings: result.timings.clone(),
        fragments: fragment_infos(result),
        unlabeled_faces: unlabeled,
    }
}

/// Inputs of the `texture` and `eval` commands.
pub struct TextureOptions<'a> {
    pub mesh_path: &'a Path,
    pub trajectory_path: &'a Path,
    pub intrinsics_path: &'a Path,
    pub images_dir: &'a Path,
    /// output directory; exports are skipped when `None` (metrics only)
    pub out_dir: Option<&'a Path>,
    pub config: PipelineConfig,
}

/// Loads real inputs, runs the pipeline and (optionally) writes the textured
/// mesh plus a JSON report into the output directory.
pub fn run_texture(opts: &TextureOptions) -> Result<EvalReport> {
    let (mesh, _) = crate::io::load_obj(opts.mesh_path)?;
    let trajectory = crate::io::load_trajectory(opts.trajectory_path)?;
    let n_images = crate::io::count_pngs(opts.images_dir)?;
    if n_images != trajectory.len() {
        return Err(Error::KeyframeCountMismatch {
            poses: trajectory.len(),
            images: n_images,
        });
    }
    let intrinsics = crate::io::load_intrinsics(opts.intrinsics_path)?;
    let keyframes: Vec<Keyframe> = trajectory
        .iter()
        .map(|(id, pose)| -> Result<Keyframe> {
            Ok(Keyframe {
                id: *id,
                image: crate::io::load_keyframe_image(opts.images_dir, *id)?,
                pose: *pose,
                intrinsics: intrinsics.for_keyframe(*id)?,
            })
        })
        .collect::<Result<_>>()?;

    let result = run(&mesh, &keyframes, &opts.config)?;
    let report = build_report(&result, &keyframes, &mesh, &opts.config, None);
    if let Some(out) = opts.out_dir {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        export_textured_mesh(&mesh, &result.atlas, out, "textured")?;
        crate::io::write_json(&out.join("report.json"), &report)?;
    }
    Ok(report)
}

/// Generates a synthetic scene, corrupts it, runs the pipeline on the
/// corrupted inputs and evaluates against the ground truth. With an output
/// directory the scene is exported in the same formats `texture` consumes.
pub fn run_synth(
    spec: &crate::synth::SceneSpec,
    pert: &crate::synth::Perturbation,
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    let scene = crate::synth::generate_scene(spec)?;
    let keyframes = crate::synth::perturbed_keyframes(&scene, pert);
    let result = run(&scene.mesh, &keyframes, cfg)?;
    let report = build_report(&result, &keyframes, &scene.mesh, cfg, Some(*pert));

    if let Some(out) = out_dir {
        let scene_dir = out.join("scene");
        let images_dir = scene_dir.join("images");
        std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
        crate::io::save_obj(&scene_dir.join("mesh.obj"), &scene.mesh)?;
        let gt: Vec<(u64, crate::camera::Pose)> = scene
            .keyframes
            .iter()
            .map(|kf| (kf.id, kf.pose))
            .collect();
        crate::io::save_trajectory(&scene_dir.join("trajectory_gt.txt"), &gt)?;
        let corrupted: Vec<(u64, crate::camera::Pose)> =
            keyframes.iter().map(|kf| (kf.id, kf.pose)).collect();
        crate::io::save_trajectory(&scene_dir.join("trajectory.txt"), &corrupted)?;
        crate::io::save_intrinsics(&scene_dir.join("intrinsics.json"), &scene.intrinsics)?;
        for kf in &keyframes {
            crate::io::save_png(
                &images_dir.join(crate::io::image_file_name(kf.id)),
                &kf.image,
            )?;
        }
        export_textured_mesh(&scene.mesh, &result.atlas, out, "textured")?;
        crate::io::write_json(&out.join("report.json"), &report)?;
    }
    Ok(report)
}

/// Runs steps 0-1 only and writes the per-face label PLY.
pub fn run_dump_labels(opts: &TextureOptions, ply_path: &Path) -> Result<()> {
    let (mesh, _) = crate::io::load_obj(opts.mesh_path)?;
    let keyframes = load_texture_keyframes(opts)?;
    crate::par::with_threads(opts.config.threads, || {
        let fe = front_end(&mesh, &keyframes, &opts.config)?;
        crate::io::dump_labels_ply(ply_path, &mesh, &fe.labeling)
    })
}

/// Runs steps 0-2a only and dumps the assembled system in MatrixMarket form,
/// plus the lifted keypoints.
pub fn run_dump_system(opts: &TextureOptions, dir: &Path) -> Result<()> {
    let (mesh, _) = crate::io::load_obj(opts.mesh_path)?;
    let keyframes = load_texture_keyframes(opts)?;
    crate::par::with_threads(opts.config.threads, || {
        let fe = front_end(&mesh, &keyframes, &opts.config)?;
        let (_, system, _) = construct_system(&mesh, &keyframes, &fe, &opts.config)?;
        crate::io::dump_system(dir, &system)?;
        crate::io::dump_keypoints(&dir.join("keypoints.txt"), &fe.keypoints)
    })
}

fn load_texture_keyframes(opts: &TextureOptions) -> Result<Vec<Keyframe>> {
    let trajectory = crate::io::load_trajectory(opts.trajectory_path)?;
    let n_images = crate::io::count_pngs(opts.images_dir)?;
    if n_images != trajectory.len() {
        return Err(Error::KeyframeCountMismatch {
            poses: trajectory.len(),
            images: n_images,
        });
    }
    let intrinsics = crate::io::load_intrinsics(opts.intrinsics_path)?;
    trajectory
        .iter()
        .map(|(id, pose)| -> Result<Keyframe> {
            Ok(Keyframe {
                id: *id,
                image: crate::io::load_keyframe_image(opts.images_dir, *id)?,
                pose: *pose,
                intrinsics: intrinsics.for_keyframe(*id)?,
            })
        })
        .collect()
}
