//! Ground-truth scene generation and pose perturbation.
//!
//! Generated scenes are fully deterministic in the seed: the mesh, the
//! procedural surface texture and the rendered keyframes all derive from it.
//! Perturbed poses simulate tracking error while the ground truth stays
//! available for evaluation.

use image::RgbImage;
use nalgebra::Rotation3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{back_project, Intrinsics, Keyframe, Pose};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::raster::{is_visible, rasterize, visibility_tol, RasterMap};
use crate::{Mat3, Point3, Real, Vec3};

/// Regular grid over [-w/2, w/2] x [-d/2, d/2] with height `f(x, y)`,
/// `2 * nx * ny` triangles.
pub fn plane_grid(w: Real, d: Real, nx: usize, ny: usize, f: impl Fn(Real, Real) -> Real) -> Mesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = -w / 2.0 + w * i as Real / nx as Real;
            let y = -d / 2.0 + d * j as Real / ny as Real;
            vertices.push(Point3::new(x, y, f(x, y)));
        }
    }
    let mut faces = Vec::with_capacity(2 * nx * ny);
    let idx = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    for j in 0..ny {
        for i in 0..nx {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh::new(vertices, faces).expect("grid construction is always valid")
}

/// Axis-aligned open box (four walls and a top, no bottom), each side a
/// subdivided grid.
pub fn open_box(side: Real, height: Real, cells: usize) -> Mesh {
    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut add_grid = |map: &dyn Fn(Real, Real) -> Point3| {
        let base = vertices.len() as u32;
        for j in 0..=cells {
            for i in 0..=cells {
                let u = i as Real / cells as Real;
                let v = j as Real / cells as Real;
                vertices.push(map(u, v));
            }
        }
        let idx = |i: usize, j: usize| base + (j * (cells + 1) + i) as u32;
        for j in 0..cells {
            for i in 0..cells {
                faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
    };
    let h = side / 2.0;
    add_grid(&|u, v| Point3::new(-h + side * u, -h, height * v)); // y = -h wall
    add_grid(&|u, v| Point3::new(-h + side * u, h, height * v)); // y = +h wall
    add_grid(&|u, v| Point3::new(-h, -h + side * u, height * v)); // x = -h wall
    add_grid(&|u, v| Point3::new(h, -h + side * u, height * v)); // x = +h wall
    add_grid(&|u, v| Point3::new(-h + side * u, -h + side * v, height)); // top
    Mesh::new(vertices, faces).expect("box construction is always valid")
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn hash3(seed: u64, x: i64, y: i64, z: i64) -> u64 {
    let mut h = splitmix64(seed ^ 0x5851F42D4C957F2D);
    h = splitmix64(h ^ (x as u64));
    h = splitmix64(h ^ (y as u64));
    h = splitmix64(h ^ (z as u64));
    h
}

/// Procedural ground-truth surface colour.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum TextureKind {
    /// Checker cells of the given size; every cell gets its own random
    /// colour, which makes corner neighbourhoods distinctive for matching.
    CheckerRandom { cell: Real },
    /// Band-limited value noise; smooth, without sharp edges.
    SmoothNoise { scale: Real },
}

#[derive(Debug, Clone)]
pub struct SurfaceTexture {
    pub kind: TextureKind,
    pub seed: u64,
}

impl SurfaceTexture {
    pub fn color(&self, p: Point3) -> [u8; 3] {
        match self.kind {
            TextureKind::CheckerRandom { cell } => {
                let c = self.cell_of(p, cell);
                self.cell_color(c)
            }
            TextureKind::SmoothNoise { scale } => {
                let mut rgb = [0u8; 3];
                let x = p.x / scale;
                let y = p.y / scale;
                let z = p.z / scale;
                let (x0, y0, z0) = (x.floor(), y.floor(), z.floor());
                let (tx, ty, tz) = (x - x0, y - y0, z - z0);
                for (ch, out) in rgb.iter_mut().enumerate() {
                    let mut v = 0.0;
                    for (dx, dy, dz, w) in [
                        (0, 0, 0, (1.0 - tx) * (1.0 - ty) * (1.0 - tz)),
                        (1, 0, 0, tx * (1.0 - ty) * (1.0 - tz)),
                        (0, 1, 0, (1.0 - tx) * ty * (1.0 - tz)),
                        (1, 1, 0, tx * ty * (1.0 - tz)),
                        (0, 0, 1, (1.0 - tx) * (1.0 - ty) * tz),
                        (1, 0, 1, tx * (1.0 - ty) * tz),
                        (0, 1, 1, (1.0 - tx) * ty * tz),
                        (1, 1, 1, tx * ty * tz),
                    ] {
                        let h = hash3(
                            self.seed.wrapping_add(ch as u64),
                            x0 as i64 + dx,
                            y0 as i64 + dy,
                            z0 as i64 + dz,
                        );
                        v += w * (h % 1000) as Real / 999.0;
                    }
                    *out = (60.0 + v * 135.0).round() as u8;
                }
                rgb
            }
        }
    }

    /// Integer cell coordinates of a point (checker textures). The lattice
    /// is offset by half a cell so axis-aligned surfaces at multiples of the
    /// cell size (plane z = 0, box walls) sit at cell centers instead of on
    /// boundaries, where rounding noise would flip the cell.
    pub fn cell_of(&self, p: Point3, cell: Real) -> (i64, i64, i64) {
        (
            (p.x / cell + 0.5).floor() as i64,
            (p.y / cell + 0.5).floor() as i64,
            (p.z / cell + 0.5).floor() as i64,
        )
    }

    /// The colour assigned to a checker cell.
    pub fn cell_color(&self, c: (i64, i64, i64)) -> [u8; 3] {
        let h = hash3(self.seed, c.0, c.1, c.2);
        [
            (40 + (h & 0xff) % 176) as u8,
            (40 + ((h >> 8) & 0xff) % 176) as u8,
            (40 + ((h >> 16) & 0xff) % 176) as u8,
        ]
    }
}

/// Mesh shape of the generated scene.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum SceneKind {
    Plane,
    HeightField { amplitude: Real },
    OpenBox,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub texture: TextureKind,
    /// approximate number of mesh faces
    pub target_faces: usize,
    pub n_keyframes: usize,
    pub image_width: u32,
    pub image_height: u32,
    /// world extent of the scene (plane side length), meters
    pub extent: Real,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            kind: SceneKind::Plane,
            texture: TextureKind::CheckerRandom { cell: 2.0 / 48.0 },
            target_faces: 20_000,
            n_keyframes: 11,
            image_width: 640,
            image_height: 480,
            extent: 2.0,
            seed: 0,
        }
    }
}

/// A generated scene: mesh, texture, ground-truth poses and the keyframes
/// rendered from them.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub mesh: Mesh,
    pub texture: SurfaceTexture,
    pub intrinsics: Intrinsics,
    pub gt_poses: Vec<Pose>,
    pub keyframes: Vec<Keyframe>,
    pub spec: SceneSpec,
}

fn look_at(eye: Point3, target: Point3, up_hint: Vec3) -> Pose {
    let f = (target - eye).normalize();
    let mut r = f.cross(&up_hint);
    if r.norm() < 1e-9 {
        r = f.cross(&Vec3::new(1.0, 0.0, 0.0));
    }
    r.normalize_mut();
    let d = f.cross(&r);
    // camera-to-world columns: right, down, forward
    let r_c2w = Mat3::from_columns(&[r, d, f]);
    let rotation = r_c2w.transpose();
    let translation = -(rotation * eye.coords);
    Pose {
        rotation,
        translation,
    }
}

/// Renders the textured mesh from a pose with 2x2 supersampling: every
/// output pixel averages four subpixel shades, so texture edges come out
/// area-sampled the way a real camera would see them. The returned raster
/// map is at the output resolution; the background stays black.
pub fn render_keyframe(
    mesh: &Mesh,
    texture: &SurfaceTexture,
    pose: &Pose,
    k: &Intrinsics,
) -> (RgbImage, RasterMap) {
    let k2 = Intrinsics {
        fx: 2.0 * k.fx,
        fy: 2.0 * k.fy,
        cx: 2.0 * k.cx,
        cy: 2.0 * k.cy,
        width: 2 * k.width,
        height: 2 * k.height,
    };
    let rm2 = rasterize(mesh, pose, &k2);
    let w2 = k2.width as usize;
    let mut hi = vec![0u8; w2 * k2.height as usize * 3];
    crate::par::par_rows_mut(&mut hi, w2 * 3, |y, row| {
        for x in 0..w2 {
            let d = rm2.depth.depth[y * w2 + x];
            if !d.is_finite() {
                continue;
            }
            let p = back_project(x as Real + 0.5, y as Real + 0.5, d, pose, &k2)
                .expect("finite depth");
            let c = texture.color(p);
            row[3 * x..3 * x + 3].copy_from_slice(&c);
        }
    });

    let w = k.width as usize;
    let mut buf = vec![0u8; w * k.height as usize * 3];
    crate::par::par_rows_mut(&mut buf, w * 3, |y, row| {
        for x in 0..w {
            for c in 0..3 {
                let mut sum = 0u32;
                for (sy, sx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    sum += hi[((2 * y + sy) * w2 + 2 * x + sx) * 3 + c] as u32;
                }
                row[3 * x + c] = ((sum + 2) / 4) as u8;
            }
        }
    });
    let img = RgbImage::from_raw(k.width, k.height, buf).expect("buffer size");
    let rm = rasterize(mesh, pose, k);
    (img, rm)
}

/// Builds the mesh, places the cameras and renders all keyframes.
/// Fails when some face is invisible in every keyframe.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    let e = spec.extent;
    let mesh = match spec.kind {
        SceneKind::Plane => {
            let n = (((spec.target_faces as Real) / 2.0).sqrt().round() as usize).max(1);
            plane_grid(e, e, n, n, |_, _| 0.0)
        }
        SceneKind::HeightField { amplitude } => {
            let n = (((spec.target_faces as Real) / 2.0).sqrt().round() as usize).max(1);
            let freq = std::f64::consts::TAU / e;
            plane_grid(e, e, n, n, move |x, y| {
                amplitude * (1.7 * freq * x).sin() * (1.3 * freq * y).cos()
            })
        }
        SceneKind::OpenBox => {
            let cells = (((spec.target_faces as Real) / 10.0).sqrt().round() as usize).max(1);
            open_box(e, 0.4 * e, cells)
        }
    };

    let intrinsics = Intrinsics {
        fx: 0.65 * spec.image_width as Real,
        fy: 0.65 * spec.image_width as Real,
        cx: spec.image_width as Real / 2.0,
        cy: spec.image_height as Real / 2.0,
        width: spec.image_width,
        height: spec.image_height,
    };

    let n = spec.n_keyframes.max(1);
    let mut gt_poses = Vec::with_capacity(n);
    for i in 0..n {
        let s = if n == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as Real / (n - 1) as Real
        };
        let pose = match spec.kind {
            SceneKind::Plane | SceneKind::HeightField { .. } => {
                // cameras sweep along x above the surface, each tilted
                // toward a target a quarter of the way back to the center;
                // nearby cameras share similar viewing angles while the
                // projected-area data term still favours the closest one
                let eye = Point3::new(0.45 * e * s, 0.0, e);
                let target = Point3::new(0.25 * 0.45 * e * s, 0.0, 0.0);
                look_at(eye, target, Vec3::new(0.0, 1.0, 0.0))
            }
            SceneKind::OpenBox => {
                let a = std::f64::consts::TAU * i as Real / n as Real;
                let eye = Point3::new(1.3 * e * a.cos(), 1.3 * e * a.sin(), 0.8 * e);
                let target = Point3::new(0.0, 0.0, 0.15 * e);
                look_at(eye, target, Vec3::new(0.0, 0.0, 1.0))
            }
        };
        gt_poses.push(pose);
    }

    let texture = SurfaceTexture {
        kind: spec.texture.clone(),
        seed: spec.seed,
    };

    let rendered: Vec<(RgbImage, RasterMap)> = crate::par::par_map_slice(&gt_poses, |pose| {
        render_keyframe(&mesh, &texture, pose, &intrinsics)
    });

    // every face must be visible in at least one keyframe
    let visible = crate::par::par_map_range(mesh.faces.len(), |f| {
        gt_poses.iter().zip(&rendered).any(|(pose, (_, rm))| {
            mesh.face_vertices(f).iter().all(|&v| {
                let kf = Keyframe {
                    id: 0,
                    image: RgbImage::new(0, 0),
                    pose: *pose,
                    intrinsics,
                };
                match crate::camera::project(v, pose, &intrinsics) {
                    None => false,
                    Some(pr) => is_visible(v, &kf, &rm.depth, visibility_tol(pr.depth, &intrinsics)),
                }
            })
        })
    });
    let invisible: Vec<usize> = visible
        .iter()
        .enumerate()
        .filter(|(_, v)| !**v)
        .map(|(f, _)| f)
        .collect();
    if !invisible.is_empty() {
        return Err(Error::SceneGeneration(format!(
            "{} of {} faces are invisible in every keyframe (first: face {})",
            invisible.len(),
            mesh.faces.len(),
            invisible[0]
        )));
    }

    let keyframes: Vec<Keyframe> = rendered
        .into_iter()
        .enumerate()
        .map(|(i, (image, _))| Keyframe {
            id: i as u64,
            image,
            pose: gt_poses[i],
            intrinsics,
        })
        .collect();

    Ok(SyntheticScene {
        mesh,
        texture,
        intrinsics,
        gt_poses,
        keyframes,
        spec: spec.clone(),
    })
}

/// Pose and exposure corruption applied to a scene's keyframes.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Perturbation {
    /// rotation magnitude in radians, applied about the camera center
    pub rot_angle: Real,
    /// translation magnitude in meters, random world direction
    pub trans_offset: Real,
    /// gray levels added to every odd-indexed keyframe's image
    pub brightness: Real,
    pub seed: u64,
}

impl Perturbation {
    pub fn none(seed: u64) -> Self {
        Perturbation {
            rot_angle: 0.0,
            trans_offset: 0.0,
            brightness: 0.0,
            seed,
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Composes each ground-truth pose with a random rigid offset of exactly the
/// requested magnitudes. The rotation spins the camera about its own center,
/// so rotation-only perturbations leave camera centers in place.
pub fn perturb_poses(gt_poses: &[Pose], pert: &Perturbation) -> Vec<Pose> {
    gt_poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            if pert.rot_angle == 0.0 && pert.trans_offset == 0.0 {
                return *pose;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
                pert.seed ^ (i as u64).wrapping_mul(0xA24BAED4963EE407),
            ));
            let axis = random_unit(&mut rng);
            let dir = random_unit(&mut rng);
            let delta =
                Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), pert.rot_angle);
            let r_c2w = pose.rotation.transpose() * delta.into_inner();
            let center = pose.center().coords + dir * pert.trans_offset;
            let rotation = r_c2w.transpose();
            let translation = -(rotation * center);
            Pose {
                rotation,
                translation,
            }
        })
        .collect()
}

/// Keyframes carrying the perturbed poses and optionally brightened images.
pub fn perturbed_keyframes(scene: &SyntheticScene, pert: &Perturbation) -> Vec<Keyframe> {
    let poses = perturb_poses(&scene.gt_poses, pert);
    scene
        .keyframes
        .iter()
        .zip(poses)
        .map(|(kf, pose)| {
            let mut image = kf.image.clone();
            if pert.brightness != 0.0 && kf.id % 2 == 1 {
                for p in image.pixels_mut() {
                    for c in 0..3 {
                        p.0[c] = (p.0[c] as Real + pert.brightness).clamp(0.0, 255.0) as u8;
                    }
                }
            }
            Keyframe {
                id: kf.id,
                image,
                pose,
                intrinsics: kf.intrinsics,
            }
        })
        .collect()
}

/// Quantitative pipeline metrics; everything is computable without ground
/// truth, so `texture` runs on real data report them too.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub match_count: usize,
    /// mean / max 3D distance over match pairs before corrections
    pub pre_mean_pair_dist: Real,
    pub pre_max_pair_dist: Real,
    /// the same distances after applying the solved corrections
    pub post_mean_pair_dist: Real,
    pub post_max_pair_dist: Real,
    /// mean metric size of one pixel at the matched points
    pub mean_pixel_footprint: Real,
    pub mean_correction_norm: Real,
    pub max_correction_norm: Real,
    pub seam_sample_count: usize,
    pub seam_rms_before: Real,
    pub seam_rms_after: Real,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneStats {
    pub faces: usize,
    pub keyframes: usize,
    pub fragments: usize,
    pub unlabeled_faces: usize,
}

/// Per-fragment summary for the sidecar report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FragmentInfo {
    pub id: u32,
    pub keyframe: u64,
    pub faces: usize,
    /// [alpha, beta, gamma, tx, ty, tz]
    pub correction: [Real; 6],
    pub chart: Option<crate::atlas::ChartPlacement>,
}

/// The JSON report emitted by every pipeline run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub config_hash: String,
    pub config: crate::pipeline::PipelineConfig,
    pub perturbation: Option<Perturbation>,
    pub scene: SceneStats,
    pub metrics: Metrics,
    pub timings: crate::pipeline::StageTimings,
    pub fragments: Vec<FragmentInfo>,
    pub unlabeled_faces: Vec<u32>,
}

/// Computes the match-pair and seam metrics of a finished pipeline run.
pub fn evaluate(result: &crate::pipeline::PipelineResult, keyframes: &[Keyframe]) -> Metrics {
    use crate::align::corrected_point;

    let mut pre_sum = 0.0;
    let mut pre_max: Real = 0.0;
    let mut post_sum = 0.0;
    let mut post_max: Real = 0.0;
    let mut footprint_sum = 0.0;
    for m in &result.matches {
        let pre = (m.p_i - m.p_j).norm();
        let post = (corrected_point(m.p_i, m.fragments.0, &result.solution)
            - corrected_point(m.p_j, m.fragments.1, &result.solution))
        .norm();
        pre_sum += pre;
        post_sum += post;
        pre_max = pre_max.max(pre);
        post_max = post_max.max(post);
        let label = result.fragments[m.fragments.0 as usize].label as usize;
        let kf = &keyframes[label];
        let depth = (kf.pose.rotation * m.p_i.coords + kf.pose.translation).z;
        footprint_sum += kf.intrinsics.pixel_footprint(depth.max(0.0));
    }
    let n = result.matches.len().max(1) as Real;

    let corr_norms: Vec<Real> = result
        .solution
        .corrections
        .iter()
        .map(|w| w.norm())
        .collect();
    let mean_correction_norm =
        corr_norms.iter().sum::<Real>() / corr_norms.len().max(1) as Real;
    let max_correction_norm = corr_norms.iter().fold(0.0 as Real, |a, &b| a.max(b));

    Metrics {
        match_count: result.matches.len(),
        pre_mean_pair_dist: pre_sum / n,
        pre_max_pair_dist: pre_max,
        post_mean_pair_dist: post_sum / n,
        post_max_pair_dist: post_max,
        mean_pixel_footprint: footprint_sum / n,
        mean_correction_norm,
        max_correction_norm,
        seam_sample_count: result.seam_samples.len(),
        seam_rms_before: result.seam_rms_before,
        seam_rms_after: result.seam_rms_after,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            target_faces: 8,
            n_keyframes: 2,
            image_width: 96,
            image_height: 72,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn tiny_plane_scene_has_expected_shape() {
        let scene = generate_scene(&small_spec()).unwrap();
        assert_eq!(scene.mesh.faces.len(), 8);
        assert_eq!(scene.keyframes.len(), 2);
        for kf in &scene.keyframes {
            assert_eq!(kf.image.width(), 96);
            kf.validate().unwrap();
        }
    }

    #[test]
    fn checker_cell_center_renders_cell_color() {
        let spec = small_spec();
        let scene = generate_scene(&spec).unwrap();
        let TextureKind::CheckerRandom { cell } = spec.texture else {
            unreachable!()
        };
        // world point at the center of a cell on the plane z = 0
        let p = Point3::new(cell * 2.0, cell * 1.0, 0.0);
        let expect = scene.texture.color(p);
        // find its pixel in keyframe 0
        let kf = &scene.keyframes[0];
        let pr = crate::camera::project(p, &kf.pose, &kf.intrinsics).unwrap();
        let px = kf.image.get_pixel(pr.u as u32, pr.v as u32);
        assert_eq!(px.0, expect);
    }

    #[test]
    fn same_seed_renders_identically() {
        let a = generate_scene(&small_spec()).unwrap();
        let b = generate_scene(&small_spec()).unwrap();
        for (ka, kb) in a.keyframes.iter().zip(&b.keyframes) {
            assert_eq!(ka.image.as_raw(), kb.image.as_raw());
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let scene = generate_scene(&small_spec()).unwrap();
        let pert = Perturbation::none(42);
        let poses = perturb_poses(&scene.gt_poses, &pert);
        for (a, b) in scene.gt_poses.iter().zip(&poses) {
            assert_eq!(a.rotation, b.rotation);
            assert_eq!(a.translation, b.translation);
        }
    }

    #[test]
    fn rotation_only_preserves_camera_centers() {
        let scene = generate_scene(&small_spec()).unwrap();
        let pert = Perturbation {
            rot_angle: 0.05,
            trans_offset: 0.0,
            brightness: 0.0,
            seed: 7,
        };
        let poses = perturb_poses(&scene.gt_poses, &pert);
        for (a, b) in scene.gt_poses.iter().zip(&poses) {
            assert_relative_eq!(a.center(), b.center(), epsilon = 1e-12);
            assert!((a.rotation - b.rotation).norm() > 1e-4);
        }
    }

    #[test]
    fn applied_rotation_angle_is_exact() {
        let scene = generate_scene(&small_spec()).unwrap();
        let theta = 0.03;
        let pert = Perturbation {
            rot_angle: theta,
            trans_offset: 0.0,
            brightness: 0.0,
            seed: 3,
        };
        let poses = perturb_poses(&scene.gt_poses, &pert);
        for (a, b) in scene.gt_poses.iter().zip(&poses) {
            let delta = a.rotation * b.rotation.transpose();
            let angle = ((delta.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert!((angle - theta).abs() < 1e-9, "angle {angle}");
        }
    }

    #[test]
    fn translation_magnitude_is_exact() {
        let scene = generate_scene(&small_spec()).unwrap();
        let t = 0.02;
        let pert = Perturbation {
            rot_angle: 0.0,
            trans_offset: t,
            brightness: 0.0,
            seed: 3,
        };
        let poses = perturb_poses(&scene.gt_poses, &pert);
        for (a, b) in scene.gt_poses.iter().zip(&poses) {
            let d = (a.center() - b.center()).norm();
            assert!((d - t).abs() < 1e-12);
        }
    }

    #[test]
    fn brightness_applies_to_odd_keyframes() {
        let scene = generate_scene(&small_spec()).unwrap();
        let pert = Perturbation {
            rot_angle: 0.0,
            trans_offset: 0.0,
            brightness: 20.0,
            seed: 0,
        };
        let kfs = perturbed_keyframes(&scene, &pert);
        assert_eq!(kfs[0].image.as_raw(), scene.keyframes[0].image.as_raw());
        // compare a covered pixel (non-background)
        let raw0 = scene.keyframes[1].image.as_raw();
        let raw1 = kfs[1].image.as_raw();
        let mut checked = 0;
        for (a, b) in raw0.iter().zip(raw1) {
            if *a > 0 && *a < 235 {
                assert_eq!(*b, a + 20);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn open_box_scene_generates() {
        let spec = SceneSpec {
            kind: SceneKind::OpenBox,
            target_faces: 640,
            n_keyframes: 6,
            image_width: 160,
            image_height: 120,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        assert!(scene.mesh.faces.len() >= 500);
    }
}
