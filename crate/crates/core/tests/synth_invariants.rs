//! Quantitative behaviour of the synthetic verification harness:
//! alignment must help at desk scale, and its recovery error must shrink
//! quadratically in the small-angle regime.

use texrec_core::align::{assemble_system, corrected_point, solve_corrections};
use texrec_core::features::MatchPair;
use texrec_core::pipeline::{run, PipelineConfig};
use texrec_core::synth::{generate_scene, perturbed_keyframes, Perturbation, SceneSpec};
use texrec_core::{Point3, Real, Vec3};

fn two_fragment_scene() -> SceneSpec {
    SceneSpec {
        target_faces: 2000,
        n_keyframes: 2,
        image_width: 480,
        image_height: 360,
        ..SceneSpec::default()
    }
}

/// Post-alignment matched-pair distance beats the pre-alignment distance in
/// every seeded run across the tested perturbation magnitudes.
#[test]
fn alignment_helps_at_desk_scale() {
    let scene = generate_scene(&two_fragment_scene()).unwrap();
    // a 0.05 rad perturbation displaces lifted points by ~10 cm at this
    // camera height; the margin (and with it the 3D match gate) must admit
    // that much
    let cfg = PipelineConfig {
        margin: Some(0.25),
        ..PipelineConfig::default()
    };
    let diag = scene.mesh.bbox_diagonal();
    for &magnitude in &[0.01, 0.02, 0.05] {
        for seed in 0..20u64 {
            let pert = Perturbation {
                rot_angle: magnitude,
                trans_offset: 0.005 * diag,
                brightness: 0.0,
                seed,
            };
            let kfs = perturbed_keyframes(&scene, &pert);
            let result = run(&scene.mesh, &kfs, &cfg).unwrap();
            let metrics = texrec_core::synth::evaluate(&result, &kfs);
            assert!(
                metrics.match_count >= 8,
                "magnitude {magnitude} seed {seed}: only {} matches",
                metrics.match_count
            );
            assert!(
                metrics.post_mean_pair_dist < metrics.pre_mean_pair_dist,
                "magnitude {magnitude} seed {seed}: post {} >= pre {}",
                metrics.post_mean_pair_dist,
                metrics.pre_mean_pair_dist
            );
        }
    }
}

/// Root-mean-square distance of `points` to `targets` after removing the
/// best-fit rigid motion (Kabsch).
fn rms_after_rigid_alignment(points: &[Point3], targets: &[Point3]) -> Real {
    let n = points.len() as Real;
    let cx = points.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let cy = targets.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let mut h = nalgebra::Matrix3::<Real>::zeros();
    for (p, q) in points.iter().zip(targets) {
        h += (p.coords - cx) * (q.coords - cy).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = nalgebra::Matrix3::<Real>::identity();
    d[(2, 2)] = (v_t.transpose() * u.transpose()).determinant().signum();
    let rot = v_t.transpose() * d * u.transpose();
    let mut sum = 0.0;
    for (p, q) in points.iter().zip(targets) {
        sum += (rot * (p.coords - cx) + cy - q.coords).norm_squared();
    }
    (sum / n).sqrt()
}

/// Applies exact rigid motions of magnitude theta to both sides of a set of
/// surface points, solves the linear correction, and measures how far the
/// corrected configuration stays from the ground truth once the global
/// gauge motion is removed. The matched pairs themselves close exactly (the
/// skew corrections compose through the Cayley transform), so the
/// linearization quality shows up only against the true positions.
fn linearization_residual(theta: Real, seed: u64) -> Real {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut axis = || {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        nalgebra::Unit::new_normalize(v)
    };
    let rot_i = nalgebra::Rotation3::from_axis_angle(&axis(), theta);
    let rot_j = nalgebra::Rotation3::from_axis_angle(&axis(), theta);
    let center_i = Point3::new(0.3, -0.2, 0.4);
    let center_j = Point3::new(-0.25, 0.15, 0.3);

    let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let mut truth = Vec::new();
    let matches: Vec<MatchPair> = (0..60)
        .map(|_| {
            // surface points in a band around the border x = 0
            let p = Point3::new(
                rng2.gen_range(-0.15..0.15),
                rng2.gen_range(-1.0..1.0),
                rng2.gen_range(-0.2..0.2),
            );
            truth.push(p);
            let p_i = center_i + rot_i * (p - center_i);
            let p_j = center_j + rot_j * (p - center_j);
            MatchPair {
                p_i,
                p_j,
                weight: 1.0,
                fragments: (0, 1),
                indices: (0, 0),
            }
        })
        .collect();
    let sys = assemble_system(&matches, &[0, 1]).unwrap();
    let sol = solve_corrections(&sys, 1e-9).unwrap();
    let mut corrected = Vec::with_capacity(2 * matches.len());
    let mut targets = Vec::with_capacity(2 * matches.len());
    for (m, p) in matches.iter().zip(&truth) {
        corrected.push(corrected_point(m.p_i, 0, &sol));
        corrected.push(corrected_point(m.p_j, 1, &sol));
        targets.push(*p);
        targets.push(*p);
    }
    rms_after_rigid_alignment(&corrected, &targets)
}

/// Log-log slope of the recovery error over theta must stay >= 1.8: the
/// first-order correction leaves only the quadratic remainder of the exact
/// rotations.
#[test]
fn small_angle_recovery_error_is_quadratic() {
    let magnitudes = [0.01, 0.02, 0.04, 0.08];
    let mut points = Vec::new();
    for &theta in &magnitudes {
        let mean: Real =
            (0..5).map(|s| linearization_residual(theta, s)).sum::<Real>() / 5.0;
        points.push((theta.ln(), mean.ln()));
    }
    let n = points.len() as Real;
    let sx: Real = points.iter().map(|p| p.0).sum();
    let sy: Real = points.iter().map(|p| p.1).sum();
    let sxx: Real = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: Real = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!(slope >= 1.8, "log-log slope {slope:.3} < 1.8");
}
