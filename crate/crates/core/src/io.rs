//! File formats: Wavefront OBJ, ASCII trajectories, intrinsics JSON, PNG
//! keyframes, and the debug dumps (PLY labels, MatrixMarket system,
//! keypoint lists).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use image::RgbImage;
use nalgebra::{Quaternion, UnitQuaternion};

use crate::align::SparseSystem;
use crate::camera::{Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::features::Keypoint3D;
use crate::labeling::Labeling;
use crate::mesh::Mesh;
use crate::{Point3, Real, Vec3};

/// Loads an OBJ mesh. Polygons are fan-triangulated; indices are 1-based.
/// Per-corner UVs are returned for faces where every corner carries one.
pub fn load_obj(path: &Path) -> Result<(Mesh, Vec<Option<[[Real; 2]; 3]>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut vertices: Vec<Point3> = Vec::new();
    let mut uvs: Vec<[Real; 2]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut face_uvs: Vec<Option<[[Real; 2]; 3]>> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    *c = parts
                        .next()
                        .and_then(|s| s.parse::<Real>().ok())
                        .ok_or_else(|| Error::parse(path, lineno, "malformed vertex"))?;
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("vt") => {
                let mut coords = [0.0; 2];
                for c in &mut coords {
                    *c = parts
                        .next()
                        .and_then(|s| s.parse::<Real>().ok())
                        .ok_or_else(|| Error::parse(path, lineno, "malformed texture coord"))?;
                }
                uvs.push(coords);
            }
            Some("f") => {
                let mut vidx: Vec<u32> = Vec::new();
                let mut tidx: Vec<Option<u32>> = Vec::new();
                for corner in parts {
                    let mut it = corner.split('/');
                    let v: i64 = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::parse(path, lineno, "malformed face corner"))?;
                    if v < 1 || v as usize > vertices.len() {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!("vertex index {v} out of range (1..={})", vertices.len()),
                        ));
                    }
                    vidx.push(v as u32 - 1);
                    let t = match it.next() {
                        Some("") | None => None,
                        Some(s) => {
                            let t: i64 = s.parse().map_err(|_| {
                                Error::parse(path, lineno, "malformed texture index")
                            })?;
                            if t < 1 || t as usize > uvs.len() {
                                return Err(Error::parse(
                                    path,
                                    lineno,
                                    format!("texture index {t} out of range"),
                                ));
                            }
                            Some(t as u32 - 1)
                        }
                    };
                    tidx.push(t);
                }
                if vidx.len() < 3 {
                    return Err(Error::parse(path, lineno, "face with fewer than 3 corners"));
                }
                for i in 1..vidx.len() - 1 {
                    faces.push([vidx[0], vidx[i], vidx[i + 1]]);
                    let fu = match (tidx[0], tidx[i], tidx[i + 1]) {
                        (Some(a), Some(b), Some(c)) => Some([
                            uvs[a as usize],
                            uvs[b as usize],
                            uvs[c as usize],
                        ]),
                        _ => None,
                    };
                    face_uvs.push(fu);
                }
            }
            _ => {} // vn, o, g, s, usemtl, mtllib are ignored
        }
    }

    let mesh = Mesh::new(vertices, faces)?;
    Ok((mesh, face_uvs))
}

/// Writes a plain OBJ (geometry only).
pub fn save_obj(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {:.6} {:.6} {:.6}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads `id tx ty tz qx qy qz qw` lines (camera-to-world, quaternion xyzw)
/// and converts to the world-to-camera convention.
pub fn load_trajectory(path: &Path) -> Result<Vec<(u64, Pose)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 8 fields `id tx ty tz qx qy qz qw`, got {}", fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, "malformed keyframe id"))?;
        let mut vals = [0.0 as Real; 7];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = fields[i + 1]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("malformed number `{}`", fields[i + 1])))?;
        }
        let center = Vec3::new(vals[0], vals[1], vals[2]);
        let q = Quaternion::new(vals[6], vals[3], vals[4], vals[5]); // w, x, y, z
        let norm = q.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("quaternion norm {norm} is not 1"),
            ));
        }
        let q = UnitQuaternion::from_quaternion(q);
        let pose = Pose::from_camera_to_world(q, center);
        pose.validate(id)?;
        out.push((id, pose));
    }
    Ok(out)
}

/// Writes the camera-to-world trajectory format read by [`load_trajectory`].
pub fn save_trajectory(path: &Path, poses: &[(u64, Pose)]) -> Result<()> {
    let mut out = String::new();
    for (id, pose) in poses {
        let c = pose.center();
        let r_c2w = nalgebra::Rotation3::from_matrix_unchecked(pose.rotation.transpose());
        let q = UnitQuaternion::from_rotation_matrix(&r_c2w);
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            id, c.x, c.y, c.z, q.i, q.j, q.k, q.w
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Intrinsics file: either one shared object or an array of per-keyframe
/// entries carrying an `id`.
#[derive(Debug, Clone)]
pub enum IntrinsicsSource {
    Shared(Intrinsics),
    PerKeyframe(BTreeMap<u64, Intrinsics>),
}

impl IntrinsicsSource {
    pub fn for_keyframe(&self, id: u64) -> Result<Intrinsics> {
        match self {
            IntrinsicsSource::Shared(k) => Ok(*k),
            IntrinsicsSource::PerKeyframe(map) => map.get(&id).copied().ok_or_else(|| {
                Error::InvalidIntrinsics(format!("no intrinsics entry for keyframe {id}"))
            }),
        }
    }
}

#[derive(serde::Deserialize)]
struct PerKeyframeIntrinsics {
    id: u64,
    #[serde(flatten)]
    intrinsics: Intrinsics,
}

pub fn load_intrinsics(path: &Path) -> Result<IntrinsicsSource> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let source = if value.is_array() {
        let entries: Vec<PerKeyframeIntrinsics> = serde_json::from_value(value)
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        IntrinsicsSource::PerKeyframe(
            entries.into_iter().map(|e| (e.id, e.intrinsics)).collect(),
        )
    } else {
        let k: Intrinsics = serde_json::from_value(value)
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        IntrinsicsSource::Shared(k)
    };
    match &source {
        IntrinsicsSource::Shared(k) => k.validate()?,
        IntrinsicsSource::PerKeyframe(map) => {
            for k in map.values() {
                k.validate()?;
            }
        }
    }
    Ok(source)
}

pub fn save_intrinsics(path: &Path, k: &Intrinsics) -> Result<()> {
    let text = serde_json::to_string_pretty(k).expect("intrinsics serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keyframe image file name for an id; synth writes zero-padded names.
pub fn image_file_name(id: u64) -> String {
    format!("{id:06}.png")
}

/// Loads the keyframe image for `id` from a directory, accepting either
/// `000001.png` or `1.png`.
pub fn load_keyframe_image(dir: &Path, id: u64) -> Result<RgbImage> {
    for name in [image_file_name(id), format!("{id}.png")] {
        let path = dir.join(&name);
        if path.exists() {
            let img = image::open(&path)
                .map_err(|e| Error::Image {
                    path: path.clone(),
                    source: e,
                })?
                .to_rgb8();
            return Ok(img);
        }
    }
    Err(Error::io(
        dir.join(image_file_name(id)),
        std::io::Error::new(std::io::ErrorKind::NotFound, "keyframe image not found"),
    ))
}

/// Number of PNG files in a directory (for the pose/image count check).
pub fn count_pngs(dir: &Path) -> Result<usize> {
    let mut n = 0;
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().extension().map(|e| e == "png").unwrap_or(false) {
            n += 1;
        }
    }
    Ok(n)
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

fn label_color(label: u32) -> [u8; 3] {
    // deterministic palette from a hash of the label
    let mut h = (label as u64).wrapping_mul(0x9E3779B97F4A7C15);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58476D1CE4E5B9);
    [
        (64 + (h & 0x7f)) as u8,
        (64 + ((h >> 8) & 0x7f)) as u8,
        (64 + ((h >> 16) & 0x7f)) as u8,
    ]
}

/// Per-face label visualization as an ASCII PLY with face colours.
pub fn dump_labels_ply(path: &Path, mesh: &Mesh, labeling: &Labeling) -> Result<()> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", mesh.vertices.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str(&format!("element face {}\n", mesh.faces.len()));
    out.push_str("property list uchar int vertex_indices\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.push_str("end_header\n");
    for v in &mesh.vertices {
        out.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
    }
    for (f, face) in mesh.faces.iter().enumerate() {
        let c = match labeling.get(f) {
            Some(l) => label_color(l),
            None => [80, 80, 80],
        };
        out.push_str(&format!(
            "3 {} {} {} {} {} {}\n",
            face[0], face[1], face[2], c[0], c[1], c[2]
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// MatrixMarket coordinate dump of the pose system plus a plain-text rhs.
pub fn dump_system(dir: &Path, sys: &SparseSystem) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mtx_path = dir.join("A_pose.mtx");
    let mut entries = sys.triplets.clone();
    entries.sort_by_key(|&(r, c, _)| (r, c));
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(&mtx_path).map_err(|e| Error::io(&mtx_path, e))?,
    );
    writeln!(f, "%%MatrixMarket matrix coordinate real general")
        .and_then(|_| writeln!(f, "{} {} {}", sys.n_rows, sys.n_cols, entries.len()))
        .map_err(|e| Error::io(&mtx_path, e))?;
    for (r, c, v) in entries {
        writeln!(f, "{} {} {}", r + 1, c + 1, v).map_err(|e| Error::io(&mtx_path, e))?;
    }
    f.flush().map_err(|e| Error::io(&mtx_path, e))?;

    let b_path = dir.join("b_pose.txt");
    let mut out = String::new();
    for v in &sys.rhs {
        out.push_str(&format!("{v}\n"));
    }
    std::fs::write(&b_path, out).map_err(|e| Error::io(&b_path, e))
}

/// ASCII keypoint dump: `kf_id u v x y z fragment_id` per line.
pub fn dump_keypoints(path: &Path, keypoints: &[Vec<Keypoint3D>]) -> Result<()> {
    let mut out = String::new();
    for per_kf in keypoints {
        for kp in per_kf {
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                kp.keyframe, kp.pixel.0, kp.pixel.1, kp.point.x, kp.point.y, kp.point.z, kp.fragment
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Pretty JSON writer used for reports.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn obj_fan_triangulation_and_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quad.obj");
        std::fs::write(
            &path,
            "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n",
        )
        .unwrap();
        let (mesh, uvs) = load_obj(&path).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(uvs.iter().all(|u| u.is_none()));
    }

    #[test]
    fn obj_rejects_bad_indices_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap();
        match load_obj(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_roundtrip_preserves_poses() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let poses: Vec<(u64, Pose)> = (0..8)
            .map(|i| {
                let q = UnitQuaternion::from_euler_angles(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let c = Vec3::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                );
                (i, Pose::from_camera_to_world(q, c))
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        save_trajectory(&path, &poses).unwrap();
        let loaded = load_trajectory(&path).unwrap();
        assert_eq!(loaded.len(), poses.len());
        for ((ia, a), (ib, b)) in poses.iter().zip(&loaded) {
            assert_eq!(ia, ib);
            assert_relative_eq!(a.rotation, b.rotation, epsilon = 1e-12);
            assert_relative_eq!(a.translation, b.translation, epsilon = 1e-12);
        }
    }

    #[test]
    fn trajectory_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        std::fs::write(&path, "0 0 0 0 0 0 0 1\n1 0 0 0 bad 0 0 1\n").unwrap();
        match load_trajectory(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, "0 0 0 0 0.5 0 0 0.5\n").unwrap();
        assert!(matches!(load_trajectory(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn intrinsics_shared_and_per_keyframe() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("intr.json");
        std::fs::write(
            &path,
            r#"{"fx": 100.0, "fy": 100.0, "cx": 32.0, "cy": 32.0, "width": 64, "height": 64}"#,
        )
        .unwrap();
        let shared = load_intrinsics(&path).unwrap();
        assert_eq!(shared.for_keyframe(7).unwrap().fx, 100.0);

        std::fs::write(
            &path,
            r#"[{"id": 3, "fx": 50.0, "fy": 50.0, "cx": 16.0, "cy": 16.0, "width": 32, "height": 32}]"#,
        )
        .unwrap();
        let per = load_intrinsics(&path).unwrap();
        assert_eq!(per.for_keyframe(3).unwrap().fx, 50.0);
        assert!(per.for_keyframe(4).is_err());
    }

    #[test]
    fn matrixmarket_dump_is_sorted_and_one_based() {
        let sys = SparseSystem {
            n_rows: 3,
            n_cols: 6,
            triplets: vec![(2, 3, 0.5), (0, 0, 1.0), (2, 0, -1.0)],
            rhs: vec![0.0, 1.0, -2.5],
            fragment_ids: vec![0],
            match_blocks: vec![],
            weights: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        dump_system(dir.path(), &sys).unwrap();
        let text = std::fs::read_to_string(dir.path().join("A_pose.mtx")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "%%MatrixMarket matrix coordinate real general");
        assert_eq!(lines[1], "3 6 3");
        assert_eq!(lines[2], "1 1 1");
        assert_eq!(lines[3], "3 1 -1");
        assert_eq!(lines[4], "3 4 0.5");
        let b = std::fs::read_to_string(dir.path().join("b_pose.txt")).unwrap();
        assert_eq!(b, "0\n1\n-2.5\n");
    }
}
