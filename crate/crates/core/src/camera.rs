//! Pinhole cameras, rigid poses and the projection pair.

use image::RgbImage;
use nalgebra::UnitQuaternion;

use crate::error::{Error, Result};
use crate::{Mat3, Point3, Real, Vec3};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: Real,
    pub fy: Real,
    pub cx: Real,
    pub cy: Real,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "fx, fy must be positive (got {}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as Real)
            || !(self.cy >= 0.0 && self.cy < self.height as Real)
        {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Metric size of one pixel at the given camera depth.
    pub fn pixel_footprint(&self, depth: Real) -> Real {
        depth * (1.0 / (self.fx * self.fx) + 1.0 / (self.fy * self.fy)).sqrt()
    }
}

/// Rigid world-to-camera transform: `q = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

const ORTHONORMAL_TOL: Real = 1e-9;

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Checks orthonormality and det = +1 within 1e-9.
    pub fn validate(&self, id: u64) -> Result<()> {
        let r = self.rotation;
        let err = (r.transpose() * r - Mat3::identity()).norm();
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose {
                id,
                msg: format!("rotation not orthonormal (|R^T R - I| = {err:.3e})"),
            });
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose {
                id,
                msg: format!("rotation determinant {det} != 1"),
            });
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose {
                id,
                msg: "translation not finite".into(),
            });
        }
        Ok(())
    }

    /// Builds the world-to-camera pose from a camera-to-world rotation
    /// (unit quaternion, xyzw) and camera center, the trajectory file
    /// convention.
    pub fn from_camera_to_world(q: UnitQuaternion<Real>, center: Vec3) -> Self {
        let r_c2w = q.to_rotation_matrix().into_inner();
        let rotation = r_c2w.transpose();
        let translation = -(rotation * center);
        Pose {
            rotation,
            translation,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn to_camera(&self, p: Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn to_world(&self, q: Point3) -> Point3 {
        Point3::from(self.rotation.transpose() * (q.coords - self.translation))
    }
}

/// A posed input image.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: u64,
    pub image: RgbImage,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

impl Keyframe {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose.validate(self.id)?;
        if self.image.width() != self.intrinsics.width
            || self.image.height() != self.intrinsics.height
        {
            return Err(Error::InvalidIntrinsics(format!(
                "keyframe {}: image is {}x{} but intrinsics say {}x{}",
                self.id,
                self.image.width(),
                self.image.height(),
                self.intrinsics.width,
                self.intrinsics.height
            )));
        }
        Ok(())
    }

    /// Bilinear RGB lookup at continuous pixel coordinates, clamped to the
    /// image border.
    pub fn sample_bilinear(&self, u: Real, v: Real) -> [Real; 3] {
        sample_bilinear(&self.image, u, v)
    }
}

/// Continuous pixel coordinates and camera depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub u: Real,
    pub v: Real,
    pub depth: Real,
}

/// Projects a world point; `None` when behind the camera or outside the
/// image.
pub fn project(p: Point3, pose: &Pose, k: &Intrinsics) -> Option<Projected> {
    let q = pose.rotation * p.coords + pose.translation;
    if q.z <= 0.0 {
        return None;
    }
    let u = k.fx * q.x / q.z + k.cx;
    let v = k.fy * q.y / q.z + k.cy;
    if u < 0.0 || u >= k.width as Real || v < 0.0 || v >= k.height as Real {
        return None;
    }
    Some(Projected { u, v, depth: q.z })
}

/// Inverts [`project`]; `None` for non-positive or sentinel depth.
pub fn back_project(u: Real, v: Real, depth: Real, pose: &Pose, k: &Intrinsics) -> Option<Point3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return None;
    }
    let q = Vec3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth);
    Some(Point3::from(
        pose.rotation.transpose() * (q - pose.translation),
    ))
}

/// Bilinear RGB lookup on any `RgbImage`, clamped at the border. Pixel (x, y)
/// is centred at (x + 0.5, y + 0.5).
pub fn sample_bilinear(img: &RgbImage, u: Real, v: Real) -> [Real; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x = u - 0.5;
    let y = v - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let tx = x - x0;
    let ty = y - y0;
    let clamp = |a: i64, hi: i64| a.clamp(0, hi - 1) as u32;
    let (x0i, y0i) = (x0 as i64, y0 as i64);
    let mut out = [0.0; 3];
    for (dx, dy, w00) in [
        (0, 0, (1.0 - tx) * (1.0 - ty)),
        (1, 0, tx * (1.0 - ty)),
        (0, 1, (1.0 - tx) * ty),
        (1, 1, tx * ty),
    ] {
        let px = img.get_pixel(clamp(x0i + dx, w), clamp(y0i + dy, h));
        for c in 0..3 {
            out[c] += w00 * px.0[c] as Real;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn k100() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
        }
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let p = project(Point3::new(0.0, 0.0, 2.0), &Pose::identity(), &k100()).unwrap();
        assert_eq!((p.u, p.v, p.depth), (50.0, 50.0, 2.0));
    }

    #[test]
    fn pinhole_substitution() {
        let p = project(Point3::new(1.0, 0.0, 2.0), &Pose::identity(), &k100());
        // u = 100 * 1/2 + 50 = 100, outside [0, 100) -> out of view
        assert!(p.is_none());
        let k = Intrinsics {
            width: 101,
            ..k100()
        };
        let p = project(Point3::new(1.0, 0.0, 2.0), &Pose::identity(), &k).unwrap();
        assert_eq!((p.u, p.v, p.depth), (100.0, 50.0, 2.0));
    }

    #[test]
    fn behind_camera_is_out_of_view() {
        assert!(project(Point3::new(0.0, 0.0, -1.0), &Pose::identity(), &k100()).is_none());
    }

    #[test]
    fn back_project_inverts_example() {
        let p = back_project(50.0, 50.0, 2.0, &Pose::identity(), &k100()).unwrap();
        assert_relative_eq!(p, Point3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn back_project_rejects_bad_depth() {
        let pose = Pose::identity();
        assert!(back_project(1.0, 1.0, 0.0, &pose, &k100()).is_none());
        assert!(back_project(1.0, 1.0, -1.0, &pose, &k100()).is_none());
        assert!(back_project(1.0, 1.0, Real::INFINITY, &pose, &k100()).is_none());
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let q = UnitQuaternion::from_euler_angles(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        Pose {
            rotation: q.to_rotation_matrix().into_inner(),
            translation: Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
        }
    }

    #[test]
    fn round_trip_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let k = k100();
        let mut tested = 0;
        while tested < 1000 {
            let pose = random_pose(&mut rng);
            let p = Point3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            if let Some(pr) = project(p, &pose, &k) {
                let q = back_project(pr.u, pr.v, pr.depth, &pose, &k).unwrap();
                assert!((q - p).norm() < 1e-9, "round trip error {}", (q - p).norm());
                tested += 1;
            }
        }
    }

    #[test]
    fn camera_to_world_conversion_preserves_center() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = UnitQuaternion::from_euler_angles(
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let c = Vec3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let pose = Pose::from_camera_to_world(q, c);
            pose.validate(0).unwrap();
            assert_relative_eq!(pose.center().coords, c, epsilon = 1e-12);
        }
    }

    #[test]
    fn bilinear_at_pixel_centers_is_exact() {
        let mut img = RgbImage::new(4, 4);
        for (x, y, p) in img.enumerate_pixels_mut() {
            p.0 = [(x * 10 + y) as u8, 0, 0];
        }
        for y in 0..4u32 {
            for x in 0..4u32 {
                let s = sample_bilinear(&img, x as Real + 0.5, y as Real + 0.5);
                assert_eq!(s[0], (x * 10 + y) as Real);
            }
        }
    }
}
