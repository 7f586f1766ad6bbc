//! Software depth rasterization and visibility tests.
//!
//! Rasterization samples at pixel centers with a top-left fill rule and
//! perspective-correct depth, and parallelizes over image rows. Each pixel is
//! owned by exactly one row chunk and faces are visited in index order, so
//! the result is identical to the sequential pass.

use crate::camera::{project, Intrinsics, Keyframe, Pose};
use crate::mesh::Mesh;
use crate::{Point3, Real, Vec3};

/// Depth value marking an empty pixel.
pub const SENTINEL_DEPTH: Real = Real::INFINITY;
/// Face id marking an empty pixel.
pub const NO_FACE: u32 = u32::MAX;

/// Camera-frame depth per pixel; `SENTINEL_DEPTH` where no face projects.
#[derive(Debug, Clone)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<Real>,
}

impl DepthMap {
    pub fn get(&self, x: u32, y: u32) -> Real {
        self.depth[(y * self.width + x) as usize]
    }

    pub fn is_empty_at(&self, x: u32, y: u32) -> bool {
        !self.get(x, y).is_finite()
    }

    /// Depth at the pixel containing continuous coordinates (u, v), or
    /// `None` outside the image or on an empty pixel.
    pub fn depth_at(&self, u: Real, v: Real) -> Option<Real> {
        let (x, y) = self.pixel_of(u, v)?;
        let d = self.get(x, y);
        d.is_finite().then_some(d)
    }

    pub fn pixel_of(&self, u: Real, v: Real) -> Option<(u32, u32)> {
        if u < 0.0 || v < 0.0 || u >= self.width as Real || v >= self.height as Real {
            return None;
        }
        Some((u as u32, v as u32))
    }
}

/// Depth plus the face index that produced each pixel.
#[derive(Debug, Clone)]
pub struct RasterMap {
    pub depth: DepthMap,
    pub face: Vec<u32>,
}

impl RasterMap {
    pub fn face_at(&self, x: u32, y: u32) -> Option<u32> {
        let f = self.face[(y * self.depth.width + x) as usize];
        (f != NO_FACE).then_some(f)
    }
}

/// A screen-space triangle ready for scan conversion.
struct ScreenTri {
    face: u32,
    // screen positions (pixel coords) and inverse camera depth per vertex
    pts: [[Real; 2]; 3],
    inv_z: [Real; 3],
    row_start: u32,
    row_end: u32, // inclusive
}

const NEAR_PLANE: Real = 1e-6;

/// Renders the nearest-surface depth of `mesh` seen from the keyframe pose.
pub fn rasterize_depth(mesh: &Mesh, pose: &Pose, k: &Intrinsics) -> DepthMap {
    rasterize(mesh, pose, k).depth
}

/// Renders depth and per-pixel face indices.
pub fn rasterize(mesh: &Mesh, pose: &Pose, k: &Intrinsics) -> RasterMap {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut depth = vec![SENTINEL_DEPTH; w * h];
    let mut face = vec![NO_FACE; w * h];
    if w == 0 || h == 0 {
        return RasterMap {
            depth: DepthMap {
                width: k.width,
                height: k.height,
                depth,
            },
            face,
        };
    }

    let tris = build_screen_tris(mesh, pose, k);

    // Bucket triangle indices per row, preserving face order inside a row.
    let mut row_of: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (ti, t) in tris.iter().enumerate() {
        for y in t.row_start..=t.row_end {
            row_of[y as usize].push(ti as u32);
        }
    }

    scan_rows(&tris, &row_of, w, &mut depth, &mut face);

    RasterMap {
        depth: DepthMap {
            width: k.width,
            height: k.height,
            depth,
        },
        face,
    }
}

#[cfg(feature = "parallel")]
fn scan_rows(tris: &[ScreenTri], row_of: &[Vec<u32>], w: usize, depth: &mut [Real], face: &mut [u32]) {
    use rayon::prelude::*;
    depth
        .par_chunks_mut(w)
        .zip(face.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (drow, frow))| scan_row(tris, &row_of[y], y as u32, drow, frow));
}

#[cfg(not(feature = "parallel"))]
fn scan_rows(tris: &[ScreenTri], row_of: &[Vec<u32>], w: usize, depth: &mut [Real], face: &mut [u32]) {
    depth
        .chunks_mut(w)
        .zip(face.chunks_mut(w))
        .enumerate()
        .for_each(|(y, (drow, frow))| scan_row(tris, &row_of[y], y as u32, drow, frow));
}

/// Sequential reference pass over whole image; used by tests and benches to
/// pin down the parallel result.
pub fn rasterize_sequential(mesh: &Mesh, pose: &Pose, k: &Intrinsics) -> RasterMap {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut depth = vec![SENTINEL_DEPTH; w * h];
    let mut face = vec![NO_FACE; w * h];
    let tris = build_screen_tris(mesh, pose, k);
    let all: Vec<u32> = (0..tris.len() as u32).collect();
    for y in 0..h {
        let row: Vec<u32> = all
            .iter()
            .copied()
            .filter(|&ti| {
                let t = &tris[ti as usize];
                t.row_start <= y as u32 && y as u32 <= t.row_end
            })
            .collect();
        let (dr, fr) = (
            &mut depth[y * w..(y + 1) * w],
            &mut face[y * w..(y + 1) * w],
        );
        scan_row(&tris, &row, y as u32, dr, fr);
    }
    RasterMap {
        depth: DepthMap {
            width: k.width,
            height: k.height,
            depth,
        },
        face,
    }
}

fn build_screen_tris(mesh: &Mesh, pose: &Pose, k: &Intrinsics) -> Vec<ScreenTri> {
    let (w, h) = (k.width as Real, k.height as Real);
    let cam: Vec<Vec3> = mesh
        .vertices
        .iter()
        .map(|p| pose.rotation * p.coords + pose.translation)
        .collect();

    let mut tris = Vec::with_capacity(mesh.faces.len());
    for (fi, f) in mesh.faces.iter().enumerate() {
        let tri = [
            cam[f[0] as usize],
            cam[f[1] as usize],
            cam[f[2] as usize],
        ];
        for clipped in clip_near(&tri) {
            let mut pts = [[0.0; 2]; 3];
            let mut inv_z = [0.0; 3];
            for (i, q) in clipped.iter().enumerate() {
                pts[i] = [k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy];
                inv_z[i] = 1.0 / q.z;
            }
            let min_y = pts.iter().map(|p| p[1]).fold(Real::INFINITY, Real::min);
            let max_y = pts.iter().map(|p| p[1]).fold(Real::NEG_INFINITY, Real::max);
            let min_x = pts.iter().map(|p| p[0]).fold(Real::INFINITY, Real::min);
            let max_x = pts.iter().map(|p| p[0]).fold(Real::NEG_INFINITY, Real::max);
            if max_x < 0.0 || min_x >= w || max_y < 0.0 || min_y >= h {
                continue;
            }
            // rows whose center y+0.5 lies within [min_y, max_y]
            let row_start = ((min_y - 0.5).ceil().max(0.0)) as u32;
            let row_end_f = (max_y - 0.5).floor();
            if row_end_f < row_start as Real {
                continue;
            }
            let row_end = (row_end_f as u32).min(k.height - 1);
            if row_start > row_end {
                continue;
            }
            tris.push(ScreenTri {
                face: fi as u32,
                pts,
                inv_z,
                row_start,
                row_end,
            });
        }
    }
    tris
}

/// Clips a camera-space triangle against z >= NEAR_PLANE; yields 0..2
/// triangles.
fn clip_near(tri: &[Vec3; 3]) -> Vec<[Vec3; 3]> {
    let inside: Vec<bool> = tri.iter().map(|q| q.z >= NEAR_PLANE).collect();
    let n_in = inside.iter().filter(|&&b| b).count();
    match n_in {
        3 => vec![*tri],
        0 => vec![],
        _ => {
            // Sutherland-Hodgman against the near plane
            let mut poly: Vec<Vec3> = Vec::with_capacity(4);
            for i in 0..3 {
                let j = (i + 1) % 3;
                let (a, b) = (tri[i], tri[j]);
                if inside[i] {
                    poly.push(a);
                }
                if inside[i] != inside[j] {
                    let t = (NEAR_PLANE - a.z) / (b.z - a.z);
                    poly.push(a + (b - a) * t);
                }
            }
            let mut out = Vec::with_capacity(2);
            for i in 1..poly.len().saturating_sub(1) {
                out.push([poly[0], poly[i], poly[i + 1]]);
            }
            out
        }
    }
}

fn scan_row(tris: &[ScreenTri], row: &[u32], y: u32, drow: &mut [Real], frow: &mut [u32]) {
    let w = drow.len() as i64;
    let py = y as Real + 0.5;
    for &ti in row {
        let t = &tris[ti as usize];
        let [a, mut b, mut c] = t.pts;
        let [iza, mut izb, mut izc] = t.inv_z;
        let mut area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area2 == 0.0 {
            continue;
        }
        if area2 < 0.0 {
            std::mem::swap(&mut b, &mut c);
            std::mem::swap(&mut izb, &mut izc);
            area2 = -area2;
        }

        let min_x = a[0].min(b[0]).min(c[0]);
        let max_x = a[0].max(b[0]).max(c[0]);
        let x_start = ((min_x - 0.5).ceil().max(0.0)) as i64;
        let x_end = ((max_x - 0.5).floor() as i64).min(w - 1);

        for x in x_start..=x_end {
            let px = x as Real + 0.5;
            let e_ab = edge_fn(&a, &b, px, py);
            let e_bc = edge_fn(&b, &c, px, py);
            let e_ca = edge_fn(&c, &a, px, py);
            let inside =
                covers_edge(e_ab, &a, &b) && covers_edge(e_bc, &b, &c) && covers_edge(e_ca, &c, &a);
            if !inside {
                continue;
            }
            // perspective-correct depth: 1/z is affine in screen space
            let la = e_bc / area2;
            let lb = e_ca / area2;
            let lc = e_ab / area2;
            let inv_z = la * iza + lb * izb + lc * izc;
            if inv_z <= 0.0 {
                continue;
            }
            let z = 1.0 / inv_z;
            let xi = x as usize;
            if z < drow[xi] {
                drow[xi] = z;
                frow[xi] = t.face;
            }
        }
    }
}

#[inline]
pub(crate) fn edge_fn(p: &[Real; 2], q: &[Real; 2], sx: Real, sy: Real) -> Real {
    (q[0] - p[0]) * (sy - p[1]) - (q[1] - p[1]) * (sx - p[0])
}

/// Fill rule: strictly inside always covers; a point exactly on an edge
/// covers only for top (horizontal, interior below) and left (descending in
/// image coords) edges.
#[inline]
pub(crate) fn covers_edge(e: Real, p: &[Real; 2], q: &[Real; 2]) -> bool {
    if e > 0.0 {
        return true;
    }
    if e < 0.0 {
        return false;
    }
    let dx = q[0] - p[0];
    let dy = q[1] - p[1];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// True iff the point projects in view and its depth agrees with the depth
/// map within `tol` meters. The lookup probes the 3x3 pixel neighbourhood:
/// surface points near silhouette or mesh-boundary edges land on pixels
/// whose centers sample past the surface, and would otherwise read the
/// sentinel.
pub fn is_visible(p: Point3, kf: &Keyframe, dm: &DepthMap, tol: Real) -> bool {
    let Some(pr) = project(p, &kf.pose, &kf.intrinsics) else {
        return false;
    };
    let Some((x, y)) = dm.pixel_of(pr.u, pr.v) else {
        return false;
    };
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= dm.width as i64 || ny >= dm.height as i64 {
                continue;
            }
            let d = dm.get(nx as u32, ny as u32);
            if d.is_finite() && (pr.depth - d).abs() <= tol {
                return true;
            }
        }
    }
    false
}

/// Default depth agreement tolerance: 1.5x the pixel footprint at the given
/// depth, never below 1 mm.
pub fn visibility_tol(depth: Real, k: &Intrinsics) -> Real {
    (1.5 * k.pixel_footprint(depth)).max(1e-3)
}
