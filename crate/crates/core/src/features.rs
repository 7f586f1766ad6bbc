//! Keypoint detection, lifting through virtual depth maps, margin selection
//! around fragment borders, and weighted cross-fragment matching.

use image::RgbImage;

use crate::camera::{back_project, Keyframe};
use crate::labeling::BorderGroup;
use crate::mesh::Mesh;
use crate::raster::{is_visible, visibility_tol, DepthMap, RasterMap};
use crate::{Point3, Real};

/// Detector settings. The detector is deliberately simple and deterministic:
/// Harris corner response with 3x3 non-maximum suppression and a zero-mean,
/// unit-norm intensity patch as descriptor.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DetectorConfig {
    /// Keep at most this many keypoints per keyframe.
    pub max_keypoints: usize,
    /// Side length of the square descriptor patch in pixels.
    pub patch_size: u32,
    /// Harris trace weight.
    pub harris_k: Real,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            max_keypoints: 2000,
            patch_size: 16,
            harris_k: 0.04,
        }
    }
}

/// A detected 2D corner with its descriptor.
#[derive(Debug, Clone)]
pub struct Keypoint {
    pub x: u32,
    pub y: u32,
    /// subpixel offsets in [-0.5, 0.5], from a parabola fit of the response
    pub dx: f32,
    pub dy: f32,
    pub response: f32,
    pub descriptor: Vec<f32>,
}

impl Keypoint {
    /// Refined continuous pixel position (pixel centers at +0.5).
    pub fn position(&self) -> (Real, Real) {
        (
            self.x as Real + 0.5 + self.dx as Real,
            self.y as Real + 0.5 + self.dy as Real,
        )
    }
}

/// A keypoint lifted to the mesh surface.
#[derive(Debug, Clone)]
pub struct Keypoint3D {
    pub keyframe: usize,
    /// continuous pixel coordinates (pixel center)
    pub pixel: (Real, Real),
    pub descriptor: Vec<f32>,
    pub point: Point3,
    pub fragment: u32,
}

/// A weighted correspondence between two fragments.
#[derive(Debug, Clone)]
pub struct MatchPair {
    pub p_i: Point3,
    pub p_j: Point3,
    /// weight in (0, 1], larger near the border
    pub weight: Real,
    pub fragments: (u32, u32),
    /// indices into the margin keypoint sets, for reproducible ordering
    pub indices: (usize, usize),
}

fn luma(img: &RgbImage) -> Vec<f32> {
    img.pixels()
        .map(|p| 0.299 * p.0[0] as f32 + 0.587 * p.0[1] as f32 + 0.114 * p.0[2] as f32)
        .collect()
}

fn bilinear_luma(l: &[f32], w: usize, h: usize, x: f32, y: f32) -> f32 {
    let xf = (x - 0.5).max(0.0);
    let yf = (y - 0.5).max(0.0);
    let x0 = (xf as usize).min(w - 1);
    let y0 = (yf as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = xf - x0 as f32;
    let ty = yf - y0 as f32;
    let v00 = l[y0 * w + x0];
    let v10 = l[y0 * w + x1];
    let v01 = l[y1 * w + x0];
    let v11 = l[y1 * w + x1];
    v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
}

/// Separable binomial 5-tap blur, in place. The border ring keeps its
/// original values.
fn smooth5(buf: &mut [f32], w: usize, h: usize) {
    let kernel = [1.0f32, 4.0, 6.0, 4.0, 1.0];
    let mut tmp = vec![0.0f32; w * h];
    tmp.copy_from_slice(buf);
    for y in 0..h {
        for x in 2..w - 2 {
            let mut s = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                s += kv * buf[y * w + x + k - 2];
            }
            tmp[y * w + x] = s / 16.0;
        }
    }
    for y in 2..h - 2 {
        for x in 0..w {
            let mut s = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                s += kv * tmp[(y + k - 2) * w + x];
            }
            buf[y * w + x] = s / 16.0;
        }
    }
}

/// Harris corners, strongest first. Flat images produce no keypoints.
pub fn detect_keypoints(img: &RgbImage, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let margin = (cfg.patch_size / 2 + 1) as usize;
    if w < 2 * margin + 2 || h < 2 * margin + 2 {
        return Vec::new();
    }
    let l = luma(img);

    // Sobel gradients (zero on the 1px ring)
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            gx[i] = (l[i - w + 1] + 2.0 * l[i + 1] + l[i + w + 1])
                - (l[i - w - 1] + 2.0 * l[i - 1] + l[i + w - 1]);
            gy[i] = (l[i + w - 1] + 2.0 * l[i + w] + l[i + w + 1])
                - (l[i - w - 1] + 2.0 * l[i - w] + l[i - w + 1]);
        }
    }

    // structure tensor, then separable [1 4 6 4 1]/16 smoothing
    let mut xx = vec![0.0f32; w * h];
    let mut xy = vec![0.0f32; w * h];
    let mut yy = vec![0.0f32; w * h];
    for i in 0..w * h {
        xx[i] = gx[i] * gx[i];
        xy[i] = gx[i] * gy[i];
        yy[i] = gy[i] * gy[i];
    }
    smooth5(&mut xx, w, h);
    smooth5(&mut xy, w, h);
    smooth5(&mut yy, w, h);

    let mut resp = vec![0.0f32; w * h];
    let mut max_resp = 0.0f32;
    for i in 0..w * h {
        let det = xx[i] * yy[i] - xy[i] * xy[i];
        let tr = xx[i] + yy[i];
        resp[i] = det - cfg.harris_k as f32 * tr * tr;
        max_resp = max_resp.max(resp[i]);
    }
    if max_resp <= 0.0 {
        return Vec::new();
    }
    let threshold = 1e-6 * max_resp;

    // 3x3 non-maximum suppression; raster-earlier pixel wins exact ties
    let mut cands: Vec<Keypoint> = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let i = y * w + x;
            let r = resp[i];
            if r <= threshold {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let j = ((y as i32 + dy) as usize) * w + (x as i32 + dx) as usize;
                    let rq = resp[j];
                    if rq > r || (rq == r && j < i) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                // quadratic subpixel refinement along each axis
                let refine = |m: f32, c: f32, p: f32| {
                    let denom = m - 2.0 * c + p;
                    if denom < 0.0 {
                        (0.5 * (m - p) / denom).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    }
                };
                cands.push(Keypoint {
                    x: x as u32,
                    y: y as u32,
                    dx: refine(resp[i - 1], r, resp[i + 1]),
                    dy: refine(resp[i - w], r, resp[i + w]),
                    response: r,
                    descriptor: Vec::new(),
                });
            }
        }
    }

    cands.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });

    // near-duplicate suppression (< 2 px), stronger response kept
    let mut kept: Vec<Keypoint> = Vec::new();
    'outer: for kp in cands {
        for q in &kept {
            let dx = kp.x as f32 - q.x as f32;
            let dy = kp.y as f32 - q.y as f32;
            if dx * dx + dy * dy < 4.0 {
                continue 'outer;
            }
        }
        kept.push(kp);
        if kept.len() >= cfg.max_keypoints {
            break;
        }
    }

    // normalized patch descriptors
    let ps = cfg.patch_size as usize;
    let half = (ps as f32 - 1.0) / 2.0;
    kept.retain_mut(|kp| {
        let cx = kp.x as f32 + 0.5 + kp.dx;
        let cy = kp.y as f32 + 0.5 + kp.dy;
        let mut d = Vec::with_capacity(ps * ps);
        for j in 0..ps {
            for i in 0..ps {
                d.push(bilinear_luma(
                    &l,
                    w,
                    h,
                    cx + i as f32 - half,
                    cy + j as f32 - half,
                ));
            }
        }
        let mean = d.iter().sum::<f32>() / d.len() as f32;
        for v in &mut d {
            *v -= mean;
        }
        let norm = d.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm < 1e-6 {
            return false;
        }
        for v in &mut d {
            *v /= norm;
        }
        kp.descriptor = d;
        true
    });
    kept
}

/// Back-projects detected keypoints through the keyframe's raster map.
/// Keypoints over empty pixels or unlabeled faces are dropped.
pub fn lift_keypoints(
    kps: &[Keypoint],
    keyframe_index: usize,
    kf: &Keyframe,
    raster: &RasterMap,
    fragment_of_face: &[u32],
) -> Vec<Keypoint3D> {
    let mut out = Vec::with_capacity(kps.len());
    for kp in kps {
        let d = raster.depth.get(kp.x, kp.y);
        if !d.is_finite() {
            continue;
        }
        let Some(face) = raster.face_at(kp.x, kp.y) else {
            continue;
        };
        let fragment = fragment_of_face[face as usize];
        if fragment == u32::MAX {
            continue;
        }
        let (u, v) = kp.position();
        let Some(p) = back_project(u, v, d, &kf.pose, &kf.intrinsics) else {
            continue;
        };
        out.push(Keypoint3D {
            keyframe: keyframe_index,
            pixel: (u, v),
            descriptor: kp.descriptor.clone(),
            point: p,
            fragment,
        });
    }
    out
}

/// A keypoint selected for matching, with its distance to the border.
#[derive(Debug, Clone)]
pub struct MarginKeypoint {
    pub kp: Keypoint3D,
    pub border_dist: Real,
}

fn point_segment_distance(p: Point3, a: Point3, b: Point3) -> Real {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Keeps the keypoints of both fragments that lie within `margin` meters of
/// the pair's border and are visible in the opposite keyframe.
#[allow(clippy::too_many_arguments)]
pub fn select_margin_keypoints(
    group: &BorderGroup,
    kps_i: &[Keypoint3D],
    kps_j: &[Keypoint3D],
    margin: Real,
    mesh: &Mesh,
    kf_i: &Keyframe,
    kf_j: &Keyframe,
    dm_i: &DepthMap,
    dm_j: &DepthMap,
) -> (Vec<MarginKeypoint>, Vec<MarginKeypoint>) {
    let segments: Vec<(Point3, Point3)> = group
        .edges
        .iter()
        .map(|e| {
            (
                mesh.vertices[e.vertices.0 as usize],
                mesh.vertices[e.vertices.1 as usize],
            )
        })
        .collect();
    let dist_to_border = |p: Point3| -> Real {
        segments
            .iter()
            .map(|&(a, b)| point_segment_distance(p, a, b))
            .fold(Real::INFINITY, Real::min)
    };
    let select = |kps: &[Keypoint3D], other_kf: &Keyframe, other_dm: &DepthMap| {
        kps.iter()
            .filter_map(|kp| {
                let d = dist_to_border(kp.point);
                if d > margin {
                    return None;
                }
                let depth = (other_kf.pose.rotation * kp.point.coords
                    + other_kf.pose.translation)
                    .z;
                if depth <= 0.0 {
                    return None;
                }
                let tol = visibility_tol(depth, &other_kf.intrinsics);
                if !is_visible(kp.point, other_kf, other_dm, tol) {
                    return None;
                }
                Some(MarginKeypoint {
                    kp: kp.clone(),
                    border_dist: d,
                })
            })
            .collect::<Vec<_>>()
    };
    let _ = (kf_i, dm_i);
    (select(kps_i, kf_j, dm_j), select(kps_j, kf_i, dm_i))
}

/// Matching settings; see [`match_keypoints_for`].
#[derive(Debug, Clone, Copy)]
pub struct MatchParams {
    /// Lowe ratio bound: best/second distance must stay below this.
    pub ratio: Real,
    /// 3D gate: matches farther apart than this are discarded.
    pub max_3d_dist: Real,
    /// Decay scale of the border-proximity weight.
    pub sigma: Real,
}

/// Descriptor-space nearest-neighbour matching with ratio test, mutual
/// cross-check and 3D distance gate. Weight is exp(-d/sigma) where d is the
/// smaller of the two border distances. `fragments` is the border pair the
/// matches constrain: `set_i` keypoints come from the first fragment's
/// keyframe, `set_j` from the second's.
pub fn match_keypoints_for(
    set_i: &[MarginKeypoint],
    set_j: &[MarginKeypoint],
    fragments: (u32, u32),
    params: &MatchParams,
) -> Vec<MatchPair> {
    if set_i.is_empty() || set_j.is_empty() {
        return Vec::new();
    }

    let best_two = |desc: &[f32], others: &[MarginKeypoint]| -> (usize, f32, f32) {
        let mut best = usize::MAX;
        let mut d1 = f32::INFINITY;
        let mut d2 = f32::INFINITY;
        for (idx, o) in others.iter().enumerate() {
            let d: f32 = desc
                .iter()
                .zip(&o.kp.descriptor)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < d1 {
                d2 = d1;
                d1 = d;
                best = idx;
            } else if d < d2 {
                d2 = d;
            }
        }
        (best, d1.sqrt(), d2.sqrt())
    };

    // best match in j for every i, and in i for every j (for the cross-check)
    let fwd: Vec<(usize, f32, f32)> = set_i
        .iter()
        .map(|k| best_two(&k.kp.descriptor, set_j))
        .collect();
    let bwd: Vec<usize> = set_j
        .iter()
        .map(|k| best_two(&k.kp.descriptor, set_i).0)
        .collect();

    let mut out = Vec::new();
    for (i, &(j, d1, d2)) in fwd.iter().enumerate() {
        if j == usize::MAX {
            continue;
        }
        if d2.is_finite() && d1 >= params.ratio as f32 * d2 {
            continue;
        }
        if bwd[j] != i {
            continue;
        }
        let a = &set_i[i];
        let b = &set_j[j];
        let dist3d = (a.kp.point - b.kp.point).norm();
        if dist3d > params.max_3d_dist {
            continue;
        }
        let d = a.border_dist.min(b.border_dist);
        let weight = (-d / params.sigma).exp();
        out.push(MatchPair {
            p_i: a.kp.point,
            p_j: b.kp.point,
            weight,
            fragments,
            indices: (i, j),
        });
    }
    out
}
