//! Seam colour leveling: samples both keyframes along every fragment border
//! and solves one global least-squares for per-keyframe, per-vertex additive
//! RGB offsets.

use std::collections::BTreeSet;

use crate::align::{corrected_point, Solution};
use crate::camera::{project, Keyframe};
use crate::labeling::{BorderGroup, Fragment};
use crate::mesh::Mesh;
use crate::raster::{is_visible, visibility_tol, DepthMap};
use crate::sparse::{conjugate_gradient, CscMatrix};
use crate::{Point3, Real};

/// One point on a fragment border with the colours both keyframes see there.
#[derive(Debug, Clone)]
pub struct SeamSample {
    pub point: Point3,
    /// (smaller fragment id, larger fragment id)
    pub fragments: (u32, u32),
    /// mesh edge the sample lies on
    pub edge: (u32, u32),
    /// position along the edge, 0 at `edge.0`
    pub t: Real,
    /// colour sampled from the first fragment's keyframe
    pub c_i: [Real; 3],
    /// colour sampled from the second fragment's keyframe
    pub c_j: [Real; 3],
}

/// Subdivides every border edge at spacing <= `step` and samples both
/// keyframes at the corrected projections; samples invisible on either side
/// are dropped.
#[allow(clippy::too_many_arguments)]
pub fn sample_seams(
    borders: &[BorderGroup],
    frags: &[Fragment],
    sol: &Solution,
    keyframes: &[Keyframe],
    depth_maps: &[DepthMap],
    mesh: &Mesh,
    step: Real,
) -> Vec<SeamSample> {
    let per_group: Vec<Vec<SeamSample>> = crate::par::par_map_slice(borders, |group| {
        let (fi, fj) = group.fragments;
        let kf_i = &keyframes[frags[fi as usize].label as usize];
        let kf_j = &keyframes[frags[fj as usize].label as usize];
        let dm_i = &depth_maps[frags[fi as usize].label as usize];
        let dm_j = &depth_maps[frags[fj as usize].label as usize];
        let mut out = Vec::new();
        for edge in &group.edges {
            let a = mesh.vertices[edge.vertices.0 as usize];
            let b = mesh.vertices[edge.vertices.1 as usize];
            let len = (b - a).norm();
            let n = if step > 0.0 {
                (len / step).ceil() as usize + 1
            } else {
                2
            }
            .max(2);
            for s in 0..n {
                let t = s as Real / (n - 1) as Real;
                let p = a + (b - a) * t;
                let sample_side = |frag: u32, kf: &Keyframe, dm: &DepthMap| -> Option<[Real; 3]> {
                    let pc = corrected_point(p, frag, sol);
                    let pr = project(pc, &kf.pose, &kf.intrinsics)?;
                    if !is_visible(p, kf, dm, visibility_tol(pr.depth, &kf.intrinsics)) {
                        return None;
                    }
                    Some(kf.sample_bilinear(pr.u, pr.v))
                };
                let (Some(c_i), Some(c_j)) =
                    (sample_side(fi, kf_i, dm_i), sample_side(fj, kf_j, dm_j))
                else {
                    continue;
                };
                out.push(SeamSample {
                    point: p,
                    fragments: (fi, fj),
                    edge: edge.vertices,
                    t,
                    c_i,
                    c_j,
                });
            }
        }
        out
    });
    per_group.into_iter().flatten().collect()
}

/// Additive per-keyframe, per-vertex RGB offset fields. Keyframes texturing
/// no fragment carry no field (zero offset).
#[derive(Debug, Clone)]
pub struct ColourCorrection {
    /// indexed by keyframe; `None` means identically zero
    pub per_keyframe: Vec<Option<Vec<[Real; 3]>>>,
}

impl ColourCorrection {
    pub fn zero(n_keyframes: usize) -> Self {
        ColourCorrection {
            per_keyframe: vec![None; n_keyframes],
        }
    }

    /// Offset at a point on a mesh edge, interpolated between the two
    /// endpoint vertices.
    pub fn offset_on_edge(&self, keyframe: usize, edge: (u32, u32), t: Real) -> [Real; 3] {
        match &self.per_keyframe[keyframe] {
            None => [0.0; 3],
            Some(field) => {
                let a = field[edge.0 as usize];
                let b = field[edge.1 as usize];
                [
                    a[0] * (1.0 - t) + b[0] * t,
                    a[1] * (1.0 - t) + b[1] * t,
                    a[2] * (1.0 - t) + b[2] * t,
                ]
            }
        }
    }

    /// Offset at a barycentric position inside a face.
    pub fn offset_in_face(
        &self,
        keyframe: usize,
        face: [u32; 3],
        bary: [Real; 3],
    ) -> [Real; 3] {
        match &self.per_keyframe[keyframe] {
            None => [0.0; 3],
            Some(field) => {
                let mut out = [0.0; 3];
                for (v, w) in face.iter().zip(bary) {
                    let o = field[*v as usize];
                    for c in 0..3 {
                        out[c] += w * o[c];
                    }
                }
                out
            }
        }
    }
}

/// Clamped additive colour application.
pub fn apply_colour(colour: [Real; 3], offset: [Real; 3]) -> [u8; 3] {
    [
        (colour[0] + offset[0]).clamp(0.0, 255.0).round() as u8,
        (colour[1] + offset[1]).clamp(0.0, 255.0).round() as u8,
        (colour[2] + offset[2]).clamp(0.0, 255.0).round() as u8,
    ]
}

/// Solves the seam-leveling least squares per channel:
/// `sum_samples (g_a(p) - g_b(p) - (c_j - c_i))^2
///  + smooth_weight * sum_kf sum_edges (g(u) - g(v))^2`
/// with the global mean offset fixed to zero.
pub fn solve_colour(
    samples: &[SeamSample],
    mesh: &Mesh,
    frags: &[Fragment],
    n_keyframes: usize,
    smooth_weight: Real,
) -> ColourCorrection {
    let active: BTreeSet<u32> = frags.iter().map(|f| f.label).collect();
    if active.is_empty() {
        return ColourCorrection::zero(n_keyframes);
    }
    let rank_of: std::collections::HashMap<u32, usize> = active
        .iter()
        .enumerate()
        .map(|(r, &kf)| (kf, r))
        .collect();
    let n_v = mesh.vertices.len();
    let n = active.len() * n_v;
    let idx = |rank: usize, vertex: u32| (rank * n_v + vertex as usize) as u32;
    let label_of: Vec<u32> = {
        let max_id = frags.iter().map(|f| f.id).max().unwrap_or(0) as usize;
        let mut v = vec![0u32; max_id + 1];
        for f in frags {
            v[f.id as usize] = f.label;
        }
        v
    };

    let mut triplets: Vec<(u32, u32, Real)> = Vec::new();
    let mut rhs = [vec![0.0 as Real; n], vec![0.0; n], vec![0.0; n]];

    for s in samples {
        let rank_a = rank_of[&label_of[s.fragments.0 as usize]];
        let rank_b = rank_of[&label_of[s.fragments.1 as usize]];
        let coeffs = [
            (idx(rank_a, s.edge.0), 1.0 - s.t),
            (idx(rank_a, s.edge.1), s.t),
            (idx(rank_b, s.edge.0), -(1.0 - s.t)),
            (idx(rank_b, s.edge.1), -s.t),
        ];
        for &(ia, va) in &coeffs {
            for &(ib, vb) in &coeffs {
                if ib <= ia {
                    triplets.push((ia, ib, va * vb));
                }
            }
            for ch in 0..3 {
                rhs[ch][ia as usize] += va * (s.c_j[ch] - s.c_i[ch]);
            }
        }
    }

    let edges = mesh.edges();
    for rank in 0..active.len() {
        for &(u, v) in &edges {
            let (iu, iv) = (idx(rank, u), idx(rank, v));
            triplets.push((iu, iu, smooth_weight));
            triplets.push((iv, iv, smooth_weight));
            let (hi, lo) = (iu.max(iv), iu.min(iv));
            triplets.push((hi, lo, -smooth_weight));
        }
    }

    let a = CscMatrix::from_triplets(n, n, &triplets);
    let mut fields: Vec<Vec<[Real; 3]>> = vec![vec![[0.0; 3]; n_v]; active.len()];
    for ch in 0..3 {
        // offsets live on a 0..255 scale; 1e-6 relative residual is far
        // below a visible fraction of a gray level
        let (mut x, iters) = conjugate_gradient(&a, &rhs[ch], 1e-6, 4 * n + 200);
        log::debug!("colour channel {ch}: {iters} cg iterations over {n} unknowns");
        // gauge: zero global mean per channel
        let mean = x.iter().sum::<Real>() / n as Real;
        for v in &mut x {
            *v -= mean;
        }
        for rank in 0..active.len() {
            for vtx in 0..n_v {
                fields[rank][vtx][ch] = x[rank * n_v + vtx];
            }
        }
    }

    let mut per_keyframe = vec![None; n_keyframes];
    for (rank, &kf) in active.iter().enumerate() {
        per_keyframe[kf as usize] = Some(std::mem::take(&mut fields[rank]));
    }
    ColourCorrection { per_keyframe }
}

/// Mean over samples of the corrected colour mismatch norm.
pub fn seam_rms(samples: &[SeamSample], corr: &ColourCorrection, frags: &[Fragment]) -> Real {
    if samples.is_empty() {
        return 0.0;
    }
    let label_of = |frag: u32| frags[frag as usize].label as usize;
    let mut total = 0.0;
    for s in samples {
        let ga = corr.offset_on_edge(label_of(s.fragments.0), s.edge, s.t);
        let gb = corr.offset_on_edge(label_of(s.fragments.1), s.edge, s.t);
        let mut d2 = 0.0;
        for c in 0..3 {
            let d = (s.c_i[c] + ga[c]) - (s.c_j[c] + gb[c]);
            d2 += d * d;
        }
        total += d2.sqrt();
    }
    total / samples.len() as Real
}

/// The quadratic objective solve_colour minimizes; used by tests and
/// diagnostics.
pub fn colour_objective(
    samples: &[SeamSample],
    corr: &ColourCorrection,
    mesh: &Mesh,
    frags: &[Fragment],
    smooth_weight: Real,
) -> Real {
    let label_of = |frag: u32| frags[frag as usize].label as usize;
    let mut obj = 0.0;
    for s in samples {
        let ga = corr.offset_on_edge(label_of(s.fragments.0), s.edge, s.t);
        let gb = corr.offset_on_edge(label_of(s.fragments.1), s.edge, s.t);
        for c in 0..3 {
            let r = (ga[c] - gb[c]) - (s.c_j[c] - s.c_i[c]);
            obj += r * r;
        }
    }
    for field in corr.per_keyframe.iter().flatten() {
        for &(u, v) in &mesh.edges() {
            for c in 0..3 {
                let d = field[u as usize][c] - field[v as usize][c];
                obj += smooth_weight * d * d;
            }
        }
    }
    obj
}
