//! Texture atlas construction: per-fragment charts resampled at the
//! corrected projections, shelf packing into a power-of-two image, and
//! OBJ/MTL/PNG export.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::align::{corrected_point, Solution};
use crate::camera::{sample_bilinear, Keyframe};
use crate::colour::{apply_colour, ColourCorrection};
use crate::error::{Error, Result};
use crate::labeling::Fragment;
use crate::mesh::Mesh;
use crate::{Point3, Real};

/// One fragment's rectangular texture region in its keyframe.
#[derive(Debug, Clone)]
pub struct Chart {
    pub fragment: u32,
    /// rectangle origin in keyframe pixel coordinates
    pub origin: (i64, i64),
    pub image: RgbImage,
    /// true where a fragment face covers the pixel
    pub coverage: Vec<bool>,
    /// per-face corner positions local to the rectangle, pixel units
    pub face_uvs: Vec<(u32, [[Real; 2]; 3])>,
    /// rectangle had to be clamped to the keyframe bounds
    pub clamped: bool,
}

/// Where a chart ended up in the atlas.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ChartPlacement {
    pub fragment: u32,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Packed atlas image plus per-face UVs in OBJ texture convention
/// (v runs bottom-up).
#[derive(Debug, Clone)]
pub struct Atlas {
    pub image: RgbImage,
    pub face_uvs: Vec<Option<[[Real; 2]; 3]>>,
    pub placements: Vec<ChartPlacement>,
}

/// Scan-converts a screen triangle over a w x h grid, calling `f` with the
/// pixel and its (screen-space) barycentric coordinates. Uses the same
/// fill rule as the depth rasterizer.
fn fill_triangle(
    pts: &[[Real; 2]; 3],
    w: u32,
    h: u32,
    mut f: impl FnMut(u32, u32, [Real; 3]),
) {
    let [a, mut b, mut c] = *pts;
    let mut perm = [0usize, 1, 2];
    let mut area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if area2 == 0.0 {
        return;
    }
    if area2 < 0.0 {
        std::mem::swap(&mut b, &mut c);
        perm.swap(1, 2);
        area2 = -area2;
    }
    let min_x = a[0].min(b[0]).min(c[0]);
    let max_x = a[0].max(b[0]).max(c[0]);
    let min_y = a[1].min(b[1]).min(c[1]);
    let max_y = a[1].max(b[1]).max(c[1]);
    let x_start = ((min_x - 0.5).ceil().max(0.0)) as i64;
    let x_end = (((max_x - 0.5).floor()) as i64).min(w as i64 - 1);
    let y_start = ((min_y - 0.5).ceil().max(0.0)) as i64;
    let y_end = (((max_y - 0.5).floor()) as i64).min(h as i64 - 1);
    for y in y_start..=y_end {
        let py = y as Real + 0.5;
        for x in x_start..=x_end {
            let px = x as Real + 0.5;
            let e_ab = crate::raster::edge_fn(&a, &b, px, py);
            let e_bc = crate::raster::edge_fn(&b, &c, px, py);
            let e_ca = crate::raster::edge_fn(&c, &a, px, py);
            if !(crate::raster::covers_edge(e_ab, &a, &b)
                && crate::raster::covers_edge(e_bc, &b, &c)
                && crate::raster::covers_edge(e_ca, &c, &a))
            {
                continue;
            }
            let l = [e_bc / area2, e_ca / area2, e_ab / area2];
            let mut bary = [0.0; 3];
            for (k, &p) in perm.iter().enumerate() {
                bary[p] = l[k];
            }
            f(x as u32, y as u32, bary);
        }
    }
}

/// Renders every fragment's chart: the keyframe crop around the corrected
/// projection, with covered pixels resampled from the uncorrected source
/// positions and colour-corrected. Fragments that project degenerately are
/// skipped with a warning.
pub fn build_charts(
    mesh: &Mesh,
    frags: &[Fragment],
    sol: &Solution,
    colour: &ColourCorrection,
    keyframes: &[Keyframe],
    pad: u32,
) -> Vec<Chart> {
    let charts: Vec<Option<Chart>> = crate::par::par_map_slice(frags, |frag| {
        build_chart(mesh, frag, sol, colour, keyframes, pad)
    });
    charts.into_iter().flatten().collect()
}

fn build_chart(
    mesh: &Mesh,
    frag: &Fragment,
    sol: &Solution,
    colour: &ColourCorrection,
    keyframes: &[Keyframe],
    pad: u32,
) -> Option<Chart> {
    let kf = &keyframes[frag.label as usize];
    let k = &kf.intrinsics;

    // corrected projections of every vertex the fragment uses
    let mut proj: BTreeMap<u32, ([Real; 2], Real)> = BTreeMap::new();
    for &f in &frag.faces {
        for &v in &mesh.faces[f as usize] {
            if proj.contains_key(&v) {
                continue;
            }
            let pc = corrected_point(mesh.vertices[v as usize], frag.id, sol);
            let q = kf.pose.rotation * pc.coords + kf.pose.translation;
            if q.z <= 1e-9 {
                log::warn!(
                    "fragment {}: corrected vertex {} behind keyframe {}, chart skipped",
                    frag.id,
                    v,
                    frag.label
                );
                return None;
            }
            let u = k.fx * q.x / q.z + k.cx;
            let vv = k.fy * q.y / q.z + k.cy;
            proj.insert(v, ([u, vv], q.z));
        }
    }

    let (mut min_u, mut min_v) = (Real::INFINITY, Real::INFINITY);
    let (mut max_u, mut max_v) = (Real::NEG_INFINITY, Real::NEG_INFINITY);
    for ([u, v], _) in proj.values() {
        min_u = min_u.min(*u);
        max_u = max_u.max(*u);
        min_v = min_v.min(*v);
        max_v = max_v.max(*v);
    }
    let x0_raw = min_u.floor() as i64 - pad as i64;
    let y0_raw = min_v.floor() as i64 - pad as i64;
    let x1_raw = max_u.ceil() as i64 + pad as i64;
    let y1_raw = max_v.ceil() as i64 + pad as i64;
    let x0 = x0_raw.clamp(0, k.width as i64 - 1);
    let y0 = y0_raw.clamp(0, k.height as i64 - 1);
    let x1 = x1_raw.clamp(x0 + 1, k.width as i64);
    let y1 = y1_raw.clamp(y0 + 1, k.height as i64);
    let clamped = x0 != x0_raw || y0 != y0_raw || x1 != x1_raw || y1 != y1_raw;
    if clamped {
        log::warn!(
            "fragment {}: corrected projection leaves keyframe {}, chart clamped",
            frag.id,
            frag.label
        );
    }
    let (w, h) = ((x1 - x0) as u32, (y1 - y0) as u32);

    // base content: exact crop of the keyframe
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(
                x,
                y,
                *kf.image.get_pixel((x0 + x as i64) as u32, (y0 + y as i64) as u32),
            );
        }
    }

    let mut coverage = vec![false; (w * h) as usize];
    let mut offsets = vec![[0.0 as Real; 3]; (w * h) as usize];

    for &f in &frag.faces {
        let vs = mesh.faces[f as usize];
        let mut pts = [[0.0; 2]; 3];
        let mut inv_z = [0.0; 3];
        let mut world = [Point3::origin(); 3];
        for (i, &v) in vs.iter().enumerate() {
            let ([u, vv], z) = proj[&v];
            pts[i] = [u - x0 as Real, vv - y0 as Real];
            inv_z[i] = 1.0 / z;
            world[i] = mesh.vertices[v as usize];
        }
        fill_triangle(&pts, w, h, |x, y, bary| {
            // perspective-correct surface point and offset weights
            let wz = [bary[0] * inv_z[0], bary[1] * inv_z[1], bary[2] * inv_z[2]];
            let s = wz[0] + wz[1] + wz[2];
            let lw = [wz[0] / s, wz[1] / s, wz[2] / s];
            let xw = world[0].coords * lw[0] + world[1].coords * lw[1] + world[2].coords * lw[2];
            let q = kf.pose.rotation * xw + kf.pose.translation;
            if q.z <= 0.0 {
                return;
            }
            let su = k.fx * q.x / q.z + k.cx;
            let sv = k.fy * q.y / q.z + k.cy;
            let base = sample_bilinear(&kf.image, su, sv);
            let off = colour.offset_in_face(frag.label as usize, vs, lw);
            let px = apply_colour(base, off);
            let i = (y * w + x) as usize;
            img.put_pixel(x, y, image::Rgb(px));
            coverage[i] = true;
            offsets[i] = off;
        });
    }

    // extend colour offsets over the pad ring so bilinear atlas lookups near
    // the face boundary stay consistent with the corrected interior
    let mut cov = coverage.clone();
    for _ in 0..pad.max(1) {
        let prev = cov.clone();
        let prev_off = offsets.clone();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let i = (y * w as i64 + x) as usize;
                if prev[i] {
                    continue;
                }
                let mut acc = [0.0; 3];
                let mut cnt = 0;
                for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = (ny * w as i64 + nx) as usize;
                    if prev[j] {
                        for c in 0..3 {
                            acc[c] += prev_off[j][c];
                        }
                        cnt += 1;
                    }
                }
                if cnt > 0 {
                    let off = [
                        acc[0] / cnt as Real,
                        acc[1] / cnt as Real,
                        acc[2] / cnt as Real,
                    ];
                    let crop = kf
                        .image
                        .get_pixel((x0 + x) as u32, (y0 + y) as u32)
                        .0;
                    let base = [crop[0] as Real, crop[1] as Real, crop[2] as Real];
                    img.put_pixel(x as u32, y as u32, image::Rgb(apply_colour(base, off)));
                    offsets[i] = off;
                    cov[i] = true;
                }
            }
        }
    }

    let face_uvs = frag
        .faces
        .iter()
        .map(|&f| {
            let vs = mesh.faces[f as usize];
            let mut uv = [[0.0; 2]; 3];
            for (i, &v) in vs.iter().enumerate() {
                let ([u, vv], _) = proj[&v];
                uv[i] = [u - x0 as Real, vv - y0 as Real];
            }
            (f, uv)
        })
        .collect();

    Some(Chart {
        fragment: frag.id,
        origin: (x0, y0),
        image: img,
        coverage,
        face_uvs,
        clamped,
    })
}

/// Shelf-packs charts (tallest first) into the smallest power-of-two square
/// that fits, separated by at least `pad` pixels from each other and the
/// border. UVs are remapped to [0, 1] with the OBJ bottom-up v convention.
pub fn pack_charts(
    charts: &[Chart],
    pad: u32,
    max_side: u32,
    n_faces: usize,
) -> Result<Atlas> {
    let mut order: Vec<usize> = (0..charts.len()).collect();
    order.sort_by_key(|&i| {
        (
            std::cmp::Reverse(charts[i].image.height()),
            charts[i].fragment,
        )
    });

    for chart in charts {
        let need = chart.image.width().max(chart.image.height()) + 2 * pad;
        if need > max_side {
            return Err(Error::ChartTooLarge {
                fragment: chart.fragment as usize,
                w: chart.image.width(),
                h: chart.image.height(),
                max_side,
            });
        }
    }

    let mut side = 1u32;
    let need_min = charts
        .iter()
        .map(|c| c.image.width().max(c.image.height()) + 2 * pad)
        .max()
        .unwrap_or(1);
    while side < need_min {
        side *= 2;
    }

    let placements = loop {
        match try_shelf_pack(charts, &order, pad, side) {
            Some(p) => break p,
            None => {
                side *= 2;
                if side > max_side {
                    return Err(Error::ChartTooLarge {
                        fragment: charts
                            .first()
                            .map(|c| c.fragment as usize)
                            .unwrap_or(0),
                        w: side,
                        h: side,
                        max_side,
                    });
                }
            }
        }
    };

    let mut image = RgbImage::new(side, side);
    let mut face_uvs: Vec<Option<[[Real; 2]; 3]>> = vec![None; n_faces];
    for (ci, place) in placements.iter().enumerate() {
        let chart = &charts[order[ci]];
        for (y, row) in chart.image.rows().enumerate() {
            for (x, px) in row.enumerate() {
                image.put_pixel(place.x + x as u32, place.y + y as u32, *px);
            }
        }
        for (face, uv) in &chart.face_uvs {
            let mut norm = [[0.0; 2]; 3];
            for (i, [lu, lv]) in uv.iter().enumerate() {
                norm[i] = [
                    (place.x as Real + lu) / side as Real,
                    1.0 - (place.y as Real + lv) / side as Real,
                ];
            }
            face_uvs[*face as usize] = Some(norm);
        }
    }

    let mut placements_by_fragment = placements;
    placements_by_fragment.sort_by_key(|p| p.fragment);
    Ok(Atlas {
        image,
        face_uvs,
        placements: placements_by_fragment,
    })
}

fn try_shelf_pack(
    charts: &[Chart],
    order: &[usize],
    pad: u32,
    side: u32,
) -> Option<Vec<ChartPlacement>> {
    let mut placements = Vec::with_capacity(charts.len());
    let mut x = pad;
    let mut y = pad;
    let mut shelf_h = 0u32;
    for &i in order {
        let (w, h) = (charts[i].image.width(), charts[i].image.height());
        if x + w + pad > side {
            y += shelf_h + pad;
            x = pad;
            shelf_h = 0;
        }
        if x + w + pad > side || y + h + pad > side {
            return None;
        }
        placements.push(ChartPlacement {
            fragment: charts[i].fragment,
            x,
            y,
            width: w,
            height: h,
        });
        x += w + pad;
        shelf_h = shelf_h.max(h);
    }
    Some(placements)
}

/// Files produced by [`export_textured_mesh`].
#[derive(Debug, Clone)]
pub struct ExportPaths {
    pub obj: PathBuf,
    pub mtl: PathBuf,
    pub png: PathBuf,
}

/// Writes `<stem>.obj`, `<stem>.mtl` and `<stem>.png`. Faces without UVs
/// (unlabeled) are written as plain `f v v v`; their indices are returned.
pub fn export_textured_mesh(
    mesh: &Mesh,
    atlas: &Atlas,
    dir: &Path,
    stem: &str,
) -> Result<(ExportPaths, Vec<u32>)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let obj_path = dir.join(format!("{stem}.obj"));
    let mtl_path = dir.join(format!("{stem}.mtl"));
    let png_path = dir.join(format!("{stem}.png"));

    let mut obj = String::new();
    obj.push_str(&format!("mtllib {stem}.mtl\n"));
    for v in &mesh.vertices {
        obj.push_str(&format!("v {:.6} {:.6} {:.6}\n", v.x, v.y, v.z));
    }
    let mut vt_index = vec![0usize; mesh.faces.len()];
    let mut next_vt = 1usize;
    for (f, uv) in atlas.face_uvs.iter().enumerate() {
        if let Some(uv) = uv {
            vt_index[f] = next_vt;
            for [u, v] in uv {
                obj.push_str(&format!("vt {u:.6} {v:.6}\n"));
            }
            next_vt += 3;
        }
    }
    obj.push_str("usemtl material_0\n");
    let mut unlabeled = Vec::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        match atlas.face_uvs[f] {
            Some(_) => {
                let t = vt_index[f];
                obj.push_str(&format!(
                    "f {}/{} {}/{} {}/{}\n",
                    face[0] + 1,
                    t,
                    face[1] + 1,
                    t + 1,
                    face[2] + 1,
                    t + 2
                ));
            }
            None => {
                unlabeled.push(f as u32);
                obj.push_str(&format!("f {} {} {}\n", face[0] + 1, face[1] + 1, face[2] + 1));
            }
        }
    }
    let mut file = std::fs::File::create(&obj_path).map_err(|e| Error::io(&obj_path, e))?;
    file.write_all(obj.as_bytes())
        .map_err(|e| Error::io(&obj_path, e))?;

    let mtl = format!(
        "newmtl material_0\nKa 1.000000 1.000000 1.000000\nKd 1.000000 1.000000 1.000000\nmap_Kd {stem}.png\n"
    );
    std::fs::write(&mtl_path, mtl).map_err(|e| Error::io(&mtl_path, e))?;

    atlas.image.save(&png_path).map_err(|e| Error::Image {
        path: png_path.clone(),
        source: e,
    })?;

    Ok((
        ExportPaths {
            obj: obj_path,
            mtl: mtl_path,
            png: png_path,
        },
        unlabeled,
    ))
}

/// Renders the textured mesh from a camera: rasterizes the geometry and
/// looks every covered pixel up in the atlas. Faces without UVs render black.
pub fn render_textured(
    mesh: &Mesh,
    atlas: &Atlas,
    pose: &crate::camera::Pose,
    k: &crate::camera::Intrinsics,
) -> RgbImage {
    let rm = crate::raster::rasterize(mesh, pose, k);
    let side = atlas.image.width() as Real;
    let mut img = RgbImage::new(k.width, k.height);
    for y in 0..k.height {
        for x in 0..k.width {
            let Some(face) = rm.face_at(x, y) else {
                continue;
            };
            let Some(uvs) = atlas.face_uvs[face as usize] else {
                continue;
            };
            let d = rm.depth.get(x, y);
            let p = crate::camera::back_project(x as Real + 0.5, y as Real + 0.5, d, pose, k)
                .expect("finite depth");
            let [a, b, c] = mesh.face_vertices(face as usize);
            let bary = barycentric(p, a, b, c);
            let mut u = 0.0;
            let mut v = 0.0;
            for (i, w) in bary.iter().enumerate() {
                u += w * uvs[i][0];
                v += w * uvs[i][1];
            }
            let px = sample_bilinear(&atlas.image, u * side, (1.0 - v) * side);
            img.put_pixel(x, y, image::Rgb([px[0] as u8, px[1] as u8, px[2] as u8]));
        }
    }
    img
}

fn barycentric(p: Point3, a: Point3, b: Point3, c: Point3) -> [Real; 3] {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    if denom.abs() < 1e-30 {
        return [1.0, 0.0, 0.0];
    }
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    [1.0 - v - w, v, w]
}
