//! Triangle meshes and face adjacency.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::{Point3, Real};

/// Indexed triangle mesh in world coordinates (meters).
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    /// Validates the mesh invariants: indices in range, no degenerate index
    /// triples, finite coordinates.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (i, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(Error::InvalidMesh(format!(
                    "vertex {i} has non-finite coordinates"
                )));
            }
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&ix| ix >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {i} references vertex out of range (vertex count {n})"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {i} references the same vertex twice"
                )));
            }
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn face_vertices(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Diagonal length of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> Real {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (hi - lo).norm()
    }

    /// Median length of the mesh edges (unique vertex pairs).
    pub fn median_edge_length(&self) -> Real {
        let mut lengths: Vec<Real> = self
            .edges()
            .iter()
            .map(|&(a, b)| (self.vertices[a as usize] - self.vertices[b as usize]).norm())
            .collect();
        if lengths.is_empty() {
            return 0.0;
        }
        lengths.sort_by(|x, y| x.partial_cmp(y).unwrap());
        lengths[lengths.len() / 2]
    }

    /// Unique undirected vertex-pair edges, each as (min, max).
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut set: Vec<(u32, u32)> = Vec::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                set.push((a.min(b), a.max(b)));
            }
        }
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// Unordered pairs of faces sharing a mesh edge.
#[derive(Debug, Clone, Default)]
pub struct FaceAdjacency {
    /// Pairs (f, g) with f < g, sorted.
    pub pairs: Vec<(u32, u32)>,
}

impl FaceAdjacency {
    /// Neighbor lists indexed by face.
    pub fn neighbor_lists(&self, face_count: usize) -> Vec<Vec<u32>> {
        let mut lists = vec![Vec::new(); face_count];
        for &(f, g) in &self.pairs {
            lists[f as usize].push(g);
            lists[g as usize].push(f);
        }
        lists
    }
}

/// Faces are adjacent iff they share exactly one mesh edge (two vertices).
pub fn face_adjacency(mesh: &Mesh) -> FaceAdjacency {
    // Keyed by the undirected vertex pair of each face edge.
    let mut by_edge: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let a = f[k];
            let b = f[(k + 1) % 3];
            by_edge
                .entry((a.min(b), a.max(b)))
                .or_default()
                .push(fi as u32);
        }
    }
    let mut pairs = Vec::new();
    for owners in by_edge.values() {
        for i in 0..owners.len() {
            for j in i + 1..owners.len() {
                let (f, g) = (owners[i].min(owners[j]), owners[i].max(owners[j]));
                if f != g {
                    pairs.push((f, g));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    FaceAdjacency { pairs }
}

/// The shared vertex pair of two adjacent faces, if any.
pub fn shared_edge(mesh: &Mesh, f: u32, g: u32) -> Option<(u32, u32)> {
    let fa = mesh.faces[f as usize];
    let fb = mesh.faces[g as usize];
    let mut shared = [0u32; 3];
    let mut count = 0;
    for &v in &fa {
        if fb.contains(&v) {
            if count < 3 {
                shared[count] = v;
            }
            count += 1;
        }
    }
    if count == 2 {
        Some((shared[0].min(shared[1]), shared[0].max(shared[1])))
    } else {
        None
    }
}
