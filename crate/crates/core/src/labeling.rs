//! View selection: one keyframe per face via Potts-regularized energy
//! minimization, then fragment extraction and border discovery.

use std::collections::BTreeMap;

use crate::camera::{project, Keyframe};
use crate::maxflow::FlowGraph;
use crate::mesh::{shared_edge, FaceAdjacency, Mesh};
use crate::par::par_map_range;
use crate::raster::{is_visible, visibility_tol, DepthMap};
use crate::Real;

/// Label value for faces invisible in every keyframe.
pub const UNLABELED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EnergyParams {
    /// Smoothness weight of the label-disagreement term.
    pub lambda1: Real,
    /// Data cost assigned to (face, keyframe) pairs that fail visibility.
    pub invisible_penalty: Real,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            lambda1: 1.0,
            invisible_penalty: 1e9,
        }
    }
}

/// Per-face keyframe assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub labels: Vec<u32>,
}

impl Labeling {
    pub fn get(&self, face: usize) -> Option<u32> {
        let l = self.labels[face];
        (l != UNLABELED).then_some(l)
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }
}

/// Dense data-cost table, face-major.
#[derive(Debug, Clone)]
pub struct PsiTable {
    pub n_faces: usize,
    pub n_labels: usize,
    costs: Vec<Real>,
}

impl PsiTable {
    pub fn new(n_faces: usize, n_labels: usize, costs: Vec<Real>) -> Self {
        assert_eq!(costs.len(), n_faces * n_labels);
        PsiTable {
            n_faces,
            n_labels,
            costs,
        }
    }

    #[inline]
    pub fn get(&self, face: usize, label: usize) -> Real {
        self.costs[face * self.n_labels + label]
    }
}

/// Signed pixel area of the face projected into the keyframe, or `None`
/// when any vertex projects out of view.
pub fn projected_area(mesh: &Mesh, face: usize, kf: &Keyframe) -> Option<Real> {
    let vs = mesh.face_vertices(face);
    let mut uv = [[0.0; 2]; 3];
    for (i, v) in vs.iter().enumerate() {
        let p = project(*v, &kf.pose, &kf.intrinsics)?;
        uv[i] = [p.u, p.v];
    }
    let area2 = (uv[1][0] - uv[0][0]) * (uv[2][1] - uv[0][1])
        - (uv[1][1] - uv[0][1]) * (uv[2][0] - uv[0][0]);
    Some(area2.abs() * 0.5)
}

/// Raw data cost of texturing `face` from `kf`: the penalty when any vertex
/// fails the depth-map visibility test, otherwise the negated projected
/// pixel area (bigger projections cost less).
pub fn data_term(
    mesh: &Mesh,
    face: usize,
    kf: &Keyframe,
    dm: &DepthMap,
    invisible_penalty: Real,
) -> Real {
    let vs = mesh.face_vertices(face);
    for v in vs {
        let visible = match project(v, &kf.pose, &kf.intrinsics) {
            None => false,
            Some(pr) => is_visible(v, kf, dm, visibility_tol(pr.depth, &kf.intrinsics)),
        };
        if !visible {
            return invisible_penalty;
        }
    }
    match projected_area(mesh, face, kf) {
        Some(a) => -a,
        None => invisible_penalty,
    }
}

/// Builds the full data-cost table, parallel over keyframes, and normalizes
/// visible costs by the median projected area so `lambda1` is scale-free.
pub fn build_psi_table(
    mesh: &Mesh,
    keyframes: &[Keyframe],
    depth_maps: &[DepthMap],
    params: &EnergyParams,
) -> PsiTable {
    let n_faces = mesh.faces.len();
    let n_labels = keyframes.len();
    let columns: Vec<Vec<Real>> = par_map_range(n_labels, |li| {
        (0..n_faces)
            .map(|f| data_term(mesh, f, &keyframes[li], &depth_maps[li], params.invisible_penalty))
            .collect()
    });

    let mut areas: Vec<Real> = columns
        .iter()
        .flat_map(|col| col.iter())
        .filter(|&&c| c < 0.0)
        .map(|&c| -c)
        .collect();
    let median = if areas.is_empty() {
        1.0
    } else {
        areas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        areas[areas.len() / 2].max(Real::MIN_POSITIVE)
    };

    let mut costs = vec![0.0; n_faces * n_labels];
    for (li, col) in columns.iter().enumerate() {
        for (f, &c) in col.iter().enumerate() {
            costs[f * n_labels + li] = if c >= params.invisible_penalty {
                params.invisible_penalty
            } else {
                c / median
            };
        }
    }
    PsiTable::new(n_faces, n_labels, costs)
}

/// Total labeling energy: data costs plus `lambda1` per label disagreement
/// across adjacent faces. Unlabeled faces contribute nothing.
pub fn energy(l: &Labeling, params: &EnergyParams, psi: &PsiTable, adj: &FaceAdjacency) -> Real {
    let mut e = 0.0;
    for (f, &lf) in l.labels.iter().enumerate() {
        if lf != UNLABELED {
            e += psi.get(f, lf as usize);
        }
    }
    let mut disagreements = 0usize;
    for &(f, g) in &adj.pairs {
        let (lf, lg) = (l.labels[f as usize], l.labels[g as usize]);
        if lf != UNLABELED && lg != UNLABELED && lf != lg {
            disagreements += 1;
        }
    }
    e + params.lambda1 * disagreements as Real
}

/// Minimizes the labeling energy by alpha-expansion sweeps.
///
/// Faces whose every label sits at the invisible penalty become `UNLABELED`
/// and are excluded from the smoothness term. Each expansion is an exact
/// min-cut; sweeps visit labels in ascending order and stop once a full
/// sweep brings no strict decrease (10-sweep cap).
pub fn solve_labeling(psi: &PsiTable, adj: &FaceAdjacency, params: &EnergyParams) -> Labeling {
    let n_faces = psi.n_faces;
    let n_labels = psi.n_labels;
    let mut labels = vec![UNLABELED; n_faces];

    // per-face argmin initialization, smallest label id wins ties
    for f in 0..n_faces {
        let mut best = UNLABELED;
        let mut best_cost = Real::INFINITY;
        for l in 0..n_labels {
            let c = psi.get(f, l);
            if c < params.invisible_penalty && c < best_cost {
                best_cost = c;
                best = l as u32;
            }
        }
        labels[f] = best;
    }

    let active: Vec<u32> = (0..n_faces as u32)
        .filter(|&f| labels[f as usize] != UNLABELED)
        .collect();
    if active.is_empty() || n_labels < 2 {
        return Labeling { labels };
    }
    let mut node_of = vec![u32::MAX; n_faces];
    for (i, &f) in active.iter().enumerate() {
        node_of[f as usize] = i as u32;
    }
    let active_pairs: Vec<(u32, u32)> = adj
        .pairs
        .iter()
        .copied()
        .filter(|&(f, g)| {
            labels[f as usize] != UNLABELED && labels[g as usize] != UNLABELED
        })
        .collect();

    let mut current = Labeling { labels };
    let mut cur_energy = energy(&current, params, psi, adj);

    for _sweep in 0..10 {
        let mut improved = false;
        for alpha in 0..n_labels as u32 {
            let proposal = expand(
                &current,
                alpha,
                psi,
                params,
                &active,
                &node_of,
                &active_pairs,
            );
            let e = energy(&proposal, params, psi, adj);
            if e < cur_energy {
                cur_energy = e;
                current = proposal;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    current
}

/// One exact alpha-expansion move: every labeled face either keeps its label
/// or switches to `alpha`, solved as a single min-cut.
fn expand(
    current: &Labeling,
    alpha: u32,
    psi: &PsiTable,
    params: &EnergyParams,
    active: &[u32],
    node_of: &[u32],
    active_pairs: &[(u32, u32)],
) -> Labeling {
    let lam = params.lambda1;
    let n = active.len();
    let mut cost0 = vec![0.0; n]; // paid when the face keeps its label
    let mut cost1 = vec![0.0; n]; // paid when the face takes alpha

    for (i, &f) in active.iter().enumerate() {
        let lf = current.labels[f as usize];
        cost1[i] = psi.get(f as usize, alpha as usize);
        cost0[i] = if lf == alpha {
            cost1[i]
        } else {
            psi.get(f as usize, lf as usize)
        };
    }

    let mut graph = FlowGraph::with_capacity(n, active_pairs.len() + 2 * n);
    for &(f, g) in active_pairs {
        let (nf, ng) = (node_of[f as usize], node_of[g as usize]);
        let (lf, lg) = (current.labels[f as usize], current.labels[g as usize]);
        // Potts pairwise costs of the binary move (A=keep/keep, B=keep/alpha,
        // C=alpha/keep, D=alpha/alpha), decomposed into unaries plus one
        // submodular edge on [x_f=0][x_g=1].
        let a = if lf != lg { lam } else { 0.0 };
        let b = if lf != alpha { lam } else { 0.0 };
        let c = if lg != alpha { lam } else { 0.0 };
        cost1[nf as usize] += c - a;
        cost1[ng as usize] += -c;
        graph.add_edge(nf, ng, b + c - a);
    }

    let (source, sink) = (graph.source, graph.sink);
    for i in 0..n {
        let m = cost0[i].min(cost1[i]);
        // x=1 (take alpha) puts the node on the sink side
        graph.add_edge(source, i as u32, cost1[i] - m);
        graph.add_edge(i as u32, sink, cost0[i] - m);
    }

    graph.max_flow();
    let side = graph.min_cut_source_side();

    let mut labels = current.labels.clone();
    for (i, &f) in active.iter().enumerate() {
        if !side[i] {
            labels[f as usize] = alpha;
        }
    }
    Labeling { labels }
}

/// Maximal edge-connected groups of equal-label faces.
#[derive(Debug, Clone)]
pub struct Fragment {
    pub id: u32,
    pub label: u32,
    pub faces: Vec<u32>,
}

/// Connected components of the face graph restricted to equal-label edges;
/// ids are assigned in order of each component's smallest face index.
pub fn extract_fragments(l: &Labeling, adj: &FaceAdjacency) -> Vec<Fragment> {
    let n = l.labels.len();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut [u32], x: u32) -> u32 {
        let mut root = x;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        let mut cur = x;
        while parent[cur as usize] != root {
            let next = parent[cur as usize];
            parent[cur as usize] = root;
            cur = next;
        }
        root
    }
    for &(f, g) in &adj.pairs {
        let (lf, lg) = (l.labels[f as usize], l.labels[g as usize]);
        if lf != UNLABELED && lf == lg {
            let (rf, rg) = (find(&mut parent, f), find(&mut parent, g));
            if rf != rg {
                parent[rf.max(rg) as usize] = rf.min(rg);
            }
        }
    }
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for f in 0..n as u32 {
        if l.labels[f as usize] == UNLABELED {
            continue;
        }
        let root = find(&mut parent, f);
        groups.entry(root).or_default().push(f);
    }
    groups
        .into_values()
        .enumerate()
        .map(|(id, faces)| Fragment {
            id: id as u32,
            label: l.labels[faces[0] as usize],
            faces,
        })
        .collect()
}

/// A mesh edge separating two fragments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BorderEdge {
    /// (smaller fragment id, larger fragment id)
    pub fragments: (u32, u32),
    /// shared mesh vertices, (min, max)
    pub vertices: (u32, u32),
    /// owning faces; `faces.0` belongs to `fragments.0`
    pub faces: (u32, u32),
}

/// Border edges of one fragment pair.
#[derive(Debug, Clone)]
pub struct BorderGroup {
    pub fragments: (u32, u32),
    pub edges: Vec<BorderEdge>,
}

/// Finds every mesh edge whose two faces belong to different fragments,
/// grouped and sorted by fragment pair.
pub fn fragment_borders(
    frags: &[Fragment],
    adj: &FaceAdjacency,
    mesh: &Mesh,
) -> Vec<BorderGroup> {
    let n_faces = mesh.faces.len();
    let mut frag_of = vec![u32::MAX; n_faces];
    for fr in frags {
        for &f in &fr.faces {
            frag_of[f as usize] = fr.id;
        }
    }
    let mut groups: BTreeMap<(u32, u32), Vec<BorderEdge>> = BTreeMap::new();
    for &(f, g) in &adj.pairs {
        let (a, b) = (frag_of[f as usize], frag_of[g as usize]);
        if a == u32::MAX || b == u32::MAX || a == b {
            continue;
        }
        let Some(vertices) = shared_edge(mesh, f, g) else {
            continue;
        };
        let (fragments, faces) = if a < b { ((a, b), (f, g)) } else { ((b, a), (g, f)) };
        groups.entry(fragments).or_default().push(BorderEdge {
            fragments,
            vertices,
            faces,
        });
    }
    groups
        .into_iter()
        .map(|(fragments, edges)| BorderGroup { fragments, edges })
        .collect()
}

/// Face index -> fragment id lookup (`u32::MAX` for unlabeled faces).
pub fn fragment_of_face(frags: &[Fragment], n_faces: usize) -> Vec<u32> {
    let mut map = vec![u32::MAX; n_faces];
    for fr in frags {
        for &f in &fr.faces {
            map[f as usize] = fr.id;
        }
    }
    map
}
