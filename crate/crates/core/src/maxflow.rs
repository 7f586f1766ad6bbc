//! Dinic max-flow / min-cut on real-valued capacities.
//!
//! Edges live in one flat arena with the reverse edge at `id ^ 1`, and the
//! blocking-flow search is iterative, so large expansion graphs neither
//! allocate per node nor risk deep recursion. Augmenting paths always
//! saturate the bottleneck edge exactly (the subtraction reproduces a stored
//! value), so the algorithm terminates on f64 capacities without an epsilon.

use crate::Real;

const UNSET: u32 = u32::MAX;

/// Flow network with designated source and sink.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    head: Vec<u32>,
    next: Vec<u32>,
    to: Vec<u32>,
    cap: Vec<Real>,
    pub source: u32,
    pub sink: u32,
    level: Vec<i32>,
    iter: Vec<u32>,
}

impl FlowGraph {
    /// `n` interior nodes; source and sink are appended as nodes n and n+1.
    pub fn new(n: usize) -> Self {
        Self::with_capacity(n, 0)
    }

    pub fn with_capacity(n: usize, edge_pairs: usize) -> Self {
        FlowGraph {
            head: vec![UNSET; n + 2],
            next: Vec::with_capacity(2 * edge_pairs),
            to: Vec::with_capacity(2 * edge_pairs),
            cap: Vec::with_capacity(2 * edge_pairs),
            source: n as u32,
            sink: n as u32 + 1,
            level: Vec::new(),
            iter: Vec::new(),
        }
    }

    fn push_edge(&mut self, from: u32, to: u32, cap: Real) {
        let e = self.to.len() as u32;
        self.to.push(to);
        self.cap.push(cap);
        self.next.push(self.head[from as usize]);
        self.head[from as usize] = e;
    }

    /// Directed edge with capacity `cap` (reverse residual starts at 0).
    pub fn add_edge(&mut self, from: u32, to: u32, cap: Real) {
        debug_assert!(cap >= 0.0);
        if cap <= 0.0 || from == to {
            return;
        }
        self.push_edge(from, to, cap);
        self.push_edge(to, from, 0.0);
    }

    /// Undirected edge: capacity `cap` in both directions.
    pub fn add_edge_sym(&mut self, a: u32, b: u32, cap: Real) {
        debug_assert!(cap >= 0.0);
        if cap <= 0.0 || a == b {
            return;
        }
        self.push_edge(a, b, cap);
        self.push_edge(b, a, cap);
    }

    fn bfs(&mut self) -> bool {
        self.level.clear();
        self.level.resize(self.head.len(), -1);
        let mut queue: Vec<u32> = Vec::with_capacity(self.head.len());
        self.level[self.source as usize] = 0;
        queue.push(self.source);
        let mut qi = 0;
        while qi < queue.len() {
            let u = queue[qi];
            qi += 1;
            let mut e = self.head[u as usize];
            while e != UNSET {
                let v = self.to[e as usize];
                if self.cap[e as usize] > 0.0 && self.level[v as usize] < 0 {
                    self.level[v as usize] = self.level[u as usize] + 1;
                    queue.push(v);
                }
                e = self.next[e as usize];
            }
        }
        self.level[self.sink as usize] >= 0
    }

    /// Sends flow along the level graph until no augmenting path remains.
    fn blocking_flow(&mut self) -> Real {
        let mut total = 0.0;
        let mut path: Vec<u32> = Vec::new();
        loop {
            let cur = match path.last() {
                Some(&e) => self.to[e as usize],
                None => self.source,
            };

            if cur == self.sink {
                let mut bottleneck = Real::INFINITY;
                for &e in &path {
                    bottleneck = bottleneck.min(self.cap[e as usize]);
                }
                let mut retreat_to = path.len();
                for (i, &e) in path.iter().enumerate() {
                    self.cap[e as usize] -= bottleneck;
                    self.cap[(e ^ 1) as usize] += bottleneck;
                    if self.cap[e as usize] <= 0.0 && i < retreat_to {
                        retreat_to = i;
                    }
                }
                total += bottleneck;
                path.truncate(retreat_to);
                continue;
            }

            // advance the current-arc pointer to a usable edge
            let mut e = self.iter[cur as usize];
            while e != UNSET {
                let v = self.to[e as usize];
                if self.cap[e as usize] > 0.0
                    && self.level[v as usize] == self.level[cur as usize] + 1
                {
                    break;
                }
                e = self.next[e as usize];
            }
            self.iter[cur as usize] = e;

            if e == UNSET {
                // dead end: drop the node from the level graph and retreat
                self.level[cur as usize] = -1;
                if path.pop().is_none() {
                    break;
                }
            } else {
                path.push(e);
            }
        }
        total
    }

    /// Runs max-flow and returns the flow value.
    pub fn max_flow(&mut self) -> Real {
        let mut flow = 0.0;
        while self.bfs() {
            self.iter.clear();
            self.iter.extend_from_slice(&self.head);
            flow += self.blocking_flow();
        }
        flow
    }

    /// After `max_flow`, returns per-node membership of the source side of
    /// the minimum cut (true = reachable from source in the residual graph).
    pub fn min_cut_source_side(&self) -> Vec<bool> {
        let mut side = vec![false; self.head.len()];
        let mut queue: Vec<u32> = Vec::with_capacity(self.head.len());
        side[self.source as usize] = true;
        queue.push(self.source);
        let mut qi = 0;
        while qi < queue.len() {
            let u = queue[qi];
            qi += 1;
            let mut e = self.head[u as usize];
            while e != UNSET {
                let v = self.to[e as usize];
                if self.cap[e as usize] > 0.0 && !side[v as usize] {
                    side[v as usize] = true;
                    queue.push(v);
                }
                e = self.next[e as usize];
            }
        }
        side
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_network() {
        // classic 4-node example, max flow 23
        let mut g = FlowGraph::new(4);
        let (s, t) = (g.source, g.sink);
        g.add_edge(s, 0, 16.0);
        g.add_edge(s, 1, 13.0);
        g.add_edge(0, 1, 10.0);
        g.add_edge(1, 0, 4.0);
        g.add_edge(0, 2, 12.0);
        g.add_edge(2, 1, 9.0);
        g.add_edge(1, 3, 14.0);
        g.add_edge(3, 2, 7.0);
        g.add_edge(2, t, 20.0);
        g.add_edge(3, t, 4.0);
        let f = g.max_flow();
        assert!((f - 23.0).abs() < 1e-12);
    }

    #[test]
    fn cut_capacity_equals_flow() {
        let mut g = FlowGraph::new(3);
        let (s, t) = (g.source, g.sink);
        g.add_edge(s, 0, 3.5);
        g.add_edge(s, 1, 2.25);
        g.add_edge_sym(0, 1, 1.0);
        g.add_edge_sym(1, 2, 0.5);
        g.add_edge(0, t, 2.0);
        g.add_edge(2, t, 4.0);
        let check = g.clone();
        let f = g.max_flow();
        let side = g.min_cut_source_side();
        // recompute cut capacity on the pristine graph
        let mut cut = 0.0;
        for u in 0..check.head.len() {
            let mut e = check.head[u];
            while e != UNSET {
                if side[u] && !side[check.to[e as usize] as usize] {
                    cut += check.cap[e as usize];
                }
                e = check.next[e as usize];
            }
        }
        assert!((f - cut).abs() < 1e-12, "flow {f} vs cut {cut}");
    }

    #[test]
    fn disconnected_sink_gives_zero_flow() {
        let mut g = FlowGraph::new(2);
        let s = g.source;
        g.add_edge(s, 0, 5.0);
        g.add_edge(0, 1, 1.0);
        assert_eq!(g.max_flow(), 0.0);
        let side = g.min_cut_source_side();
        assert!(side[0] && side[1]);
    }

    #[test]
    fn random_graphs_match_reference_flow() {
        use rand::{Rng, SeedableRng};
        // brute-force check against a simple Ford-Fulkerson on paths
        fn reference_max_flow(n: usize, edges: &[(u32, u32, f64)], s: u32, t: u32) -> f64 {
            let mut cap = vec![vec![0.0; n]; n];
            for &(a, b, c) in edges {
                cap[a as usize][b as usize] += c;
            }
            let mut flow = 0.0;
            loop {
                // BFS augmenting path
                let mut parent = vec![usize::MAX; n];
                parent[s as usize] = s as usize;
                let mut queue = vec![s as usize];
                let mut qi = 0;
                while qi < queue.len() {
                    let u = queue[qi];
                    qi += 1;
                    for v in 0..n {
                        if parent[v] == usize::MAX && cap[u][v] > 1e-12 {
                            parent[v] = u;
                            queue.push(v);
                        }
                    }
                }
                if parent[t as usize] == usize::MAX {
                    return flow;
                }
                let mut bottleneck = f64::INFINITY;
                let mut v = t as usize;
                while v != s as usize {
                    let u = parent[v];
                    bottleneck = bottleneck.min(cap[u][v]);
                    v = u;
                }
                let mut v = t as usize;
                while v != s as usize {
                    let u = parent[v];
                    cap[u][v] -= bottleneck;
                    cap[v][u] += bottleneck;
                    v = u;
                }
                flow += bottleneck;
            }
        }

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let n_inner = rng.gen_range(2..8usize);
            let n = n_inner + 2;
            let (s, t) = (n_inner as u32, n_inner as u32 + 1);
            let mut g = FlowGraph::new(n_inner);
            let mut edges = Vec::new();
            for _ in 0..rng.gen_range(4..20) {
                let a = rng.gen_range(0..n as u32);
                let b = rng.gen_range(0..n as u32);
                if a == b || b == s || a == t {
                    continue;
                }
                let c = rng.gen_range(0.1..4.0);
                g.add_edge(a, b, c);
                edges.push((a, b, c));
            }
            let f = g.max_flow();
            let expect = reference_max_flow(n, &edges, s, t);
            assert!((f - expect).abs() < 1e-9, "{f} vs {expect}");
        }
    }
}
