//! Exact s-t max-flow / min-cut by Dinic's blocking-flow augmentation.

use std::collections::VecDeque;

/// Residual capacities at or below this are treated as saturated.
const EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Edge {
    to: usize,
    rev: usize,
    cap: f64,
}

/// Directed flow network with non-negative real capacities.
#[derive(Clone, Debug)]
pub struct FlowNetwork {
    adj: Vec<Vec<Edge>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Adds `from -> to` with capacity `cap` and `to -> from` with `rev_cap`.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64, rev_cap: f64) {
        debug_assert!(cap >= 0.0 && rev_cap >= 0.0);
        if from == to {
            return;
        }
        let a = self.adj[from].len();
        let b = self.adj[to].len();
        self.adj[from].push(Edge { to, rev: b, cap });
        self.adj[to].push(Edge {
            to: from,
            rev: a,
            cap: rev_cap,
        });
    }

    fn bfs_levels(&self, source: usize, sink: usize, level: &mut [i32]) -> bool {
        level.fill(-1);
        level[source] = 0;
        let mut q = VecDeque::from([source]);
        while let Some(u) = q.pop_front() {
            for e in &self.adj[u] {
                if e.cap > EPS && level[e.to] < 0 {
                    level[e.to] = level[u] + 1;
                    q.push_back(e.to);
                }
            }
        }
        level[sink] >= 0
    }

    /// Iterative DFS pushing one augmenting path along the level graph.
    fn augment(
        &mut self,
        source: usize,
        sink: usize,
        level: &[i32],
        iter: &mut [usize],
        path: &mut Vec<(usize, usize)>,
    ) -> f64 {
        path.clear();
        let mut u = source;
        loop {
            if u == sink {
                let bottleneck = path
                    .iter()
                    .map(|&(v, ei)| self.adj[v][ei].cap)
                    .fold(f64::INFINITY, f64::min);
                for &(v, ei) in path.iter() {
                    let (to, rev) = (self.adj[v][ei].to, self.adj[v][ei].rev);
                    self.adj[v][ei].cap -= bottleneck;
                    self.adj[to][rev].cap += bottleneck;
                }
                return bottleneck;
            }
            let mut advanced = false;
            while iter[u] < self.adj[u].len() {
                let e = &self.adj[u][iter[u]];
                if e.cap > EPS && level[e.to] == level[u] + 1 {
                    path.push((u, iter[u]));
                    u = e.to;
                    advanced = true;
                    break;
                }
                iter[u] += 1;
            }
            if !advanced {
                // dead end: retreat and skip the edge that led here
                match path.pop() {
                    Some((prev, _)) => {
                        iter[prev] += 1;
                        u = prev;
                    }
                    None => return 0.0,
                }
            }
        }
    }

    /// Saturates the network and returns the max-flow value. The residual
    /// graph is retained for [`source_side`](Self::source_side).
    pub fn max_flow(&mut self, source: usize, sink: usize) -> f64 {
        let n = self.adj.len();
        let mut level = vec![-1; n];
        let mut iter = vec![0usize; n];
        let mut path = Vec::new();
        let mut total = 0.0;
        while self.bfs_levels(source, sink, &mut level) {
            iter.fill(0);
            loop {
                let f = self.augment(source, sink, &level, &mut iter, &mut path);
                if f <= EPS {
                    break;
                }
                total += f;
            }
        }
        total
    }

    /// Nodes reachable from `source` in the residual graph: the source side of
    /// a minimum cut once [`max_flow`](Self::max_flow) has run.
    pub fn source_side(&self, source: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[source] = true;
        let mut q = VecDeque::from([source]);
        while let Some(u) = q.pop_front() {
            for e in &self.adj[u] {
                if e.cap > EPS && !seen[e.to] {
                    seen[e.to] = true;
                    q.push_back(e.to);
                }
            }
        }
        seen
    }
}
