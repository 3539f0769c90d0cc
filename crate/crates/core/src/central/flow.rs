//! Integer max-flow (shortest augmenting paths) for slot -> EV allocation.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    rev: usize,
    cap: i64,
}

#[derive(Debug, Clone)]
pub(crate) struct FlowNetwork {
    adj: Vec<Vec<Edge>>,
}

/// Handle to an edge, used to read back its flow.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EdgeId {
    from: usize,
    index: usize,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: i64) -> EdgeId {
        let index = self.adj[from].len();
        let rev = self.adj[to].len() + usize::from(from == to);
        self.adj[from].push(Edge { to, rev, cap });
        self.adj[to].push(Edge {
            to: from,
            rev: index,
            cap: 0,
        });
        EdgeId { from, index }
    }

    /// Flow currently carried by an edge (capacity of its reverse edge).
    pub fn flow(&self, id: EdgeId) -> i64 {
        let e = &self.adj[id.from][id.index];
        self.adj[e.to][e.rev].cap
    }

    /// Maximum flow from `source` to `sink` (Edmonds-Karp).
    pub fn max_flow(&mut self, source: usize, sink: usize) -> i64 {
        let n = self.adj.len();
        let mut total = 0i64;
        loop {
            let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
            let mut queue = VecDeque::from([source]);
            let mut seen = vec![false; n];
            seen[source] = true;
            while let Some(u) = queue.pop_front() {
                if u == sink {
                    break;
                }
                for (k, e) in self.adj[u].iter().enumerate() {
                    if e.cap > 0 && !seen[e.to] {
                        seen[e.to] = true;
                        parent[e.to] = Some((u, k));
                        queue.push_back(e.to);
                    }
                }
            }
            if !seen[sink] {
                return total;
            }
            let mut push = i64::MAX;
            let mut v = sink;
            while let Some((u, k)) = parent[v] {
                push = push.min(self.adj[u][k].cap);
                v = u;
            }
            let mut v = sink;
            while let Some((u, k)) = parent[v] {
                self.adj[u][k].cap -= push;
                let (to, rev) = (self.adj[u][k].to, self.adj[u][k].rev);
                self.adj[to][rev].cap += push;
                v = u;
            }
            total += push;
        }
    }
}
