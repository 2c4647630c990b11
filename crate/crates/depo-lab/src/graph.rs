//! Finite site graphs and directed driver graphs.
//!
//! Undirected graphs carry the deposition geometry (which sites screen which);
//! directed driver graphs describe the allowed moves of a Markov driver. Both
//! are small and dense enough that adjacency lists plus BFS cover every need.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, connected, simple undirected graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    /// Validates and builds a graph. Rejects empty vertex sets, out-of-range
    /// endpoints, self-loops, duplicate edges, and disconnected graphs.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyVertexSet);
        }
        let mut adj = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::new();
        let mut stored = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            for &w in &[u, v] {
                if w >= n {
                    return Err(Error::VertexOutOfRange { vertex: w, n });
                }
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(Error::DuplicateEdge(key.0, key.1));
            }
            adj[u].push(v);
            adj[v].push(u);
            stored.push(key);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let g = Graph { n, edges: stored, adj };
        if !g.is_connected() {
            return Err(Error::DisconnectedGraph);
        }
        Ok(g)
    }

    /// Path graph 0 - 1 - ... - (n-1).
    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges)
    }

    /// Complete graph on `n` vertices.
    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                edges.push((u, v));
            }
        }
        Self::new(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Open neighborhood of `i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    /// Max of `f` over the closed neighborhood {i} ∪ N(i).
    pub fn closed_neighborhood_max(&self, i: usize, f: impl Fn(usize) -> i64) -> i64 {
        let mut m = f(i);
        for &j in &self.adj[i] {
            m = m.max(f(j));
        }
        m
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Grows the vertex set outward from `root`: each position holds the
    /// smallest-id vertex adjacent to the set built so far. The result lists
    /// all vertices except `root` and every prefix is at graph distance one
    /// from its successor's position.
    pub fn growth_ordering(&self, root: usize) -> Result<GrowthOrdering> {
        if root >= self.n {
            return Err(Error::VertexOutOfRange { vertex: root, n: self.n });
        }
        let mut in_set = vec![false; self.n];
        in_set[root] = true;
        let mut order = Vec::with_capacity(self.n - 1);
        for _ in 1..self.n {
            let next = (0..self.n)
                .filter(|&v| !in_set[v] && self.adj[v].iter().any(|&u| in_set[u]))
                .min()
                .expect("connected graph always exposes a frontier vertex");
            in_set[next] = true;
            order.push(next);
        }
        Ok(GrowthOrdering { root, order })
    }
}

/// A deterministic ordering of `V \ {root}` in which every vertex is adjacent
/// to the set of earlier vertices (including the root).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GrowthOrdering {
    pub root: usize,
    pub order: Vec<usize>,
}

/// Directed driver graph: the support of a Markov driver's moves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedDriverGraph {
    n: usize,
    out: Vec<Vec<usize>>,
}

/// Structural facts about a driver graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DriverGraphReport {
    pub irreducible: bool,
    pub lazy: bool,
    /// Max over ordered pairs of the directed distance; `None` if unreachable
    /// pairs exist.
    pub diameter: Option<usize>,
}

impl DirectedDriverGraph {
    /// Builds from an arc list. Self-loops are allowed (and required for
    /// laziness); duplicate arcs are rejected.
    pub fn new(n: usize, arcs: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyVertexSet);
        }
        let mut out = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in arcs {
            for &w in &[u, v] {
                if w >= n {
                    return Err(Error::VertexOutOfRange { vertex: w, n });
                }
            }
            if !seen.insert((u, v)) {
                return Err(Error::DuplicateEdge(u, v));
            }
            out[u].push(v);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        Ok(DirectedDriverGraph { n, out })
    }

    /// Arc set of the positive entries of a row-stochastic matrix.
    pub fn from_matrix_support(a: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        let mut arcs = Vec::new();
        for (u, row) in a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidDriver(format!(
                    "row {u} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (v, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    arcs.push((u, v));
                }
            }
        }
        Self::new(n, &arcs)
    }

    /// All arcs (u, v) including self-loops: every vertex can move anywhere.
    pub fn complete_with_loops(n: usize) -> Result<Self> {
        let mut arcs = Vec::new();
        for u in 0..n {
            for v in 0..n {
                arcs.push((u, v));
            }
        }
        Self::new(n, &arcs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.out[v]
    }

    pub fn has_arc(&self, u: usize, v: usize) -> bool {
        self.out[u].binary_search(&v).is_ok()
    }

    /// Directed BFS distances from `v`; `None` marks unreachable vertices.
    pub fn distances_from(&self, v: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[v] = Some(0);
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &w in &self.out[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Reports irreducibility (all ordered pairs reachable), laziness (every
    /// vertex has a self-loop), and the directed diameter.
    pub fn check(&self) -> DriverGraphReport {
        let lazy = (0..self.n).all(|v| self.has_arc(v, v));
        let mut irreducible = true;
        let mut diameter = Some(0usize);
        for v in 0..self.n {
            let dist = self.distances_from(v);
            for d in &dist {
                match d {
                    Some(d) => {
                        diameter = diameter.map(|m| m.max(*d));
                    }
                    None => {
                        irreducible = false;
                        diameter = None;
                    }
                }
            }
            if !irreducible {
                break;
            }
        }
        DriverGraphReport { irreducible, lazy, diameter }
    }

    /// Shortest directed path from `v` to `w`, listed without the final
    /// vertex `w`. BFS parents prefer smaller vertex ids, so the result is
    /// deterministic. `v == w` yields the empty string.
    pub fn connecting_string(&self, v: usize, w: usize) -> Result<ConnectingString> {
        for &z in &[v, w] {
            if z >= self.n {
                return Err(Error::VertexOutOfRange { vertex: z, n: self.n });
            }
        }
        if v == w {
            return Ok(ConnectingString { from: v, to: w, path: Vec::new() });
        }
        let mut parent: Vec<Option<usize>> = vec![None; self.n];
        let mut seen = vec![false; self.n];
        seen[v] = true;
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &z in &self.out[u] {
                if !seen[z] {
                    seen[z] = true;
                    parent[z] = Some(u);
                    queue.push_back(z);
                }
            }
            if seen[w] {
                break;
            }
        }
        if !seen[w] {
            return Err(Error::NotReachable { from: v, to: w });
        }
        let mut rev = Vec::new();
        let mut cur = w;
        while let Some(p) = parent[cur] {
            rev.push(p);
            cur = p;
        }
        rev.reverse();
        Ok(ConnectingString { from: v, to: w, path: rev })
    }
}

/// A shortest directed walk from `from` to `to`, stored without the final
/// vertex so consecutive strings concatenate cleanly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConnectingString {
    pub from: usize,
    pub to: usize,
    /// `from, ..., predecessor(to)`; empty when `from == to`.
    pub path: Vec<usize>,
}

impl ConnectingString {
    /// Number of arcs on the walk, which equals the number of stored vertices.
    pub fn length(&self) -> usize {
        self.path.len()
    }
}

/// On-disk graph document: `{"n": ..., "edges": [[u,v],...]}`, with an
/// optional `"arcs"` list describing a directed driver graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arcs: Option<Vec<(usize, usize)>>,
}

impl GraphFile {
    pub fn graph(&self) -> Result<Graph> {
        Graph::new(self.n, &self.edges)
    }

    pub fn driver_graph(&self) -> Result<Option<DirectedDriverGraph>> {
        match &self.arcs {
            Some(arcs) => Ok(Some(DirectedDriverGraph::new(self.n, arcs)?)),
            None => Ok(None),
        }
    }

    /// Parses either the JSON document or the plain-text edge list whose
    /// first line is `n` and remaining lines are `u v` pairs.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            return Ok(serde_json::from_str(trimmed)?);
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::Config("empty graph file".into()))?
            .trim()
            .parse()
            .map_err(|e| Error::Config(format!("bad vertex count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let (u, v) = match (it.next(), it.next()) {
                (Some(u), Some(v)) => (u, v),
                _ => return Err(Error::Config(format!("bad edge line: {line:?}"))),
            };
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::Config(format!("bad vertex {s:?}: {e}")))
            };
            edges.push((parse(u)?, parse(v)?));
        }
        Ok(GraphFile { n, edges, arcs: None })
    }
}
