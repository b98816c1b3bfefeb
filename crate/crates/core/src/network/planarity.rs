//! Left-right planarity test (de Fraysseix–Rosenstiehl criterion as
//! organised by Brandes), returning a combinatorial embedding when the graph
//! is planar and a Kuratowski subgraph when it is not.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Interval {
    low: Option<usize>,
    high: Option<usize>,
}

impl Interval {
    fn is_empty(&self) -> bool {
        self.low.is_none() && self.high.is_none()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ConflictPair {
    left: Interval,
    right: Interval,
}

impl ConflictPair {
    fn swap(&mut self) {
        std::mem::swap(&mut self.left, &mut self.right);
    }
}

#[derive(Debug, Clone, Copy)]
struct Link {
    cw: usize,
    ccw: usize,
}

/// Rotation system under construction: per half-edge, its clockwise and
/// counter-clockwise neighbours around the source vertex.
struct Rotations {
    links: HashMap<(usize, usize), Link>,
    first: Vec<Option<usize>>,
}

impl Rotations {
    fn new(n: usize) -> Self {
        Self { links: HashMap::new(), first: vec![None; n] }
    }

    fn add_cw(&mut self, v: usize, w: usize, reference: Option<usize>) {
        let Some(r) = reference else {
            self.links.insert((v, w), Link { cw: w, ccw: w });
            self.first[v] = Some(w);
            return;
        };
        let after = self.links[&(v, r)].cw;
        self.links.get_mut(&(v, r)).expect("reference half-edge").cw = w;
        self.links.insert((v, w), Link { cw: after, ccw: r });
        self.links.get_mut(&(v, after)).expect("rotation is cyclic").ccw = w;
    }

    fn add_ccw(&mut self, v: usize, w: usize, reference: Option<usize>) {
        let Some(r) = reference else {
            self.add_cw(v, w, None);
            return;
        };
        let before = self.links[&(v, r)].ccw;
        self.add_cw(v, w, Some(before));
        if self.first[v] == Some(r) {
            self.first[v] = Some(w);
        }
    }

    fn add_first(&mut self, v: usize, w: usize) {
        let r = self.first[v];
        self.add_ccw(v, w, r);
    }

    fn into_embedding(self) -> PlanarEmbedding {
        let rotation = self
            .first
            .iter()
            .enumerate()
            .map(|(v, f)| {
                let Some(f) = *f else { return Vec::new() };
                let mut order = vec![f];
                let mut w = self.links[&(v, f)].cw;
                while w != f {
                    order.push(w);
                    w = self.links[&(v, w)].cw;
                }
                order
            })
            .collect();
        PlanarEmbedding { rotation }
    }
}

/// Clockwise neighbour order around every vertex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanarEmbedding {
    pub rotation: Vec<Vec<usize>>,
}

impl PlanarEmbedding {
    /// Faces traced by following, from half-edge (v, w), the half-edge that
    /// leaves w just counter-clockwise of (w, v).
    pub fn n_faces(&self) -> usize {
        let pos: HashMap<(usize, usize), usize> = self
            .rotation
            .iter()
            .enumerate()
            .flat_map(|(v, r)| r.iter().enumerate().map(move |(i, &w)| ((v, w), i)))
            .collect();
        let mut seen = std::collections::HashSet::new();
        let mut faces = 0;
        for (v, r) in self.rotation.iter().enumerate() {
            for &w in r {
                if seen.contains(&(v, w)) {
                    continue;
                }
                faces += 1;
                let (mut a, mut b) = (v, w);
                while seen.insert((a, b)) {
                    let rot = &self.rotation[b];
                    let i = pos[&(b, a)];
                    let next = rot[(i + rot.len() - 1) % rot.len()];
                    (a, b) = (b, next);
                }
            }
        }
        faces
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KuratowskiKind {
    K5,
    K33,
}

/// Minimal non-planar subgraph: a subdivision of K5 or K3,3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KuratowskiSubgraph {
    pub edges: Vec<(usize, usize)>,
    pub kind: KuratowskiKind,
    /// Vertices of degree ≥ 3 in the subgraph.
    pub branch_vertices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Planarity {
    Planar(PlanarEmbedding),
    NonPlanar(KuratowskiSubgraph),
}

impl Planarity {
    pub fn is_planar(&self) -> bool {
        matches!(self, Planarity::Planar(_))
    }
}

struct Lr<'a> {
    adj: &'a [Vec<(usize, usize)>],
    src: Vec<usize>,
    dst: Vec<usize>,
    oriented: Vec<bool>,
    out: Vec<Vec<usize>>,
    height: Vec<Option<usize>>,
    parent_edge: Vec<Option<usize>>,
    lowpt: Vec<usize>,
    lowpt2: Vec<usize>,
    nesting_depth: Vec<i64>,
    reference: Vec<Option<usize>>,
    side: Vec<i64>,
    lowpt_edge: Vec<Option<usize>>,
    stack_bottom: Vec<usize>,
    stack: Vec<ConflictPair>,
    ordered: Vec<Vec<usize>>,
}

impl<'a> Lr<'a> {
    fn new(n: usize, m: usize, adj: &'a [Vec<(usize, usize)>]) -> Self {
        Self {
            adj,
            src: vec![0; m],
            dst: vec![0; m],
            oriented: vec![false; m],
            out: vec![Vec::new(); n],
            height: vec![None; n],
            parent_edge: vec![None; n],
            lowpt: vec![0; m],
            lowpt2: vec![0; m],
            nesting_depth: vec![0; m],
            reference: vec![None; m],
            side: vec![1; m],
            lowpt_edge: vec![None; m],
            stack_bottom: vec![0; m],
            stack: Vec::new(),
            ordered: vec![Vec::new(); n],
        }
    }

    fn orient(&mut self, v: usize) {
        let e = self.parent_edge[v];
        let hv = self.height[v].expect("visited");
        for &(w, id) in &self.adj[v] {
            if self.oriented[id] {
                continue;
            }
            self.oriented[id] = true;
            self.src[id] = v;
            self.dst[id] = w;
            self.out[v].push(id);
            self.lowpt[id] = hv;
            self.lowpt2[id] = hv;
            match self.height[w] {
                None => {
                    self.parent_edge[w] = Some(id);
                    self.height[w] = Some(hv + 1);
                    self.orient(w);
                }
                Some(hw) => self.lowpt[id] = hw,
            }
            self.nesting_depth[id] = 2 * self.lowpt[id] as i64 + i64::from(self.lowpt2[id] < hv);
            if let Some(e) = e {
                let (l, l2) = (self.lowpt[id], self.lowpt2[id]);
                if l < self.lowpt[e] {
                    self.lowpt2[e] = self.lowpt[e].min(l2);
                    self.lowpt[e] = l;
                } else if l > self.lowpt[e] {
                    self.lowpt2[e] = self.lowpt2[e].min(l);
                } else {
                    self.lowpt2[e] = self.lowpt2[e].min(l2);
                }
            }
        }
    }

    fn conflicting(&self, i: &Interval, b: usize) -> bool {
        !i.is_empty() && self.lowpt[i.high.expect("non-empty interval")] > self.lowpt[b]
    }

    fn lowest(&self, p: &ConflictPair) -> usize {
        let low = |i: &Interval| self.lowpt[i.low.expect("non-empty interval")];
        if p.left.is_empty() {
            low(&p.right)
        } else if p.right.is_empty() {
            low(&p.left)
        } else {
            low(&p.left).min(low(&p.right))
        }
    }

    fn test(&mut self, v: usize) -> bool {
        let e = self.parent_edge[v];
        let hv = self.height[v].expect("visited");
        for k in 0..self.ordered[v].len() {
            let ei = self.ordered[v][k];
            let w = self.dst[ei];
            self.stack_bottom[ei] = self.stack.len();
            if self.parent_edge[w] == Some(ei) {
                if !self.test(w) {
                    return false;
                }
            } else {
                self.lowpt_edge[ei] = Some(ei);
                self.stack.push(ConflictPair { left: Interval::default(), right: Interval { low: Some(ei), high: Some(ei) } });
            }
            if self.lowpt[ei] < hv {
                let e = e.expect("edges below the root carry a parent edge");
                if k == 0 {
                    self.lowpt_edge[e] = self.lowpt_edge[ei];
                } else if !self.add_constraints(ei, e) {
                    return false;
                }
            }
        }
        if let Some(e) = e {
            self.remove_back_edges(e);
        }
        true
    }

    fn add_constraints(&mut self, ei: usize, e: usize) -> bool {
        let mut p = ConflictPair::default();
        loop {
            let mut q = self.stack.pop().expect("return edges of ei are stacked");
            if !q.left.is_empty() {
                q.swap();
            }
            if !q.left.is_empty() {
                return false;
            }
            let q_low = q.right.low.expect("non-empty interval");
            if self.lowpt[q_low] > self.lowpt[e] {
                if p.right.is_empty() {
                    p.right = q.right;
                } else if let Some(pl) = p.right.low {
                    self.reference[pl] = q.right.high;
                }
                p.right.low = q.right.low;
            } else {
                self.reference[q_low] = self.lowpt_edge[e];
            }
            if self.stack.len() == self.stack_bottom[ei] {
                break;
            }
        }
        while let Some(top) = self.stack.last() {
            if !(self.conflicting(&top.left, ei) || self.conflicting(&top.right, ei)) {
                break;
            }
            let mut q = self.stack.pop().expect("checked above");
            if self.conflicting(&q.right, ei) {
                q.swap();
            }
            if self.conflicting(&q.right, ei) {
                return false;
            }
            if let Some(pl) = p.right.low {
                self.reference[pl] = q.right.high;
            }
            if q.right.low.is_some() {
                p.right.low = q.right.low;
            }
            if p.left.is_empty() {
                p.left = q.left;
            } else if let Some(pl) = p.left.low {
                self.reference[pl] = q.left.high;
            }
            p.left.low = q.left.low;
        }
        if !(p.left.is_empty() && p.right.is_empty()) {
            self.stack.push(p);
        }
        true
    }

    fn remove_back_edges(&mut self, e: usize) {
        let u = self.src[e];
        let hu = self.height[u].expect("visited");
        while let Some(top) = self.stack.last() {
            if self.lowest(top) != hu {
                break;
            }
            let p = self.stack.pop().expect("checked above");
            if let Some(l) = p.left.low {
                self.side[l] = -1;
            }
        }
        if let Some(mut p) = self.stack.pop() {
            while let Some(h) = p.left.high.filter(|&h| self.dst[h] == u) {
                p.left.high = self.reference[h];
            }
            if p.left.high.is_none() {
                if let Some(l) = p.left.low {
                    self.reference[l] = p.right.low;
                    self.side[l] = -1;
                    p.left.low = None;
                }
            }
            while let Some(h) = p.right.high.filter(|&h| self.dst[h] == u) {
                p.right.high = self.reference[h];
            }
            if p.right.high.is_none() {
                if let Some(r) = p.right.low {
                    self.reference[r] = p.left.low;
                    self.side[r] = -1;
                    p.right.low = None;
                }
            }
            self.stack.push(p);
        }
        if self.lowpt[e] < hu {
            let top = self.stack.last().expect("return edges of e remain stacked");
            let (hl, hr) = (top.left.high, top.right.high);
            self.reference[e] = match (hl, hr) {
                (Some(l), Some(r)) if self.lowpt[l] > self.lowpt[r] => Some(l),
                (Some(l), None) => Some(l),
                _ => hr,
            };
        }
    }

    fn sign(&mut self, e: usize) -> i64 {
        // iterative version of the recursive sign resolution along ref chains
        let mut chain = vec![e];
        while let Some(r) = self.reference[*chain.last().expect("non-empty")] {
            chain.push(r);
        }
        let mut s = self.side[*chain.last().expect("non-empty")];
        for &x in chain.iter().rev().skip(1) {
            s *= self.side[x];
            self.side[x] = s;
            self.reference[x] = None;
        }
        s
    }

    fn embed(&mut self, v: usize, rot: &mut Rotations, left_ref: &mut [usize], right_ref: &mut [usize]) {
        for k in 0..self.ordered[v].len() {
            let ei = self.ordered[v][k];
            let w = self.dst[ei];
            if self.parent_edge[w] == Some(ei) {
                rot.add_first(w, v);
                left_ref[v] = w;
                right_ref[v] = w;
                self.embed(w, rot, left_ref, right_ref);
            } else if self.side[ei] == 1 {
                rot.add_cw(w, v, Some(right_ref[w]));
            } else {
                rot.add_ccw(w, v, Some(left_ref[w]));
                left_ref[w] = v;
            }
        }
    }

    fn sort_by_nesting(&mut self) {
        for v in 0..self.out.len() {
            let mut o = self.out[v].clone();
            o.sort_by_key(|&id| self.nesting_depth[id]);
            self.ordered[v] = o;
        }
    }
}

/// Undirected simple graph as adjacency lists of (neighbour, edge id), with
/// self-loops and repeated pairs dropped.
fn simple_adjacency(n: usize, edges: &[(usize, usize)]) -> Result<(Vec<Vec<(usize, usize)>>, usize)> {
    let mut adj = vec![Vec::new(); n];
    let mut seen = std::collections::HashSet::new();
    let mut m = 0;
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::param(format!("edge ({u}, {v}) outside {n} vertices")));
        }
        if u == v || !seen.insert((u.min(v), u.max(v))) {
            continue;
        }
        adj[u].push((v, m));
        adj[v].push((u, m));
        m += 1;
    }
    Ok((adj, m))
}

/// Core test; the embedding is only assembled when asked for.
fn lr_planarity(n: usize, adj: &[Vec<(usize, usize)>], m: usize, want_embedding: bool) -> Option<Option<PlanarEmbedding>> {
    if n > 2 && m > 3 * n - 6 {
        return None;
    }
    let mut lr = Lr::new(n, m, adj);
    let mut roots = Vec::new();
    for v in 0..n {
        if lr.height[v].is_none() {
            lr.height[v] = Some(0);
            roots.push(v);
            lr.orient(v);
        }
    }
    lr.sort_by_nesting();
    for &r in &roots {
        if !lr.test(r) {
            return None;
        }
    }
    if !want_embedding {
        return Some(None);
    }
    for e in 0..m {
        lr.nesting_depth[e] *= lr.sign(e);
    }
    lr.sort_by_nesting();
    let mut rot = Rotations::new(n);
    for v in 0..n {
        let mut prev = None;
        for &id in &lr.ordered[v] {
            let w = lr.dst[id];
            rot.add_cw(v, w, prev);
            prev = Some(w);
        }
    }
    let (mut left_ref, mut right_ref) = (vec![0; n], vec![0; n]);
    for &r in &roots {
        lr.embed(r, &mut rot, &mut left_ref, &mut right_ref);
    }
    Some(Some(rot.into_embedding()))
}

pub(crate) fn planar_unchecked(n: usize, edges: &[(usize, usize)]) -> bool {
    let (adj, m) = simple_adjacency(n, edges).expect("edges in range");
    lr_planarity(n, &adj, m, false).is_some()
}

/// Planarity verdict without a witness.
pub fn is_planar(n: usize, edges: &[(usize, usize)]) -> Result<bool> {
    let (adj, m) = simple_adjacency(n, edges)?;
    Ok(lr_planarity(n, &adj, m, false).is_some())
}

/// Planarity verdict with a witness: a rotation system, or a Kuratowski
/// subgraph found by deleting every edge not needed for non-planarity.
pub fn check_planarity(n: usize, edges: &[(usize, usize)]) -> Result<Planarity> {
    let (adj, m) = simple_adjacency(n, edges)?;
    if let Some(e) = lr_planarity(n, &adj, m, true) {
        return Ok(Planarity::Planar(e.expect("embedding requested")));
    }
    let mut kept: Vec<(usize, usize)> = adj
        .iter()
        .enumerate()
        .flat_map(|(u, a)| a.iter().filter(move |&&(v, _)| u < v).map(move |&(v, _)| (u, v)))
        .collect();
    kept.sort_unstable();
    let mut i = 0;
    while i < kept.len() {
        let e = kept.remove(i);
        if planar_unchecked(n, &kept) {
            kept.insert(i, e);
            i += 1;
        }
    }
    let mut degree = vec![0usize; n];
    for &(u, v) in &kept {
        degree[u] += 1;
        degree[v] += 1;
    }
    let branch_vertices: Vec<usize> = (0..n).filter(|&v| degree[v] >= 3).collect();
    let kind = if branch_vertices.len() == 5 && branch_vertices.iter().all(|&v| degree[v] == 4) {
        KuratowskiKind::K5
    } else {
        debug_assert!(branch_vertices.len() == 6 && branch_vertices.iter().all(|&v| degree[v] == 3));
        KuratowskiKind::K33
    };
    Ok(Planarity::NonPlanar(KuratowskiSubgraph { edges: kept, kind, branch_vertices }))
}
