//! Shortest paths with a preprocess / customize / query lifecycle.
//!
//! Preprocessing builds weight-independent adjacency arrays. Customization
//! installs a cost vector, quantized to integer weights so that every
//! distance is computed exactly. Queries run a backward label-setting search
//! from the destination and then walk forward from the origin, always taking
//! the lowest-id link that stays on a shortest path; the returned route is
//! therefore the lexicographically smallest link-id sequence among all
//! minimum-weight routes.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::error::Error;
use crate::network::{CostVector, LinkId, Network, NodeId};

/// Integer weight units per minute of travel time.
pub const WEIGHT_SCALE: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouteError {
    #[error("no path from {0} to {1}")]
    Unreachable(NodeId, NodeId),
    #[error("routing index has not been customized")]
    NotCustomized,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

impl From<RouteError> for Error {
    fn from(e: RouteError) -> Self {
        Error::Structural(e.to_string())
    }
}

/// Quantizes a travel time in minutes to an integer weight (at least 1).
#[inline]
pub fn quantize(cost: f64) -> u64 {
    let w = (cost * WEIGHT_SCALE).round();
    if w < 1.0 {
        1
    } else {
        w as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
    /// Sum of the installed link costs, minutes.
    pub total_cost: f64,
    /// Sum of the quantized link weights.
    pub weight: u64,
}

impl Path {
    pub fn trivial(node: NodeId) -> Self {
        Path {
            nodes: vec![node],
            links: Vec::new(),
            total_cost: 0.0,
            weight: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RoutingIndex {
    node_count: usize,
    out_offsets: Vec<usize>,
    out_links: Vec<LinkId>,
    out_heads: Vec<u32>,
    in_offsets: Vec<usize>,
    in_links: Vec<LinkId>,
    in_tails: Vec<u32>,
    costs: CostVector,
    weights: Vec<u64>,
    generation: u64,
}

impl RoutingIndex {
    /// Builds the weight-independent search structure.
    pub fn preprocess(network: &Network) -> Self {
        let n = network.node_count();
        let links = network.links();

        let mut out_offsets = Vec::with_capacity(n + 1);
        let mut out_links = Vec::with_capacity(links.len());
        out_offsets.push(0);
        for u in 0..n {
            out_links.extend_from_slice(network.out_links(NodeId(u as u32)));
            out_offsets.push(out_links.len());
        }
        let out_heads = out_links.iter().map(|a| network.link(*a).head.0).collect();

        let mut in_offsets = vec![0usize; n + 1];
        for l in links {
            in_offsets[l.head.index() + 1] += 1;
        }
        for i in 0..n {
            in_offsets[i + 1] += in_offsets[i];
        }
        let mut fill = in_offsets.clone();
        let mut in_links = vec![LinkId(0); links.len()];
        let mut in_tails = vec![0u32; links.len()];
        for l in links {
            let slot = &mut fill[l.head.index()];
            in_links[*slot] = l.id;
            in_tails[*slot] = l.tail.0;
            *slot += 1;
        }

        RoutingIndex {
            node_count: n,
            out_offsets,
            out_links,
            out_heads,
            in_offsets,
            in_links,
            in_tails,
            costs: CostVector::default(),
            weights: Vec::new(),
            generation: 0,
        }
    }

    /// Installs new link costs. Every cost must be finite and positive.
    pub fn customize(&mut self, costs: &CostVector) -> Result<(), Error> {
        if costs.len() != self.out_links.len() {
            return Err(Error::Structural(format!(
                "expected {} link costs, got {}",
                self.out_links.len(),
                costs.len()
            )));
        }
        if let Some((i, c)) = costs.iter().enumerate().find(|(_, c)| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::Domain(format!("link {i}: cost must be positive, got {c}")));
        }
        self.weights.clear();
        self.weights.extend(costs.iter().map(|&c| quantize(c)));
        self.costs = costs.clone();
        self.generation += 1;
        Ok(())
    }

    /// Number of customizations so far; 0 means none.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn costs(&self) -> &CostVector {
        &self.costs
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    fn check_node(&self, n: NodeId) -> Result<(), RouteError> {
        if n.index() < self.node_count {
            Ok(())
        } else {
            Err(RouteError::UnknownNode(n))
        }
    }

    /// Minimum-cost route from `p` to `q` under the installed costs.
    pub fn query(&self, p: NodeId, q: NodeId) -> Result<Path, RouteError> {
        let mut space = SearchSpace::new(self.node_count);
        let tree = self.tree(&mut space, q, &[p])?;
        tree.path(p).ok_or(RouteError::Unreachable(p, q))
    }

    /// Runs the backward search from `target`, stopping once every node in
    /// `origins` is settled (or the reachable set is exhausted).
    pub fn tree<'a>(
        &'a self,
        space: &'a mut SearchSpace,
        target: NodeId,
        origins: &[NodeId],
    ) -> Result<TargetTree<'a>, RouteError> {
        if self.generation == 0 {
            return Err(RouteError::NotCustomized);
        }
        self.check_node(target)?;
        for &o in origins {
            self.check_node(o)?;
        }
        space.reset(self.node_count);
        let epoch = space.epoch;

        let mut remaining = 0usize;
        for &o in origins {
            if space.wanted[o.index()] != epoch {
                space.wanted[o.index()] = epoch;
                remaining += 1;
            }
        }

        space.set(target.index(), 0);
        space.heap.push(Reverse((0, target.0)));
        while let Some(Reverse((d, u))) = space.heap.pop() {
            let ui = u as usize;
            if space.settled[ui] == epoch || d > space.dist[ui] {
                continue;
            }
            space.settled[ui] = epoch;
            if space.wanted[ui] == epoch {
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
            for slot in self.in_offsets[ui]..self.in_offsets[ui + 1] {
                let t = self.in_tails[slot] as usize;
                if space.settled[t] == epoch {
                    continue;
                }
                let nd = d.saturating_add(self.weights[self.in_links[slot].index()]);
                if space.seen[t] != epoch || nd < space.dist[t] {
                    space.set(t, nd);
                    space.heap.push(Reverse((nd, t as u32)));
                }
            }
        }
        space.heap.clear();

        Ok(TargetTree {
            index: self,
            space,
            target,
        })
    }
}

/// Reusable scratch memory for searches; one per worker.
#[derive(Clone, Debug, Default)]
pub struct SearchSpace {
    dist: Vec<u64>,
    seen: Vec<u32>,
    settled: Vec<u32>,
    wanted: Vec<u32>,
    epoch: u32,
    heap: BinaryHeap<Reverse<(u64, u32)>>,
}

impl SearchSpace {
    pub fn new(node_count: usize) -> Self {
        let mut s = SearchSpace::default();
        s.reset(node_count);
        s
    }

    fn reset(&mut self, node_count: usize) {
        if self.dist.len() != node_count || self.epoch == u32::MAX {
            self.dist = vec![0; node_count];
            self.seen = vec![0; node_count];
            self.settled = vec![0; node_count];
            self.wanted = vec![0; node_count];
            self.epoch = 0;
        }
        self.epoch += 1;
        self.heap.clear();
    }

    #[inline]
    fn set(&mut self, i: usize, d: u64) {
        self.dist[i] = d;
        self.seen[i] = self.epoch;
    }
}

/// Result of a backward search: exact distances to `target` for every
/// settled node.
pub struct TargetTree<'a> {
    index: &'a RoutingIndex,
    space: &'a SearchSpace,
    target: NodeId,
}

impl TargetTree<'_> {
    pub fn target(&self) -> NodeId {
        self.target
    }

    /// Weight of the shortest route from `node` to the target, if `node` was
    /// settled by the search.
    pub fn distance(&self, node: NodeId) -> Option<u64> {
        let i = node.index();
        (i < self.space.dist.len() && self.space.settled[i] == self.space.epoch).then(|| self.space.dist[i])
    }

    /// Lexicographically smallest minimum-weight route from `origin`.
    pub fn path(&self, origin: NodeId) -> Option<Path> {
        let idx = self.index;
        let epoch = self.space.epoch;
        let mut d = self.distance(origin)?;
        let mut path = Path::trivial(origin);
        let mut u = origin.index();
        while u != self.target.index() {
            let mut next = None;
            for slot in idx.out_offsets[u]..idx.out_offsets[u + 1] {
                let v = idx.out_heads[slot] as usize;
                if self.space.settled[v] != epoch {
                    continue;
                }
                let a = idx.out_links[slot];
                if self.space.dist[v].checked_add(idx.weights[a.index()]) == Some(d) {
                    next = Some((a, v));
                    break;
                }
            }
            // some tight link always exists: the search tree predecessor
            let (a, v) = next.expect("settled node without a tight outgoing link");
            path.links.push(a);
            path.nodes.push(NodeId(v as u32));
            path.total_cost += idx.costs[a.index()];
            path.weight += idx.weights[a.index()];
            d = self.space.dist[v];
            u = v;
        }
        Some(path)
    }
}

/// Plain label-setting search used as the independent oracle for the index.
pub mod reference {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    use crate::network::{Network, NodeId};

    /// Forward single-source distances over integer link weights; `None`
    /// marks unreachable nodes.
    pub fn label_setting(network: &Network, weights: &[u64], source: NodeId) -> Vec<Option<u64>> {
        let mut dist: Vec<Option<u64>> = vec![None; network.node_count()];
        let mut done = vec![false; network.node_count()];
        let mut heap = BinaryHeap::new();
        dist[source.index()] = Some(0);
        heap.push(Reverse((0u64, source.0)));
        while let Some(Reverse((d, u))) = heap.pop() {
            let u = NodeId(u);
            if done[u.index()] {
                continue;
            }
            done[u.index()] = true;
            for &a in network.out_links(u) {
                let v = network.link(a).head;
                let nd = d + weights[a.index()];
                if dist[v.index()].is_none_or(|old| nd < old) {
                    dist[v.index()] = Some(nd);
                    heap.push(Reverse((nd, v.0)));
                }
            }
        }
        dist
    }
}
