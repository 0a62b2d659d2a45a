//! Road network, the BPR volume-delay function and its integral.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LinkId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0)
    }
}

/// Parameters of the BPR curve `t = t0 * (1 + alpha * (f / C)^beta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BprParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BprParams {
    fn default() -> Self {
        BprParams {
            alpha: 0.15,
            beta: 4.0,
        }
    }
}

impl BprParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config(format!(
                "BPR alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 1.0) {
            return Err(Error::config(format!(
                "BPR beta must be >= 1, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    #[inline]
    fn pow(&self, ratio: f64) -> f64 {
        if self.beta == 4.0 {
            let sq = ratio * ratio;
            sq * sq
        } else {
            ratio.powf(self.beta)
        }
    }
}

/// Link attributes as they appear in an input file, before node labels are
/// resolved to dense indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub label: u64,
    pub tail: u64,
    pub head: u64,
    /// vehicles/hour
    pub capacity: f64,
    /// minutes
    pub free_flow_time: f64,
    /// miles
    pub length: f64,
    pub functional_class: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub id: LinkId,
    /// External id used in input and output files.
    pub label: u64,
    pub tail: NodeId,
    pub head: NodeId,
    pub capacity: f64,
    pub free_flow_time: f64,
    pub length: f64,
    pub functional_class: u8,
}

/// Directed road graph. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Network {
    node_labels: Vec<u64>,
    node_lookup: HashMap<u64, NodeId>,
    links: Vec<Link>,
    // CSR adjacency of outgoing links, each row sorted by link id.
    out_offsets: Vec<usize>,
    out_links: Vec<LinkId>,
    bpr: BprParams,
    warnings: Vec<String>,
}

impl Network {
    /// Builds a network whose node set is the set of link endpoints.
    pub fn from_links(specs: Vec<LinkSpec>, bpr: BprParams) -> Result<Network> {
        let mut labels: Vec<u64> = specs.iter().flat_map(|s| [s.tail, s.head]).collect();
        labels.sort_unstable();
        labels.dedup();
        Network::with_nodes(labels, specs, bpr)
    }

    /// Builds a network from an explicit node list. Every link endpoint must
    /// name a listed node.
    pub fn with_nodes(node_labels: Vec<u64>, specs: Vec<LinkSpec>, bpr: BprParams) -> Result<Network> {
        bpr.validate()?;
        let mut node_lookup = HashMap::with_capacity(node_labels.len());
        for (i, &label) in node_labels.iter().enumerate() {
            if node_lookup.insert(label, NodeId(i as u32)).is_some() {
                return Err(Error::structural(format!("duplicate node {label}")));
            }
        }
        if specs.len() >= u32::MAX as usize || node_labels.len() >= u32::MAX as usize {
            return Err(Error::structural("network too large"));
        }

        let mut seen_links = HashMap::with_capacity(specs.len());
        let mut links = Vec::with_capacity(specs.len());
        for (i, s) in specs.into_iter().enumerate() {
            if seen_links.insert(s.label, i).is_some() {
                return Err(Error::structural(format!("duplicate link id {}", s.label)));
            }
            let tail = *node_lookup.get(&s.tail).ok_or_else(|| {
                Error::structural(format!("link {}: dangling tail node {}", s.label, s.tail))
            })?;
            let head = *node_lookup.get(&s.head).ok_or_else(|| {
                Error::structural(format!("link {}: dangling head node {}", s.label, s.head))
            })?;
            if tail == head {
                return Err(Error::structural(format!("link {} is a self-loop", s.label)));
            }
            if !(s.capacity.is_finite() && s.capacity > 0.0) {
                return Err(Error::domain(format!("link {}: capacity must be positive", s.label)));
            }
            if !(s.free_flow_time.is_finite() && s.free_flow_time > 0.0) {
                return Err(Error::domain(format!(
                    "link {}: free-flow time must be positive",
                    s.label
                )));
            }
            if !(s.length.is_finite() && s.length >= 0.0) {
                return Err(Error::domain(format!("link {}: length must be >= 0", s.label)));
            }
            links.push(Link {
                id: LinkId(i as u32),
                label: s.label,
                tail,
                head,
                capacity: s.capacity,
                free_flow_time: s.free_flow_time,
                length: s.length,
                functional_class: s.functional_class,
            });
        }

        let n = node_labels.len();
        let mut out_offsets = vec![0usize; n + 1];
        for l in &links {
            out_offsets[l.tail.index() + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
        }
        let mut fill = out_offsets.clone();
        let mut out_links = vec![LinkId(0); links.len()];
        // links are visited in id order, so every row ends up sorted
        for l in &links {
            let slot = &mut fill[l.tail.index()];
            out_links[*slot] = l.id;
            *slot += 1;
        }

        let mut net = Network {
            node_labels,
            node_lookup,
            links,
            out_offsets,
            out_links,
            bpr,
            warnings: Vec::new(),
        };
        let components = net.weak_components();
        if components > 1 {
            net.warnings.push(format!(
                "network is not weakly connected ({components} components)"
            ));
        }
        Ok(net)
    }

    pub fn node_count(&self) -> usize {
        self.node_labels.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.index()]
    }

    pub fn bpr(&self) -> BprParams {
        self.bpr
    }

    pub fn node_label(&self, id: NodeId) -> u64 {
        self.node_labels[id.index()]
    }

    pub fn node(&self, label: u64) -> Option<NodeId> {
        self.node_lookup.get(&label).copied()
    }

    /// Outgoing links of `node`, ascending by id.
    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        let i = node.index();
        &self.out_links[self.out_offsets[i]..self.out_offsets[i + 1]]
    }

    /// Validation warnings collected at construction.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn free_flow_costs(&self) -> CostVector {
        CostVector(self.links.iter().map(|l| l.free_flow_time).collect())
    }

    fn weak_components(&self) -> usize {
        let n = self.node_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = n;
        for l in &self.links {
            let a = find(&mut parent, l.tail.index());
            let b = find(&mut parent, l.head.index());
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        components
    }

    /// Nodes that no path from any of `origins` reaches.
    pub fn nodes_unreachable_from(&self, origins: &[NodeId]) -> Vec<NodeId> {
        let mut seen = vec![false; self.node_count()];
        let mut stack: Vec<NodeId> = Vec::new();
        for &o in origins {
            if !seen[o.index()] {
                seen[o.index()] = true;
                stack.push(o);
            }
        }
        while let Some(u) = stack.pop() {
            for &a in self.out_links(u) {
                let v = self.links[a.index()].head;
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    stack.push(v);
                }
            }
        }
        (0..self.node_count())
            .filter(|&i| !seen[i])
            .map(|i| NodeId(i as u32))
            .collect()
    }

    /// Travel time on `link` at `flow`, in minutes.
    #[inline]
    pub fn travel_time(&self, link: &Link, flow: f64) -> Result<f64> {
        bpr_travel_time(link, flow, self.bpr)
    }

    #[inline]
    pub fn potential(&self, link: &Link, flow: f64) -> Result<f64> {
        link_potential(link, flow, self.bpr)
    }
}

/// Per-link flow rates in vehicles/hour, indexed by link id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkFlowVector(pub Vec<f64>);

/// Per-link travel times in minutes, indexed by link id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostVector(pub Vec<f64>);

macro_rules! vec_newtype {
    ($t:ident) => {
        impl Deref for $t {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $t {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $t {
            fn from(v: Vec<f64>) -> Self {
                $t(v)
            }
        }
    };
}

vec_newtype!(LinkFlowVector);
vec_newtype!(CostVector);

impl LinkFlowVector {
    pub fn zeros(n: usize) -> Self {
        LinkFlowVector(vec![0.0; n])
    }
}

fn check_flow(flow: f64) -> Result<()> {
    if flow >= 0.0 && flow.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("flow must be finite and >= 0, got {flow}")))
    }
}

/// BPR travel time `t0 * (1 + alpha * (f / C)^beta)` in minutes.
#[inline]
pub fn bpr_travel_time(link: &Link, flow: f64, bpr: BprParams) -> Result<f64> {
    check_flow(flow)?;
    Ok(link.free_flow_time * (1.0 + bpr.alpha * bpr.pow(flow / link.capacity)))
}

/// Closed-form integral of the BPR curve from 0 to `flow`.
#[inline]
pub fn link_potential(link: &Link, flow: f64, bpr: BprParams) -> Result<f64> {
    check_flow(flow)?;
    let ratio = flow / link.capacity;
    Ok(link.free_flow_time * flow * (1.0 + bpr.alpha / (bpr.beta + 1.0) * bpr.pow(ratio)))
}

fn check_len(network: &Network, len: usize) -> Result<()> {
    if len != network.link_count() {
        return Err(Error::structural(format!(
            "expected {} link values, got {len}",
            network.link_count()
        )));
    }
    Ok(())
}

/// Sum of link potentials, accumulated in link-id order.
pub fn total_cost(network: &Network, flows: &[f64]) -> Result<f64> {
    check_len(network, flows.len())?;
    network
        .links
        .iter()
        .zip(flows)
        .try_fold(0.0, |acc, (l, &f)| Ok(acc + network.potential(l, f)?))
}

pub fn update_costs(network: &Network, flows: &[f64]) -> Result<CostVector> {
    check_len(network, flows.len())?;
    network
        .links
        .iter()
        .zip(flows)
        .map(|(l, &f)| network.travel_time(l, f))
        .collect::<Result<Vec<_>>>()
        .map(CostVector)
}
