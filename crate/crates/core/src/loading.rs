//! Route truncation and the truncated path-to-link incidence mapping.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::network::{LinkFlowVector, LinkId, Network, NodeId};
use crate::router::Path;

/// Outcome of cutting a route at the end of an interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Truncation {
    /// Number of leading links loaded in this interval.
    pub kept: usize,
    /// The first link alone takes longer than the interval; the trip is
    /// still advanced across it so that it makes progress.
    pub degenerate: bool,
}

fn check_interval(interval_minutes: f64) -> Result<()> {
    if interval_minutes > 0.0 && !interval_minutes.is_nan() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "interval length must be positive, got {interval_minutes}"
        )))
    }
}

/// Walks `route` from time zero using `costs` (minutes per link id). A link
/// is kept when the trip enters it strictly before `interval_minutes`, so the
/// link in progress at the interval boundary is loaded in full and a trip that
/// reaches a node exactly at the boundary stops there. An infinite interval
/// keeps every link.
pub fn truncate_route(route: &[LinkId], costs: &[f64], interval_minutes: f64) -> Result<Truncation> {
    check_interval(interval_minutes)?;
    let mut clock = 0.0;
    let mut kept = 0;
    for a in route {
        if clock >= interval_minutes {
            break;
        }
        let c = *costs
            .get(a.index())
            .ok_or_else(|| Error::structural(format!("route references unknown link {a}")))?;
        if c.is_nan() || c <= 0.0 {
            return Err(Error::domain(format!("link {a}: cost must be positive, got {c}")));
        }
        clock += c;
        kept += 1;
    }
    let degenerate = !route.is_empty() && costs[route[0].index()] > interval_minutes;
    Ok(Truncation { kept, degenerate })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedPath {
    pub full_path: Path,
    pub stop_node: NodeId,
    pub kept_links: Vec<LinkId>,
    pub finished: bool,
}

/// Cuts `path` at the farthest node reachable within the interval (see
/// [`truncate_route`]).
pub fn truncate_path(network: &Network, path: &Path, costs: &[f64], interval_minutes: f64) -> Result<TruncatedPath> {
    let t = truncate_route(&path.links, costs, interval_minutes)?;
    let kept_links = path.links[..t.kept].to_vec();
    let stop_node = match kept_links.last() {
        Some(a) => network.link(*a).head,
        None => path.nodes[0],
    };
    if t.degenerate {
        log::warn!(
            "link {} takes longer than the {interval_minutes}-minute interval; trip advanced across it",
            network.link(path.links[0]).label
        );
    }
    Ok(TruncatedPath {
        finished: t.kept == path.links.len(),
        full_path: path.clone(),
        stop_node,
        kept_links,
    })
}

/// A route together with how many of its leading links are loaded.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathKey {
    pub route: Arc<[LinkId]>,
    pub kept: u32,
}

impl PathKey {
    pub fn new(route: Arc<[LinkId]>, kept: usize) -> Self {
        debug_assert!(kept <= route.len());
        PathKey { route, kept: kept as u32 }
    }

    pub fn kept_links(&self) -> &[LinkId] {
        &self.route[..self.kept as usize]
    }

    pub fn finished(&self) -> bool {
        self.kept as usize == self.route.len()
    }

    pub fn origin(&self, network: &Network) -> Option<NodeId> {
        self.route.first().map(|a| network.link(*a).tail)
    }

    pub fn destination(&self, network: &Network) -> Option<NodeId> {
        self.route.last().map(|a| network.link(*a).head)
    }

    /// Last node reached in the interval.
    pub fn stop_node(&self, network: &Network) -> Option<NodeId> {
        match self.kept_links().last() {
            Some(a) => Some(network.link(*a).head),
            None => self.origin(network),
        }
    }
}

/// Flow rates (vehicles/hour) on truncated routes for one interval.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathFlowMap {
    pub interval: usize,
    flows: BTreeMap<PathKey, f64>,
}

impl PathFlowMap {
    pub fn new(interval: usize) -> Self {
        PathFlowMap {
            interval,
            flows: BTreeMap::new(),
        }
    }

    /// Adds `rate` to `key`; nonpositive rates are ignored.
    pub fn add(&mut self, key: PathKey, rate: f64) {
        if rate > 0.0 {
            *self.flows.entry(key).or_insert(0.0) += rate;
        }
    }

    pub fn get(&self, key: &PathKey) -> Option<f64> {
        self.flows.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PathKey, f64)> + '_ {
        self.flows.iter().map(|(k, &v)| (k, v))
    }

    pub fn total_flow(&self) -> f64 {
        self.flows.values().sum()
    }

    /// `self <- self + step * (target - self)` over the union of keys.
    pub fn blend(&mut self, target: &PathFlowMap, step: f64) {
        let keep = 1.0 - step;
        for v in self.flows.values_mut() {
            *v *= keep;
        }
        for (k, &v) in &target.flows {
            *self.flows.entry(k.clone()).or_insert(0.0) += step * v;
        }
        self.flows.retain(|_, v| *v > 0.0);
    }

    /// Merges another map into this one.
    pub fn absorb(&mut self, other: &PathFlowMap) {
        for (k, &v) in &other.flows {
            self.add(k.clone(), v);
        }
    }

    /// Adds every path's rate onto its kept links.
    pub fn accumulate_links(&self, flows: &mut [f64]) -> Result<()> {
        for (k, &rate) in &self.flows {
            for a in k.kept_links() {
                let slot = flows
                    .get_mut(a.index())
                    .ok_or_else(|| Error::structural(format!("path references unknown link {a}")))?;
                *slot += rate;
            }
        }
        Ok(())
    }
}

/// Link flows induced by truncated path flows: each path contributes its rate
/// to exactly its kept links.
pub fn path_flows_to_link_flows(flows: &PathFlowMap, link_count: usize) -> Result<LinkFlowVector> {
    let mut out = LinkFlowVector::zeros(link_count);
    flows.accumulate_links(&mut out)?;
    Ok(out)
}
