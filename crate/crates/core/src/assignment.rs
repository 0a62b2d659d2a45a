//! Per-interval user equilibrium by Frank-Wolfe: parallel all-or-nothing
//! loading, quasi-Newton line search or MSA step sizes, and the relative
//! potential-change stopping rule.

use std::sync::Arc;

use crate::demand::{DemandPartition, OdPair};
use crate::error::{Error, Result};
use crate::exec::WorkerPool;
use crate::loading::{truncate_route, PathFlowMap, PathKey};
use crate::network::{CostVector, LinkFlowVector, LinkId, Network};
use crate::router::{RoutingIndex, SearchSpace};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchParams {
    /// Maximum quasi-Newton iterations (L).
    pub max_iters: usize,
    /// Stop once |C'(α)| falls below this (T1).
    pub slope_tol: f64,
    /// Stop once the step in α falls below this (T2).
    pub step_tol: f64,
    /// Finite-difference probe width (Δx).
    pub probe_width: f64,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        LineSearchParams {
            max_iters: 20,
            slope_tol: 1e-4,
            step_tol: 1e-4,
            probe_width: 1e-4,
        }
    }
}

impl LineSearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::config("line search needs at least one iteration"));
        }
        if !(self.slope_tol > 0.0 && self.step_tol > 0.0) {
            return Err(Error::config("line search thresholds must be positive"));
        }
        if !(self.probe_width > 0.0 && self.probe_width < 0.25) {
            return Err(Error::config(format!(
                "probe width must lie in (0, 0.25), got {}",
                self.probe_width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSizeStrategy {
    ExactLineSearch(LineSearchParams),
    Msa,
}

impl Default for StepSizeStrategy {
    fn default() -> Self {
        StepSizeStrategy::ExactLineSearch(LineSearchParams::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FwConfig {
    pub strategy: StepSizeStrategy,
    /// Relative potential change below which the solver stops (T0).
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig {
            strategy: StepSizeStrategy::default(),
            tolerance: 1e-4,
            max_iters: 200,
        }
    }
}

impl FwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::config("convergence tolerance must be positive"));
        }
        if self.max_iters < 1 {
            return Err(Error::config("iteration cap must be >= 1"));
        }
        if let StepSizeStrategy::ExactLineSearch(p) = &self.strategy {
            p.validate()?;
        }
        Ok(())
    }
}

/// One worker's all-or-nothing loading.
#[derive(Clone, Debug, Default)]
pub struct AonLoad {
    pub path_flows: PathFlowMap,
    pub link_flows: Vec<f64>,
    /// OD entries with no route; their demand is not loaded.
    pub unroutable: Vec<(OdPair, f64)>,
    /// Routes whose first link is longer than the interval.
    pub degenerate: usize,
}

/// Loads every entry of `demand` onto its shortest route under the costs
/// installed in `index`, truncated to `interval_minutes`.
pub fn all_or_nothing(
    network: &Network,
    index: &RoutingIndex,
    interval_minutes: f64,
    demand: &DemandPartition,
    interval: usize,
) -> Result<AonLoad> {
    let costs = index.costs();
    let mut out = AonLoad {
        path_flows: PathFlowMap::new(interval),
        link_flows: vec![0.0; network.link_count()],
        ..Default::default()
    };
    let load = |out: &mut AonLoad, route: &[LinkId], rate: f64| -> Result<()> {
        let t = truncate_route(route, costs, interval_minutes)?;
        out.degenerate += usize::from(t.degenerate);
        for a in &route[..t.kept] {
            out.link_flows[a.index()] += rate;
        }
        let route: Arc<[LinkId]> = route.into();
        out.path_flows.add(PathKey::new(route, t.kept), rate);
        Ok(())
    };

    if cfg!(feature = "unbatched-routing") {
        for &(pair, rate) in &demand.entries {
            match index.query(pair.origin, pair.destination) {
                Ok(path) => load(&mut out, &path.links, rate)?,
                Err(crate::router::RouteError::Unreachable(..)) => out.unroutable.push((pair, rate)),
                Err(e) => return Err(e.into()),
            }
        }
        return Ok(out);
    }

    // one backward tree per destination
    let mut order: Vec<usize> = (0..demand.entries.len()).collect();
    order.sort_by_key(|&i| demand.entries[i].0);
    let mut space = SearchSpace::new(network.node_count());
    let mut origins = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let q = demand.entries[order[start]].0.destination;
        let mut end = start;
        origins.clear();
        while end < order.len() && demand.entries[order[end]].0.destination == q {
            origins.push(demand.entries[order[end]].0.origin);
            end += 1;
        }
        let tree = index.tree(&mut space, q, &origins)?;
        for &i in &order[start..end] {
            let (pair, rate) = demand.entries[i];
            match tree.path(pair.origin) {
                Some(path) => load(&mut out, &path.links, rate)?,
                None => out.unroutable.push((pair, rate)),
            }
        }
        start = end;
    }
    Ok(out)
}

/// All-or-nothing over every worker's partition, followed by the global
/// reduction of local link flows.
pub fn parallel_all_or_nothing(
    pool: &WorkerPool,
    network: &Network,
    index: &RoutingIndex,
    interval_minutes: f64,
    partitions: &[DemandPartition],
    interval: usize,
) -> Result<(Vec<AonLoad>, LinkFlowVector)> {
    if partitions.len() != pool.workers() {
        return Err(Error::structural(format!(
            "{} demand partitions for {} workers",
            partitions.len(),
            pool.workers()
        )));
    }
    let loads = pool
        .run(|k| all_or_nothing(network, index, interval_minutes, &partitions[k], interval))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let locals: Vec<&[f64]> = loads.iter().map(|l| l.link_flows.as_slice()).collect();
    let global = pool.reducer().all_reduce_sum(&locals)?;
    Ok((loads, LinkFlowVector(global)))
}

/// `f + x * (g - f)`, never negative.
#[inline]
fn blend_point(f: f64, g: f64, x: f64) -> f64 {
    let v = f + x * (g - f);
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

/// Total potential over all links, reduced across link partitions.
pub fn partitioned_total_cost(pool: &WorkerPool, network: &Network, flows: &[f64]) -> Result<f64> {
    if flows.len() != network.link_count() {
        return Err(Error::structural("flow vector length differs from link count"));
    }
    let [total] = pool.sum_links(network.link_count(), |i| Ok([network.potential(&network.links()[i], flows[i])?]))?;
    Ok(total)
}

/// Evaluates `C(x) = potential(f + x (g - f))` at several step sizes with one
/// batched reduction.
pub fn evaluate_steps<const K: usize>(
    pool: &WorkerPool,
    network: &Network,
    f: &[f64],
    g: &[f64],
    steps: [f64; K],
) -> Result<[f64; K]> {
    let n = network.link_count();
    if f.len() != n || g.len() != n {
        return Err(Error::structural("flow vector length differs from link count"));
    }
    pool.sum_links(n, |i| {
        let link = &network.links()[i];
        let mut out = [0.0; K];
        for (v, &x) in out.iter_mut().zip(&steps) {
            *v = network.potential(link, blend_point(f[i], g[i], x))?;
        }
        Ok(out)
    })
}

/// Value and finite-difference derivatives of the line-search objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

/// Sums `Σ_k w[r][k] · potential(f + x_k (g - f))` over links for each row
/// `r`. Combining the stencil per link before the reduction keeps the
/// differences well conditioned.
fn evaluate_stencil(
    pool: &WorkerPool,
    network: &Network,
    f: &[f64],
    g: &[f64],
    steps: [f64; 3],
    weights: [[f64; 3]; 3],
) -> Result<[f64; 3]> {
    let n = network.link_count();
    if f.len() != n || g.len() != n {
        return Err(Error::structural("flow vector length differs from link count"));
    }
    pool.sum_links(n, |i| {
        let link = &network.links()[i];
        let mut p = [0.0; 3];
        for (v, &x) in p.iter_mut().zip(&steps) {
            *v = network.potential(link, blend_point(f[i], g[i], x))?;
        }
        Ok(weights.map(|w| w[0] * p[0] + w[1] * p[1] + w[2] * p[2]))
    })
}

/// Evaluates `C(x)`, `C'(x)` and `C''(x)` from three objective values.
/// Central differences in the interior; one-sided second-order differences
/// when a central probe would leave `[0, 1]`.
pub fn cost_probe(pool: &WorkerPool, network: &Network, f: &[f64], g: &[f64], x: f64, width: f64) -> Result<Probe> {
    if !(width > 0.0 && width < 0.25) {
        return Err(Error::config(format!("probe width must lie in (0, 0.25), got {width}")));
    }
    let x = x.clamp(0.0, 1.0);
    let h = width;
    let (steps, weights) = if x - h < 0.0 {
        ([x, x + h, x + 2.0 * h], [[1.0, 0.0, 0.0], [-3.0, 4.0, -1.0], [1.0, -2.0, 1.0]])
    } else if x + h > 1.0 {
        ([x, x - h, x - 2.0 * h], [[1.0, 0.0, 0.0], [3.0, -4.0, 1.0], [1.0, -2.0, 1.0]])
    } else {
        ([x - h, x, x + h], [[0.0, 1.0, 0.0], [-1.0, 0.0, 1.0], [1.0, -2.0, 1.0]])
    };
    let [value, d1, d2] = evaluate_stencil(pool, network, f, g, steps, weights)?;
    Ok(Probe {
        value,
        slope: d1 / (2.0 * h),
        curvature: d2 / (h * h),
    })
}

/// Predetermined step `2 / (2 + j)`; also the line-search starting point.
pub fn msa_step(iteration: usize) -> f64 {
    2.0 / (2.0 + iteration as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchOutcome {
    pub step: f64,
    /// Objective at `step`.
    pub value: f64,
    /// Probe evaluations spent.
    pub iterations: usize,
}

/// Quasi-Newton search for the step in `[0, 1]` minimizing the potential
/// along `f -> f_aon`.
pub fn line_search(
    pool: &WorkerPool,
    network: &Network,
    f: &[f64],
    f_aon: &[f64],
    iteration: usize,
    params: &LineSearchParams,
) -> Result<LineSearchOutcome> {
    params.validate()?;
    let mut alpha = msa_step(iteration);
    let mut iterations = 0;
    for _ in 0..params.max_iters {
        let p = cost_probe(pool, network, f, f_aon, alpha, params.probe_width)?;
        iterations += 1;
        if !p.value.is_finite() {
            return Err(Error::domain("nonfinite objective in line search"));
        }
        if p.slope.abs() < params.slope_tol {
            break;
        }
        if p.curvature.is_nan() || p.curvature <= 0.0 || !p.slope.is_finite() {
            let (a, n) = bisect_slope(pool, network, f, f_aon, params)?;
            alpha = a;
            iterations += n;
            break;
        }
        let next = (alpha - p.slope / p.curvature).clamp(0.0, 1.0);
        let moved = (next - alpha).abs();
        alpha = next;
        if moved < params.step_tol {
            break;
        }
    }

    // never accept a step worse than either end of the segment
    let [at, zero, one] = evaluate_steps(pool, network, f, f_aon, [alpha, 0.0, 1.0])?;
    let (mut step, mut value) = (alpha, at);
    if one < value {
        (step, value) = (1.0, one);
    }
    if zero < value {
        (step, value) = (0.0, zero);
    }
    Ok(LineSearchOutcome { step, value, iterations })
}

/// Root of the slope on `[0, 1]` by bisection; used when the curvature
/// estimate is not positive.
fn bisect_slope(
    pool: &WorkerPool,
    network: &Network,
    f: &[f64],
    g: &[f64],
    params: &LineSearchParams,
) -> Result<(f64, usize)> {
    let h = params.probe_width;
    let mut evals = 2;
    if cost_probe(pool, network, f, g, 0.0, h)?.slope >= 0.0 {
        return Ok((0.0, evals - 1));
    }
    if cost_probe(pool, network, f, g, 1.0, h)?.slope <= 0.0 {
        return Ok((1.0, evals));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > params.step_tol {
        let mid = 0.5 * (lo + hi);
        evals += 1;
        if cost_probe(pool, network, f, g, mid, h)?.slope < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi), evals))
}

/// Relative change of the potential below `tolerance`.
pub fn converged(previous: f64, current: f64, tolerance: f64) -> Result<bool> {
    if !(previous.is_finite() && current.is_finite()) {
        return Err(Error::domain(format!(
            "nonfinite potential ({previous} -> {current})"
        )));
    }
    if previous == 0.0 {
        return Ok(current == 0.0);
    }
    Ok(((previous - current) / previous).abs() < tolerance)
}

/// Per-iteration trace record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: f64,
    pub potential: f64,
    pub rel_change: f64,
    pub ls_iters: usize,
}

#[derive(Clone, Debug)]
pub struct FwResult {
    /// Local path flows, one map per worker.
    pub path_flows: Vec<PathFlowMap>,
    /// Global link flows.
    pub link_flows: LinkFlowVector,
    /// Travel times at `link_flows`.
    pub costs: CostVector,
    /// Gradient steps taken.
    pub iterations: usize,
    /// Potential at the initial loading and after every step.
    pub potential_trace: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub unroutable: Vec<(OdPair, f64)>,
    pub degenerate: usize,
}

impl FwResult {
    pub fn line_search_iterations(&self) -> usize {
        self.records.iter().map(|r| r.ls_iters).sum()
    }
}

/// Travel times for `flows`, computed over link partitions.
pub fn parallel_update_costs(pool: &WorkerPool, network: &Network, flows: &[f64]) -> Result<CostVector> {
    if flows.len() != network.link_count() {
        return Err(Error::structural("flow vector length differs from link count"));
    }
    let parts = pool
        .run_links(network.link_count(), |range| {
            range
                .map(|i| network.travel_time(&network.links()[i], flows[i]))
                .collect::<Result<Vec<f64>>>()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(CostVector(parts.concat()))
}

/// Frank-Wolfe user equilibrium for one interval.
///
/// Unroutable OD entries are reported in the result and carry no flow. When
/// the iteration cap is hit the last iterate is returned with
/// `converged = false`.
pub fn frank_wolfe(
    pool: &WorkerPool,
    network: &Network,
    index: &mut RoutingIndex,
    interval_minutes: f64,
    partitions: &[DemandPartition],
    config: &FwConfig,
    interval: usize,
) -> Result<FwResult> {
    config.validate()?;
    index.customize(&network.free_flow_costs())?;
    let (loads, mut f) = parallel_all_or_nothing(pool, network, index, interval_minutes, partitions, interval)?;
    let unroutable: Vec<(OdPair, f64)> = loads.iter().flat_map(|l| l.unroutable.iter().copied()).collect();
    let mut degenerate: usize = loads.iter().map(|l| l.degenerate).sum();
    let mut h: Vec<PathFlowMap> = loads.into_iter().map(|l| l.path_flows).collect();

    let mut potential = partitioned_total_cost(pool, network, &f)?;
    let mut trace = vec![potential];
    let mut records = Vec::new();
    let mut done = false;

    for j in 0..config.max_iters {
        let costs = parallel_update_costs(pool, network, &f)?;
        index.customize(&costs)?;
        let (aon, f_aon) = parallel_all_or_nothing(pool, network, index, interval_minutes, partitions, interval)?;
        degenerate += aon.iter().map(|l| l.degenerate).sum::<usize>();

        let (alpha, value, ls_iters) = match &config.strategy {
            StepSizeStrategy::ExactLineSearch(params) => {
                let o = line_search(pool, network, &f, &f_aon, j, params)?;
                (o.step, o.value, o.iterations)
            }
            StepSizeStrategy::Msa => {
                let a = msa_step(j);
                let [v] = evaluate_steps(pool, network, &f, &f_aon, [a])?;
                (a, v, 0)
            }
        };

        for (x, g) in f.iter_mut().zip(f_aon.iter()) {
            *x = blend_point(*x, *g, alpha);
        }
        pool.run_mut(&mut h, |k, hk| hk.blend(&aon[k].path_flows, alpha));

        let rel_change = if potential == 0.0 { 0.0 } else { ((potential - value) / potential).abs() };
        records.push(IterationRecord {
            iteration: j,
            alpha,
            potential: value,
            rel_change,
            ls_iters,
        });
        trace.push(value);
        let stop = converged(potential, value, config.tolerance)?;
        potential = value;
        if stop {
            done = true;
            break;
        }
    }

    let costs = parallel_update_costs(pool, network, &f)?;
    if !done {
        log::warn!(
            "interval {interval}: no convergence after {} iterations",
            config.max_iters
        );
    }
    Ok(FwResult {
        path_flows: h,
        link_flows: f,
        costs,
        iterations: records.len(),
        potential_trace: trace,
        records,
        converged: done,
        unroutable,
        degenerate,
    })
}
