//! The interval loop: per-interval equilibrium, re-truncation at converged
//! costs, residual demand, the single-interval static baseline and summary
//! metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use crate::assignment::{frank_wolfe, FwConfig, IterationRecord};
use crate::demand::{horizon_average, merge_residual, partition_demand, DemandMatrix, OdPair};
use crate::error::{Error, Result};
use crate::exec::WorkerPool;
use crate::loading::{truncate_route, PathFlowMap, PathKey};
use crate::network::{CostVector, LinkFlowVector, LinkId, Network};
use crate::router::RoutingIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Qdta,
    Sta,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub interval_minutes: f64,
    pub intervals: usize,
    pub fw: FwConfig,
    pub workers: usize,
    pub mode: Mode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            interval_minutes: 15.0,
            intervals: 4,
            fw: FwConfig::default(),
            workers: 1,
            mode: Mode::Qdta,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval_minutes.is_finite() && self.interval_minutes > 0.0) {
            return Err(Error::config(format!(
                "interval length must be positive, got {}",
                self.interval_minutes
            )));
        }
        if self.intervals < 1 {
            return Err(Error::config("interval count must be >= 1"));
        }
        if self.workers < 1 {
            return Err(Error::config("worker count must be >= 1"));
        }
        self.fw.validate()
    }

    pub fn horizon_minutes(&self) -> f64 {
        self.interval_minutes * self.intervals as f64
    }
}

#[derive(Clone, Debug)]
pub struct IntervalResult {
    pub interval: usize,
    /// Minutes of traffic this result stands for: Δt, or the whole horizon
    /// for the static baseline.
    pub duration_minutes: f64,
    pub link_flows: LinkFlowVector,
    pub link_costs: CostVector,
    /// Path flows re-truncated at the converged costs.
    pub path_flows: PathFlowMap,
    /// Demand carried into the next interval, keyed by (stop node, destination).
    pub residual_out: DemandMatrix,
    pub fw_iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
    pub potential_trace: Vec<f64>,
    pub unroutable: Vec<(OdPair, f64)>,
    pub wall_time: Duration,
}

impl IntervalResult {
    pub fn line_search_iterations(&self) -> usize {
        self.trace.iter().map(|r| r.ls_iters).sum()
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub intervals: Vec<IntervalResult>,
    /// Residual left over after the last interval.
    pub unfinished: DemandMatrix,
}

impl RunResult {
    pub fn total_fw_iterations(&self) -> usize {
        self.intervals.iter().map(|r| r.fw_iterations).sum()
    }
}

/// Re-truncates every path at `costs` and collects what is left of
/// unfinished trips as demand from their stop node to their destination.
/// Work is split by worker, one path map each; the outputs are merged in
/// worker order.
pub fn residual_demand(
    pool: &WorkerPool,
    network: &Network,
    interval_minutes: f64,
    path_flows: &[PathFlowMap],
    costs: &CostVector,
) -> Result<(PathFlowMap, DemandMatrix)> {
    if costs.len() != network.link_count() {
        return Err(Error::structural("cost vector length differs from link count"));
    }
    let parts = pool
        .run(|k| -> Result<(PathFlowMap, Vec<(OdPair, f64)>)> {
            let Some(h) = path_flows.get(k) else {
                return Ok(Default::default());
            };
            let mut kept = PathFlowMap::new(h.interval);
            let mut residual = Vec::new();
            for (key, rate) in h.iter() {
                let t = truncate_route(&key.route, costs, interval_minutes)?;
                let key = PathKey::new(key.route.clone(), t.kept);
                if !key.finished() {
                    let s = key.stop_node(network).expect("non-empty route");
                    let q = key.destination(network).expect("non-empty route");
                    residual.push((OdPair::new(s, q), rate));
                }
                kept.add(key, rate);
            }
            Ok((kept, residual))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let interval = path_flows.first().map_or(0, |h| h.interval);
    let mut merged = PathFlowMap::new(interval);
    let mut residual = DemandMatrix::new();
    for (h, r) in &parts {
        merged.absorb(h);
        for &(pair, rate) in r {
            residual.add(pair, rate)?;
        }
    }
    Ok((merged, residual))
}

/// Runs the interval loop, handing each finished interval to `on_interval`
/// before starting the next one. `demand[i]` is the original demand of
/// interval `i`.
///
/// A failure inside interval `i` is reported as [`Error::Solver`] carrying
/// `i`; intervals already handed out are unaffected.
pub fn run_qdta_with<F>(
    network: &Network,
    demand: &[DemandMatrix],
    config: &ScenarioConfig,
    mut on_interval: F,
) -> Result<DemandMatrix>
where
    F: FnMut(&IntervalResult) -> Result<()>,
{
    config.validate()?;
    if demand.len() != config.intervals {
        return Err(Error::config(format!(
            "{} demand matrices for {} intervals",
            demand.len(),
            config.intervals
        )));
    }
    let pool = WorkerPool::new(config.workers)?;
    let mut index = RoutingIndex::preprocess(network);
    let mut carried = DemandMatrix::new();
    for (i, original) in demand.iter().enumerate() {
        let d = merge_residual(original, &carried);
        let result = solve_interval(&pool, network, &mut index, &d, config, i, config.interval_minutes, true)
            .map_err(|e| solver_error(i, e))?;
        carried = result.residual_out.clone();
        on_interval(&result)?;
    }
    Ok(carried)
}

pub fn run_qdta(network: &Network, demand: &[DemandMatrix], config: &ScenarioConfig) -> Result<RunResult> {
    let mut intervals = Vec::with_capacity(config.intervals);
    let unfinished = run_qdta_with(network, demand, config, |r| {
        intervals.push(r.clone());
        Ok(())
    })?;
    Ok(RunResult { intervals, unfinished })
}

/// One equilibrium over the whole horizon with the horizon-average demand
/// and no truncation.
pub fn run_sta(network: &Network, demand: &[DemandMatrix], config: &ScenarioConfig) -> Result<IntervalResult> {
    config.validate()?;
    let pool = WorkerPool::new(config.workers)?;
    let mut index = RoutingIndex::preprocess(network);
    let d = horizon_average(demand);
    let horizon = config.horizon_minutes();
    let mut r = solve_interval(&pool, network, &mut index, &d, config, 0, f64::INFINITY, false)
        .map_err(|e| solver_error(0, e))?;
    r.duration_minutes = horizon;
    Ok(r)
}

/// Dispatches on `config.mode`; static runs come back as a single interval.
pub fn run(network: &Network, demand: &[DemandMatrix], config: &ScenarioConfig) -> Result<RunResult> {
    match config.mode {
        Mode::Qdta => run_qdta(network, demand, config),
        Mode::Sta => Ok(RunResult {
            intervals: vec![run_sta(network, demand, config)?],
            unfinished: DemandMatrix::new(),
        }),
    }
}

fn solver_error(interval: usize, e: Error) -> Error {
    match e {
        Error::Solver { .. } | Error::Config(_) => e,
        other => Error::Solver {
            interval,
            message: other.to_string(),
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_interval(
    pool: &WorkerPool,
    network: &Network,
    index: &mut RoutingIndex,
    demand: &DemandMatrix,
    config: &ScenarioConfig,
    interval: usize,
    truncate_at: f64,
    carry_residual: bool,
) -> Result<IntervalResult> {
    let started = Instant::now();
    let partitions = partition_demand(demand, pool.workers())?;
    let fw = frank_wolfe(pool, network, index, truncate_at, &partitions, &config.fw, interval)?;
    let (path_flows, residual) = residual_demand(pool, network, truncate_at, &fw.path_flows, &fw.costs)?;
    if fw.degenerate > 0 {
        log::warn!(
            "interval {interval}: {} loadings crossed a link longer than the interval",
            fw.degenerate
        );
    }
    log::info!(
        "interval {interval}: {} iterations, potential {:.6}, {} residual pairs",
        fw.iterations,
        fw.potential_trace.last().copied().unwrap_or(0.0),
        residual.len()
    );
    Ok(IntervalResult {
        interval,
        duration_minutes: config.interval_minutes,
        link_flows: fw.link_flows,
        link_costs: fw.costs,
        path_flows,
        residual_out: if carry_residual { residual } else { DemandMatrix::new() },
        fw_iterations: fw.iterations,
        converged: fw.converged,
        trace: fw.records,
        potential_trace: fw.potential_trace,
        unroutable: fw.unroutable,
        wall_time: started.elapsed(),
    })
}

/// Aggregates for one functional class, or for the whole network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassMetrics {
    pub class: Option<u8>,
    pub vmt: f64,
    pub vhd: f64,
    pub avg_voc: f64,
    /// Link-intervals with positive flow, the sample behind `avg_voc`.
    pub loaded_samples: usize,
    pub congested_length: f64,
    pub total_length: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub by_class: Vec<ClassMetrics>,
    pub total: ClassMetrics,
    /// Links at or above the threshold, per interval.
    pub congested: Vec<Vec<LinkId>>,
    pub threshold: f64,
}

/// VMT, VHD, average VOC over loaded links and congested length, per
/// functional class and in total. A link counts toward congested length once
/// if it reaches the threshold in any interval.
pub fn compute_metrics(results: &[IntervalResult], network: &Network, threshold: f64) -> Result<MetricsReport> {
    #[derive(Default)]
    struct Acc {
        vmt: f64,
        vhd: f64,
        voc_sum: f64,
        samples: usize,
    }
    let n = network.link_count();
    let mut acc: BTreeMap<u8, Acc> = BTreeMap::new();
    let mut congested = Vec::with_capacity(results.len());
    let mut ever = vec![false; n];
    for r in results {
        if r.link_flows.len() != n || r.link_costs.len() != n {
            return Err(Error::structural(format!(
                "interval {} results do not match the network",
                r.interval
            )));
        }
        let hours = r.duration_minutes / 60.0;
        let mut hot = Vec::new();
        for link in network.links() {
            let a = link.id.index();
            let f = r.link_flows[a];
            let c = r.link_costs[a];
            let e = acc.entry(link.functional_class).or_default();
            e.vmt += f * link.length * hours;
            e.vhd += f * (c - link.free_flow_time) / 60.0 * hours;
            let voc = f / link.capacity;
            if f > 0.0 {
                e.voc_sum += voc;
                e.samples += 1;
            }
            if voc >= threshold {
                hot.push(link.id);
                ever[a] = true;
            }
        }
        congested.push(hot);
    }

    let mut rows: BTreeMap<u8, ClassMetrics> = BTreeMap::new();
    for link in network.links() {
        let row = rows.entry(link.functional_class).or_insert_with(|| ClassMetrics {
            class: Some(link.functional_class),
            ..Default::default()
        });
        row.total_length += link.length;
        if ever[link.id.index()] {
            row.congested_length += link.length;
        }
    }
    let mut total = ClassMetrics::default();
    let (mut voc_sum, mut samples) = (0.0, 0);
    for (class, row) in rows.iter_mut() {
        if let Some(a) = acc.get(class) {
            row.vmt = a.vmt;
            row.vhd = a.vhd;
            row.loaded_samples = a.samples;
            row.avg_voc = if a.samples > 0 { a.voc_sum / a.samples as f64 } else { 0.0 };
            voc_sum += a.voc_sum;
            samples += a.samples;
        }
        total.vmt += row.vmt;
        total.vhd += row.vhd;
        total.congested_length += row.congested_length;
        total.total_length += row.total_length;
    }
    total.loaded_samples = samples;
    total.avg_voc = if samples > 0 { voc_sum / samples as f64 } else { 0.0 };
    Ok(MetricsReport {
        by_class: rows.into_values().collect(),
        total,
        congested,
        threshold,
    })
}

/// Vehicle-hours: Σ f·c·(duration/60)/60 over links and intervals.
pub fn system_travel_time(results: &[IntervalResult]) -> f64 {
    results
        .iter()
        .map(|r| {
            let hours = r.duration_minutes / 60.0;
            r.link_flows.iter().zip(r.link_costs.iter()).map(|(f, c)| f * c).sum::<f64>() * hours / 60.0
        })
        .sum()
}

/// Σ f·c/60 over links and intervals, ignoring interval length.
pub fn system_travel_time_per_term(results: &[IntervalResult]) -> f64 {
    results
        .iter()
        .flat_map(|r| r.link_flows.iter().zip(r.link_costs.iter()).map(|(f, c)| f * c / 60.0))
        .sum()
}

/// Link ids at or above `threshold` in each interval, as sets.
pub fn congested_sets(results: &[IntervalResult], network: &Network, threshold: f64) -> Vec<BTreeSet<LinkId>> {
    results
        .iter()
        .map(|r| {
            network
                .links()
                .iter()
                .filter(|l| r.link_flows[l.id.index()] / l.capacity >= threshold)
                .map(|l| l.id)
                .collect()
        })
        .collect()
}
