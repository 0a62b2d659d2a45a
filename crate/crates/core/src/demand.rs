//! Origin-destination demand: binning trips into intervals, the residual
//! ledger, and partitioning across workers.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::NodeId;

/// An origin-destination pair.
///
/// Pairs order by destination first so that a sorted demand matrix keeps all
/// entries sharing a destination adjacent; routing batches on that.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OdPair {
    pub origin: NodeId,
    pub destination: NodeId,
}

impl OdPair {
    pub fn new(origin: NodeId, destination: NodeId) -> Self {
        OdPair { origin, destination }
    }
}

impl Ord for OdPair {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.destination, self.origin).cmp(&(other.destination, other.origin))
    }
}

impl PartialOrd for OdPair {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripRecord {
    pub origin: NodeId,
    pub destination: NodeId,
    /// Minutes since the start of the horizon.
    pub departure: f64,
    /// Vehicles.
    pub count: f64,
}

/// Demand given directly as a rate for one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRecord {
    pub origin: NodeId,
    pub destination: NodeId,
    pub interval: usize,
    /// vehicles/hour
    pub rate: f64,
}

/// Sparse OD flow rates (vehicles/hour) for one interval. Zero entries are
/// never stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemandMatrix {
    entries: BTreeMap<OdPair, f64>,
}

impl DemandMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `rate` to the entry for `pair`. Nonpositive or nonfinite rates
    /// are rejected.
    pub fn add(&mut self, pair: OdPair, rate: f64) -> Result<()> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::domain(format!("demand rate must be positive, got {rate}")));
        }
        *self.entries.entry(pair).or_insert(0.0) += rate;
        Ok(())
    }

    pub fn get(&self, pair: OdPair) -> Option<f64> {
        self.entries.get(&pair).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in canonical (destination, origin) order.
    pub fn iter(&self) -> impl Iterator<Item = (OdPair, f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn total_rate(&self) -> f64 {
        self.entries.values().fold(0.0, |a, b| a + b)
    }
}

impl FromIterator<(OdPair, f64)> for DemandMatrix {
    /// Collects entries, summing duplicates and skipping nonpositive rates.
    fn from_iter<I: IntoIterator<Item = (OdPair, f64)>>(iter: I) -> Self {
        let mut m = DemandMatrix::new();
        for (k, v) in iter {
            if v > 0.0 && v.is_finite() {
                *m.entries.entry(k).or_insert(0.0) += v;
            }
        }
        m
    }
}

/// One worker's share of a demand matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandPartition {
    pub owner: usize,
    pub entries: Vec<(OdPair, f64)>,
}

fn check_interval_config(interval_minutes: f64, intervals: usize) -> Result<()> {
    if !(interval_minutes.is_finite() && interval_minutes > 0.0) {
        return Err(Error::config(format!(
            "interval length must be positive, got {interval_minutes}"
        )));
    }
    if intervals == 0 {
        return Err(Error::config("interval count must be >= 1"));
    }
    Ok(())
}

/// Bins trips by departure time into `intervals` matrices of flow rates. A
/// trip of `count` vehicles contributes `count / (Δt / 60)` vehicles/hour.
pub fn bin_demand(trips: &[TripRecord], interval_minutes: f64, intervals: usize) -> Result<Vec<DemandMatrix>> {
    check_interval_config(interval_minutes, intervals)?;
    let horizon = interval_minutes * intervals as f64;
    let hours = interval_minutes / 60.0;
    let mut out = vec![DemandMatrix::new(); intervals];
    for (index, t) in trips.iter().enumerate() {
        let reject = |message: String| Error::Record { index, message };
        if t.origin == t.destination {
            return Err(reject(format!("origin equals destination ({})", t.origin)));
        }
        if !(t.departure >= 0.0 && t.departure < horizon) {
            return Err(reject(format!(
                "departure {} outside [0, {horizon})",
                t.departure
            )));
        }
        if !(t.count.is_finite() && t.count >= 0.0) {
            return Err(reject(format!("count must be nonnegative, got {}", t.count)));
        }
        if t.count == 0.0 {
            continue;
        }
        let i = ((t.departure / interval_minutes).floor() as usize).min(intervals - 1);
        out[i].add(OdPair::new(t.origin, t.destination), t.count / hours)?;
    }
    Ok(out)
}

/// Builds interval matrices from records that already carry a rate.
pub fn bin_rates(records: &[RateRecord], intervals: usize) -> Result<Vec<DemandMatrix>> {
    if intervals == 0 {
        return Err(Error::config("interval count must be >= 1"));
    }
    let mut out = vec![DemandMatrix::new(); intervals];
    for (index, r) in records.iter().enumerate() {
        let reject = |message: String| Error::Record { index, message };
        if r.origin == r.destination {
            return Err(reject(format!("origin equals destination ({})", r.origin)));
        }
        if r.interval >= intervals {
            return Err(reject(format!("interval {} outside [0, {intervals})", r.interval)));
        }
        if !(r.rate.is_finite() && r.rate >= 0.0) {
            return Err(reject(format!("rate must be nonnegative, got {}", r.rate)));
        }
        if r.rate == 0.0 {
            continue;
        }
        out[r.interval].add(OdPair::new(r.origin, r.destination), r.rate)?;
    }
    Ok(out)
}

/// Pointwise sum of original and residual demand.
pub fn merge_residual(original: &DemandMatrix, residual: &DemandMatrix) -> DemandMatrix {
    let mut out = original.clone();
    for (k, v) in residual.iter() {
        *out.entries.entry(k).or_insert(0.0) += v;
    }
    out
}

/// Spreads per-interval demand evenly over the whole horizon: the single
/// matrix whose rate, held for all intervals, moves the same vehicles.
pub fn horizon_average(per_interval: &[DemandMatrix]) -> DemandMatrix {
    let n = per_interval.len().max(1) as f64;
    let mut sums: BTreeMap<OdPair, f64> = BTreeMap::new();
    for m in per_interval {
        for (k, v) in m.iter() {
            *sums.entry(k).or_insert(0.0) += v;
        }
    }
    sums.into_iter().map(|(k, v)| (k, v / n)).collect()
}

/// Splits `demand` into `workers` contiguous runs of its canonical order.
/// Run lengths differ by at most one; the first `len % workers` runs are the
/// longer ones.
pub fn partition_demand(demand: &DemandMatrix, workers: usize) -> Result<Vec<DemandPartition>> {
    if workers < 1 {
        return Err(Error::config("worker count must be >= 1"));
    }
    let n = demand.len();
    let base = n / workers;
    let extra = n % workers;
    let mut it = demand.iter();
    Ok((0..workers)
        .map(|owner| {
            let size = base + usize::from(owner < extra);
            DemandPartition {
                owner,
                entries: it.by_ref().take(size).collect(),
            }
        })
        .collect())
}
