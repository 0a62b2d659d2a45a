//! CSV input and output, and the flat `key = value` scenario file.
//!
//! Readers take any byte source plus a name used in diagnostics; every
//! rejected row is reported with its line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::demand::{DemandMatrix, RateRecord, TripRecord};
use crate::engine::{IntervalResult, MetricsReport, Mode};
use crate::error::{Error, Result};
use crate::network::{BprParams, LinkSpec, Network, NodeId};

fn parse_error(file: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_error(file: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(i) => format!("column {}: {}", i + 1, err.kind()),
            None => err.kind().to_string(),
        },
        csv::ErrorKind::Io(io) => return Error::Io(std::io::Error::new(io.kind(), io.to_string())),
        _ => e.to_string(),
    };
    parse_error(file, line, message)
}

/// Reads rows of `T`, handing each to `f` with its line number.
fn for_each_row<R, T, F>(reader: R, file: &Path, mut f: F) -> Result<()>
where
    R: Read,
    T: for<'de> Deserialize<'de>,
    F: FnMut(T, u64) -> Result<()>,
{
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(file, e))?.clone();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => return Ok(()),
            Ok(true) => {}
            Err(e) => return Err(csv_error(file, e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let row: T = record.deserialize(Some(&headers)).map_err(|e| match csv_error(file, e) {
            Error::Parse { message, .. } => parse_error(file, line, message),
            other => other,
        })?;
        f(row, line)?;
    }
}

#[derive(Deserialize)]
struct NetworkRow {
    link_id: u64,
    tail: u64,
    head: u64,
    capacity_vph: f64,
    free_flow_min: f64,
    length_mi: f64,
    #[serde(default)]
    fclass: Option<u8>,
}

/// Reads `link_id,tail,head,capacity_vph,free_flow_min,length_mi,fclass`.
/// A blank or missing `fclass` means class 0.
pub fn read_network<R: Read>(reader: R, file: &Path, bpr: BprParams) -> Result<Network> {
    let mut specs = Vec::new();
    for_each_row(reader, file, |row: NetworkRow, _| {
        specs.push(LinkSpec {
            label: row.link_id,
            tail: row.tail,
            head: row.head,
            capacity: row.capacity_vph,
            free_flow_time: row.free_flow_min,
            length: row.length_mi,
            functional_class: row.fclass.unwrap_or(0),
        });
        Ok(())
    })?;
    if specs.is_empty() {
        return Err(parse_error(file, 1, "network has no links"));
    }
    let net = Network::from_links(specs, bpr).map_err(|e| parse_error(file, 0, e.to_string()))?;
    for w in net.warnings() {
        log::warn!("{}: {w}", file.display());
    }
    Ok(net)
}

fn node(network: &Network, file: &Path, line: u64, label: u64) -> Result<NodeId> {
    network
        .node(label)
        .ok_or_else(|| parse_error(file, line, format!("unknown node {label}")))
}

fn check_pair(file: &Path, line: u64, o: NodeId, d: NodeId) -> Result<()> {
    if o == d {
        return Err(parse_error(file, line, "origin equals destination"));
    }
    Ok(())
}

#[derive(Deserialize)]
struct TripRow {
    origin: u64,
    destination: u64,
    departure_min: f64,
    count: f64,
}

/// Reads `origin,destination,departure_min,count`.
pub fn read_trips<R: Read>(reader: R, file: &Path, network: &Network) -> Result<Vec<TripRecord>> {
    let mut out = Vec::new();
    for_each_row(reader, file, |row: TripRow, line| {
        let origin = node(network, file, line, row.origin)?;
        let destination = node(network, file, line, row.destination)?;
        check_pair(file, line, origin, destination)?;
        if !(row.departure_min.is_finite() && row.departure_min >= 0.0) {
            return Err(parse_error(file, line, format!("bad departure time {}", row.departure_min)));
        }
        if !(row.count.is_finite() && row.count >= 0.0) {
            return Err(parse_error(file, line, format!("bad trip count {}", row.count)));
        }
        out.push(TripRecord {
            origin,
            destination,
            departure: row.departure_min,
            count: row.count,
        });
        Ok(())
    })?;
    Ok(out)
}

#[derive(Deserialize)]
struct RateRow {
    origin: u64,
    destination: u64,
    interval: usize,
    rate_vph: f64,
}

/// Reads `origin,destination,interval,rate_vph`.
pub fn read_rates<R: Read>(reader: R, file: &Path, network: &Network) -> Result<Vec<RateRecord>> {
    let mut out = Vec::new();
    for_each_row(reader, file, |row: RateRow, line| {
        let origin = node(network, file, line, row.origin)?;
        let destination = node(network, file, line, row.destination)?;
        check_pair(file, line, origin, destination)?;
        if !(row.rate_vph.is_finite() && row.rate_vph >= 0.0) {
            return Err(parse_error(file, line, format!("bad rate {}", row.rate_vph)));
        }
        out.push(RateRecord {
            origin,
            destination,
            interval: row.interval,
            rate: row.rate_vph,
        });
        Ok(())
    })?;
    Ok(out)
}

/// One row of a `flows_<i>.csv` file.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct FlowRow {
    pub link_id: u64,
    pub flow_vph: f64,
    pub cost_min: f64,
    pub voc: f64,
}

pub fn read_flows<R: Read>(reader: R, file: &Path) -> Result<Vec<FlowRow>> {
    let mut out = Vec::new();
    for_each_row(reader, file, |row: FlowRow, _| {
        out.push(row);
        Ok(())
    })?;
    Ok(out)
}

/// `x` with `digits` significant digits, in plain decimal notation.
pub fn significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn out_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// `link_id,flow_vph,cost_min,voc`. Flows are written at full round-trip
/// precision, costs and ratios at nine significant digits.
pub fn write_flows<W: Write>(writer: W, network: &Network, result: &IntervalResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["link_id", "flow_vph", "cost_min", "voc"]).map_err(out_err)?;
    for link in network.links() {
        let f = result.link_flows[link.id.index()];
        let c = result.link_costs[link.id.index()];
        w.write_record([
            link.label.to_string(),
            format!("{f}"),
            significant(c, 9),
            significant(f / link.capacity, 9),
        ])
        .map_err(out_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `origin,destination,rate_vph`, using node labels.
pub fn write_demand<W: Write>(writer: W, network: &Network, demand: &DemandMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["origin", "destination", "rate_vph"]).map_err(out_err)?;
    for (pair, rate) in demand.iter() {
        w.write_record([
            network.node_label(pair.origin).to_string(),
            network.node_label(pair.destination).to_string(),
            format!("{rate}"),
        ])
        .map_err(out_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics<W: Write>(writer: W, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "fclass",
        "vmt",
        "vhd",
        "avg_voc",
        "congested_length_mi",
        "total_length_mi",
        "loaded_link_intervals",
    ])
    .map_err(out_err)?;
    for row in report.by_class.iter().chain(std::iter::once(&report.total)) {
        w.write_record([
            row.class.map_or_else(|| "total".to_string(), |c| c.to_string()),
            significant(row.vmt, 9),
            significant(row.vhd, 9),
            significant(row.avg_voc, 9),
            significant(row.congested_length, 9),
            significant(row.total_length, 9),
            row.loaded_samples.to_string(),
        ])
        .map_err(out_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `interval,iteration,alpha,potential,rel_change,ls_iters`.
pub fn write_trace<W: Write>(writer: W, results: &[IntervalResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["interval", "iteration", "alpha", "potential", "rel_change", "ls_iters"])
        .map_err(out_err)?;
    for r in results {
        for t in &r.trace {
            w.write_record([
                r.interval.to_string(),
                t.iteration.to_string(),
                format!("{}", t.alpha),
                format!("{}", t.potential),
                format!("{:e}", t.rel_change),
                t.ls_iters.to_string(),
            ])
            .map_err(out_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DemandKind {
    #[default]
    Trips,
    Rate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepSize {
    LineSearch,
    Msa,
}

/// Settings read from a scenario file. Every field is optional; unset fields
/// fall back to command-line flags or defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioFile {
    pub network: Option<PathBuf>,
    pub demand: Option<PathBuf>,
    pub demand_kind: Option<DemandKind>,
    pub mode: Option<Mode>,
    pub interval_min: Option<f64>,
    pub intervals: Option<usize>,
    pub step_size: Option<StepSize>,
    pub threads: Option<usize>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub out: Option<PathBuf>,
    pub bpr_alpha: Option<f64>,
    pub bpr_beta: Option<f64>,
    pub congestion_threshold: Option<f64>,
}

pub fn parse_mode(s: &str) -> Option<Mode> {
    match s {
        "qdta" => Some(Mode::Qdta),
        "sta" => Some(Mode::Sta),
        _ => None,
    }
}

pub fn parse_step_size(s: &str) -> Option<StepSize> {
    match s {
        "line-search" => Some(StepSize::LineSearch),
        "msa" => Some(StepSize::Msa),
        _ => None,
    }
}

pub fn parse_demand_kind(s: &str) -> Option<DemandKind> {
    match s {
        "trips" => Some(DemandKind::Trips),
        "rate" => Some(DemandKind::Rate),
        _ => None,
    }
}

/// Parses `key = value` lines. `#` starts a comment; keys may use `-` or
/// `_`; unknown and repeated keys are errors.
pub fn parse_scenario_file(text: &str, file: &Path) -> Result<ScenarioFile> {
    fn num<T: std::str::FromStr>(file: &Path, line: u64, key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| parse_error(file, line, format!("{key}: cannot parse {v:?}")))
    }
    fn pick<T>(file: &Path, line: u64, key: &str, v: &str, r: Option<T>) -> Result<T> {
        r.ok_or_else(|| parse_error(file, line, format!("{key}: unknown value {v:?}")))
    }

    let mut out = ScenarioFile::default();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(parse_error(file, line, "expected key = value"));
        };
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        if let Some(prev) = seen.insert(key.clone(), line) {
            return Err(parse_error(file, line, format!("{key} already set on line {prev}")));
        }
        match key.as_str() {
            "network" => out.network = Some(v.into()),
            "demand" => out.demand = Some(v.into()),
            "out" => out.out = Some(v.into()),
            "demand_kind" => out.demand_kind = Some(pick(file, line, &key, v, parse_demand_kind(v))?),
            "mode" => out.mode = Some(pick(file, line, &key, v, parse_mode(v))?),
            "step_size" => out.step_size = Some(pick(file, line, &key, v, parse_step_size(v))?),
            "interval_min" => out.interval_min = Some(num(file, line, &key, v)?),
            "intervals" => out.intervals = Some(num(file, line, &key, v)?),
            "threads" => out.threads = Some(num(file, line, &key, v)?),
            "tol" => out.tol = Some(num(file, line, &key, v)?),
            "max_iters" => out.max_iters = Some(num(file, line, &key, v)?),
            "bpr_alpha" => out.bpr_alpha = Some(num(file, line, &key, v)?),
            "bpr_beta" => out.bpr_beta = Some(num(file, line, &key, v)?),
            "congestion_threshold" => out.congestion_threshold = Some(num(file, line, &key, v)?),
            _ => return Err(parse_error(file, line, format!("unknown key {key:?}"))),
        }
    }
    Ok(out)
}

/// Renders a scenario file that [`parse_scenario_file`] reads back unchanged.
pub fn render_scenario_file(s: &ScenarioFile) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            let _ = writeln!(out, "{k} = {v}");
        }
    };
    put("network", s.network.as_ref().map(|p| p.display().to_string()));
    put("demand", s.demand.as_ref().map(|p| p.display().to_string()));
    put(
        "demand_kind",
        s.demand_kind.map(|k| match k {
            DemandKind::Trips => "trips".into(),
            DemandKind::Rate => "rate".into(),
        }),
    );
    put(
        "mode",
        s.mode.map(|m| match m {
            Mode::Qdta => "qdta".into(),
            Mode::Sta => "sta".into(),
        }),
    );
    put("interval_min", s.interval_min.map(|v| v.to_string()));
    put("intervals", s.intervals.map(|v| v.to_string()));
    put(
        "step_size",
        s.step_size.map(|k| match k {
            StepSize::LineSearch => "line-search".into(),
            StepSize::Msa => "msa".into(),
        }),
    );
    put("threads", s.threads.map(|v| v.to_string()));
    put("tol", s.tol.map(|v| v.to_string()));
    put("max_iters", s.max_iters.map(|v| v.to_string()));
    put("out", s.out.as_ref().map(|p| p.display().to_string()));
    put("bpr_alpha", s.bpr_alpha.map(|v| v.to_string()));
    put("bpr_beta", s.bpr_beta.map(|v| v.to_string()));
    put("congestion_threshold", s.congestion_threshold.map(|v| v.to_string()));
    out
}
