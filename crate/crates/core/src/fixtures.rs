//! Deterministic synthetic scenarios: the five-node serial example, grids
//! with zone-to-zone demand, and strongly connected random graphs.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demand::{bin_demand, DemandMatrix, TripRecord};
use crate::error::{Error, Result};
use crate::network::{BprParams, LinkSpec, Network};

/// A trip with node labels rather than dense ids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripSpec {
    pub origin: u64,
    pub destination: u64,
    pub departure: f64,
    pub count: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub links: Vec<LinkSpec>,
    pub trips: Vec<TripSpec>,
    pub interval_minutes: f64,
    pub intervals: usize,
}

impl Fixture {
    pub fn network(&self, bpr: BprParams) -> Result<Network> {
        Network::from_links(self.links.clone(), bpr)
    }

    pub fn trip_records(&self, network: &Network) -> Result<Vec<TripRecord>> {
        self.trips
            .iter()
            .map(|t| {
                let node = |label| {
                    network
                        .node(label)
                        .ok_or_else(|| Error::structural(format!("trip uses unknown node {label}")))
                };
                Ok(TripRecord {
                    origin: node(t.origin)?,
                    destination: node(t.destination)?,
                    departure: t.departure,
                    count: t.count,
                })
            })
            .collect()
    }

    /// Trips binned into per-interval rate matrices.
    pub fn demand(&self, network: &Network) -> Result<Vec<DemandMatrix>> {
        bin_demand(&self.trip_records(network)?, self.interval_minutes, self.intervals)
    }

    pub fn write_network_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "link_id,tail,head,capacity_vph,free_flow_min,length_mi,fclass")?;
        for l in &self.links {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                l.label, l.tail, l.head, l.capacity, l.free_flow_time, l.length, l.functional_class
            )?;
        }
        Ok(())
    }

    pub fn write_trips_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "origin,destination,departure_min,count")?;
        for t in &self.trips {
            writeln!(w, "{},{},{},{}", t.origin, t.destination, t.departure, t.count)?;
        }
        Ok(())
    }

    /// The same demand as per-interval rates.
    pub fn write_rates_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let net = self.network(BprParams::default())?;
        writeln!(w, "origin,destination,interval,rate_vph")?;
        for (i, m) in self.demand(&net)?.iter().enumerate() {
            for (pair, rate) in m.iter() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    net.node_label(pair.origin),
                    net.node_label(pair.destination),
                    i,
                    rate
                )?;
            }
        }
        Ok(())
    }
}

fn link(label: u64, tail: u64, head: u64, capacity: f64, t0: f64, length: f64, class: u8) -> LinkSpec {
    LinkSpec {
        label,
        tail,
        head,
        capacity,
        free_flow_time: t0,
        length,
        functional_class: class,
    }
}

/// Four links in series, nodes 1..=5, links labelled by their end nodes
/// (12, 23, 34, 45). 175 v/h from 1 to 4 in the first 15-minute interval
/// and 50 v/h from 3 to 5 in the second. Lengths assume 30 mph.
pub fn serial_small() -> Fixture {
    let spec = [(1, 2, 200.0, 10.0), (2, 3, 150.0, 5.0), (3, 4, 200.0, 10.0), (4, 5, 200.0, 10.0)];
    let links = spec
        .iter()
        .map(|&(t, h, cap, t0)| link(t * 10 + h, t, h, cap, t0, t0 / 2.0, 0))
        .collect();
    Fixture {
        links,
        trips: vec![
            TripSpec { origin: 1, destination: 4, departure: 0.0, count: 43.75 },
            TripSpec { origin: 3, destination: 5, departure: 15.0, count: 12.5 },
        ],
        interval_minutes: 15.0,
        intervals: 4,
    }
}

/// `links` links in series with random capacities and times, and trips
/// between random ordered node pairs.
pub fn serial(links: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = (0..links as u64)
        .map(|i| {
            let t0 = rng.gen_range(2..=12) as f64;
            link(i + 1, i, i + 1, rng.gen_range(1..=4) as f64 * 100.0, t0, t0 / 2.0, 0)
        })
        .collect();
    let (intervals, interval_minutes) = (4, 15.0);
    let trips = (0..links * 4)
        .map(|_| {
            let a = rng.gen_range(0..links as u64);
            let b = rng.gen_range(a + 1..=links as u64);
            TripSpec {
                origin: a,
                destination: b,
                departure: rng.gen_range(0..intervals * 15) as f64,
                count: rng.gen_range(1..=20) as f64,
            }
        })
        .collect();
    Fixture { links: specs, trips, interval_minutes, intervals }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Nodes that send and receive trips.
    pub zones: usize,
    /// Single-vehicle trip records.
    pub trips: usize,
    pub intervals: usize,
    pub interval_minutes: f64,
    /// Longest trip in blocks (Manhattan distance); `None` for any zone pair.
    pub max_trip_blocks: Option<usize>,
    pub seed: u64,
}

/// Bidirectional grid. Every fourth row and column is an arterial (class 2,
/// faster, higher capacity); the rest are local streets (class 4). Nodes are
/// labelled `r * cols + c`. Departures peak mid-horizon.
pub fn grid(spec: &GridSpec) -> Fixture {
    let GridSpec { rows, cols, zones, trips, intervals, interval_minutes, max_trip_blocks, seed } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = |r: usize, c: usize| (r * cols + c) as u64;
    let mut links = Vec::new();
    let mut push = |rng: &mut ChaCha8Rng, a: u64, b: u64, arterial: bool| {
        let (cap, speed, class) = if arterial { (1200.0, 35.0, 2) } else { (600.0, 25.0, 4) };
        let length = rng.gen_range(20..=40) as f64 / 100.0;
        let t0 = length / speed * 60.0;
        for (t, h) in [(a, b), (b, a)] {
            let label = links.len() as u64 + 1;
            links.push(link(label, t, h, cap, t0, length, class));
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                push(&mut rng, id(r, c), id(r, c + 1), r % 4 == 0);
            }
            if r + 1 < rows {
                push(&mut rng, id(r, c), id(r + 1, c), c % 4 == 0);
            }
        }
    }
    let mut nodes: Vec<u64> = (0..(rows * cols) as u64).collect();
    nodes.shuffle(&mut rng);
    let zones = &nodes[..zones.clamp(2, rows * cols)];
    // for each zone, the zones it may send trips to
    let reach: Vec<Vec<u64>> = match max_trip_blocks {
        None => Vec::new(),
        Some(r) => {
            let blocks = |a: u64, b: u64| {
                let (a, b) = (a as usize, b as usize);
                (a / cols).abs_diff(b / cols) + (a % cols).abs_diff(b % cols)
            };
            zones
                .iter()
                .map(|&o| zones.iter().copied().filter(|&d| d != o && blocks(o, d) <= r).collect())
                .collect()
        }
    };
    let senders: Vec<usize> = (0..zones.len())
        .filter(|&i| reach.is_empty() || !reach[i].is_empty())
        .collect();
    let horizon = intervals as f64 * interval_minutes;
    let trips = (0..trips)
        .map(|_| {
            let (o, d) = if reach.is_empty() {
                let o = *zones.choose(&mut rng).unwrap();
                let mut d = *zones.choose(&mut rng).unwrap();
                while d == o {
                    d = *zones.choose(&mut rng).unwrap();
                }
                (o, d)
            } else {
                let i = *senders.choose(&mut rng).expect("some zone pair within reach");
                (zones[i], *reach[i].choose(&mut rng).unwrap())
            };
            let u: f64 = rng.gen::<f64>() + rng.gen::<f64>();
            let departure = ((u / 2.0 * horizon * 10.0).floor() / 10.0).min(horizon - 0.1);
            TripSpec { origin: o, destination: d, departure, count: 1.0 }
        })
        .collect();
    Fixture { links, trips, interval_minutes, intervals }
}

/// `nodes` nodes on a ring (so every node reaches every other) plus
/// `2 * nodes` random chords.
pub fn random(nodes: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = nodes.max(2) as u64;
    let mut links = Vec::new();
    for i in 0..n {
        let t0 = rng.gen_range(1..=10) as f64;
        links.push(link(links.len() as u64 + 1, i, (i + 1) % n, 400.0, t0, t0 / 2.0, 3));
    }
    for _ in 0..2 * n {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n);
        while b == a {
            b = rng.gen_range(0..n);
        }
        let t0 = rng.gen_range(1..=10) as f64;
        let cap = rng.gen_range(2..=10) as f64 * 100.0;
        links.push(link(links.len() as u64 + 1, a, b, cap, t0, t0 / 2.0, rng.gen_range(1..=5)));
    }
    let (intervals, interval_minutes) = (4, 15.0);
    let trips = (0..4 * n)
        .map(|_| {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n);
            while b == a {
                b = rng.gen_range(0..n);
            }
            TripSpec {
                origin: a,
                destination: b,
                departure: rng.gen_range(0..60) as f64,
                count: rng.gen_range(1..=15) as f64,
            }
        })
        .collect();
    Fixture { links, trips, interval_minutes, intervals }
}

/// The bundled congested grid: 12 x 12, 12 zones, 4 x 15 minutes, with
/// links over capacity in the two middle intervals.
pub fn congested_grid() -> Fixture {
    grid(&GridSpec {
        rows: 12,
        cols: 12,
        zones: 12,
        trips: 8000,
        intervals: 4,
        interval_minutes: 15.0,
        max_trip_blocks: None,
        seed: 1,
    })
}

/// About 100k links and 500k local trips (at most 30 blocks) over 8
/// intervals.
pub fn scaling_scenario() -> Fixture {
    grid(&GridSpec {
        rows: 160,
        cols: 160,
        zones: 400,
        trips: 500_000,
        intervals: 8,
        interval_minutes: 15.0,
        max_trip_blocks: Some(30),
        seed: 11,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    Serial,
    Grid,
    Random,
}

impl std::str::FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "serial" => Ok(FixtureKind::Serial),
            "grid" => Ok(FixtureKind::Grid),
            "random" => Ok(FixtureKind::Random),
            _ => Err(Error::config(format!("unknown fixture kind {s:?}"))),
        }
    }
}

/// Builds a fixture from a kind and size string: `small` or a link count for
/// `serial`, `RxC` or `N` (square) for `grid`, a node count for `random`.
pub fn generate(kind: FixtureKind, size: &str, seed: u64) -> Result<Fixture> {
    let bad = || Error::config(format!("bad size {size:?} for {kind:?} fixture"));
    let count = |s: &str| s.trim().parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(bad);
    match kind {
        FixtureKind::Serial if size == "small" => Ok(serial_small()),
        FixtureKind::Serial => Ok(serial(count(size)?, seed)),
        FixtureKind::Grid => {
            let (rows, cols) = match size.split_once(['x', 'X']) {
                Some((r, c)) => (count(r)?, count(c)?),
                None => {
                    let n = count(size)?;
                    (n, n)
                }
            };
            if rows * cols < 2 {
                return Err(bad());
            }
            let nodes = rows * cols;
            Ok(grid(&GridSpec {
                rows,
                cols,
                zones: (nodes / 10).clamp(2, 100),
                trips: nodes * 2,
                intervals: 4,
                interval_minutes: 15.0,
                max_trip_blocks: None,
                seed,
            }))
        }
        FixtureKind::Random => {
            let n = count(size)?;
            if n < 2 {
                return Err(bad());
            }
            Ok(random(n, seed))
        }
    }
}
