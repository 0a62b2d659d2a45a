#![no_main]

use std::path::Path;
use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use qdta::demand::bin_demand;
use qdta::io::read_trips;
use qdta::{fixtures, BprParams, Network};

fn network() -> &'static Network {
    static NET: OnceLock<Network> = OnceLock::new();
    NET.get_or_init(|| fixtures::serial_small().network(BprParams::default()).unwrap())
}

fuzz_target!(|data: &[u8]| {
    if let Ok(trips) = read_trips(data, Path::new("trips.csv"), network()) {
        // binning either succeeds or reports the offending trip
        let _ = bin_demand(&trips, 15.0, 4);
    }
});
