#![no_main]

use std::path::Path;
use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use qdta::demand::bin_rates;
use qdta::io::read_rates;
use qdta::{fixtures, BprParams, Network};

fn network() -> &'static Network {
    static NET: OnceLock<Network> = OnceLock::new();
    NET.get_or_init(|| fixtures::serial_small().network(BprParams::default()).unwrap())
}

fuzz_target!(|data: &[u8]| {
    if let Ok(rates) = read_rates(data, Path::new("rates.csv"), network()) {
        let _ = bin_rates(&rates, 4);
    }
});
