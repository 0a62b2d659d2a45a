#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use qdta::io::read_flows;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_flows(data, Path::new("flows_0.csv")) {
        let lines = data.split(|&b| b == b'\n' || b == b'\r').count();
        assert!(rows.len() <= lines);
    }
});
