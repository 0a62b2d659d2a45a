#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use qdta::io::read_network;
use qdta::BprParams;

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = read_network(data, Path::new("network.csv"), BprParams::default()) {
        for link in net.links() {
            assert!(net.out_links(link.tail).contains(&link.id));
        }
    }
});
