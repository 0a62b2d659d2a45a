#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use qdta::io::{parse_scenario_file, render_scenario_file};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let file = Path::new("scenario.conf");
    if let Ok(parsed) = parse_scenario_file(text, file) {
        let rendered = render_scenario_file(&parsed);
        let again = parse_scenario_file(&rendered, file).expect("rendered file parses");
        assert_eq!(render_scenario_file(&again), rendered);
    }
});
