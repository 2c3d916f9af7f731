#![no_main]

use std::io::Cursor;
use std::path::Path;

use biaslens::io;
use biaslens::metrics;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let path = Path::new("fuzz.heatmap.csv");
    let Ok(joint) = io::heatmap_from_reader(Cursor::new(data), path) else {
        return;
    };
    let _ = metrics::analyze(&joint, metrics::DEFAULT_THETA);
});
