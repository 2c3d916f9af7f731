#![no_main]

use std::io::Cursor;

use biaslens::io::{self, TabularSource};
use biaslens::metrics;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&mode, csv)) = data.split_first() else {
        return;
    };
    // The first byte steers the reader options so one corpus covers named
    // columns, index selectors, and a non-default delimiter.
    let mut source = TabularSource::new("fuzz.csv", "target", "spurious");
    match mode & 3 {
        0 => {}
        1 => source.delimiter = b'\t',
        2 => {
            source.has_header = false;
            source.target_column = "0".into();
            source.spurious_column = "1".into();
        }
        _ => {
            source.has_header = false;
            source.target_column = "2".into();
            source.spurious_column = "0".into();
        }
    }
    let Ok(joint) = io::joint_from_reader(Cursor::new(csv), &source) else {
        return;
    };
    // Whatever parses must also survive analysis.
    let _ = metrics::analyze(&joint, metrics::DEFAULT_THETA);
});
