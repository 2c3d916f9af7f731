#![no_main]

use std::io::Cursor;
use std::path::Path;

use biaslens::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = io::dataset_from_reader(Cursor::new(data), Path::new("fuzz.csv"));
});
