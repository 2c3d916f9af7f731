#![no_main]

use biaslens::io::{self, MetricsFile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Both renderers must handle any metrics file the parser accepts.
    match io::metrics_from_slice(data) {
        Ok(MetricsFile::Run(run)) => {
            let _ = io::weights_csv(&run.metrics);
        }
        Ok(MetricsFile::Sweep(sweep)) => {
            let _ = io::sweep_heatmap_csv(&sweep.table);
        }
        Err(_) => {}
    }
});
