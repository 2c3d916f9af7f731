#![no_main]

use biaslens::io;
use biaslens::synth;
use libfuzzer_sys::fuzz_target;

/// Resolution allocates marginals of the declared size, so cap it; the
/// parse itself runs on every input.
const DIM_CAP: usize = 512;

fuzz_target!(|data: &[u8]| {
    let Ok(file) = io::config_from_slice(data) else {
        return;
    };
    if file.n_target > DIM_CAP || file.n_spurious > DIM_CAP {
        return;
    }
    let Ok((config, _layout, _seed)) = file.resolve() else {
        return;
    };
    // A validated configuration must build (or refuse with an error, never
    // panic); keep the table small enough to stay fast.
    if config.n_target <= 64 && config.n_spurious <= 64 {
        let _ = synth::build_joint(&config);
    }
});
