//! Configuration parser: arbitrary key-value text must either parse into a
//! validated configuration or return an error — never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use magmap::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::parse(text) {
        // Anything that parses must also be internally consistent.
        config
            .validate()
            .expect("parsed configurations are validated");
        config.hyperparameters().expect("validated hyperparameters");
    }
});
