//! Measurement CSV parser: must never panic, and anything it accepts must
//! survive a format/parse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use magmap::io::{format_measurements, parse_measurements};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(set) = parse_measurements(text) {
        let rendered = format_measurements(&set);
        let back = parse_measurements(&rendered).expect("accepted data must round-trip");
        assert_eq!(back.positions, set.positions);
        assert_eq!(back.raw_measurements(), set.raw_measurements());
    }
});
