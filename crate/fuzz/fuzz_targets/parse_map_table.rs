//! Map-table parser: lattice inference and row validation must never panic,
//! and accepted tables must survive a format/parse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use magmap::io::{format_map_table, parse_map_table};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = parse_map_table(text) {
        let rendered = format_map_table(&table);
        let back = parse_map_table(&rendered).expect("accepted table must round-trip");
        assert_eq!(back.lattice, table.lattice);
        assert_eq!(back.means, table.means);
        assert_eq!(back.variance_diag, table.variance_diag);
    }
});
