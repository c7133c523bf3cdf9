#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::evalkit::parse_records;

fuzz_target!(|text: &str| {
    let _ = parse_records(text);
});
