#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::ensembler::{categorical_key, normalize_text, parse_numeric, UnitTable};

fuzz_target!(|text: &str| {
    if let Some(v) = parse_numeric(text, &UnitTable::default()) {
        assert!(v.is_finite());
    }
    let _ = normalize_text(text, &UnitTable::default());
    let _ = categorical_key(text);
});
