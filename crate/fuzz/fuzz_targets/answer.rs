#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::answerer::parse_answer;

fuzz_target!(|raw: &str| {
    if let Ok(rec) = parse_answer(raw) {
        let _ = rec.clone().normalized();
        let _ = parse_answer(&rec.render());
    }
});
