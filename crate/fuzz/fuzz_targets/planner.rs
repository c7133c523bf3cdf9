#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::retriever::parse_planner_output;

fuzz_target!(|raw: &str| {
    if let Some(queries) = parse_planner_output(raw) {
        assert!(queries.iter().all(|q| !q.trim().is_empty()));
    }
});
