#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::pipeline::parse_questions;

fuzz_target!(|text: &str| {
    let _ = parse_questions(text);
});
