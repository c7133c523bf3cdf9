#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::answerer::ReplayFile;

fuzz_target!(|text: &str| {
    if let Ok(file) = ReplayFile::parse(text) {
        let _ = file.into_clients();
    }
});
