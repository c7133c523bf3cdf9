#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::vectorstore::{decode, encode};

fuzz_target!(|bytes: &[u8]| {
    if let Ok(index) = decode(bytes) {
        let canonical = encode(&index);
        let again = decode(&canonical).expect("own output decodes");
        assert!(again == index);
        assert_eq!(encode(&again), canonical);
    }
});
