#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::doctree::{parse_plaintext, DocumentTree, SegmentationRules};

fuzz_target!(|text: &str| {
    if let Ok(tree) = parse_plaintext("fuzz", text, &SegmentationRules::default()) {
        let back = DocumentTree::from_json(&tree.to_json()).expect("own output parses");
        assert_eq!(back, tree);
    }
});
