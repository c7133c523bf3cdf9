#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::doctree::DocumentTree;

fuzz_target!(|text: &str| {
    if let Ok(tree) = DocumentTree::from_json(text) {
        assert_eq!(DocumentTree::from_json(&tree.to_json()).unwrap(), tree);
    }
});
