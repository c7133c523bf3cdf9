#![no_main]

use libfuzzer_sys::fuzz_target;
use treerag_core::pipeline::PipelineConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = PipelineConfig::parse(text) {
        assert_eq!(PipelineConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
});
