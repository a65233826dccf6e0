#![no_main]

use epcfg::io::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() > 64 * 1024 {
        return;
    }
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = ExperimentConfig::parse(text) {
            assert!(config.batch >= 1);
            assert!(!config.lambdas.is_empty());
            for &lambda in &config.lambdas {
                config.params(lambda).expect("parsed lambdas are valid");
            }
        }
    }
});
