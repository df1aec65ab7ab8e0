#![no_main]

use dfedda::harness::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(text) {
            // A resolved config must survive its own dump.
            let again = RunConfig::from_json(&cfg.to_json()).expect("dumped config reloads");
            assert_eq!(cfg.methods.len(), again.methods.len());
        }
    }
});
