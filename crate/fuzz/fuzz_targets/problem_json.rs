#![no_main]

use dfedda::problem::ProblemSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = ProblemSpec::from_json(text) {
            // Keep generation cheap; the parser is the target here.
            if matches!(spec, ProblemSpec::Linear(_)) && spec.dim() * spec.clients() <= 4096 {
                let _ = spec.generate(0);
            }
        }
    }
});
