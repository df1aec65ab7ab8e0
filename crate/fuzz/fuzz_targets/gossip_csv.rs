#![no_main]

use dfedda::gossip::parse_gossip_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(u) = parse_gossip_csv(text) {
            assert!((0.0..=1.0 + 1e-9).contains(&u.sigma2()));
        }
    }
});
