#![no_main]

use libfuzzer_sys::fuzz_target;
use proxy_ifm::circuit;
use proxy_ifm::scenario::parse_scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = parse_scenario(text) {
        let _ = circuit::compile(&s.circuit);
    }
});
