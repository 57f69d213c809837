#![no_main]

use libfuzzer_sys::fuzz_target;
use proxy_ifm::circuit::PortRef;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Some(p) = PortRef::parse(text) {
            assert!(!p.element.is_empty());
        }
    }
});
