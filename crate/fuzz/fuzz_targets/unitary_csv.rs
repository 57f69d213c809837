#![no_main]

use libfuzzer_sys::fuzz_target;
use proxy_ifm::multiport::MAX_DIMENSION;
use proxy_ifm::run::{decompose_unitary, parse_unitary_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(u) = parse_unitary_csv(text) {
        assert_eq!(u.nrows(), u.ncols());
        if u.nrows() <= MAX_DIMENSION {
            let _ = decompose_unitary(text, 1e-10);
        }
    }
});
