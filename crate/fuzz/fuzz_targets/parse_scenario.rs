#![no_main]

use libfuzzer_sys::fuzz_target;
use ofo_core::data::{ieee39, Scenario};

fuzz_target!(|data: &[u8]| {
    if let Ok(sc) = Scenario::from_json_bytes(data) {
        let _ = sc.check_against(&ieee39().unwrap());
    }
});
