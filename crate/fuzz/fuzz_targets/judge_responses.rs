#![no_main]

use libfuzzer_sys::fuzz_target;
use permurank::evaluation::read_responses;

fuzz_target!(|data: &[u8]| {
    if let Ok(responses) = read_responses(data, "fuzz") {
        for (_, r) in responses {
            assert!((0.0..=1.0).contains(&r.p_purchase));
        }
    }
});
