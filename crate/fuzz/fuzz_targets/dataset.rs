#![no_main]

use libfuzzer_sys::fuzz_target;
use permurank::data::{read_dataset, write_dataset};

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = read_dataset(data, "fuzz") {
        // Anything accepted must survive a write and re-read unchanged.
        let text = write_dataset(&ds).expect("accepted datasets serialize");
        let back = read_dataset(text.as_bytes(), "fuzz").expect("written datasets parse");
        assert_eq!(back, ds);
    }
});
