#![no_main]

use libfuzzer_sys::fuzz_target;
use permurank::models::{Checkpoint, ModelKind};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ckpt) = Checkpoint::from_json_str(text) {
        let _ = match ckpt.kind {
            ModelKind::Reward => ckpt.into_reward().map(|_| ()),
            ModelKind::Ranker => ckpt.into_ranker().map(|_| ()),
        };
    }
});
