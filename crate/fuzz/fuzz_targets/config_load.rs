#![no_main]

use libfuzzer_sys::fuzz_target;
use pathctl_cli::config::{load, CliLayer};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = load(text, &CliLayer::default()) {
            let _ = config.resolved_toml();
        }
    }
});
