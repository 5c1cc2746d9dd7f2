#![no_main]

use atlasforge::geometry::{canonical_viewpoints, CameraConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = CameraConfig::from_json(data) {
        if let Ok(views) = canonical_viewpoints(&cfg) {
            for v in views {
                let _ = v.view_projection();
            }
        }
    }
});
