#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mesh) = atlasforge::geometry::parse_obj_bytes(data) {
        // a parsed mesh must survive normalization and re-export
        let _ = mesh.normalized();
        let _ = atlasforge::geometry::shapes::to_obj(&mesh);
    }
});
