#![no_main]

use atlasforge::genclient::{parse_wire_response, GenRequest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(resp) = parse_wire_response(data) {
        let depth = atlasforge::image::Image::new(8, 8, 1).to_png8().unwrap();
        let _ = resp.check_dims(&GenRequest::front("x", depth, 0, 1));
    }
});
