#![no_main]

use atlasforge::ctxb::Ctxb;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(blob) = Ctxb::decode(data) {
        assert_eq!(Ctxb::decode(&blob.encode()).unwrap(), blob);
        let _ = blob.to_image();
        let _ = blob.to_face_index();
    }
});
