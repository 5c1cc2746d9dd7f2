#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = atlasforge::image::Image::from_png(data);
    let _ = atlasforge::metatex::MetaTexture::from_png(data);
});
