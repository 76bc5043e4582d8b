#![no_main]

use libfuzzer_sys::fuzz_target;
use pupiltrack::pgm::{decode_pgm, encode_pgm};

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must survive a re-encode round trip.
    if let Ok(img) = decode_pgm(data) {
        let again = decode_pgm(&encode_pgm(&img)).expect("re-encoded image decodes");
        assert_eq!(again, img);
    }
});
