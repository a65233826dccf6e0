#![no_main]

use epcfg::io::{decode_latent, encode_latent};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to the same bytes.
    if let Ok(x) = decode_latent(data) {
        assert_eq!(encode_latent(&x).expect("decoded latent re-encodes"), data);
    }
});
