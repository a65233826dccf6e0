#![no_main]

use epcfg::io::parse_trace_csv;
use epcfg::report::{render_svg, Series};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1024 * 1024 {
        return;
    }
    if let Ok(rows) = parse_trace_csv(data) {
        let svg = render_svg(&[Series {
            label: "fuzz".into(),
            rows,
        }])
        .expect("parsed traces render");
        assert!(svg.ends_with("</svg>\n"));
    }
});
