#![no_main]

use libfuzzer_sys::fuzz_target;
use pupiltrack::pipeline::{compute_metrics, format_trajectory, parse_trajectory};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(traj) = parse_trajectory(text) {
        let _ = compute_metrics(&traj);
        // Formatting rounds to six decimals, so a second pass must be stable.
        let once = format_trajectory(&traj, true);
        let reparsed = parse_trajectory(&once).expect("formatted trajectory parses");
        assert_eq!(format_trajectory(&reparsed, true), once);
    }
});
