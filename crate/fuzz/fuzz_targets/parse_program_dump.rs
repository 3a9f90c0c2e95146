#![no_main]

use isac_ota::subproblem::{dump_program, parse_program_dump};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = parse_program_dump(text) {
        let again = parse_program_dump(&dump_program(&p)).expect("dump of a parsed program re-parses");
        assert_eq!(again, p);
    }
});
