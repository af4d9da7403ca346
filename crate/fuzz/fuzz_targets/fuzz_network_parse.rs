#![no_main]

use libfuzzer_sys::fuzz_target;

use gvf_core::qnet::QuestionNetwork;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Parsing arbitrary text must never panic; on success the network must
    // survive validation and round-trip through its canonical form.
    if let Ok(net) = QuestionNetwork::from_json(text) {
        let _ = net.validate();
        let canonical = net.to_json();
        let reparsed = QuestionNetwork::from_json(&canonical).expect("canonical form parses");
        assert_eq!(reparsed, net);
        assert_eq!(reparsed.to_json(), canonical);
        let _ = net.to_dot();
    }
});
