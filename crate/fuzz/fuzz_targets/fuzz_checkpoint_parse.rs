#![no_main]

use libfuzzer_sys::fuzz_target;

use gvf_core::agent::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(checkpoint) = Checkpoint::from_json(text) {
        // Structurally broken layer stacks must surface as errors, never
        // panics; a reconstructed agent must serialize back losslessly.
        if let Ok(agent) = checkpoint.into_agent() {
            let env = gvf_core::envs::EmptyRoomConfig::default();
            let again = Checkpoint::from_agent(&agent, &env, 0.98);
            let reloaded = Checkpoint::from_json(&again.to_json())
                .expect("serialized checkpoint parses")
                .into_agent()
                .expect("serialized checkpoint reconstructs");
            assert_eq!(reloaded, agent);
        }
    }
});
