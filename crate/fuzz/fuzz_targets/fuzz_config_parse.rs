#![no_main]

use libfuzzer_sys::fuzz_target;

use gvf_core::config::{ExperimentConfig, QuestionNetSource};

/// Keeps fuzzed resolution away from giant allocations; resolving builds
/// the network and the agent.
fn resolution_is_small(config: &ExperimentConfig) -> bool {
    const LIMIT: usize = 4096;
    let net_ok = match &config.question_net {
        None => true,
        // File sources would leave the fuzzing sandbox.
        Some(QuestionNetSource::File { .. }) => false,
        Some(QuestionNetSource::DiscountedSum { n_features, .. }) => *n_features <= LIMIT,
        Some(QuestionNetSource::FullTree { depth }) => *depth <= 6,
        Some(QuestionNetSource::Generator {
            n_features,
            depth,
            repeat,
            actions,
            ..
        }) => {
            let n_actions = actions.as_ref().map_or(4, |a| a.len());
            *n_features <= LIMIT
                && depth.saturating_mul(*repeat).saturating_mul(n_actions) <= LIMIT
        }
    };
    net_ok
        && config.agent.repr_dims.len() <= 8
        && config.agent.repr_dims.iter().all(|&d| d <= LIMIT)
        && config.agent.head_hidden <= LIMIT
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ExperimentConfig::from_json(text) {
        if !resolution_is_small(&config) {
            return;
        }
        if let Ok(resolved) = config.resolve() {
            // A resolved snapshot is itself a valid config that resolves to
            // the same experiment.
            let snapshot = resolved.config.to_json();
            let reparsed = ExperimentConfig::from_json(&snapshot).expect("snapshot parses");
            assert_eq!(reparsed.seed, config.seed);
            let again = reparsed.resolve().expect("snapshot resolves");
            assert_eq!(again.qnet, resolved.qnet);
        }
    }
});
