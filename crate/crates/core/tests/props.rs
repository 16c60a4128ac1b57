//! Property tests: codec round-trip and determinism over generated valid
//! messages, decoder robustness on fuzzed lines, machine-vs-oracle
//! agreement on short legal sequences, and registry ranking laws.

mod common;

use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use agenthub::fsm::ChatMachine;
use agenthub::protocol::{decode_message, encode_message, validate_message};
use agenthub::registry::{AgentProfile, Registry, SearchQuery};

proptest! {
    /// decode . encode is the identity on valid messages, and encoding is
    /// byte-deterministic.
    #[test]
    fn codec_roundtrip_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let msg = common::random_valid_message(&mut rng);
        prop_assert!(validate_message(&msg).is_empty(), "generator must produce valid messages");
        let line = encode_message(&msg).unwrap();
        prop_assert_eq!(&encode_message(&msg).unwrap(), &line);
        let back = decode_message(&line).unwrap();
        prop_assert_eq!(back, msg);
    }

    /// The decoder returns errors, never panics, on arbitrary input lines.
    #[test]
    fn decoder_never_panics(garbage in ".{0,200}") {
        let _ = decode_message(&garbage);
        let _ = decode_message(&format!("{garbage}\n"));
    }

    /// Mutated frames are always rejected.
    #[test]
    fn mutated_frames_are_rejected(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let msg = common::random_valid_message(&mut rng);
        let line = encode_message(&msg).unwrap();
        let mutated = common::mutate_frame(&mut rng, &line);
        prop_assert!(decode_message(&mutated).is_err(), "mutation must invalidate: {mutated:?}");
    }

    /// Folding the machine frame by frame agrees with the brute-force
    /// oracle re-derived from the whole prefix at every step.
    #[test]
    fn machine_matches_oracle_on_legal_sequences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let max_turns = rng.random_range(2..6);
        let mut machine =
            ChatMachine::new("g0", "goal", members.clone(), "A", max_turns, 0);
        let mut frames = Vec::new();
        let mut open_tasks: Vec<(String, String, bool)> = Vec::new();
        let mut counter = 0;
        for _ in 0..12 {
            let oracle = common::oracle_derive(&members, "A", max_turns, &frames).unwrap();
            let Some(step) = common::random_legal_step(
                &mut rng, &members, max_turns, &oracle, &open_tasks, "g0", &mut counter,
            ) else { break };
            // Track open tasks from the generated traffic.
            if let Some(rest) = step.payload.content.as_deref()
                .and_then(|c| c.strip_prefix("task_started:")) {
                open_tasks.push((
                    step.payload.task_id.clone().unwrap(),
                    step.header.sender.clone(),
                    rest == "sync",
                ));
            }
            if step.payload.kind == agenthub::protocol::MessageKind::TaskResult {
                let id = step.payload.task_id.clone().unwrap();
                open_tasks.retain(|(tid, _, _)| *tid != id);
            }
            machine.advance(&step).expect("generated steps are legal");
            frames.push(step);
            let oracle = common::oracle_derive(&members, "A", max_turns, &frames).unwrap();
            prop_assert_eq!(machine.state().as_str(), oracle.state.as_str());
            prop_assert_eq!(machine.turn_count(), oracle.turn_count);
            prop_assert_eq!(machine.expected_speakers(), &oracle.expected);
            prop_assert_eq!(machine.open_sync_assignees(), &oracle.open_sync);
            prop_assert_eq!(machine.open_triggers(), &oracle.open_triggers);
            prop_assert_eq!(machine.is_quiescent(), oracle.quiescent);
        }
    }

    /// Adding a record with no token overlap with the query never changes
    /// which agents are returned (scores shift because idf depends on the
    /// corpus size, but membership is decided purely by token overlap), and
    /// every result is a registered agent.
    #[test]
    fn registry_result_set_stability_and_subset(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut registry = Registry::new();
        let vocab = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"];
        let n = rng.random_range(2..8);
        for i in 0..n {
            let mut words = Vec::new();
            for _ in 0..rng.random_range(1..4) {
                words.push(*vocab.choose(&mut rng).unwrap());
            }
            registry
                .register_agent(AgentProfile::new(
                    format!("agent{i:02}"),
                    "Thing Assistant",
                    words.join(" "),
                ))
                .unwrap();
        }
        let query = SearchQuery {
            characteristics: vec![vocab.choose(&mut rng).unwrap().to_string()],
            limit: 10,
        };
        let before: Vec<String> = registry
            .search_agents(&query)
            .into_iter()
            .map(|(p, _)| p.agent_name)
            .collect();
        for name in &before {
            prop_assert!(registry.get_profile(name).is_ok(), "subset property");
        }
        registry
            .register_agent(AgentProfile::new("unrelated", "Thing Assistant", "xylophone quartz"))
            .unwrap();
        let after: Vec<String> = registry
            .search_agents(&query)
            .into_iter()
            .map(|(p, _)| p.agent_name)
            .collect();
        prop_assert_eq!(before, after);
    }
}
