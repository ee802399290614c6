use ppgm_core::attack::*;
use ppgm_core::dht::{Observation, Op, Requester, SimTime};
use ppgm_core::crypto::{Address, SymKey};
use ppgm_core::wire::{InboxMessage, RecordType};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

#[test]
fn replay_succeeds_only_with_predicted_key() {
    let hit = run_replay_attack(11, true).unwrap();
    assert!(hit.succeeded, "{hit:#?}");
    assert_eq!(hit.view_before, ["p1", "p2"]);
    assert_eq!(hit.view_after, ["p1"]);
    assert!(hit.list_state.starts_with("raw_cell"));
    assert_eq!(hit.evidence.last().unwrap().outcome, "ack");

    let miss = run_replay_attack(11, false).unwrap();
    assert!(!miss.succeeded);
    assert_eq!(miss.view_after, ["p1", "p2"]);
    assert_eq!(miss.evidence.last().unwrap().outcome, "reject(update_denied)");
    assert!(miss.list_state.starts_with("captured(counter=2)"));
}

#[test]
fn replay_needs_the_cell_demoted_before_capture() {
    let late = run_replay_scenario(12, ReplayScenario { key_predicted: true, demote_first: false }).unwrap();
    assert!(!late.succeeded);
    let demote = late.evidence.iter().find(|e| e.actor == "adversary").unwrap();
    assert_eq!(demote.outcome, "reject(not_inbox)");
}

#[test]
fn replay_evidence_is_deterministic() {
    let a = serde_json::to_string(&run_replay_attack(5, true).unwrap()).unwrap();
    let b = serde_json::to_string(&run_replay_attack(5, true).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = serde_json::to_string(&run_replay_attack(6, true).unwrap()).unwrap();
    assert_ne!(a, c);
}

fn mess_observation(body: Vec<u8>) -> Observation {
    Observation {
        time: SimTime::ZERO,
        op: Op::Put,
        address: Address([7; 20]),
        values: vec![InboxMessage::new(RecordType::Mess, body).to_bytes()],
        requester: Requester::Client(1),
    }
}

#[test]
fn planted_list_key_is_flagged_once() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let s_l = SymKey::generate(&mut rng);
    let secrets = vec![Secret::sym_key("S_l", &s_l), Secret::from_bytes("other", &[9u8; 64])];
    let mut body = b"prefix".to_vec();
    body.extend_from_slice(s_l.as_bytes());
    let log = [mess_observation(b"clean".to_vec()), mess_observation(body)];
    let report = secrecy_audit(log.iter().enumerate(), &secrets);
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].secret, "S_l");
    assert_eq!(report.violations[0].observation, 1);
}

#[test]
fn half_a_key_is_enough_to_flag() {
    let secrets = vec![Secret::from_bytes("K", &(0..64).collect::<Vec<u8>>())];
    let log = [mess_observation((32..64).collect())];
    assert_eq!(secrecy_audit(log.iter().enumerate(), &secrets).violations.len(), 1);
}

#[test]
fn small_lifecycle_is_clean_and_controls_fire() {
    let cfg = LifecycleConfig { seed: 3, joins: 6, wall_ops: 10, private_messages: 6, ..LifecycleConfig::default() };
    let audit = run_lifecycle_audit(&cfg).unwrap();
    assert!(audit.all_addresses.is_clean(), "{:?}", audit.all_addresses.violations);
    assert!(audit.non_group_addresses.is_clean());
    assert!(audit.non_group_addresses.observations_scanned < audit.all_addresses.observations_scanned);
    assert_eq!(audit.planted.detected, audit.planted.planted);
    assert!(audit.secrets.iter().any(|s| s.starts_with("S_w (renewed")));
}

#[test]
fn full_coverage_links_every_join() {
    let report = timing_correlation_attack(&TimingConfig { seed: 4, ..TimingConfig::default() }).unwrap();
    assert_eq!(report.links.len(), report.joins);
    assert_eq!(report.correct, report.joins);
    assert_eq!(report.accuracy, 1.0);
    // Only 20-byte addresses appear in the output, never 64-byte keys.
    let json = serde_json::to_value(&report).unwrap();
    for link in json["links"].as_array().unwrap() {
        for field in ["inbox", "list"] {
            assert_eq!(link[field].as_str().unwrap().len(), 40);
        }
    }
    let text = json.to_string();
    let longest_hex = text
        .split(|c: char| !c.is_ascii_hexdigit())
        .map(str::len)
        .max()
        .unwrap();
    assert_eq!(longest_hex, 40);
}

#[test]
fn sparse_coverage_is_chance() {
    let (mut correct, mut total, mut linked) = (0u64, 0u64, 0usize);
    for seed in 0..100 {
        let cfg = TimingConfig { seed, coverage: 0.01, ..TimingConfig::default() };
        let r = timing_correlation_attack(&cfg).unwrap();
        correct += r.correct as u64;
        total += r.joins as u64;
        linked += r.links.len();
    }
    let b = Binomial::new(0.25, total).unwrap();
    let lower = b.cdf(correct);
    let upper = 1.0 - if correct == 0 { 0.0 } else { b.cdf(correct - 1) };
    let p = (2.0 * lower.min(upper)).min(1.0);
    assert!(p > 0.01, "correct {correct}/{total}, p = {p}, linked {linked}");
}

#[test]
fn relay_hides_the_origin() {
    let direct = relay_origin_guess(1, None, 1000).unwrap();
    assert_eq!(direct.origin_matches, 1000);
    let relayed = relay_origin_guess(1, Some(2.0 / 3.0), 100_000).unwrap();
    assert_eq!(relayed.origin_matches, 0);
    assert_eq!(relayed.truncated, 0);

    let means: Vec<f64> = [0.55, 0.7, 0.9]
        .into_iter()
        .map(|pf| relay_origin_guess(2, Some(pf), 20_000).unwrap().mean_extra_hops)
        .collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}
