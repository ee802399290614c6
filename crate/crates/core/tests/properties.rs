use std::collections::HashSet;

use ppgm_core::cli::scenario::{run_scenario, OpKind, ScenarioConfig};
use ppgm_core::crypto::{address_of, derived_address, KeyPair};
use ppgm_core::dht::{GetResult, LatencyModel, NodeBehavior, PutOutcome, Requester, Session, SimConfig, SimTime, Simulator};
use ppgm_core::protocol::{
    complete_join, create_group, create_principal, process_joins, read_inbox, read_member_list, read_wall,
    renew_keys_ban, request_join, sealed_chunk_count, write_wall, GroupPolicy, InboxEntry, JoinDecision,
    PrincipalIdentity, ProtocolError,
};
use ppgm_core::wire::RecordType;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, DiscreteCDF, Poisson};

fn fast_sim(seed: u64) -> Simulator {
    Simulator::new(SimConfig { latency: LatencyModel::zero(), ..SimConfig::with_seed(seed) }).unwrap()
}

fn helos(s: &mut Session<'_>, p: &PrincipalIdentity) -> usize {
    read_inbox(s, &p.memberships[0].join_inbox).iter().filter(|e| **e == InboxEntry::Protocol(RecordType::Helo)).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raw_cell_returns_every_put_in_order(
        values in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..200), 1..40),
        behavior in prop_oneof![Just(NodeBehavior::Honest), Just(NodeBehavior::PassiveObserver)],
    ) {
        let mut sim = fast_sim(1);
        sim.install_behavior(ppgm_core::dht::AddressSelector::All, behavior);
        let addr = address_of(&KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(1)).public);
        let mut s = Session::new(&mut sim, SimTime::ZERO, Requester::Client(1));
        // The first value must not look like a capture so the cell opens.
        let mut stored = Vec::new();
        for (i, v) in values.iter().enumerate() {
            let mut v = v.clone();
            if i == 0 {
                v.insert(0, 0xff);
            }
            prop_assert_eq!(s.put(&addr, &v), PutOutcome::Ack);
            stored.push(v);
        }
        prop_assert_eq!(s.get(&addr), GetResult::Cell(stored));
    }

    #[test]
    fn wall_roundtrips_at_any_size(len in 0usize..70_000, seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sim = fast_sim(seed);
        let mut s = Session::new(&mut sim, SimTime::ZERO, Requester::Client(1));
        let policy = GroupPolicy::shared_document();
        let keys = create_group(&mut s, policy, "w", &mut rng).unwrap();
        let admin = keys.administrator_view(policy);
        let content: Vec<u8> = (0..len).map(|i| (i as u64).wrapping_mul(seed | 1) as u8).collect();
        let chunks = write_wall(&mut s, &admin, &content, &mut rng).unwrap();
        prop_assert_eq!(chunks, sealed_chunk_count(len, s.capacity()));
        prop_assert_eq!(read_wall(&mut s, &admin).unwrap(), content);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn list_counter_counts_mutations(ops in proptest::collection::vec(any::<bool>(), 1..14), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sim = fast_sim(seed);
        let mut s = Session::new(&mut sim, SimTime::ZERO, Requester::Client(1));
        let policy = GroupPolicy::shared_document();
        let keys = create_group(&mut s, policy, "c", &mut rng).unwrap();
        let root = keys.root.public.clone();
        let mut admin = keys.administrator_view(policy);
        let mut members: Vec<PrincipalIdentity> = Vec::new();
        let mut mutations = 0u64;
        for join in ops {
            if join || members.is_empty() {
                let mut p = create_principal(&mut s, None, &mut rng).unwrap();
                request_join(&mut s, &mut p, &root, &mut rng).unwrap();
                let batch = process_joins(&mut s, &mut admin, &mut rng).unwrap();
                mutations += batch.outcomes.iter().filter(|o| o.decision.is_accepted()).count() as u64;
                members.push(p);
            } else {
                let gone = members.remove(0);
                renew_keys_ban(&mut s, &mut admin, &gone.principal.public, &mut rng).unwrap();
                mutations += 1;
            }
            let list = read_member_list(&mut s, &admin).unwrap();
            prop_assert_eq!(list.counter, mutations);
            prop_assert_eq!(list.list.len(), members.len());
        }
    }

    #[test]
    fn stale_or_replayed_requests_never_add_members(seed in any::<u64>(), batch in 2usize..6) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sim = fast_sim(seed);
        let mut s = Session::new(&mut sim, SimTime::ZERO, Requester::Client(1));
        let policy = GroupPolicy::shared_document();
        let keys = create_group(&mut s, policy, "t", &mut rng).unwrap();
        let root = keys.root.public.clone();
        let mut admin = keys.administrator_view(policy);

        // All requests read the same ticket; only the first may be accepted.
        let mut ps = Vec::new();
        for _ in 0..batch {
            let mut p = create_principal(&mut s, None, &mut rng).unwrap();
            request_join(&mut s, &mut p, &root, &mut rng).unwrap();
            ps.push(p);
        }
        let inbox = address_of(&keys.inbox.public);
        let requests: Vec<Vec<u8>> = s.get(&inbox).values().into_iter().map(<[u8]>::to_vec).collect();
        let outcomes = process_joins(&mut s, &mut admin, &mut rng).unwrap().outcomes;
        prop_assert_eq!(outcomes.iter().filter(|o| o.decision.is_accepted()).count(), 1);
        for (p, o) in ps.iter_mut().zip(&outcomes).skip(1) {
            let stale = matches!(o.decision, JoinDecision::RejectedStale { ticket: 0, list: 1 });
            prop_assert!(stale, "{:?}", o.decision);
            prop_assert_eq!(complete_join(&mut s, p, &root).unwrap_err(), ProtocolError::Pending("no helo yet"));
        }

        // Putting the same request bytes again changes nothing.
        for r in &requests {
            prop_assert_eq!(s.put(&inbox, r), PutOutcome::Ack);
        }
        let replayed = process_joins(&mut s, &mut admin, &mut rng).unwrap().outcomes;
        prop_assert!(replayed.iter().all(|o| !o.decision.is_accepted()), "{:?}", replayed);
        let list = read_member_list(&mut s, &admin).unwrap();
        prop_assert_eq!(list.counter, 1);
        prop_assert_eq!(list.list.len(), 1);
        prop_assert_eq!(helos(&mut s, &ps[0]), 1);
        for p in &ps[1..] {
            prop_assert_eq!(helos(&mut s, p), 0);
        }
    }

    #[test]
    fn one_helo_per_accepted_join(seed in any::<u64>(), rounds in proptest::collection::vec(1usize..4, 1..5)) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sim = fast_sim(seed);
        let mut s = Session::new(&mut sim, SimTime::ZERO, Requester::Client(1));
        let policy = GroupPolicy::shared_document();
        let keys = create_group(&mut s, policy, "h", &mut rng).unwrap();
        let root = keys.root.public.clone();
        let mut admin = keys.administrator_view(policy);
        let mut ps: Vec<PrincipalIdentity> = Vec::new();
        for n in rounds {
            for _ in 0..n {
                let mut p = create_principal(&mut s, None, &mut rng).unwrap();
                request_join(&mut s, &mut p, &root, &mut rng).unwrap();
                ps.push(p);
            }
            // Stale requesters ask again until everyone is in.
            loop {
                let outcomes = process_joins(&mut s, &mut admin, &mut rng).unwrap().outcomes;
                let stale: Vec<_> = outcomes
                    .iter()
                    .filter(|o| matches!(o.decision, JoinDecision::RejectedStale { .. }))
                    .map(|o| o.principal.clone())
                    .collect();
                if stale.is_empty() {
                    break;
                }
                for p in ps.iter_mut().filter(|p| stale.contains(&p.principal.public)) {
                    request_join(&mut s, p, &root, &mut rng).unwrap();
                }
            }
        }
        for p in &ps {
            prop_assert_eq!(helos(&mut s, p), 1);
        }
        prop_assert_eq!(read_member_list(&mut s, &admin).unwrap().list.len(), ps.len());
    }
}

#[test]
fn address_families_are_disjoint_over_many_keys() {
    let mut rng = ChaCha20Rng::seed_from_u64(0xadd);
    let mut seen = HashSet::new();
    for _ in 0..100_000 {
        let k = KeyPair::generate(&mut rng).public;
        assert!(seen.insert(address_of(&k)));
        for i in 0..4 {
            assert!(seen.insert(derived_address(&k, i)));
        }
    }
}

/// Chi-square statistic against the given bin probabilities.
fn chi_square(observed: &[usize], probs: &[f64]) -> f64 {
    let n: usize = observed.iter().sum();
    observed.iter().zip(probs).map(|(&o, &p)| (o as f64 - n as f64 * p).powi(2) / (n as f64 * p)).sum()
}

#[test]
fn join_arrivals_fit_the_configured_poisson_process() {
    let (hours, mean_min) = (10.0, 20.0);
    let lambda = hours * 60.0 / mean_min;
    let mut counts = Vec::new();
    let mut gaps = Vec::new();
    for seed in 0..20 {
        let cfg = ScenarioConfig { seed, duration_hours: hours, join_mean_min: mean_min, ..ScenarioConfig::default() };
        let run = run_scenario(&cfg).unwrap();
        // The first accepted record is the member set up at time zero.
        let joins = run.records.iter().filter(|r| r.op == OpKind::JoinProcess && r.outcome == "accepted").count() - 1;
        counts.push(joins);
        let mut last = 0.0;
        for t in &run.arrivals {
            gaps.push(t.secs_f64() - last);
            last = t.secs_f64();
        }
    }

    // Counts per run, in four bins cut near the Poisson quartiles.
    let pois = Poisson::new(lambda).unwrap();
    let cuts = [25u64, 29, 33];
    let mut probs = Vec::new();
    let mut prev = 0.0;
    for &c in &cuts {
        probs.push(pois.cdf(c) - prev);
        prev = pois.cdf(c);
    }
    probs.push(1.0 - prev);
    let mut observed = [0usize; 4];
    for &c in &counts {
        observed[cuts.iter().take_while(|&&cut| c as u64 > cut).count()] += 1;
    }
    let stat = chi_square(&observed, &probs);
    let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
    assert!(p > 0.01, "counts {counts:?}, bins {observed:?} vs {probs:?}, p = {p}");

    // Pooled gaps against the exponential, ten equiprobable bins.
    let mean_s = mean_min * 60.0;
    let mut observed = [0usize; 10];
    for g in &gaps {
        let u = 1.0 - (-g / mean_s).exp();
        observed[((u * 10.0) as usize).min(9)] += 1;
    }
    let stat = chi_square(&observed, &[0.1; 10]);
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    assert!(p > 0.01, "gap bins {observed:?}, p = {p}");
}
