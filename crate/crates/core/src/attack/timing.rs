//! Linking join inboxes to groups from the timing of list updates and
//! helo writes, as seen by an observer covering part of the address space.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::{address_of, Address};
use crate::dht::{AddressSelector, NodeBehavior, Observation, Op, Requester, Session, SimConfig, SimTime, Simulator};
use crate::protocol::{
    complete_join, create_group, create_principal, process_joins, request_join, GroupPolicy, ProtocolError,
};
use crate::wire::{InboxValue, RecordType, StructureKind, StructureRecord};

/// Quantile of the replicated PUT latency used as the default window.
pub const WINDOW_QUANTILE: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingConfig {
    pub seed: u64,
    pub groups: usize,
    pub joins: usize,
    /// Fraction of addresses the observer sees.
    pub coverage: f64,
    /// Time between consecutive join requests.
    pub spacing: SimTime,
    /// Delay after a request before the administrator processes it.
    pub admin_delay: SimTime,
    /// Correlation window; defaults to a high quantile of one PUT.
    pub window: Option<SimTime>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            groups: 4,
            joins: 8,
            coverage: 1.0,
            spacing: SimTime::from_secs_f64(600.0),
            admin_delay: SimTime::from_secs_f64(60.0),
            window: None,
        }
    }
}

/// One inferred membership: the inbox `h(K_j)` joined the group whose
/// list lives at `list`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub inbox: Address,
    pub list: Address,
    pub delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub coverage: f64,
    pub window_ms: f64,
    pub groups: usize,
    pub joins: usize,
    /// Links inferred from timing alone.
    pub links: Vec<Link>,
    /// Joins guessed right, counting uniform guesses for unlinked inboxes.
    pub correct: usize,
    pub accuracy: f64,
    pub chance: f64,
}

/// Pairs every observed helo with the latest list update at most `window`
/// before it.
pub fn correlate(observations: &[Observation], window: SimTime) -> Vec<Link> {
    let mut updates: BTreeMap<(Address, u64), SimTime> = BTreeMap::new();
    let mut helos = Vec::new();
    for o in observations.iter().filter(|o| o.op == Op::Put) {
        for v in &o.values {
            if let Ok(rec) = StructureRecord::parse(v) {
                if rec.kind == StructureKind::List && rec.counter > 0 {
                    updates.entry((address_of(&rec.clear_key), rec.counter)).or_insert(o.time);
                }
            } else if InboxValue::parse(v).is_ok_and(|iv| iv.record_type() == RecordType::Helo) {
                helos.push((o.address, o.time));
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut links = Vec::new();
    for (inbox, t) in helos {
        if !seen.insert(inbox) {
            continue;
        }
        let best = updates
            .iter()
            .filter(|(_, &tl)| tl <= t && t.since(tl) <= window)
            .max_by_key(|(_, &tl)| tl);
        if let Some(((list, _), &tl)) = best {
            links.push(Link { inbox, list: *list, delay_ms: t.since(tl).secs_f64() * 1000.0 });
        }
    }
    links
}

pub fn timing_correlation_attack(cfg: &TimingConfig) -> Result<TimingReport, ProtocolError> {
    if cfg.groups == 0 || !(0.0..=1.0).contains(&cfg.coverage) {
        return Err(ProtocolError::Precondition("need at least one group and coverage in [0, 1]".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let sim_cfg = SimConfig::with_seed(cfg.seed);
    let window = cfg.window.unwrap_or_else(|| {
        SimTime::from_millis_f64(sim_cfg.latency.put_quantile_ms(sim_cfg.replication, WINDOW_QUANTILE))
    });
    let mut sim = Simulator::new(sim_cfg).map_err(ProtocolError::Precondition)?;
    let selector = if cfg.coverage >= 1.0 {
        AddressSelector::All
    } else {
        AddressSelector::Sampled { salt: rng.gen(), fraction: cfg.coverage }
    };
    sim.install_behavior(selector, NodeBehavior::PassiveObserver);

    let policy = GroupPolicy::shared_document();
    let mut groups = Vec::new();
    {
        let mut s = Session::new(&mut sim, SimTime::ZERO, Requester::Client(1));
        for g in 0..cfg.groups {
            let keys = create_group(&mut s, policy, &format!("group-{g}"), &mut rng)?;
            let admin = keys.administrator_view(policy);
            groups.push((keys, admin));
        }
    }

    let mut truth = Vec::new();
    for k in 0..cfg.joins {
        let g = rng.gen_range(0..groups.len());
        let t = SimTime(cfg.spacing.0 * (k as u64 + 1));
        let client = Requester::Client(1000 + k as u64);
        let mut s = Session::new(&mut sim, t, client);
        let root = groups[g].0.root.public.clone();
        let mut p = create_principal(&mut s, None, &mut rng)?;
        request_join(&mut s, &mut p, &root, &mut rng)?;
        let mut s = Session::new(&mut sim, t.plus(cfg.admin_delay.0), Requester::Client(2 + g as u64));
        process_joins(&mut s, &mut groups[g].1, &mut rng)?;
        s.who = client;
        complete_join(&mut s, &mut p, &root)?;
        truth.push((address_of(&p.memberships[0].join_inbox.public), address_of(&groups[g].0.list.public)));
    }

    let links = correlate(sim.observations(), window);
    let lists: Vec<Address> = groups.iter().map(|(k, _)| address_of(&k.list.public)).collect();
    let mut correct = 0;
    for (inbox, list) in &truth {
        let guess = match links.iter().find(|l| &l.inbox == inbox) {
            Some(l) => l.list,
            None => *lists.choose(&mut rng).expect("at least one group"),
        };
        correct += usize::from(&guess == list);
    }
    Ok(TimingReport {
        coverage: cfg.coverage,
        window_ms: window.secs_f64() * 1000.0,
        groups: cfg.groups,
        joins: cfg.joins,
        links,
        correct,
        accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
        chance: 1.0 / cfg.groups as f64,
    })
}
