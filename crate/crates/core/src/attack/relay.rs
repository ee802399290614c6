//! How often the node storing a relayed message sees its true sender.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::{address_of, KeyPair};
use crate::dht::{AddressSelector, AddressState, NodeBehavior, Op, PutOutcome, Requester, Session, SimConfig, SimTime, Simulator};
use crate::protocol::{relay_framed, ProtocolError};
use crate::wire::{frame_inbox, seal_private_message};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayStats {
    /// `None`: messages go straight to the destination.
    pub p_f: Option<f64>,
    pub trials: u64,
    /// Trials where the storing node's requester tag was the sender's.
    pub origin_matches: u64,
    pub mean_extra_hops: f64,
    pub max_extra_hops: u32,
    pub truncated: u64,
}

pub fn relay_origin_guess(seed: u64, p_f: Option<f64>, trials: u64) -> Result<RelayStats, ProtocolError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sim = Simulator::new(SimConfig::with_seed(seed)).map_err(ProtocolError::Precondition)?;
    let sender = KeyPair::generate(&mut rng);
    let recipient = KeyPair::generate(&mut rng);
    let dest = address_of(&recipient.public);
    sim.install_behavior(AddressSelector::Only(BTreeSet::from([dest])), NodeBehavior::PassiveObserver);
    // One sealed message is relayed over and over; only the path changes.
    let msg = seal_private_message(&sender, &recipient.public, b"relay probe", &mut rng);
    let parts = frame_inbox(&msg, sim.config().put_capacity, &mut rng);

    let mut stats = RelayStats { p_f, trials, origin_matches: 0, mean_extra_hops: 0.0, max_extra_hops: 0, truncated: 0 };
    let mut hops_total = 0u64;
    for _ in 0..trials {
        let origin = Requester::Client(rng.gen());
        {
            let mut s = Session::new(&mut sim, SimTime::ZERO, origin);
            match p_f {
                Some(pf) => {
                    let trace = relay_framed(&mut s, &dest, &parts, pf, &mut rng)?;
                    hops_total += u64::from(trace.extra_hops);
                    stats.max_extra_hops = stats.max_extra_hops.max(trace.extra_hops);
                    stats.truncated += u64::from(trace.truncated);
                }
                None => {
                    for part in &parts {
                        if let PutOutcome::Reject(reason) = s.put(&dest, part) {
                            return Err(ProtocolError::Node { component: "direct message", reason });
                        }
                    }
                }
            }
        }
        let seen = sim.log_for(&dest).filter(|o| o.op == Op::Put).last().map(|o| o.requester);
        stats.origin_matches += u64::from(seen == Some(origin));
        sim.clear_log();
        sim.force_state(dest, AddressState::Empty);
    }
    if trials > 0 {
        stats.mean_extra_hops = hops_total as f64 / trials as f64;
    }
    Ok(stats)
}
