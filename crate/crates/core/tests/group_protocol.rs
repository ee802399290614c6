use ppgm_core::crypto::{address_of, directory_address, KeyPair};
use ppgm_core::dht::{AddressSelector, AddressState, NodeBehavior, Op, LatencyModel, Requester, Session, SimConfig, SimTime, Simulator};
use ppgm_core::protocol::*;
use ppgm_core::wire::{
    open_once_ticket, reassemble_inbox, seal_helo, HeloBody, InboxMessage, MemberList, RecordType,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Every node follows the rules and logs what it sees.
fn sim(seed: u64) -> Simulator {
    let mut sim = Simulator::new(SimConfig { latency: LatencyModel::zero(), ..SimConfig::with_seed(seed) }).unwrap();
    sim.install_behavior(AddressSelector::All, NodeBehavior::PassiveObserver);
    sim
}

fn session(sim: &mut Simulator) -> Session<'_> {
    Session::new(sim, SimTime::ZERO, Requester::Client(7))
}

fn setup(seed: u64, policy: GroupPolicy) -> (Simulator, GroupKeys, RoleView, ChaCha20Rng) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sim = sim(seed);
    let keys = create_group(&mut session(&mut sim), policy, "demo", &mut rng).unwrap();
    let admin = keys.administrator_view(policy);
    (sim, keys, admin, rng)
}

fn join(
    s: &mut Session<'_>,
    keys: &GroupKeys,
    admin: &mut RoleView,
    rng: &mut ChaCha20Rng,
) -> (PrincipalIdentity, RoleView) {
    let mut p = create_principal(s, None, rng).unwrap();
    request_join(s, &mut p, &keys.root.public, rng).unwrap();
    let batch = process_joins(s, admin, rng).unwrap();
    assert!(batch.outcomes.iter().all(|o| o.decision.is_accepted()), "{batch:?}");
    let view = complete_join(s, &mut p, &keys.root.public).unwrap();
    (p, view)
}

fn helo_count(s: &mut Session<'_>, p: &PrincipalIdentity, root: &ppgm_core::crypto::PublicKey) -> usize {
    let kj = &p.membership(root).unwrap().join_inbox;
    let cell: Vec<Vec<u8>> = s.get(&address_of(&kj.public)).values().into_iter().map(<[u8]>::to_vec).collect();
    reassemble_inbox(&cell).messages.iter().filter(|(_, m)| m.rtype == RecordType::Helo).count()
}

#[test]
fn creation_stores_empty_list_wall_and_ticket() {
    let (mut sim, keys, admin, _) = setup(1, GroupPolicy::shared_document());
    let mut s = session(&mut sim);
    let list = read_member_list(&mut s, &admin).unwrap();
    assert_eq!(list.counter, 0);
    assert!(list.list.is_empty());
    assert_eq!(read_wall(&mut s, &admin).unwrap(), b"");
    let once: Vec<Vec<u8>> = s.get(&keys.once_address()).values().into_iter().map(<[u8]>::to_vec).collect();
    let tickets = reassemble_inbox(&once).messages;
    assert_eq!(tickets.len(), 1);
    assert_eq!(open_once_ticket(&tickets[0].1, &keys.list).unwrap(), 0);
    assert_eq!(resolve_name(&mut s, "demo").unwrap(), keys.root.public);
    let root = read_root(&mut s, &keys.root.public).unwrap();
    assert_eq!(root.inbox_key, keys.inbox.public);
}

#[test]
fn creation_on_occupied_addresses_is_rejected() {
    let mut sim = sim(2);
    let mut s = session(&mut sim);
    let policy = GroupPolicy::shared_document();
    create_group(&mut s, policy, "a", &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
    let err = create_group(&mut s, policy, "b", &mut ChaCha20Rng::seed_from_u64(9)).unwrap_err();
    assert!(matches!(err, ProtocolError::Creation { component: "root", .. }), "{err:?}");
}

#[test]
fn taken_name_is_a_precondition_failure() {
    let (mut sim, _, _, mut rng) = setup(3, GroupPolicy::open());
    let err = create_group(&mut session(&mut sim), GroupPolicy::open(), "demo", &mut rng).unwrap_err();
    assert!(matches!(err, ProtocolError::Precondition(_)));
}

#[test]
fn directory_lookup_and_squatting() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut sim = sim(4);
    let mut s = session(&mut sim);
    assert!(matches!(lookup_name(&mut s, "nobody"), Err(ProtocolError::NotFound(_))));
    let squatter = KeyPair::generate(&mut rng);
    let owner = KeyPair::generate(&mut rng);
    publish_name(&mut s, "bank", &squatter).unwrap();
    publish_name(&mut s, "bank", &owner).unwrap();
    // A record whose signature does not match is skipped.
    s.put(&directory_address("bank"), b"garbage");
    assert_eq!(lookup_name(&mut s, "bank").unwrap(), vec![squatter.public.clone(), owner.public]);
    assert_eq!(resolve_name(&mut s, "bank").unwrap(), squatter.public);
}

#[test]
fn anonymous_principal_leaves_directory_alone() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut sim = sim(5);
    let p = create_principal(&mut session(&mut sim), None, &mut rng).unwrap();
    let touched: Vec<_> = sim.addresses().map(|(a, _)| *a).collect();
    assert_eq!(touched, vec![address_of(&p.principal.public)]);
    assert!(matches!(sim.state(&touched[0]), AddressState::Captured { .. }));

    let q = create_principal(&mut session(&mut sim), Some("carol"), &mut rng).unwrap();
    assert_eq!(resolve_name(&mut session(&mut sim), "carol").unwrap(), q.principal.public);
}

#[test]
fn two_principals_share_no_key_bytes() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut sim = sim(6);
    let mut s = session(&mut sim);
    let a = create_principal(&mut s, None, &mut rng).unwrap();
    let b = create_principal(&mut s, None, &mut rng).unwrap();
    let material = |p: &PrincipalIdentity| {
        let mut v = p.principal.public.as_bytes().to_vec();
        v.extend_from_slice(p.principal.private.as_bytes());
        v
    };
    let (ma, mb) = (material(&a), material(&b));
    // No common 8-byte run; random keys may share single bytes.
    for w in ma.windows(8) {
        assert!(!mb.windows(8).any(|x| x == w));
    }
}

#[test]
fn join_ticket_boundaries() {
    let (mut sim, keys, mut admin, mut rng) = setup(7, GroupPolicy::shared_document());
    let mut s = session(&mut sim);
    // Raise the list counter to 5 with direct additions.
    for _ in 0..5 {
        let k = KeyPair::generate(&mut rng);
        admin_add_member(&mut s, &admin, &k.public, Some(&k.public), &mut rng).unwrap();
    }
    assert_eq!(read_member_list(&mut s, &admin).unwrap().counter, 5);

    // Ticket fetched at 5 while the list is at 5.
    let mut fresh = create_principal(&mut s, None, &mut rng).unwrap();
    request_join(&mut s, &mut fresh, &keys.root.public, &mut rng).unwrap();
    // Ticket fetched at 5, list moves to 6 before processing.
    let mut stale = create_principal(&mut s, None, &mut rng).unwrap();
    request_join(&mut s, &mut stale, &keys.root.public, &mut rng).unwrap();
    let batch = process_joins(&mut s, &mut admin, &mut rng).unwrap();
    assert_eq!(batch.outcomes.len(), 2);
    assert_eq!(batch.outcomes[0].decision, JoinDecision::Accepted { counter: 6 });
    assert_eq!(batch.outcomes[1].decision, JoinDecision::RejectedStale { ticket: 5, list: 6 });
    assert!(matches!(complete_join(&mut s, &mut stale, &keys.root.public), Err(ProtocolError::Pending(_))));

    // Re-requesting fetches the refreshed ticket and reuses K_j.
    let kj = stale.membership(&keys.root.public).unwrap().join_inbox.clone();
    request_join(&mut s, &mut stale, &keys.root.public, &mut rng).unwrap();
    assert_eq!(stale.memberships.len(), 1);
    assert_eq!(stale.memberships[0].join_inbox, kj);
    let batch = process_joins(&mut s, &mut admin, &mut rng).unwrap();
    assert_eq!(batch.outcomes[0].decision, JoinDecision::Accepted { counter: 7 });
    complete_join(&mut s, &mut stale, &keys.root.public).unwrap();
}

#[test]
fn garbled_requests_are_skipped_and_counted() {
    let (mut sim, keys, mut admin, mut rng) = setup(8, GroupPolicy::shared_document());
    let mut s = session(&mut sim);
    send_public_message(&mut s, &keys.inbox_address(), b"hello", &mut rng).unwrap();
    let junk = InboxMessage::new(RecordType::Join, vec![1, 2, 3]);
    s.put(&keys.inbox_address(), &junk.to_bytes());
    s.put(&keys.inbox_address(), b"\xff not a message");
    let batch = process_joins(&mut s, &mut admin, &mut rng).unwrap();
    assert!(batch.outcomes.is_empty());
    assert_eq!(batch.skipped, 2);
    // The cursor moved past them.
    assert_eq!(process_joins(&mut s, &mut admin, &mut rng).unwrap(), JoinBatch::default());
}

#[test]
fn doc_editing_member_gets_wall_keys() {
    let (mut sim, keys, mut admin, mut rng) = setup(9, GroupPolicy::shared_document());
    let mut s = session(&mut sim);
    let (p, view) = join(&mut s, &keys, &mut admin, &mut rng);
    assert_eq!(view.role, Role::Member);
    assert_eq!(view.wall_sym.as_ref(), Some(&keys.wall_sym));
    assert_eq!(view.wall.as_ref(), Some(&keys.wall));
    assert!(view.list_sym.is_none());
    write_wall(&mut s, &view, b"old", &mut rng).unwrap();
    assert_eq!(read_wall(&mut s, &admin).unwrap(), b"old");
    write_wall(&mut s, &admin, b"new", &mut rng).unwrap();
    assert_eq!(read_wall(&mut s, &view).unwrap(), b"new");
    assert_eq!(helo_count(&mut s, &p, &keys.root.public), 1);
}

#[test]
fn role_capabilities() {
    let (mut sim, keys, mut admin, mut rng) = setup(10, GroupPolicy::totally_private());
    let mut s = session(&mut sim);
    let creator = keys.creator_view(GroupPolicy::totally_private());
    assert!(matches!(process_joins(&mut s, &mut creator.clone(), &mut rng), Err(ProtocolError::AccessDenied(_))));

    let mut p = create_principal(&mut s, None, &mut rng).unwrap();
    request_join(&mut s, &mut p, &keys.root.public, &mut rng).unwrap();
    let decisions = admin_process_join(&mut s, &mut admin, &mut |_| false, &mut rng).unwrap();
    assert_eq!(decisions.outcomes[0].decision, JoinDecision::RejectedByPolicy);
    request_join(&mut s, &mut p, &keys.root.public, &mut rng).unwrap();
    let decisions = admin_process_join(&mut s, &mut admin, &mut |_| true, &mut rng).unwrap();
    assert!(decisions.outcomes[0].decision.is_accepted());
    let member = complete_join(&mut s, &mut p, &keys.root.public).unwrap();

    assert!(matches!(read_wall(&mut s, &member), Err(ProtocolError::AccessDenied(_))));
    assert!(matches!(write_wall(&mut s, &member, b"x", &mut rng), Err(ProtocolError::AccessDenied(_))));
    assert!(matches!(read_member_list(&mut s, &member), Err(ProtocolError::AccessDenied(_))));

    // An outsider who somehow holds the public list key still cannot decrypt.
    let mut outsider = RoleView::outsider(keys.root.public.clone(), keys.inbox.public.clone());
    outsider.list_key = Some(keys.list.public.clone());
    outsider.list_sym = Some(ppgm_core::crypto::SymKey::generate(&mut rng));
    assert_eq!(read_member_list(&mut s, &outsider).unwrap_err(), ProtocolError::Undecryptable("member list"));
}

#[test]
fn member_without_wall_signing_key_cannot_write() {
    let policy = GroupPolicy { wall_member_write: false, ..GroupPolicy::shared_document() };
    let (mut sim, keys, mut admin, mut rng) = setup(11, policy);
    let mut s = session(&mut sim);
    let (_, view) = join(&mut s, &keys, &mut admin, &mut rng);
    assert_eq!(read_wall(&mut s, &view).unwrap(), b"");
    assert_eq!(write_wall(&mut s, &view, b"x", &mut rng).unwrap_err(), ProtocolError::AccessDenied("wall signing key K_w^-1"));
}

#[test]
fn public_list_readable_by_outsiders() {
    let (mut sim, keys, mut admin, mut rng) = setup(12, GroupPolicy::open());
    let mut s = session(&mut sim);
    join(&mut s, &keys, &mut admin, &mut rng);
    join(&mut s, &keys, &mut admin, &mut rng);
    let outsider = RoleView::outsider(keys.root.public.clone(), keys.inbox.public.clone());
    let list = read_member_list(&mut s, &outsider).unwrap();
    assert_eq!(list.list.len(), 2);
    assert_eq!(list.counter, 2);
}

#[test]
fn completion_ignores_spam_and_flags_forged_helos() {
    let (mut sim, keys, mut admin, mut rng) = setup(13, GroupPolicy::shared_document());
    let mut s = session(&mut sim);
    let mut p = create_principal(&mut s, None, &mut rng).unwrap();
    request_join(&mut s, &mut p, &keys.root.public, &mut rng).unwrap();
    let kj = p.memberships[0].join_inbox.public.clone();
    send_public_message(&mut s, &address_of(&kj), b"buy now", &mut rng).unwrap();
    assert!(matches!(complete_join(&mut s, &mut p, &keys.root.public), Err(ProtocolError::Pending(_))));

    // A helo signed by someone other than the group inbox key.
    let mallory = KeyPair::generate(&mut rng);
    let fake = HeloBody { epoch: 9, list_key: mallory.public.clone(), wall_key: mallory.public.clone(), keys: vec![] };
    let forged = seal_helo(&fake, &mallory, &kj, &mut rng);
    s.put(&address_of(&kj), &forged.to_bytes());
    assert!(matches!(complete_join(&mut s, &mut p, &keys.root.public), Err(ProtocolError::Integrity(_))));

    process_joins(&mut s, &mut admin, &mut rng).unwrap();
    let view = complete_join(&mut s, &mut p, &keys.root.public).unwrap();
    assert_eq!(view.wall_key.as_ref(), Some(&keys.wall.public));
    assert_eq!(view.epoch, 0);
}

#[test]
fn rejoin_is_idempotent() {
    let (mut sim, keys, mut admin, mut rng) = setup(14, GroupPolicy::shared_document());
    let mut s = session(&mut sim);
    let (mut p, _) = join(&mut s, &keys, &mut admin, &mut rng);
    request_join(&mut s, &mut p, &keys.root.public, &mut rng).unwrap();
    let batch = process_joins(&mut s, &mut admin, &mut rng).unwrap();
    assert_eq!(batch.outcomes[0].decision, JoinDecision::AlreadyMember);
    let list = read_member_list(&mut s, &admin).unwrap();
    assert_eq!((list.counter, list.list.len()), (1, 1));
    assert_eq!(helo_count(&mut s, &p, &keys.root.public), 1);
}

#[test]
fn join_request_hides_principal_key_from_storing_node() {
    let (mut sim, keys, _, mut rng) = setup(15, GroupPolicy::shared_document());
    sim.clear_log();
    let mut p = create_principal(&mut session(&mut sim), None, &mut rng).unwrap();
    sim.clear_log();
    request_join(&mut session(&mut sim), &mut p, &keys.root.public, &mut rng).unwrap();
    let pk = p.principal.public.as_bytes();
    assert_eq!(sim.log_for(&keys.inbox_address()).count(), 1);
    for obs in sim.log_for(&keys.inbox_address()) {
        for v in &obs.values {
            assert!(!v.windows(pk.len()).any(|w| w == pk));
        }
    }
    let cell = sim.state(&keys.inbox_address());
    assert!(matches!(cell, AddressState::RawCell { entries } if entries.len() == 1));
}

#[test]
fn messages() {
    let mut rng = ChaCha20Rng::seed_from_u64(16);
    let mut sim = sim(16);
    let mut s = session(&mut sim);
    let alice = create_principal(&mut s, None, &mut rng).unwrap();
    let bob = create_principal(&mut s, None, &mut rng).unwrap();
    let inbox = KeyPair::generate(&mut rng);
    for i in 0..10u8 {
        send_public_message(&mut s, &address_of(&inbox.public), &[i], &mut rng).unwrap();
    }
    let got = read_inbox(&mut s, &inbox);
    assert_eq!(got, (0..10u8).map(|i| InboxEntry::Public(vec![i])).collect::<Vec<_>>());

    // A captured address refuses appends.
    let err = send_public_message(&mut s, &address_of(&alice.principal.public), b"x", &mut rng).unwrap_err();
    assert!(matches!(err, ProtocolError::Node { .. }));

    let body = b"meet at the usual place".to_vec();
    // Bob's inbox key is announced in his root.
    let bob_inbox = read_root(&mut s, &bob.principal.public).unwrap().inbox_key;
    assert_eq!(bob_inbox, bob.inbox.public);
    send_private_message(&mut s, &alice.principal, &bob_inbox, &body, &mut rng).unwrap();
    let entries = read_inbox(&mut s, &bob.inbox);
    assert_eq!(entries, vec![InboxEntry::Private { sender: alice.principal.public.clone(), body: body.clone() }]);
    // Another key pair cannot open it.
    assert_eq!(read_inbox(&mut s, &inbox).len(), 10);
    let mut eve = bob.inbox.clone();
    eve.private = KeyPair::generate(&mut rng).private;
    assert!(matches!(read_inbox(&mut s, &eve).as_slice(), [InboxEntry::Public(ct)] if ct.as_slice() != body.as_slice()));
    let addr = address_of(&bob_inbox);
    let logged: Vec<u8> = sim.log_for(&addr).flat_map(|o| o.values.concat()).collect();
    assert!(logged.len() > body.len());
    assert!(!logged.windows(body.len()).any(|w| w == body.as_slice()));
    let pk = alice.principal.public.as_bytes();
    assert!(!logged.windows(pk.len()).any(|w| w == pk));
}

#[test]
fn relay_delivers_through_last_hop() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let mut sim = sim(17);
    let mut s = Session::new(&mut sim, SimTime::ZERO, Requester::Client(42));
    let alice = create_principal(&mut s, None, &mut rng).unwrap();
    let bob = create_principal(&mut s, None, &mut rng).unwrap();
    for bad in [0.5, 1.0, 0.2] {
        let e = send_relayed_message(&mut s, &alice.principal, &bob.principal.public, b"x", bad, &mut rng);
        assert!(matches!(e, Err(ProtocolError::Precondition(_))));
    }
    let trace = send_relayed_message(&mut s, &alice.principal, &bob.inbox.public, b"hi", 0.75, &mut rng).unwrap();
    assert_eq!(trace.path.len() as u32, trace.extra_hops + 1);
    assert_eq!(trace.delivered_by, Requester::Node(*trace.path.last().unwrap()));
    assert!(!trace.truncated);
    assert_eq!(
        read_inbox(&mut s, &bob.inbox),
        vec![InboxEntry::Private { sender: alice.principal.public.clone(), body: b"hi".to_vec() }]
    );
    let bob_addr = address_of(&bob.inbox.public);
    let last = sim.log_for(&bob_addr).filter(|o| o.op == Op::Put).last().unwrap();
    assert_eq!(last.requester, trace.delivered_by);
    assert_ne!(last.requester, Requester::Client(42));
}

#[test]
fn large_wall_roundtrip() {
    let (mut sim, _, admin, mut rng) = setup(18, GroupPolicy::shared_document());
    let mut s = session(&mut sim);
    let content: Vec<u8> = (0..55296u32).map(|i| (i * 31 % 251) as u8).collect();
    let chunks = write_wall(&mut s, &admin, &content, &mut rng).unwrap();
    assert_eq!(chunks, sealed_chunk_count(content.len(), 512));
    assert_eq!(read_wall(&mut s, &admin).unwrap(), content);
    // Shrinking leaves stale tail chunks that the reader ignores.
    write_wall(&mut s, &admin, b"short", &mut rng).unwrap();
    assert_eq!(read_wall(&mut s, &admin).unwrap(), b"short");
}

#[test]
fn ban_rotates_wall_and_shrinks_list() {
    let (mut sim, keys, mut admin, mut rng) = setup(19, GroupPolicy::shared_document());
    let mut s = session(&mut sim);
    let mut members: Vec<_> = (0..3).map(|_| join(&mut s, &keys, &mut admin, &mut rng)).collect();
    write_wall(&mut s, &admin, b"minutes", &mut rng).unwrap();
    let before = read_member_list(&mut s, &admin).unwrap();

    let (banned, banned_view) = members.remove(1);
    assert!(matches!(
        renew_keys_ban(&mut s, &mut admin, &KeyPair::generate(&mut rng).public, &mut rng),
        Err(ProtocolError::Precondition(_))
    ));
    let sent = renew_keys_ban(&mut s, &mut admin, &banned.principal.public, &mut rng).unwrap();
    assert_eq!(sent, 2);
    let after = read_member_list(&mut s, &admin).unwrap();
    assert_eq!(after.list.len(), before.list.len() - 1);
    assert_eq!(after.counter, before.counter + 1);
    assert!(!after.list.contains(&banned.principal.public));

    // The banned member keeps the old keys, which do not open the new wall.
    let mut stale = banned_view.clone();
    stale.wall_key = admin.wall_key.clone();
    assert_eq!(read_wall(&mut s, &stale).unwrap_err(), ProtocolError::Undecryptable("wall"));
    let mut banned = banned;
    let still = complete_join(&mut s, &mut banned, &keys.root.public).unwrap();
    assert_eq!(still.epoch, 0);
    assert_ne!(still.wall_key, admin.wall_key);

    let views: Vec<RoleView> =
        members.iter_mut().map(|(p, _)| complete_join(&mut s, p, &keys.root.public).unwrap()).collect();
    for view in &views {
        assert_eq!(view.epoch, 1);
        assert_eq!(read_wall(&mut s, view).unwrap(), b"minutes");
    }
    write_wall(&mut s, &views[0], b"edited", &mut rng).unwrap();
    assert_eq!(read_wall(&mut s, &views[1]).unwrap(), b"edited");
    assert_eq!(read_wall(&mut s, &admin).unwrap(), b"edited");
}

#[test]
fn ban_refused_when_a_member_inbox_is_unknown() {
    let (mut sim, keys, mut admin, mut rng) = setup(20, GroupPolicy::shared_document());
    let mut s = session(&mut sim);
    let (p, _) = join(&mut s, &keys, &mut admin, &mut rng);
    let sub = KeyPair::generate(&mut rng);
    admin_add_member(&mut s, &admin, &sub.public, None, &mut rng).unwrap();
    let err = renew_keys_ban(&mut s, &mut admin, &p.principal.public, &mut rng).unwrap_err();
    assert!(matches!(err, ProtocolError::Precondition(_)));
    assert_eq!(read_member_list(&mut s, &admin).unwrap().list.len(), 2);
}

#[test]
fn member_list_encoding_is_stable() {
    let (mut sim, keys, mut admin, mut rng) = setup(21, GroupPolicy::open());
    let mut s = session(&mut sim);
    let (p, _) = join(&mut s, &keys, &mut admin, &mut rng);
    let list = read_member_list(&mut s, &admin).unwrap().list;
    assert_eq!(MemberList::decode(&list.encode()).unwrap(), list);
    assert_eq!(list.entries[0].principal, p.principal.public);
    assert_eq!(list.entries[0].inbox.as_ref(), Some(&p.memberships[0].join_inbox.public));
}
