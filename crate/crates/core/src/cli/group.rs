use std::io::Write;

use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::state::State;
use super::{Cli, CliError, GroupCmd, MsgCmd, RelayCmd, WallCmd};
use crate::crypto::{address_of, PublicKey};
use crate::dht::{Requester, Session, SimConfig, SimTime};
use crate::protocol::{
    complete_join, create_group, create_principal, process_joins, read_inbox, read_member_list, read_root, read_wall,
    renew_keys_ban, request_join, resolve_name, send_private_message, send_relayed_message, write_wall, GroupPolicy,
    GroupRecord, InboxEntry, JoinDecision, Keystore, PrincipalIdentity, RoleView,
};

const ADMIN: Requester = Requester::Client(1);
const RESERVED: [&str; 3] = ["admin", "creator", "outsider"];

fn principal_tag(name: &str) -> Requester {
    let d = Sha256::new().chain_update(b"ppgm-cli-principal").chain_update(name).finalize();
    Requester::Client(u64::from_be_bytes(d[..8].try_into().expect("8 bytes")))
}

fn requester(who: &str) -> Requester {
    if RESERVED.contains(&who) {
        ADMIN
    } else {
        principal_tag(who)
    }
}

fn principal<'a>(ks: &'a Keystore, name: &str) -> Result<&'a PrincipalIdentity, CliError> {
    ks.principals.get(name).ok_or_else(|| CliError::Precondition(format!("no principal {name:?} in keystore")))
}

fn record<'a>(ks: &'a Keystore, group: &str) -> Result<&'a GroupRecord, CliError> {
    ks.groups
        .get(group)
        .ok_or_else(|| CliError::Precondition(format!("group {group:?} is not administered from this keystore")))
}

/// Root key of `group`: from the keystore when we created it, otherwise
/// through the directory.
fn root_key(ks: &Keystore, s: &mut Session<'_>, group: &str) -> Result<PublicKey, CliError> {
    if let Some(r) = ks.groups.get(group) {
        if let Some(k) = &r.keys {
            return Ok(k.root.public.clone());
        }
        if let Some(a) = &r.admin {
            return Ok(a.root_key.clone());
        }
    }
    Ok(resolve_name(s, group)?)
}

/// Principal key of `name`: keystore first, then the directory.
fn principal_key(ks: &Keystore, s: &mut Session<'_>, name: &str) -> Result<PublicKey, CliError> {
    match ks.principals.get(name) {
        Some(p) => Ok(p.principal.public.clone()),
        None => Ok(resolve_name(s, name)?),
    }
}

fn view_for(ks: &Keystore, s: &mut Session<'_>, who: &str, group: &str) -> Result<RoleView, CliError> {
    match who {
        "admin" => record(ks, group)?
            .admin
            .clone()
            .ok_or_else(|| CliError::Precondition(format!("no administrator keys for {group:?}"))),
        "creator" => {
            let r = record(ks, group)?;
            let keys = r.keys.as_ref().ok_or_else(|| CliError::Precondition(format!("not the creator of {group:?}")))?;
            Ok(keys.creator_view(r.policy))
        }
        "outsider" => {
            let root = root_key(ks, s, group)?;
            let info = read_root(s, &root)?;
            Ok(RoleView::outsider(root, info.inbox_key))
        }
        name => {
            let root = root_key(ks, s, group)?;
            principal(ks, name)?
                .membership(&root)
                .and_then(|m| m.view.clone())
                .ok_or_else(|| CliError::Precondition(format!("{name} has not completed a join to {group:?}")))
        }
    }
}

fn store_admin(st: &mut State, group: &str, view: RoleView) {
    if let Some(r) = st.keystore.groups.get_mut(group) {
        r.admin = Some(view);
        st.keystore_dirty = true;
    }
}

pub(super) fn run(cli: &Cli, cmd: &GroupCmd, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let fresh = SimConfig {
        put_capacity: cli.capacity,
        replication: cli.replication,
        ..SimConfig::with_seed(cli.seed)
    };
    let mut st = State::load(cli.snapshot.as_deref(), cli.keystore.as_deref(), &cli.passphrase, fresh)?;
    let mut rng = st.command_rng(cli.seed);
    let result = dispatch(&mut st, cmd, &mut rng, out, err);
    // The DHT keeps whatever the command managed to write, even on error.
    st.save(&mut rng)?;
    result
}

fn dispatch(
    st: &mut State,
    cmd: &GroupCmd,
    rng: &mut ChaCha20Rng,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    // Sessions start at the simulator clock.
    let now = SimTime::ZERO;
    match cmd {
        GroupCmd::Create { name, policy } => {
            if st.keystore.groups.contains_key(name) {
                return Err(CliError::Precondition(format!("keystore already holds a group named {name:?}")));
            }
            let policy = GroupPolicy::from(*policy);
            let mut s = Session::new(&mut st.sim, now, ADMIN);
            let keys = create_group(&mut s, policy, name, rng)?;
            writeln!(out, "created {name}")?;
            writeln!(out, "root {}", keys.root_address())?;
            writeln!(out, "inbox {}", keys.inbox_address())?;
            let admin = keys.administrator_view(policy);
            st.keystore.groups.insert(name.clone(), GroupRecord { policy, keys: Some(keys), admin: Some(admin) });
            st.keystore_dirty = true;
        }
        GroupCmd::Join { group, principal: name, complete, publish } => {
            if RESERVED.contains(&name.as_str()) {
                return Err(CliError::Precondition(format!("{name:?} is a reserved role name")));
            }
            let mut s = Session::new(&mut st.sim, now, principal_tag(name));
            let root = root_key(&st.keystore, &mut s, group)?;
            let mut p = match st.keystore.principals.get(name) {
                Some(p) => p.clone(),
                None => {
                    let p = create_principal(&mut s, publish.then_some(name.as_str()), rng)?;
                    writeln!(out, "principal {name} {}", address_of(&p.principal.public))?;
                    p
                }
            };
            let result = if *complete {
                complete_join(&mut s, &mut p, &root).map(|view| {
                    format!(
                        "member of {group} epoch={} list={} wall_read={} wall_write={}",
                        view.epoch,
                        view.list_sym.is_some(),
                        view.wall_sym.is_some(),
                        view.wall.is_some()
                    )
                })
            } else {
                request_join(&mut s, &mut p, &root, rng).map(|()| {
                    let inbox = &p.membership(&root).expect("request recorded").join_inbox.public;
                    format!("join request sent; helo expected at {}", address_of(inbox))
                })
            };
            st.keystore.principals.insert(name.clone(), p);
            st.keystore_dirty = true;
            writeln!(out, "{}", result?)?;
        }
        GroupCmd::ProcessJoins { group, actor } => {
            let mut s = Session::new(&mut st.sim, now, requester(&actor.who));
            let mut view = view_for(&st.keystore, &mut s, &actor.who, group)?;
            let batch = process_joins(&mut s, &mut view, rng)?;
            for o in &batch.outcomes {
                let decision = match o.decision {
                    JoinDecision::Accepted { counter } => format!("accepted counter={counter}"),
                    JoinDecision::AlreadyMember => "already_member".into(),
                    JoinDecision::RejectedStale { ticket, list } => format!("rejected_stale ticket={ticket} list={list}"),
                    JoinDecision::RejectedInvalidTicket => "rejected_invalid_ticket".into(),
                    JoinDecision::RejectedByPolicy => "rejected_by_policy".into(),
                };
                writeln!(out, "{} {decision} chunks={}", address_of(&o.principal), o.list_chunks)?;
            }
            if batch.skipped > 0 {
                writeln!(err, "skipped {} unreadable inbox entries", batch.skipped)?;
            }
            if actor.who == "admin" {
                store_admin(st, group, view);
            }
        }
        GroupCmd::Wall(WallCmd::Read { group, actor }) => {
            let mut s = Session::new(&mut st.sim, now, requester(&actor.who));
            let view = view_for(&st.keystore, &mut s, &actor.who, group)?;
            out.write_all(&read_wall(&mut s, &view)?)?;
        }
        GroupCmd::Wall(WallCmd::Write { group, actor, text, file }) => {
            let content = match (text, file) {
                (Some(t), _) => t.clone().into_bytes(),
                (None, Some(path)) => std::fs::read(path)?,
                (None, None) => unreachable!("clap requires one of --text and --file"),
            };
            let mut s = Session::new(&mut st.sim, now, requester(&actor.who));
            let view = view_for(&st.keystore, &mut s, &actor.who, group)?;
            let chunks = write_wall(&mut s, &view, &content, rng)?;
            writeln!(out, "wall written: {} bytes in {chunks} chunks", content.len())?;
        }
        GroupCmd::Members { group, actor } => {
            let mut s = Session::new(&mut st.sim, now, requester(&actor.who));
            let view = view_for(&st.keystore, &mut s, &actor.who, group)?;
            let list = read_member_list(&mut s, &view)?;
            for e in &list.list.entries {
                let inbox = if e.inbox.is_some() { "inbox" } else { "-" };
                writeln!(out, "{} {inbox}", address_of(&e.principal))?;
            }
            writeln!(err, "list counter={} members={} chunks={}", list.counter, list.list.len(), list.chunks)?;
        }
        GroupCmd::Msg(MsgCmd::Send { from, to, text }) => {
            let sender = principal(&st.keystore, from)?.principal.clone();
            let mut s = Session::new(&mut st.sim, now, principal_tag(from));
            let to_key = principal_key(&st.keystore, &mut s, to)?;
            let inbox = read_root(&mut s, &to_key)?.inbox_key;
            send_private_message(&mut s, &sender, &inbox, text.as_bytes(), rng)?;
            writeln!(out, "sent to {}", address_of(&inbox))?;
        }
        GroupCmd::Msg(MsgCmd::Read { principal: name }) => {
            let inbox = principal(&st.keystore, name)?.inbox.clone();
            let mut s = Session::new(&mut st.sim, now, principal_tag(name));
            for entry in read_inbox(&mut s, &inbox) {
                match entry {
                    InboxEntry::Private { sender, body } => {
                        writeln!(out, "from {}: {}", address_of(&sender), String::from_utf8_lossy(&body))?
                    }
                    InboxEntry::Public(body) => writeln!(out, "public: {}", String::from_utf8_lossy(&body))?,
                    InboxEntry::Forged => writeln!(out, "forged")?,
                    InboxEntry::Protocol(t) => writeln!(out, "protocol {t:?}")?,
                }
            }
        }
        GroupCmd::Relay(RelayCmd::Send { from, to, text, pf }) => {
            let sender = principal(&st.keystore, from)?.principal.clone();
            let mut s = Session::new(&mut st.sim, now, principal_tag(from));
            let to_key = principal_key(&st.keystore, &mut s, to)?;
            let inbox = read_root(&mut s, &to_key)?.inbox_key;
            let trace = send_relayed_message(&mut s, &sender, &inbox, text.as_bytes(), *pf, rng)?;
            writeln!(out, "relayed to {} extra_hops={}", address_of(&inbox), trace.extra_hops)?;
        }
        GroupCmd::Ban { group, member, actor } => {
            let mut s = Session::new(&mut st.sim, now, requester(&actor.who));
            let mut view = view_for(&st.keystore, &mut s, &actor.who, group)?;
            let banned = principal_key(&st.keystore, &mut s, member)?;
            let helos = renew_keys_ban(&mut s, &mut view, &banned, rng)?;
            writeln!(out, "banned {}; {helos} helos sent", address_of(&banned))?;
            if actor.who == "admin" {
                store_admin(st, group, view);
            }
        }
    }
    Ok(())
}
