//! C interface to the group protocols over a simulated DHT.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every call returns a [`PpgmStatus`]; outputs go
//! through pointer arguments. A simulator handle may be shared between
//! threads; group and principal handles may not be used concurrently.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;

use ppgm_core::crypto::PublicKey;
use ppgm_core::dht::{Requester, Session, SharedSimulator, SimConfig, SimTime, Simulator, SnapshotError};
use ppgm_core::protocol::{
    complete_join, create_group, create_principal, process_joins, read_member_list, read_wall, request_join,
    resolve_name, write_wall, GroupKeys, GroupPolicy, PrincipalIdentity, ProtocolError, RoleView,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpgmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    /// Missing keys, unknown name, nothing to do yet.
    Precondition = 3,
    /// A storing node refused a PUT.
    Rejected = 4,
    /// Forged or inconsistent data.
    Integrity = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpgmPolicy {
    Open = 0,
    SharedDocument = 1,
    TotallyPrivate = 2,
}

impl From<PpgmPolicy> for GroupPolicy {
    fn from(p: PpgmPolicy) -> Self {
        match p {
            PpgmPolicy::Open => GroupPolicy::open(),
            PpgmPolicy::SharedDocument => GroupPolicy::shared_document(),
            PpgmPolicy::TotallyPrivate => GroupPolicy::totally_private(),
        }
    }
}

impl From<ProtocolError> for PpgmStatus {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Node { .. } | ProtocolError::Creation { .. } | ProtocolError::Conflict(_) => Self::Rejected,
            ProtocolError::Integrity(_) | ProtocolError::Wire(_) => Self::Integrity,
            _ => Self::Precondition,
        }
    }
}

impl From<SnapshotError> for PpgmStatus {
    fn from(e: SnapshotError) -> Self {
        match e {
            SnapshotError::Io(_) => Self::Io,
            _ => Self::Integrity,
        }
    }
}

/// A simulated DHT plus the randomness used by operations on it.
pub struct PpgmSim {
    dht: SharedSimulator,
    rng: Mutex<ChaCha20Rng>,
}

/// A group as held by its creator and administrator.
pub struct PpgmGroup {
    keys: GroupKeys,
    admin: RoleView,
}

pub struct PpgmPrincipal {
    identity: PrincipalIdentity,
    tag: u64,
}

/// Bytes allocated by the library; release with `ppgm_buffer_free`.
#[repr(C)]
pub struct PpgmBuffer {
    pub data: *mut u8,
    pub len: usize,
}

const ADMIN: Requester = Requester::Client(1);

fn guard(f: impl FnOnce() -> Result<(), PpgmStatus>) -> PpgmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PpgmStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => PpgmStatus::Panic,
    }
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, PpgmStatus> {
    if p.is_null() {
        return Err(PpgmStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| PpgmStatus::InvalidArgument)
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], PpgmStatus> {
    match (data.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(PpgmStatus::NullArgument),
        (false, n) => Ok(std::slice::from_raw_parts(data, n)),
    }
}

unsafe fn handle<'a, T>(p: *mut T) -> Result<&'a mut T, PpgmStatus> {
    p.as_mut().ok_or(PpgmStatus::NullArgument)
}

unsafe fn put_out<T>(out: *mut T, value: T) -> Result<(), PpgmStatus> {
    if out.is_null() {
        return Err(PpgmStatus::NullArgument);
    }
    out.write(value);
    Ok(())
}

impl PpgmSim {
    fn with<T>(&self, who: Requester, f: impl FnOnce(&mut Session<'_>, &mut ChaCha20Rng) -> T) -> T {
        let mut dht = self.dht.clone();
        let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
        let mut s = Session::new(&mut dht, SimTime::ZERO, who);
        f(&mut s, &mut rng)
    }
}

fn resolve(s: &mut Session<'_>, name: &str) -> Result<PublicKey, PpgmStatus> {
    resolve_name(s, name).map_err(PpgmStatus::from)
}

fn member_view(p: &PpgmPrincipal, root: &PublicKey) -> Result<RoleView, PpgmStatus> {
    p.identity.membership(root).and_then(|m| m.view.clone()).ok_or(PpgmStatus::Precondition)
}

/// Short description of a status code; static storage.
#[no_mangle]
pub extern "C" fn ppgm_status_str(status: PpgmStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        PpgmStatus::Ok => b"ok\0",
        PpgmStatus::NullArgument => b"null argument\0",
        PpgmStatus::InvalidArgument => b"invalid argument\0",
        PpgmStatus::Precondition => b"precondition failed\0",
        PpgmStatus::Rejected => b"rejected by storing node\0",
        PpgmStatus::Integrity => b"integrity alarm\0",
        PpgmStatus::Io => b"i/o error\0",
        PpgmStatus::Panic => b"internal error\0",
    };
    s.as_ptr().cast()
}

/// New simulator with the default latency model.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ppgm_sim_new(seed: u64, capacity: usize, replication: u32, out: *mut *mut PpgmSim) -> PpgmStatus {
    guard(|| {
        let config = SimConfig { put_capacity: capacity, replication, ..SimConfig::with_seed(seed) };
        let sim = Simulator::new(config).map_err(|_| PpgmStatus::InvalidArgument)?;
        let handle = PpgmSim { dht: SharedSimulator::new(sim), rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)) };
        put_out(out, Box::into_raw(Box::new(handle)))
    })
}

/// Restores a simulator snapshot; `seed` drives later operations.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ppgm_sim_load(path: *const c_char, seed: u64, out: *mut *mut PpgmSim) -> PpgmStatus {
    guard(|| {
        let sim = Simulator::load(Path::new(cstr(path)?))?;
        let handle = PpgmSim { dht: SharedSimulator::new(sim), rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)) };
        put_out(out, Box::into_raw(Box::new(handle)))
    })
}

/// # Safety
/// `sim` must come from `ppgm_sim_new` or `ppgm_sim_load`; `path` must be
/// a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ppgm_sim_save(sim: *mut PpgmSim, path: *const c_char) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let path = cstr(path)?;
        sim.dht.lock().save(Path::new(path))?;
        Ok(())
    })
}

/// Number of DHT operations applied so far.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ppgm_sim_op_count(sim: *mut PpgmSim, out: *mut u64) -> PpgmStatus {
    guard(|| {
        let n = handle(sim)?.dht.lock().op_count();
        put_out(out, n)
    })
}

/// # Safety
/// `sim` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppgm_sim_free(sim: *mut PpgmSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Creates a group and publishes `name` in the directory.
///
/// # Safety
/// `sim` must be a live handle, `name` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ppgm_group_create(
    sim: *mut PpgmSim,
    name: *const c_char,
    policy: PpgmPolicy,
    out: *mut *mut PpgmGroup,
) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let name = cstr(name)?;
        let policy = GroupPolicy::from(policy);
        let keys = sim.with(ADMIN, |s, rng| create_group(s, policy, name, rng))?;
        let admin = keys.administrator_view(policy);
        put_out(out, Box::into_raw(Box::new(PpgmGroup { keys, admin })))
    })
}

/// Processes pending join requests; `accepted` receives the number admitted.
///
/// # Safety
/// `sim` and `group` must be live handles; `accepted` may be null.
#[no_mangle]
pub unsafe extern "C" fn ppgm_group_process_joins(sim: *mut PpgmSim, group: *mut PpgmGroup, accepted: *mut usize) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let group = handle(group)?;
        let batch = sim.with(ADMIN, |s, rng| process_joins(s, &mut group.admin, rng))?;
        if !accepted.is_null() {
            accepted.write(batch.outcomes.iter().filter(|o| o.decision.is_accepted()).count());
        }
        Ok(())
    })
}

/// Current member count and list counter, as read by the administrator.
///
/// # Safety
/// `sim` and `group` must be live handles; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn ppgm_group_members(
    sim: *mut PpgmSim,
    group: *mut PpgmGroup,
    count: *mut usize,
    counter: *mut u64,
) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let group = handle(group)?;
        let list = sim.with(ADMIN, |s, _| read_member_list(s, &group.admin))?;
        if !count.is_null() {
            count.write(list.list.len());
        }
        if !counter.is_null() {
            counter.write(list.counter);
        }
        Ok(())
    })
}

/// Writes the wall with the administrator's keys.
///
/// # Safety
/// `sim` and `group` must be live handles; `data` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ppgm_group_wall_write(sim: *mut PpgmSim, group: *mut PpgmGroup, data: *const u8, len: usize) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let group = handle(group)?;
        let content = bytes(data, len)?;
        sim.with(ADMIN, |s, rng| write_wall(s, &group.admin, content, rng))?;
        Ok(())
    })
}

/// The group's root address (20 bytes) into `out`.
///
/// # Safety
/// `group` must be a live handle and `out` must have room for 20 bytes.
#[no_mangle]
pub unsafe extern "C" fn ppgm_group_root_address(group: *mut PpgmGroup, out: *mut u8) -> PpgmStatus {
    guard(|| {
        let group = handle(group)?;
        if out.is_null() {
            return Err(PpgmStatus::NullArgument);
        }
        let addr = group.keys.root_address();
        std::ptr::copy_nonoverlapping(addr.as_bytes().as_ptr(), out, 20);
        Ok(())
    })
}

/// # Safety
/// `group` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppgm_group_free(group: *mut PpgmGroup) {
    if !group.is_null() {
        drop(Box::from_raw(group));
    }
}

/// Creates an anonymous principal (nothing goes to the directory).
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ppgm_principal_new(sim: *mut PpgmSim, tag: u64, out: *mut *mut PpgmPrincipal) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let identity = sim.with(Requester::Client(tag), |s, rng| create_principal(s, None, rng))?;
        put_out(out, Box::into_raw(Box::new(PpgmPrincipal { identity, tag })))
    })
}

/// Sends a join request to the group registered under `group_name`.
///
/// # Safety
/// `sim` and `principal` must be live handles; `group_name` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ppgm_principal_request_join(
    sim: *mut PpgmSim,
    principal: *mut PpgmPrincipal,
    group_name: *const c_char,
) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let p = handle(principal)?;
        let name = cstr(group_name)?;
        sim.with(Requester::Client(p.tag), |s, rng| {
            let root = resolve(s, name)?;
            request_join(s, &mut p.identity, &root, rng).map_err(PpgmStatus::from)
        })
    })
}

/// Picks up the helo; `Precondition` while none has arrived.
///
/// # Safety
/// `sim` and `principal` must be live handles; `group_name` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ppgm_principal_complete_join(
    sim: *mut PpgmSim,
    principal: *mut PpgmPrincipal,
    group_name: *const c_char,
) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let p = handle(principal)?;
        let name = cstr(group_name)?;
        sim.with(Requester::Client(p.tag), |s, _| {
            let root = resolve(s, name)?;
            complete_join(s, &mut p.identity, &root).map(|_| ()).map_err(PpgmStatus::from)
        })
    })
}

/// Reads the wall as a member. On success `out` owns a new buffer.
///
/// # Safety
/// `sim` and `principal` must be live handles; `group_name` NUL-terminated;
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ppgm_principal_wall_read(
    sim: *mut PpgmSim,
    principal: *mut PpgmPrincipal,
    group_name: *const c_char,
    out: *mut PpgmBuffer,
) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let p = handle(principal)?;
        let name = cstr(group_name)?;
        if out.is_null() {
            return Err(PpgmStatus::NullArgument);
        }
        let content = sim.with(Requester::Client(p.tag), |s, _| {
            let root = resolve(s, name)?;
            let view = member_view(p, &root)?;
            read_wall(s, &view).map_err(PpgmStatus::from)
        })?;
        let boxed = content.into_boxed_slice();
        let len = boxed.len();
        out.write(PpgmBuffer { data: Box::into_raw(boxed).cast(), len });
        Ok(())
    })
}

/// Replaces the wall content as a member holding the wall signing key.
///
/// # Safety
/// `sim` and `principal` must be live handles; `group_name` NUL-terminated;
/// `data` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ppgm_principal_wall_write(
    sim: *mut PpgmSim,
    principal: *mut PpgmPrincipal,
    group_name: *const c_char,
    data: *const u8,
    len: usize,
) -> PpgmStatus {
    guard(|| {
        let sim = handle(sim)?;
        let p = handle(principal)?;
        let name = cstr(group_name)?;
        let content = bytes(data, len)?;
        sim.with(Requester::Client(p.tag), |s, rng| {
            let root = resolve(s, name)?;
            let view = member_view(p, &root)?;
            write_wall(s, &view, content, rng).map(|_| ()).map_err(PpgmStatus::from)
        })
    })
}

/// # Safety
/// `principal` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppgm_principal_free(principal: *mut PpgmPrincipal) {
    if !principal.is_null() {
        drop(Box::from_raw(principal));
    }
}

/// # Safety
/// `buf` must be null or point to a buffer filled by this library.
#[no_mangle]
pub unsafe extern "C" fn ppgm_buffer_free(buf: *mut PpgmBuffer) {
    let Some(b) = buf.as_mut() else { return };
    if !b.data.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(b.data, b.len)));
    }
    b.data = std::ptr::null_mut();
    b.len = 0;
}
