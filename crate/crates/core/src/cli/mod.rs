//! Command-line front end and the simulated workload it drives.
//!
//! Group commands load the simulator snapshot and the keystore, run one
//! protocol operation and write both back. Harness commands (`sim`,
//! `attack`, `audit`) build their own simulators from the seed.

mod group;
mod harness;
pub mod scenario;
pub mod state;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dht::SnapshotError;
use crate::protocol::{GroupPolicy, KeystoreError, ProtocolError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
/// Missing keys, unknown names, nothing to do yet.
pub const EXIT_PRECONDITION: i32 = 3;
/// A storing node refused a PUT.
pub const EXIT_REJECTED: i32 = 4;
/// Forged or inconsistent data, or a failed audit.
pub const EXIT_INTEGRITY: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Rejected(String),
    #[error("{0}")]
    Integrity(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Precondition(_) => EXIT_PRECONDITION,
            Self::Rejected(_) => EXIT_REJECTED,
            Self::Integrity(_) => EXIT_INTEGRITY,
            Self::Io(_) => EXIT_IO,
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        let msg = e.to_string();
        match e {
            ProtocolError::Node { .. } | ProtocolError::Creation { .. } | ProtocolError::Conflict(_) => {
                Self::Rejected(msg)
            }
            ProtocolError::Integrity(_) | ProtocolError::Wire(_) => Self::Integrity(msg),
            ProtocolError::Precondition(_)
            | ProtocolError::AccessDenied(_)
            | ProtocolError::Undecryptable(_)
            | ProtocolError::NotFound(_)
            | ProtocolError::Pending(_) => Self::Precondition(msg),
        }
    }
}

impl From<SnapshotError> for CliError {
    fn from(e: SnapshotError) -> Self {
        match e {
            SnapshotError::Io(io) => Self::Io(format!("snapshot: {io}")),
            other => Self::Integrity(other.to_string()),
        }
    }
}

impl From<KeystoreError> for CliError {
    fn from(e: KeystoreError) -> Self {
        match e {
            KeystoreError::Io(io) => Self::Io(format!("keystore: {io}")),
            KeystoreError::Decrypt => Self::Precondition("keystore: wrong passphrase".into()),
            other => Self::Integrity(format!("keystore: {other}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ppgm", version, about = "Private group management over a simulated DHT")]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Simulator snapshot (default: $PPGM_STATE_DIR/sim.snap).
    #[arg(long, global = true, value_name = "PATH")]
    pub snapshot: Option<PathBuf>,
    /// Encrypted keystore (default: $PPGM_STATE_DIR/keystore.ppgk).
    #[arg(long, global = true, value_name = "PATH")]
    pub keystore: Option<PathBuf>,
    #[arg(long, global = true, env = "PPGM_PASSPHRASE", default_value = "", hide_env_values = true)]
    pub passphrase: String,
    /// Bytes per PUT value.
    #[arg(long, global = true, default_value_t = 512)]
    pub capacity: usize,
    #[arg(long, global = true, default_value_t = 19)]
    pub replication: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group operations against the persisted simulator.
    #[command(subcommand)]
    Group(GroupCmd),
    #[command(subcommand)]
    Sim(SimCmd),
    #[command(subcommand)]
    Attack(AttackCmd),
    #[command(subcommand)]
    Audit(AuditCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Open,
    SharedDocument,
    TotallyPrivate,
}

impl From<PolicyArg> for GroupPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Open => GroupPolicy::open(),
            PolicyArg::SharedDocument => GroupPolicy::shared_document(),
            PolicyArg::TotallyPrivate => GroupPolicy::totally_private(),
        }
    }
}

/// Who runs the command: `admin`, `creator`, `outsider` or a principal
/// name from the keystore.
#[derive(Debug, Args)]
pub struct Actor {
    #[arg(long = "as", default_value = "admin", value_name = "WHO")]
    pub who: String,
}

#[derive(Debug, Subcommand)]
pub enum GroupCmd {
    /// Create a group; this keystore becomes its creator and administrator.
    Create {
        #[arg(long)]
        name: String,
        #[arg(long, value_enum, default_value_t = PolicyArg::SharedDocument)]
        policy: PolicyArg,
    },
    /// Send a join request as a principal, or with --complete pick up the helo.
    Join {
        #[arg(long)]
        group: String,
        #[arg(long = "as", value_name = "PRINCIPAL")]
        principal: String,
        #[arg(long)]
        complete: bool,
        /// Publish a new principal's name in the directory.
        #[arg(long)]
        publish: bool,
    },
    /// Process pending join requests from the group inbox.
    ProcessJoins {
        #[arg(long)]
        group: String,
        #[command(flatten)]
        actor: Actor,
    },
    #[command(subcommand)]
    Wall(WallCmd),
    /// Print the member list, one principal address per line.
    Members {
        #[arg(long)]
        group: String,
        #[command(flatten)]
        actor: Actor,
    },
    #[command(subcommand)]
    Msg(MsgCmd),
    #[command(subcommand)]
    Relay(RelayCmd),
    /// Remove a member and renew the wall keys.
    Ban {
        #[arg(long)]
        group: String,
        /// Principal name (keystore or directory) to remove.
        #[arg(long)]
        member: String,
        #[command(flatten)]
        actor: Actor,
    },
}

#[derive(Debug, Subcommand)]
pub enum WallCmd {
    /// Write the wall content to stdout.
    Read {
        #[arg(long)]
        group: String,
        #[command(flatten)]
        actor: Actor,
    },
    /// Replace the wall content.
    Write {
        #[arg(long)]
        group: String,
        #[command(flatten)]
        actor: Actor,
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        text: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum MsgCmd {
    /// Private message to a principal's inbox.
    Send {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        text: String,
    },
    /// List the messages in a principal's inbox.
    Read {
        #[arg(long = "as", value_name = "PRINCIPAL")]
        principal: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum RelayCmd {
    /// Private message delivered through randomly chosen relays.
    Send {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        text: String,
        /// Forwarding probability, in (1/2, 1).
        #[arg(long, default_value_t = 2.0 / 3.0)]
        pf: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCmd {
    /// Poisson join and wall workload on one group.
    Run {
        #[arg(long, default_value_t = 63.0)]
        duration_hours: f64,
        #[arg(long, default_value_t = 20.0)]
        join_mean_min: f64,
        #[arg(long, default_value_t = 30.0)]
        wall_mean_min: f64,
        #[arg(long, default_value_t = 1.0)]
        admin_poll_min: f64,
        /// Metrics file; `.jsonl` selects JSON lines, anything else CSV.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AttackCmd {
    /// Replay an old member list through a pre-claimed list address.
    Replay {
        #[arg(long, overrides_with = "no_predicted")]
        predicted: bool,
        #[arg(long)]
        no_predicted: bool,
    },
    /// Link join inboxes to groups by the timing of their writes.
    Timing {
        #[arg(long, default_value_t = 1.0)]
        coverage: f64,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 8)]
        joins: usize,
    },
    /// Guess the sender of relayed messages at the destination.
    Relay {
        #[arg(long)]
        pf: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuditCmd {
    /// Full group lifecycle under passive observers, then scan for secrets.
    Secrecy {
        #[arg(long, default_value_t = 20)]
        joins: usize,
        #[arg(long, default_value_t = 50)]
        wall_ops: usize,
        #[arg(long, default_value_t = 20)]
        messages: usize,
        #[arg(long, default_value_t = 1)]
        bans: usize,
    },
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Group(cmd) => group::run(&cli, cmd, out, err),
        Command::Sim(cmd) => harness::sim(&cli, cmd, out),
        Command::Attack(cmd) => harness::attack(&cli, cmd, out),
        Command::Audit(cmd) => harness::audit(&cli, cmd, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
