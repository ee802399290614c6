//! Simulator snapshot and keystore on disk, plus the per-command RNG.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::CliError;
use crate::dht::{SimConfig, Simulator};
use crate::protocol::Keystore;

/// Directory for the default snapshot and keystore.
pub const STATE_DIR_ENV: &str = "PPGM_STATE_DIR";
const DEFAULT_DIR: &str = ".ppgm";

pub fn state_dir() -> PathBuf {
    std::env::var_os(STATE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_DIR))
}

pub struct State {
    pub sim: Simulator,
    pub keystore: Keystore,
    pub keystore_dirty: bool,
    snapshot_path: PathBuf,
    keystore_path: PathBuf,
    passphrase: String,
}

impl State {
    /// Loads both files, starting a fresh simulator from `fresh` when the
    /// snapshot does not exist yet.
    pub fn load(
        snapshot: Option<&Path>,
        keystore: Option<&Path>,
        passphrase: &str,
        fresh: SimConfig,
    ) -> Result<Self, CliError> {
        let snapshot_path = snapshot.map(Path::to_path_buf).unwrap_or_else(|| state_dir().join("sim.snap"));
        let keystore_path = keystore.map(Path::to_path_buf).unwrap_or_else(|| state_dir().join("keystore.ppgk"));
        let sim = if snapshot_path.exists() {
            Simulator::load(&snapshot_path)?
        } else {
            Simulator::new(fresh).map_err(CliError::Precondition)?
        };
        let keystore = Keystore::load_or_default(&keystore_path, passphrase)?;
        Ok(Self { sim, keystore, keystore_dirty: false, snapshot_path, keystore_path, passphrase: passphrase.to_owned() })
    }

    /// RNG for one command: a function of the seed and how far the
    /// simulator has run, so the same invocation on the same state repeats
    /// byte for byte.
    pub fn command_rng(&self, seed: u64) -> ChaCha20Rng {
        let digest = Sha256::new()
            .chain_update(b"ppgm-cli-rng")
            .chain_update(seed.to_be_bytes())
            .chain_update(self.sim.op_count().to_be_bytes())
            .finalize();
        ChaCha20Rng::from_seed(digest.into())
    }

    pub fn save(&self, rng: &mut ChaCha20Rng) -> Result<(), CliError> {
        if let Some(dir) = self.snapshot_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(e.to_string()))?;
        }
        self.sim.save(&self.snapshot_path)?;
        if self.keystore_dirty {
            if let Some(dir) = self.keystore_path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Io(e.to_string()))?;
            }
            self.keystore.save(&self.keystore_path, &self.passphrase, rng)?;
        }
        Ok(())
    }
}
