//! Private group management over a simulated distributed hash table.

pub mod attack;
pub mod cli;
pub mod crypto;
pub mod dht;
pub mod protocol;
pub mod wire;
