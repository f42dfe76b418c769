//! Zero-trust federated averaging simulator.
//!
//! Clients hold class-balanced shards, train locally from the broadcast
//! model and submit Ed25519-signed updates. The server verifies identity,
//! freshness, integrity, shape, finiteness and update norm before a
//! sample-weighted average; rejected updates never touch the global model.

pub mod aggregate;
pub mod crypto;
pub mod federation;
pub mod partition;

pub use aggregate::aggregate;
pub use crypto::{
    update_digest, verify_update, ClientCredentials, KeyRegistry, RejectReason, SignedUpdate, Verdict, VerifyPolicy,
};
pub use federation::{local_train, Client, ClientVerdict, FedConfig, Federation, RoundRecord};
pub use partition::{partition_data, select_clients};
