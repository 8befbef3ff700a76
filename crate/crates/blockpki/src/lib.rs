//! BlockPKI simulator: certificate issuance over a simulated blockchain.
//!
//! T certification authorities co-sign a certificate with a two-round Schnorr
//! multi-signature, coordinated by on-ledger contracts that collect nonces and
//! partial signatures and pay compensations. The finished certificate is a
//! logged transaction plus a Merkle inclusion proof, verifiable by
//! blockchain-unaware, light, and full clients.

pub mod actors;
pub mod bench;
pub mod certificates;
pub mod contracts;
pub mod group;
pub mod ledger;
pub mod merkle;
pub mod validation;

pub use group::CaId;
