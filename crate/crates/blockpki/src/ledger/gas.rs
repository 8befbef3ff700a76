//! Deterministic gas accounting. Every operation has a constant cost: a base
//! charge per transaction, a per-byte charge for bytes written to contract
//! storage, a premium for instantiating a contract, and a charge per emitted
//! event. The absolute values are Ethereum-like defaults declared in config;
//! only their linearity and ranking matter to the protocol properties.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasTable {
    pub base_tx_cost: u64,
    pub per_byte_storage: u64,
    pub per_contract_creation: u64,
    pub per_event: u64,
}

impl Default for GasTable {
    fn default() -> GasTable {
        GasTable {
            base_tx_cost: 21_000,
            per_byte_storage: 640,
            per_contract_creation: 32_000,
            per_event: 375,
        }
    }
}

impl GasTable {
    pub fn storage(&self, bytes: usize) -> u64 {
        self.per_byte_storage * bytes as u64
    }
}

/// Classes of transaction payloads the meter distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    /// Plain value transfer, no contract involvement.
    Transfer,
    /// Method call on an existing contract.
    ContractCall,
    /// Call that instantiates a new contract.
    ContractCreation,
}

/// Static gas for a payload that stores `stored_bytes` of contract state.
/// Event charges are added by the runtime as events fire.
pub fn gas_meter(table: &GasTable, kind: PayloadKind, stored_bytes: usize) -> u64 {
    let base = table.base_tx_cost + table.storage(stored_bytes);
    match kind {
        PayloadKind::Transfer | PayloadKind::ContractCall => base,
        PayloadKind::ContractCreation => base + table.per_contract_creation,
    }
}
