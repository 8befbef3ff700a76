//! Deterministic contract runtime hosting the three protocol contracts: the
//! central contract (a factory that guards funding and parameters), one
//! domain contract per certificate request (collects nonces, then partial
//! signatures, and pays compensations), and the storage contract (an
//! append-only certificate log).
//!
//! Guard failures follow contract semantics: the call is a silent no-op and
//! the sender still pays gas; callers learn outcomes by reading state.

use crate::group::{CaId, Element, GroupParams, MultiSignature, PartialSignature};
use crate::ledger::{
    Address, Currency, ExecStatus, ExecutionOutcome, GasTable, Transaction, ValueRouting, Vault,
};
use crate::merkle::Hash;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContractError {
    #[error("invalid certificate data: {0}")]
    InvalidCertData(&'static str),
    #[error("malformed contract call payload")]
    MalformedPayload,
}

/// Certificate parameters held by a domain contract. Its canonical encoding
/// (alphabetically sorted JSON keys) is the message CAs derive their
/// deterministic nonces from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertData {
    pub subject_name: String,
    pub public_key: Element,
    pub not_before: u64,
    pub not_after: u64,
}

impl CertData {
    pub fn validate(&self) -> Result<(), ContractError> {
        if self.subject_name.is_empty() {
            return Err(ContractError::InvalidCertData("empty subject name"));
        }
        if self.not_before >= self.not_after {
            return Err(ContractError::InvalidCertData(
                "notBefore must precede notAfter",
            ));
        }
        Ok(())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let value = serde_json::json!({
            "notAfter": self.not_after,
            "notBefore": self.not_before,
            "publicKey": self.public_key.to_hex(),
            "subjectName": self.subject_name,
        });
        serde_json::to_vec(&value).expect("json encoding cannot fail")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "newDomainContract")]
    NewDomainContract,
    #[serde(rename = "allCertNoncesGathered")]
    AllCertNoncesGathered,
    #[serde(rename = "allCertSignaturesGathered")]
    AllCertSignaturesGathered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractEvent {
    pub kind: EventKind,
    pub contract_address: Address,
    pub block_height: u64,
}

/// Entry in the storage contract's append-only certificate log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredCertificateRecord {
    pub cert_data: CertData,
    pub ca_ids: Vec<CaId>,
    pub signature: MultiSignature,
    pub tx_hash: Hash,
}

/// Per-request on-ledger state machine.
#[derive(Debug, Clone)]
pub struct DomainContractState {
    pub address: Address,
    pub requester: Address,
    pub threshold_t: u64,
    pub cert_data: CertData,
    pub authorized_cas: Vec<Address>,
    pub compensations: BTreeMap<Address, Currency>,
    pub escrow: Currency,
    /// Public nonces in submission order; in first-T mode this order locks
    /// the signer set.
    pub cert_pub_nonces: Vec<(Address, Element)>,
    pub all_cert_nonces: bool,
    /// Partial signatures in submission order, stored permanently.
    pub cert_sigs: Vec<(Address, PartialSignature)>,
    pub paid: BTreeSet<Address>,
    /// Accept nonces from more authorized CAs than the threshold; only the
    /// first T submitters may sign and be paid.
    pub first_t_mode: bool,
    pub created_at_height: u64,
    /// Creation or last renewal height; cancellation timeout counts from here.
    pub round_started_at_height: u64,
    pub cancelled: bool,
    pub rounds_completed: u32,
}

impl DomainContractState {
    pub fn nonce_count(&self) -> u64 {
        self.cert_pub_nonces.len() as u64
    }

    pub fn sig_count(&self) -> u64 {
        self.cert_sigs.len() as u64
    }

    pub fn round_complete(&self) -> bool {
        self.sig_count() == self.threshold_t
    }

    pub fn round_in_progress(&self) -> bool {
        !self.cancelled && self.nonce_count() > 0 && !self.round_complete()
    }

    pub fn has_nonce_from(&self, ca: &Address) -> bool {
        self.cert_pub_nonces.iter().any(|(a, _)| a == ca)
    }

    pub fn has_sig_from(&self, ca: &Address) -> bool {
        self.cert_sigs.iter().any(|(a, _)| a == ca)
    }

    /// Compensation still claimable by CAs in the current round.
    pub fn claimable_compensation(&self) -> Currency {
        if self.cancelled || self.round_complete() {
            return 0;
        }
        if self.all_cert_nonces {
            // Signer set locked to the nonce submitters.
            self.cert_pub_nonces
                .iter()
                .filter(|(a, _)| !self.paid.contains(a))
                .map(|(a, _)| self.compensations.get(a).copied().unwrap_or(0))
                .sum()
        } else {
            self.authorized_cas
                .iter()
                .filter(|a| !self.paid.contains(a))
                .map(|a| self.compensations.get(a).copied().unwrap_or(0))
                .sum()
        }
    }

    /// Checked state invariants; violated only by runtime bugs.
    pub fn check_invariants(&self) {
        assert!(self.nonce_count() <= self.threshold_t);
        assert_eq!(self.all_cert_nonces, self.nonce_count() == self.threshold_t);
        assert!(self.sig_count() <= self.nonce_count());
        assert!(self.escrow >= self.claimable_compensation());
    }
}

/// Contract call payloads, carried as canonical JSON `{args, method}` in a
/// transaction's payload field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "args")]
pub enum ContractCall {
    #[serde(rename = "createDomainContract")]
    CreateDomainContract {
        cert_data: CertData,
        authorized_cas: Vec<Address>,
        compensations: BTreeMap<Address, Currency>,
        /// Required in first-T mode, otherwise absent: Listing-style creation
        /// sets the threshold to the authorized-CA count.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<u64>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        first_t_mode: bool,
    },
    #[serde(rename = "sendCertPubNonce")]
    SendCertPubNonce { nonce: Element },
    #[serde(rename = "sendCertSignature")]
    SendCertSignature { partial: PartialSignature },
    #[serde(rename = "renew")]
    Renew { not_before: u64, not_after: u64 },
    #[serde(rename = "storeCertificate")]
    StoreCertificate {
        cert_data: CertData,
        ca_ids: Vec<CaId>,
        signature: MultiSignature,
    },
    #[serde(rename = "withdrawSurplus")]
    WithdrawSurplus,
    #[serde(rename = "cancel")]
    Cancel,
}

impl ContractCall {
    /// Canonical payload bytes: JSON with sorted keys, so payloads hash
    /// deterministically.
    pub fn encode(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("call serializes");
        serde_json::to_vec(&value).expect("json encoding cannot fail")
    }

    pub fn decode(bytes: &[u8]) -> Result<ContractCall, ContractError> {
        serde_json::from_slice(bytes).map_err(|_| ContractError::MalformedPayload)
    }
}

/// Key registry for the optional on-chain partial-signature check: public
/// keys and identifiers of all root CAs, which are publicly known.
#[derive(Debug, Clone, Default)]
pub struct CaKeyRegistry {
    entries: BTreeMap<Address, (CaId, Element)>,
}

impl CaKeyRegistry {
    pub fn insert(&mut self, address: Address, id: CaId, key: Element) {
        self.entries.insert(address, (id, key));
    }

    pub fn get(&self, address: &Address) -> Option<&(CaId, Element)> {
        self.entries.get(address)
    }
}

pub struct Runtime {
    central_address: Address,
    storage_address: Address,
    domains: BTreeMap<Address, DomainContractState>,
    created_domain_contracts: Vec<Address>,
    stored_certificates: Vec<StoredCertificateRecord>,
    events: Vec<ContractEvent>,
    gas: GasTable,
    cancel_timeout_blocks: u64,
    /// When set, sendCertSignature validates each partial on-chain and
    /// rejects invalid ones unpaid.
    partial_check: Option<(GroupParams, CaKeyRegistry)>,
    contract_counter: u64,
}

impl Runtime {
    pub fn new(gas: GasTable, cancel_timeout_blocks: u64) -> Runtime {
        Runtime {
            central_address: Address::from_label("central-contract"),
            storage_address: Address::from_label("storage-contract"),
            domains: BTreeMap::new(),
            created_domain_contracts: Vec::new(),
            stored_certificates: Vec::new(),
            events: Vec::new(),
            gas,
            cancel_timeout_blocks,
            partial_check: None,
            contract_counter: 0,
        }
    }

    /// Enables the non-default on-chain signature validity check.
    pub fn enable_partial_check(&mut self, params: GroupParams, registry: CaKeyRegistry) {
        self.partial_check = Some((params, registry));
    }

    pub fn central_address(&self) -> Address {
        self.central_address
    }

    pub fn storage_address(&self) -> Address {
        self.storage_address
    }

    pub fn domain_contract(&self, address: &Address) -> Option<&DomainContractState> {
        self.domains.get(address)
    }

    pub fn created_domain_contracts(&self) -> &[Address] {
        &self.created_domain_contracts
    }

    pub fn stored_certificates(&self) -> &[StoredCertificateRecord] {
        &self.stored_certificates
    }

    pub fn total_escrow(&self) -> Currency {
        self.domains.values().map(|d| d.escrow).sum()
    }

    pub fn scan_events(
        &self,
        from_height: u64,
        to_height: u64,
        kind: Option<EventKind>,
    ) -> Vec<ContractEvent> {
        self.events
            .iter()
            .filter(|e| e.block_height >= from_height && e.block_height <= to_height)
            .filter(|e| kind.is_none_or(|k| e.kind == k))
            .cloned()
            .collect()
    }

    pub fn check_invariants(&self) {
        for domain in self.domains.values() {
            domain.check_invariants();
        }
    }

    fn emit(&mut self, kind: EventKind, contract_address: Address, height: u64) -> u64 {
        self.events.push(ContractEvent {
            kind,
            contract_address,
            block_height: height,
        });
        self.gas.per_event
    }

    fn next_contract_address(&mut self) -> Address {
        let digest: [u8; 32] = Sha256::new()
            .chain_update(b"blockpki/contract/")
            .chain_update(self.contract_counter.to_be_bytes())
            .finalize()
            .into();
        self.contract_counter += 1;
        let mut out = [0u8; 20];
        out.copy_from_slice(&digest[..20]);
        Address(out)
    }

    /// Executes one mined transaction. Returns the runtime gas charge (on
    /// top of the base transaction cost), the status, and how the value was
    /// routed.
    pub fn execute(
        &mut self,
        tx: &Transaction,
        height: u64,
        vault: &mut Vault,
    ) -> ExecutionOutcome {
        if tx.recipient == self.central_address {
            return self.execute_central(tx, height);
        }
        if tx.recipient == self.storage_address {
            return self.execute_storage(tx);
        }
        if self.domains.contains_key(&tx.recipient) {
            return self.execute_domain(tx, height, vault);
        }
        // Plain account transfer. Payload bytes, if any, are charged as
        // stored data.
        ExecutionOutcome {
            gas_units: self.gas.storage(tx.payload.len()),
            status: ExecStatus::Ok,
            routing: ValueRouting::Transferred,
        }
    }

    fn execute_central(&mut self, tx: &Transaction, height: u64) -> ExecutionOutcome {
        let call = match ContractCall::decode(&tx.payload) {
            Ok(call) => call,
            Err(_) => return refused("malformed payload"),
        };
        let ContractCall::CreateDomainContract {
            cert_data,
            authorized_cas,
            compensations,
            threshold,
            first_t_mode,
        } = call
        else {
            return refused("central contract only creates domain contracts");
        };

        if cert_data.validate().is_err() {
            return refused("invalid certificate data");
        }
        if authorized_cas.is_empty() {
            return refused("empty authorized CA list");
        }
        let mut dedup = authorized_cas.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != authorized_cas.len() {
            return refused("duplicate CA in authorized list");
        }
        if authorized_cas
            .iter()
            .any(|ca| !compensations.contains_key(ca))
            || compensations.len() != authorized_cas.len()
        {
            return refused("compensations must cover exactly the authorized CAs");
        }
        let threshold_t = match (first_t_mode, threshold) {
            (false, None) => authorized_cas.len() as u64,
            (true, Some(t)) if t >= 1 && t <= authorized_cas.len() as u64 => t,
            _ => return refused("invalid threshold"),
        };
        let required: Currency = compensations.values().sum();
        if tx.value < required {
            return refused("supplied funds below total compensations");
        }

        let address = self.next_contract_address();
        let stored = cert_data.canonical_bytes().len() + authorized_cas.len() * 28 + 9;
        let state = DomainContractState {
            address,
            requester: tx.sender,
            threshold_t,
            cert_data,
            authorized_cas,
            compensations,
            escrow: tx.value,
            cert_pub_nonces: Vec::new(),
            all_cert_nonces: false,
            cert_sigs: Vec::new(),
            paid: BTreeSet::new(),
            first_t_mode,
            created_at_height: height,
            round_started_at_height: height,
            cancelled: false,
            rounds_completed: 0,
        };
        self.domains.insert(address, state);
        self.created_domain_contracts.push(address);
        let event_gas = self.emit(EventKind::NewDomainContract, address, height);
        ExecutionOutcome {
            gas_units: self.gas.per_contract_creation + self.gas.storage(stored) + event_gas,
            status: ExecStatus::Ok,
            routing: ValueRouting::Escrowed,
        }
    }

    fn execute_storage(&mut self, tx: &Transaction) -> ExecutionOutcome {
        let call = match ContractCall::decode(&tx.payload) {
            Ok(call) => call,
            Err(_) => return refused("malformed payload"),
        };
        let ContractCall::StoreCertificate {
            cert_data,
            ca_ids,
            signature,
        } = call
        else {
            return refused("storage contract only stores certificates");
        };
        // The storage contract accepts anything; validity is a client
        // concern.
        let stored = cert_data.canonical_bytes().len()
            + ca_ids.iter().map(|id| id.as_str().len()).sum::<usize>()
            + signature.e.encode().len()
            + signature.s_bar.encode().len()
            + signature
                .signer_ids
                .iter()
                .map(|id| id.as_str().len())
                .sum::<usize>();
        self.stored_certificates.push(StoredCertificateRecord {
            cert_data,
            ca_ids,
            signature,
            tx_hash: tx.tx_hash,
        });
        ExecutionOutcome {
            gas_units: self.gas.storage(stored),
            status: ExecStatus::Ok,
            routing: ValueRouting::Refunded,
        }
    }

    fn execute_domain(
        &mut self,
        tx: &Transaction,
        height: u64,
        vault: &mut Vault,
    ) -> ExecutionOutcome {
        let call = match ContractCall::decode(&tx.payload) {
            Ok(call) => call,
            Err(_) => return refused("malformed payload"),
        };
        let address = tx.recipient;
        let sender = tx.sender;
        match call {
            ContractCall::SendCertPubNonce { nonce } => {
                let state = self.domains.get_mut(&address).expect("domain exists");
                if state.cancelled
                    || !state.authorized_cas.contains(&sender)
                    || state.all_cert_nonces
                    || state.has_nonce_from(&sender)
                {
                    return ignored("nonce not accepted");
                }
                let stored = nonce.encode().len();
                state.cert_pub_nonces.push((sender, nonce));
                let mut gas_units = self.gas.storage(stored);
                if state.nonce_count() == state.threshold_t {
                    state.all_cert_nonces = true;
                    gas_units += self.emit(EventKind::AllCertNoncesGathered, address, height);
                }
                ExecutionOutcome {
                    gas_units,
                    status: ExecStatus::Ok,
                    routing: ValueRouting::Refunded,
                }
            }
            ContractCall::SendCertSignature { partial } => {
                let state = self.domains.get_mut(&address).expect("domain exists");
                if state.cancelled
                    || !state.all_cert_nonces
                    || !state.authorized_cas.contains(&sender)
                    || !state.has_nonce_from(&sender)
                    || state.has_sig_from(&sender)
                {
                    return ignored("signature not accepted");
                }
                if let Some((params, registry)) = &self.partial_check {
                    if !partial_is_valid(params, registry, state, &sender, &partial) {
                        return ignored("invalid partial signature rejected unpaid");
                    }
                }
                let stored = partial.s.encode().len() + partial.signer_id.as_str().len();
                state.cert_sigs.push((sender, partial));
                let compensation = state.compensations.get(&sender).copied().unwrap_or(0);
                state.escrow = state
                    .escrow
                    .checked_sub(compensation)
                    .expect("escrow covers compensations by the creation guard");
                state.paid.insert(sender);
                vault.credit(sender, compensation);
                let mut gas_units = self.gas.storage(stored);
                if state.round_complete() {
                    state.rounds_completed += 1;
                    gas_units += self.emit(EventKind::AllCertSignaturesGathered, address, height);
                }
                ExecutionOutcome {
                    gas_units,
                    status: ExecStatus::Ok,
                    routing: ValueRouting::Refunded,
                }
            }
            ContractCall::Renew {
                not_before,
                not_after,
            } => {
                let state = self.domains.get_mut(&address).expect("domain exists");
                if state.cancelled || sender != state.requester {
                    return ignored("renew restricted to the requester");
                }
                if state.round_in_progress() {
                    return refused("renewal during an in-progress round");
                }
                if not_before >= not_after {
                    return refused("invalid validity period");
                }
                let required: Currency = state.compensations.values().sum();
                if tx.value < required {
                    return refused("renewal funds below total compensations");
                }
                state.cert_data.not_before = not_before;
                state.cert_data.not_after = not_after;
                state.cert_pub_nonces.clear();
                state.cert_sigs.clear();
                state.paid.clear();
                state.all_cert_nonces = false;
                state.escrow += tx.value;
                state.round_started_at_height = height;
                // Validity overwrites existing storage slots; no new bytes.
                ExecutionOutcome {
                    gas_units: 0,
                    status: ExecStatus::Ok,
                    routing: ValueRouting::Escrowed,
                }
            }
            ContractCall::WithdrawSurplus => {
                let state = self.domains.get_mut(&address).expect("domain exists");
                if state.cancelled || sender != state.requester {
                    return ignored("withdraw restricted to the requester");
                }
                let surplus = state.escrow - state.claimable_compensation();
                state.escrow -= surplus;
                vault.credit(sender, surplus);
                ExecutionOutcome {
                    gas_units: 0,
                    status: ExecStatus::Ok,
                    routing: ValueRouting::Refunded,
                }
            }
            ContractCall::Cancel => {
                let state = self.domains.get_mut(&address).expect("domain exists");
                if state.cancelled || sender != state.requester {
                    return ignored("cancel restricted to the requester");
                }
                if height < state.round_started_at_height + self.cancel_timeout_blocks {
                    return refused("cancellation timeout not reached");
                }
                let refund = state.escrow;
                state.escrow = 0;
                state.cancelled = true;
                vault.credit(sender, refund);
                ExecutionOutcome {
                    gas_units: 0,
                    status: ExecStatus::Ok,
                    routing: ValueRouting::Refunded,
                }
            }
            ContractCall::CreateDomainContract { .. } | ContractCall::StoreCertificate { .. } => {
                refused("method not on this contract")
            }
        }
    }
}

/// Per-partial validity: g^s * Q^e = N for the sender's stored nonce.
fn partial_is_valid(
    params: &GroupParams,
    registry: &CaKeyRegistry,
    state: &DomainContractState,
    sender: &Address,
    partial: &PartialSignature,
) -> bool {
    let Some((_, public_key)) = registry.get(sender) else {
        return false;
    };
    let Some((_, nonce)) = state.cert_pub_nonces.iter().find(|(a, _)| a == sender) else {
        return false;
    };
    if partial.s.group() != params.id() {
        return false;
    }
    if state
        .cert_pub_nonces
        .iter()
        .any(|(_, n)| n.group() != params.id())
    {
        return false;
    }
    let issuer_ids: Vec<CaId> = state
        .cert_pub_nonces
        .iter()
        .filter_map(|(a, _)| registry.get(a).map(|(id, _)| id.clone()))
        .collect();
    if issuer_ids.len() != state.cert_pub_nonces.len() {
        return false;
    }
    let publics: Vec<Element> = state.cert_pub_nonces.iter().map(|(_, n)| *n).collect();
    let Ok(n_bar) = crate::group::combine_nonces(params, &publics) else {
        return false;
    };
    let message = crate::certificates::signing_message(&state.cert_data, &issuer_ids);
    let e = crate::group::challenge(params, &n_bar, &message);
    let lhs = params.mul(
        &params.exp(&params.generator(), &partial.s),
        &params.exp(public_key, &e),
    );
    lhs == *nonce
}

fn refused(reason: &'static str) -> ExecutionOutcome {
    ExecutionOutcome {
        gas_units: 0,
        status: ExecStatus::Refused(reason),
        routing: ValueRouting::Refunded,
    }
}

fn ignored(reason: &'static str) -> ExecutionOutcome {
    ExecutionOutcome {
        gas_units: 0,
        status: ExecStatus::Ignored(reason),
        routing: ValueRouting::Refunded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{self, GroupParams, KeyPair, Scalar};
    use crate::ledger::{Chain, ChainConfig, TxDraft};

    const FEE_LIMIT: Currency = 5_000_000;

    struct Fixture {
        chain: Chain,
        params: GroupParams,
        requester: Address,
        cas: Vec<(Address, KeyPair, CaId)>,
        registry: CaKeyRegistry,
    }

    impl Fixture {
        fn new(ca_count: usize) -> Fixture {
            Fixture::with_config(
                ca_count,
                ChainConfig {
                    rng_seed: 11,
                    ..ChainConfig::default()
                },
            )
        }

        fn with_config(ca_count: usize, config: ChainConfig) -> Fixture {
            let params = GroupParams::tiny();
            let mut registry = CaKeyRegistry::default();
            let mut cas = Vec::new();
            for i in 0..ca_count {
                let id = CaId::new(format!("CA{}", i + 1));
                let address = Address::from_label(id.as_str());
                let key = group::keygen(&params, id.as_str().as_bytes());
                registry.insert(address, id.clone(), *key.public());
                cas.push((address, key, id));
            }
            let mut runtime = Runtime::new(config.gas.clone(), config.cancel_timeout_blocks);
            if config.verify_partials_on_chain {
                runtime.enable_partial_check(params.clone(), registry.clone());
            }
            let mut chain = Chain::new(config, runtime);
            let requester = Address::from_label("requester");
            chain.create_account(requester, 1_000_000_000);
            for (address, _, _) in &cas {
                chain.create_account(*address, 100_000_000);
            }
            Fixture {
                chain,
                params,
                requester,
                cas,
                registry,
            }
        }

        fn cert_data(&self) -> CertData {
            CertData {
                subject_name: "www.example.com".into(),
                public_key: self.params.exp(&self.params.generator(), &Scalar::Tiny(6)),
                not_before: 100,
                not_after: 1_000_000,
            }
        }

        fn create_contract(
            &mut self,
            ca_count: usize,
            compensation: Currency,
            funds: Currency,
        ) -> Address {
            self.create_contract_call(
                ContractCall::CreateDomainContract {
                    cert_data: self.cert_data(),
                    authorized_cas: self.cas[..ca_count].iter().map(|(a, _, _)| *a).collect(),
                    compensations: self.cas[..ca_count]
                        .iter()
                        .map(|(a, _, _)| (*a, compensation))
                        .collect(),
                    threshold: None,
                    first_t_mode: false,
                },
                funds,
            )
        }

        fn create_contract_call(&mut self, call: ContractCall, funds: Currency) -> Address {
            let central = self.chain.runtime.central_address();
            self.chain
                .submit(TxDraft {
                    sender: self.requester,
                    recipient: central,
                    payload: call.encode(),
                    value: funds,
                    fee_limit: FEE_LIMIT,
                })
                .unwrap();
            self.chain.mine_next_block();
            *self
                .chain
                .runtime
                .created_domain_contracts()
                .last()
                .expect("creation accepted")
        }

        fn send_nonce(&mut self, ca_index: usize, contract: Address) {
            let (address, key, _) = &self.cas[ca_index];
            let state = self.chain.runtime.domain_contract(&contract).unwrap();
            let nonce = group::gen_nonce(&self.params, key, &state.cert_data.canonical_bytes());
            let draft = TxDraft {
                sender: *address,
                recipient: contract,
                payload: ContractCall::SendCertPubNonce {
                    nonce: *nonce.public(),
                }
                .encode(),
                value: 0,
                fee_limit: FEE_LIMIT,
            };
            self.chain.submit(draft).unwrap();
            self.chain.mine_next_block();
        }

        fn send_signature(&mut self, ca_index: usize, contract: Address) {
            let partial = self.partial_for(ca_index, contract);
            self.send_raw_signature(ca_index, contract, partial);
        }

        fn partial_for(&mut self, ca_index: usize, contract: Address) -> PartialSignature {
            let (_, key, id) = &self.cas[ca_index];
            let state = self.chain.runtime.domain_contract(&contract).unwrap();
            let issuers: Vec<CaId> = state
                .cert_pub_nonces
                .iter()
                .map(|(a, _)| self.registry.get(a).unwrap().0.clone())
                .collect();
            let publics: Vec<Element> = state.cert_pub_nonces.iter().map(|(_, n)| *n).collect();
            let n_bar = group::combine_nonces(&self.params, &publics).unwrap();
            let message = crate::certificates::signing_message(&state.cert_data, &issuers);
            let e = group::challenge(&self.params, &n_bar, &message);
            let mut nonce = group::gen_nonce(&self.params, key, &state.cert_data.canonical_bytes());
            group::partial_sign(&self.params, key, &mut nonce, &e, id.clone()).unwrap()
        }

        fn send_raw_signature(
            &mut self,
            ca_index: usize,
            contract: Address,
            partial: PartialSignature,
        ) {
            let (address, _, _) = &self.cas[ca_index];
            let draft = TxDraft {
                sender: *address,
                recipient: contract,
                payload: ContractCall::SendCertSignature { partial }.encode(),
                value: 0,
                fee_limit: FEE_LIMIT,
            };
            self.chain.submit(draft).unwrap();
            self.chain.mine_next_block();
        }

        fn state(&self, contract: &Address) -> &DomainContractState {
            self.chain.runtime.domain_contract(contract).unwrap()
        }
    }

    #[test]
    fn creation_guards_funding_and_parameters() {
        let mut fx = Fixture::new(4);
        let contract = fx.create_contract(4, 10, 40);
        let state = fx.state(&contract);
        assert_eq!(state.threshold_t, 4);
        assert_eq!(state.escrow, 40);
        assert_eq!(
            fx.chain
                .scan_events(0, fx.chain.tip_height(), Some(EventKind::NewDomainContract))
                .len(),
            1
        );

        // Underfunded creation is refused: no contract, value returned,
        // only gas paid.
        let mut fx = Fixture::new(4);
        let before = fx.chain.balance(&fx.requester);
        let central = fx.chain.runtime.central_address();
        let call = ContractCall::CreateDomainContract {
            cert_data: fx.cert_data(),
            authorized_cas: fx.cas.iter().map(|(a, _, _)| *a).collect(),
            compensations: fx.cas.iter().map(|(a, _, _)| (*a, 10)).collect(),
            threshold: None,
            first_t_mode: false,
        };
        fx.chain
            .submit(TxDraft {
                sender: fx.requester,
                recipient: central,
                payload: call.encode(),
                value: 39,
                fee_limit: FEE_LIMIT,
            })
            .unwrap();
        let block = fx.chain.mine_next_block().clone();
        assert!(fx.chain.runtime.created_domain_contracts().is_empty());
        assert_eq!(
            fx.chain.balance(&fx.requester),
            before - block.transactions[0].fee
        );

        // Surplus is retained in escrow.
        let mut fx = Fixture::new(4);
        let contract = fx.create_contract(4, 10, 41);
        assert_eq!(fx.state(&contract).escrow, 41);
    }

    #[test]
    fn creation_rejects_invalid_parameters() {
        let mut fx = Fixture::new(2);
        let central = fx.chain.runtime.central_address();
        let dup = fx.cas[0].0;
        for call in [
            ContractCall::CreateDomainContract {
                cert_data: fx.cert_data(),
                authorized_cas: vec![dup, dup],
                compensations: [(dup, 10)].into(),
                threshold: None,
                first_t_mode: false,
            },
            ContractCall::CreateDomainContract {
                cert_data: fx.cert_data(),
                authorized_cas: vec![],
                compensations: BTreeMap::new(),
                threshold: None,
                first_t_mode: false,
            },
        ] {
            fx.chain
                .submit(TxDraft {
                    sender: fx.requester,
                    recipient: central,
                    payload: call.encode(),
                    value: 100,
                    fee_limit: FEE_LIMIT,
                })
                .unwrap();
            fx.chain.mine_next_block();
            assert!(fx.chain.runtime.created_domain_contracts().is_empty());
        }
    }

    #[test]
    fn nonce_threshold_boundary_emits_event_once() {
        let mut fx = Fixture::new(2);
        let contract = fx.create_contract(2, 10, 20);
        fx.send_nonce(0, contract);
        assert!(!fx.state(&contract).all_cert_nonces);
        assert!(fx
            .chain
            .scan_events(
                0,
                fx.chain.tip_height(),
                Some(EventKind::AllCertNoncesGathered)
            )
            .is_empty());

        fx.send_nonce(1, contract);
        assert!(fx.state(&contract).all_cert_nonces);
        assert_eq!(
            fx.chain
                .scan_events(
                    0,
                    fx.chain.tip_height(),
                    Some(EventKind::AllCertNoncesGathered)
                )
                .len(),
            1
        );
        fx.chain.runtime.check_invariants();
    }

    #[test]
    fn unauthorized_and_duplicate_nonces_are_gas_charged_noops() {
        let mut fx = Fixture::new(3); // CA3 exists but is not authorized
        let contract = fx.create_contract(2, 10, 20);

        let outsider = fx.cas[2].0;
        let before = fx.chain.balance(&outsider);
        let nonce = fx.params.exp(&fx.params.generator(), &Scalar::Tiny(9));
        fx.chain
            .submit(TxDraft {
                sender: outsider,
                recipient: contract,
                payload: ContractCall::SendCertPubNonce { nonce }.encode(),
                value: 0,
                fee_limit: FEE_LIMIT,
            })
            .unwrap();
        let block = fx.chain.mine_next_block().clone();
        assert_eq!(fx.state(&contract).nonce_count(), 0);
        let fee = block.transactions[0].fee;
        assert!(fee > 0);
        assert_eq!(fx.chain.balance(&outsider), before - fee);

        // Same CA twice: count stays 1.
        fx.send_nonce(0, contract);
        fx.send_nonce(0, contract);
        assert_eq!(fx.state(&contract).nonce_count(), 1);
    }

    #[test]
    fn signatures_require_all_nonces_and_pay_once() {
        let mut fx = Fixture::new(2);
        let contract = fx.create_contract(2, 10, 20);

        // Signature before the nonce round completes: ignored, unpaid.
        fx.send_nonce(0, contract);
        let early = PartialSignature {
            signer_id: fx.cas[0].2.clone(),
            s: Scalar::Tiny(4),
        };
        let ca0_before = fx.chain.balance(&fx.cas[0].0);
        fx.send_raw_signature(0, contract, early);
        assert_eq!(fx.state(&contract).sig_count(), 0);
        assert!(fx.chain.balance(&fx.cas[0].0) < ca0_before); // gas only

        fx.send_nonce(1, contract);

        let ca0_before = fx.chain.balance(&fx.cas[0].0);
        fx.send_signature(0, contract);
        let after_first = fx.chain.balance(&fx.cas[0].0);
        let gas_paid = {
            let block = fx.chain.blocks().last().unwrap();
            block.transactions[0].fee
        };
        assert_eq!(after_first, ca0_before + 10 - gas_paid);

        // Double submission: ignored, not paid again.
        let dup = fx.partial_for(0, contract);
        fx.send_raw_signature(0, contract, dup);
        assert_eq!(fx.state(&contract).sig_count(), 1);
        assert_eq!(fx.state(&contract).paid.len(), 1);

        fx.send_signature(1, contract);
        let state = fx.state(&contract);
        assert!(state.round_complete());
        assert_eq!(state.escrow, 0);
        assert_eq!(
            fx.chain
                .scan_events(
                    0,
                    fx.chain.tip_height(),
                    Some(EventKind::AllCertSignaturesGathered)
                )
                .len(),
            1
        );
        fx.chain.runtime.check_invariants();
    }

    #[test]
    fn garbage_partial_is_stored_and_paid_without_on_chain_check() {
        let mut fx = Fixture::new(2);
        let contract = fx.create_contract(2, 10, 20);
        fx.send_nonce(0, contract);
        fx.send_nonce(1, contract);
        let garbage = PartialSignature {
            signer_id: fx.cas[0].2.clone(),
            s: Scalar::Tiny(9),
        };
        fx.send_raw_signature(0, contract, garbage);
        let state = fx.state(&contract);
        assert_eq!(state.sig_count(), 1);
        assert!(state.paid.contains(&fx.cas[0].0));
    }

    #[test]
    fn on_chain_check_rejects_garbage_unpaid() {
        let config = ChainConfig {
            rng_seed: 11,
            verify_partials_on_chain: true,
            ..ChainConfig::default()
        };
        let mut fx = Fixture::with_config(2, config);
        let contract = fx.create_contract(2, 10, 20);
        fx.send_nonce(0, contract);
        fx.send_nonce(1, contract);

        let garbage = PartialSignature {
            signer_id: fx.cas[0].2.clone(),
            s: Scalar::Tiny(9),
        };
        fx.send_raw_signature(0, contract, garbage);
        let state = fx.state(&contract);
        assert_eq!(state.sig_count(), 0);
        assert!(state.paid.is_empty());

        // A valid partial still goes through.
        fx.send_signature(0, contract);
        assert_eq!(fx.state(&contract).sig_count(), 1);
    }

    #[test]
    fn renewal_resets_the_round_without_recreation() {
        let mut fx = Fixture::new(2);
        let contract = fx.create_contract(2, 10, 20);
        fx.send_nonce(0, contract);
        fx.send_nonce(1, contract);
        fx.send_signature(0, contract);
        fx.send_signature(1, contract);
        assert!(fx.state(&contract).round_complete());

        // Renew: validity updated, maps cleared, escrow topped up.
        fx.chain
            .submit(TxDraft {
                sender: fx.requester,
                recipient: contract,
                payload: ContractCall::Renew {
                    not_before: 2_000_000,
                    not_after: 3_000_000,
                }
                .encode(),
                value: 20,
                fee_limit: FEE_LIMIT,
            })
            .unwrap();
        fx.chain.mine_next_block();
        {
            let state = fx.state(&contract);
            assert_eq!(state.cert_data.not_before, 2_000_000);
            assert_eq!(state.nonce_count(), 0);
            assert!(!state.all_cert_nonces);
            assert_eq!(state.escrow, 20);
        }

        // Second round completes on the same contract.
        fx.send_nonce(0, contract);
        fx.send_nonce(1, contract);
        fx.send_signature(0, contract);
        fx.send_signature(1, contract);
        assert!(fx.state(&contract).round_complete());
        assert_eq!(fx.state(&contract).rounds_completed, 2);
        assert_eq!(
            fx.chain
                .scan_events(
                    0,
                    fx.chain.tip_height(),
                    Some(EventKind::AllCertSignaturesGathered)
                )
                .len(),
            2
        );
    }

    #[test]
    fn renewal_guards() {
        let mut fx = Fixture::new(2);
        let contract = fx.create_contract(2, 10, 20);
        fx.send_nonce(0, contract);

        // Mid-round renewal is refused.
        fx.chain
            .submit(TxDraft {
                sender: fx.requester,
                recipient: contract,
                payload: ContractCall::Renew {
                    not_before: 1,
                    not_after: 2,
                }
                .encode(),
                value: 20,
                fee_limit: FEE_LIMIT,
            })
            .unwrap();
        fx.chain.mine_next_block();
        assert_eq!(fx.state(&contract).cert_data.not_before, 100);
        assert_eq!(fx.state(&contract).nonce_count(), 1);

        // Zero funds against positive compensations is refused even when
        // the round is idle.
        let mut fx = Fixture::new(2);
        let contract = fx.create_contract(2, 10, 20);
        let escrow_before = fx.state(&contract).escrow;
        fx.chain
            .submit(TxDraft {
                sender: fx.requester,
                recipient: contract,
                payload: ContractCall::Renew {
                    not_before: 1,
                    not_after: 2,
                }
                .encode(),
                value: 0,
                fee_limit: FEE_LIMIT,
            })
            .unwrap();
        fx.chain.mine_next_block();
        assert_eq!(fx.state(&contract).escrow, escrow_before);
        assert_eq!(fx.state(&contract).cert_data.not_before, 100);
    }

    #[test]
    fn storage_contract_appends_anything() {
        let mut fx = Fixture::new(2);
        let storage = fx.chain.runtime.storage_address();
        let record_call = ContractCall::StoreCertificate {
            cert_data: fx.cert_data(),
            ca_ids: vec![CaId::new("CA1"), CaId::new("CA2")],
            signature: MultiSignature {
                e: Scalar::Tiny(5),
                s_bar: Scalar::Tiny(7),
                signer_ids: vec![CaId::new("CA1"), CaId::new("CA2")],
            },
        };
        for expected_index in 0..2usize {
            fx.chain
                .submit(TxDraft {
                    sender: fx.requester,
                    recipient: storage,
                    payload: record_call.encode(),
                    value: 0,
                    fee_limit: FEE_LIMIT,
                })
                .unwrap();
            fx.chain.mine_next_block();
            assert_eq!(
                fx.chain.runtime.stored_certificates().len(),
                expected_index + 1
            );
        }
        // Duplicates allowed: two records, distinct anchors.
        let records = fx.chain.runtime.stored_certificates();
        assert_ne!(records[0].tx_hash, records[1].tx_hash);
        assert_eq!(records[0].cert_data, records[1].cert_data);
    }

    #[test]
    fn storage_gas_scales_with_payload() {
        let mut fx = Fixture::new(1);
        let storage = fx.chain.runtime.storage_address();
        let gas_of = |fx: &mut Fixture, subject: String| -> u64 {
            let call = ContractCall::StoreCertificate {
                cert_data: CertData {
                    subject_name: subject,
                    public_key: fx.params.generator(),
                    not_before: 1,
                    not_after: 2,
                },
                ca_ids: vec![],
                signature: MultiSignature {
                    e: Scalar::Tiny(0),
                    s_bar: Scalar::Tiny(0),
                    signer_ids: vec![],
                },
            };
            fx.chain
                .submit(TxDraft {
                    sender: fx.requester,
                    recipient: storage,
                    payload: call.encode(),
                    value: 0,
                    fee_limit: FEE_LIMIT,
                })
                .unwrap();
            fx.chain.mine_next_block().transactions[0].gas_used
        };
        let small = gas_of(&mut fx, "a".repeat(10));
        let large = gas_of(&mut fx, "a".repeat(20));
        assert_eq!(large - small, fx.chain.config().gas.per_byte_storage * 10);
    }

    #[test]
    fn scan_events_full_workflow_t5() {
        let mut fx = Fixture::new(5);
        let contract = fx.create_contract(5, 10, 50);
        for i in 0..5 {
            fx.send_nonce(i, contract);
        }
        for i in 0..5 {
            fx.send_signature(i, contract);
        }
        let tip = fx.chain.tip_height();
        assert_eq!(
            fx.chain
                .scan_events(0, tip, Some(EventKind::NewDomainContract))
                .len(),
            1
        );
        assert_eq!(
            fx.chain
                .scan_events(0, tip, Some(EventKind::AllCertNoncesGathered))
                .len(),
            1
        );
        assert_eq!(
            fx.chain
                .scan_events(0, tip, Some(EventKind::AllCertSignaturesGathered))
                .len(),
            1
        );
        assert_eq!(fx.chain.scan_events(0, tip, None).len(), 3);
        assert!(fx.chain.scan_events(tip + 1, tip + 5, None).is_empty());

        // Escrow safety held at every block boundary, all CAs paid exactly once.
        fx.chain.runtime.check_invariants();
        assert_eq!(fx.state(&contract).paid.len(), 5);
        assert_eq!(fx.state(&contract).escrow, 0);
    }

    #[test]
    fn first_t_mode_locks_the_first_t_submitters() {
        let mut fx = Fixture::new(5);
        let call = ContractCall::CreateDomainContract {
            cert_data: fx.cert_data(),
            authorized_cas: fx.cas.iter().map(|(a, _, _)| *a).collect(),
            compensations: fx.cas.iter().map(|(a, _, _)| (*a, 10)).collect(),
            threshold: Some(3),
            first_t_mode: true,
        };
        let contract = fx.create_contract_call(call, 50);
        assert_eq!(fx.state(&contract).threshold_t, 3);

        for i in 0..3 {
            fx.send_nonce(i, contract);
        }
        assert!(fx.state(&contract).all_cert_nonces);

        // A fourth authorized CA is too late: nonce ignored.
        fx.send_nonce(3, contract);
        assert_eq!(fx.state(&contract).nonce_count(), 3);

        // CAs that did not include a nonce cannot send signatures.
        let late = fx.partial_for(3, contract);
        fx.send_raw_signature(3, contract, late);
        assert_eq!(fx.state(&contract).sig_count(), 0);

        for i in 0..3 {
            fx.send_signature(i, contract);
        }
        let state = fx.state(&contract);
        assert!(state.round_complete());
        assert_eq!(state.paid.len(), 3);
        assert_eq!(state.escrow, 20); // 50 - 3 * 10: unclaimed surplus retained
        fx.chain.runtime.check_invariants();

        // The requester can reclaim the surplus afterwards.
        let before = fx.chain.balance(&fx.requester);
        fx.chain
            .submit(TxDraft {
                sender: fx.requester,
                recipient: contract,
                payload: ContractCall::WithdrawSurplus.encode(),
                value: 0,
                fee_limit: FEE_LIMIT,
            })
            .unwrap();
        let fee = fx.chain.mine_next_block().transactions[0].fee;
        assert_eq!(fx.chain.balance(&fx.requester), before + 20 - fee);
        assert_eq!(fx.state(&contract).escrow, 0);
    }

    #[test]
    fn cancel_refunds_after_timeout() {
        let config = ChainConfig {
            rng_seed: 11,
            cancel_timeout_blocks: 3,
            ..ChainConfig::default()
        };
        let mut fx = Fixture::with_config(2, config);
        let contract = fx.create_contract(2, 10, 20);
        fx.send_nonce(0, contract); // round stalls: CA2 never answers

        // Too early.
        let cancel = |fx: &mut Fixture| {
            fx.chain
                .submit(TxDraft {
                    sender: fx.requester,
                    recipient: contract,
                    payload: ContractCall::Cancel.encode(),
                    value: 0,
                    fee_limit: FEE_LIMIT,
                })
                .unwrap();
            fx.chain.mine_next_block();
        };
        cancel(&mut fx);
        assert!(!fx.state(&contract).cancelled);

        fx.chain.mine_next_block();
        fx.chain.mine_next_block();
        let before = fx.chain.balance(&fx.requester);
        cancel(&mut fx);
        let fee = fx.chain.blocks().last().unwrap().transactions[0].fee;
        assert!(fx.state(&contract).cancelled);
        assert_eq!(fx.state(&contract).escrow, 0);
        assert_eq!(fx.chain.balance(&fx.requester), before + 20 - fee);

        // Cancelled contracts ignore everything.
        fx.send_nonce(1, contract);
        assert_eq!(fx.state(&contract).nonce_count(), 1);
    }

    #[test]
    fn currency_conservation_through_a_full_round() {
        let mut fx = Fixture::new(3);
        let total = fx.chain.total_currency();
        let contract = fx.create_contract(3, 10, 30);
        assert_eq!(fx.chain.total_currency(), total);
        for i in 0..3 {
            fx.send_nonce(i, contract);
            assert_eq!(fx.chain.total_currency(), total);
        }
        for i in 0..3 {
            fx.send_signature(i, contract);
            assert_eq!(fx.chain.total_currency(), total);
        }
    }

    #[test]
    fn call_encoding_is_canonical_and_round_trips() {
        let call = ContractCall::SendCertPubNonce {
            nonce: GroupParams::tiny().generator(),
        };
        let bytes = call.encode();
        let text = String::from_utf8(bytes.clone()).unwrap();
        // Sorted keys: args before method.
        assert!(text.starts_with("{\"args\""));
        assert_eq!(ContractCall::decode(&bytes).unwrap(), call);
        assert!(ContractCall::decode(b"{}").is_err());
    }

    #[test]
    fn cert_data_validation() {
        let params = GroupParams::tiny();
        let good = CertData {
            subject_name: "example.com".into(),
            public_key: params.generator(),
            not_before: 1,
            not_after: 2,
        };
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.subject_name = String::new();
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.not_after = 1;
        assert!(bad.validate().is_err());
    }
}
