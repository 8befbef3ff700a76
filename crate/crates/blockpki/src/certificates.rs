//! Certificate assembly and client-side verification.
//!
//! A finished certificate is a logged transaction carrying the certificate
//! data, the issuer list, and the merged Schnorr signature, together with the
//! Merkle proof of its inclusion in a block. Clients verify at one of three
//! tiers: blockchain-unaware (signature checks only), light (plus inclusion
//! proof against locally held headers), and full (plus the transaction's
//! presence in the full block).

use crate::contracts::{CaKeyRegistry, CertData, ContractCall, DomainContractState};
use crate::group::{self, CaId, Element, GroupId, GroupParams, MultiSignature, ProofOfPossession};
use crate::ledger::{Block, BlockHeader, Chain, LedgerError, Transaction};
use crate::merkle::{self, InclusionProof};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// The certificate fields a client reads out of the logged transaction.
/// Field order mirrors the logged JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CertificatePayload {
    pub subject_name: String,
    pub issuers: Vec<CaId>,
    pub not_before: u64,
    pub not_after: u64,
    pub public_key: Element,
    pub schnorr_signature: MultiSignature,
}

impl CertificatePayload {
    pub fn cert_data(&self) -> CertData {
        CertData {
            subject_name: self.subject_name.clone(),
            public_key: self.public_key,
            not_before: self.not_before,
            not_after: self.not_after,
        }
    }
}

/// Canonical byte encoding of every certificate field except the signature:
/// JSON with alphabetically sorted keys. This is the message m that nonces,
/// challenges, and partial signatures bind to, so altering any field — the
/// issuer list included — invalidates the signature.
pub fn signing_message(cert_data: &CertData, issuers: &[CaId]) -> Vec<u8> {
    let value = serde_json::json!({
        "issuers": issuers.iter().map(|id| id.as_str()).collect::<Vec<_>>(),
        "notAfter": cert_data.not_after,
        "notBefore": cert_data.not_before,
        "publicKey": cert_data.public_key.to_hex(),
        "subjectName": cert_data.subject_name,
    });
    serde_json::to_vec(&value).expect("json encoding cannot fail")
}

/// Canonical encoding of a payload's signed portion.
pub fn canonical_encode(payload: &CertificatePayload) -> Vec<u8> {
    signing_message(&payload.cert_data(), &payload.issuers)
}

/// Transaction plus inclusion proof: the unit a domain serves to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockPkiCertificate {
    pub transaction: Transaction,
    pub block_no: u64,
    pub inclusion_proof: InclusionProof,
}

impl BlockPkiCertificate {
    /// Decodes the storage-contract call inside the transaction into the
    /// certificate payload clients verify.
    pub fn payload(&self) -> Option<CertificatePayload> {
        match ContractCall::decode(&self.transaction.payload) {
            Ok(ContractCall::StoreCertificate {
                cert_data,
                ca_ids,
                signature,
            }) => Some(CertificatePayload {
                subject_name: cert_data.subject_name,
                issuers: ca_ids,
                not_before: cert_data.not_before,
                not_after: cert_data.not_after,
                public_key: cert_data.public_key,
                schnorr_signature: signature,
            }),
            _ => None,
        }
    }
}

/// On-disk certificate: the human-readable data block plus the anchored
/// transaction with its inclusion proof.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CertificateFile {
    pub certificate_data: CertificatePayload,
    pub domain_certificate: BlockPkiCertificate,
}

impl CertificateFile {
    pub fn new(certificate: BlockPkiCertificate) -> Option<CertificateFile> {
        let payload = certificate.payload()?;
        Some(CertificateFile {
            certificate_data: payload,
            domain_certificate: certificate,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(json: &str) -> Result<CertificateFile, serde_json::Error> {
        serde_json::from_str(json)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    /// No blockchain interaction; cannot tell whether the certificate is
    /// visible to everyone.
    Unaware,
    /// Holds validated block headers; checks the inclusion proof.
    Light,
    /// Holds complete blocks; additionally checks the transaction itself.
    Full,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrustStoreError {
    #[error("proof of possession for {0} does not verify; rogue key rejected")]
    InvalidPop(CaId),
    #[error("key for {0} belongs to a different group than the trust store")]
    WrongGroup(CaId),
    #[error("trust store parse error: {0}")]
    Parse(String),
}

/// Client trust anchors plus whatever chain view the client tier maintains.
#[derive(Debug, Clone)]
pub struct ClientTrustStore {
    pub mode: ClientMode,
    /// Minimum number of distinct trusted issuers a certificate must carry.
    pub t_policy: u64,
    trusted: BTreeMap<CaId, (Element, ProofOfPossession)>,
    headers: Vec<BlockHeader>,
    blocks: Vec<Block>,
}

impl ClientTrustStore {
    /// Builds a trust store, verifying each key's proof of possession when
    /// `pop_check` is set (the default posture; disabling it is what the
    /// rogue-key demonstration exploits).
    pub fn new(
        params: &GroupParams,
        mode: ClientMode,
        t_policy: u64,
        entries: Vec<(CaId, Element, ProofOfPossession)>,
        pop_check: bool,
    ) -> Result<ClientTrustStore, TrustStoreError> {
        let mut trusted = BTreeMap::new();
        for (id, key, pop) in entries {
            if key.group() != params.id() {
                return Err(TrustStoreError::WrongGroup(id));
            }
            if pop_check && !group::verify_pop(params, &pop, &key) {
                return Err(TrustStoreError::InvalidPop(id));
            }
            trusted.insert(id, (key, pop));
        }
        Ok(ClientTrustStore {
            mode,
            t_policy,
            trusted,
            headers: Vec::new(),
            blocks: Vec::new(),
        })
    }

    pub fn with_headers(mut self, headers: Vec<BlockHeader>) -> ClientTrustStore {
        self.headers = headers;
        self
    }

    pub fn with_blocks(mut self, blocks: Vec<Block>) -> ClientTrustStore {
        self.headers = blocks.iter().map(|b| b.header.clone()).collect();
        self.blocks = blocks;
        self
    }

    pub fn key_of(&self, id: &CaId) -> Option<&Element> {
        self.trusted.get(id).map(|(key, _)| key)
    }

    pub fn header_at(&self, height: u64) -> Option<&BlockHeader> {
        self.headers.iter().find(|h| h.height == height)
    }
}

/// Enumerated rejection reasons, ordered by the verification conjunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    WrongDomain,
    Expired,
    NotYetValid,
    UntrustedIssuer,
    BelowThreshold,
    BadSignature,
    BadInclusion,
    UnknownBlock,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Full client-side verification. Accepts iff the domain matches, the
/// validity window contains `now`, all issuers are trusted and numerous
/// enough, the multi-signature verifies under the combined key, and — for
/// light and full clients — the transaction is provably in the chain the
/// client knows.
pub fn verify_certificate(
    params: &GroupParams,
    cert: &BlockPkiCertificate,
    trust: &ClientTrustStore,
    visited_domain: &str,
    now: u64,
) -> Result<(), RejectReason> {
    let payload = cert.payload().ok_or(RejectReason::BadSignature)?;

    if payload.subject_name != visited_domain {
        return Err(RejectReason::WrongDomain);
    }
    if now < payload.not_before {
        return Err(RejectReason::NotYetValid);
    }
    if now > payload.not_after {
        return Err(RejectReason::Expired);
    }

    let mut keys = Vec::with_capacity(payload.issuers.len());
    for issuer in &payload.issuers {
        match trust.key_of(issuer) {
            Some(key) => keys.push(*key),
            None => return Err(RejectReason::UntrustedIssuer),
        }
    }
    let mut distinct = payload.issuers.clone();
    distinct.sort();
    distinct.dedup();
    if (distinct.len() as u64) < trust.t_policy {
        return Err(RejectReason::BelowThreshold);
    }

    let combined_key =
        group::combine_keys(params, &keys).map_err(|_| RejectReason::BelowThreshold)?;
    let message = canonical_encode(&payload);
    if !group::verify_multisig(params, &payload.schnorr_signature, &combined_key, &message) {
        return Err(RejectReason::BadSignature);
    }

    if trust.mode == ClientMode::Unaware {
        return Ok(());
    }

    // The logged transaction must hash to what the proof claims; otherwise a
    // proof for some other transaction could be grafted on.
    let leaf = cert.transaction.compute_hash();
    if leaf != cert.transaction.tx_hash {
        return Err(RejectReason::BadInclusion);
    }
    let header = trust
        .header_at(cert.block_no)
        .ok_or(RejectReason::UnknownBlock)?;
    if !merkle::verify_inclusion(&header.tx_root, &leaf, &cert.inclusion_proof) {
        return Err(RejectReason::BadInclusion);
    }

    if trust.mode == ClientMode::Full {
        let block = trust
            .blocks
            .iter()
            .find(|b| b.header.height == cert.block_no)
            .ok_or(RejectReason::UnknownBlock)?;
        if !block.transactions.iter().any(|t| t.tx_hash == leaf) {
            return Err(RejectReason::BadInclusion);
        }
    }
    Ok(())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssemblyError {
    #[error("signature gathering incomplete: {have}/{need} partial signatures")]
    Incomplete { have: u64, need: u64 },
    #[error("merged signature invalid; offending partial from {0}")]
    AssemblyFailed(CaId),
    #[error("no registry entry for CA address {0}")]
    UnknownCa(String),
    #[error("ledger error: {0}")]
    Ledger(#[from] LedgerError),
}

/// Reads the completed round out of a domain contract, checks every partial
/// signature against its stored nonce (identifying the offender if one sent
/// garbage), and merges them into the certificate payload.
pub fn merge_contract_signature(
    params: &GroupParams,
    state: &DomainContractState,
    registry: &CaKeyRegistry,
) -> Result<CertificatePayload, AssemblyError> {
    if !state.round_complete() {
        return Err(AssemblyError::Incomplete {
            have: state.sig_count(),
            need: state.threshold_t,
        });
    }
    let resolve = |addr: &crate::ledger::Address| -> Result<(CaId, Element), AssemblyError> {
        registry
            .get(addr)
            .map(|(id, key)| (id.clone(), *key))
            .ok_or_else(|| AssemblyError::UnknownCa(addr.to_hex()))
    };

    // Issuer list in nonce-submission order: the order the signers committed
    // to and the one the signed message encodes.
    let mut issuers = Vec::new();
    let mut nonce_publics = Vec::new();
    for (addr, nonce) in &state.cert_pub_nonces {
        let (id, _) = resolve(addr)?;
        // The contract stores nonces unchecked; a commitment from the wrong
        // group is this signer's fault.
        if nonce.group() != params.id() {
            return Err(AssemblyError::AssemblyFailed(id));
        }
        issuers.push(id);
        nonce_publics.push(*nonce);
    }
    let message = signing_message(&state.cert_data, &issuers);
    let n_bar = group::combine_nonces(params, &nonce_publics).expect("completed round has nonces");
    let e = group::challenge(params, &n_bar, &message);

    // Per-partial validity: g^s * Q^e must reproduce the signer's nonce.
    let mut partials = Vec::new();
    for (addr, stored) in &state.cert_sigs {
        let (id, key) = resolve(addr)?;
        let nonce = state
            .cert_pub_nonces
            .iter()
            .find(|(a, _)| a == addr)
            .map(|(_, n)| *n)
            .expect("signature accepted only after a nonce");
        let valid = stored.s.group() == params.id() && {
            let lhs = params.mul(
                &params.exp(&params.generator(), &stored.s),
                &params.exp(&key, &e),
            );
            lhs == nonce
        };
        if !valid {
            return Err(AssemblyError::AssemblyFailed(id));
        }
        partials.push(group::PartialSignature {
            signer_id: id,
            s: stored.s,
        });
    }

    let signature = group::combine_partials(params, &partials, &e)
        .expect("non-empty, distinct signers by contract guards");
    debug_assert!({
        let keys: Vec<Element> = issuers
            .iter()
            .map(|id| {
                let addr = state
                    .cert_pub_nonces
                    .iter()
                    .map(|(a, _)| a)
                    .find(|a| registry.get(a).map(|(i, _)| i) == Some(id))
                    .unwrap();
                registry.get(addr).unwrap().1
            })
            .collect();
        let q_bar = group::combine_keys(params, &keys).unwrap();
        group::verify_multisig(params, &signature, &q_bar, &message)
    });

    Ok(CertificatePayload {
        subject_name: state.cert_data.subject_name.clone(),
        issuers,
        not_before: state.cert_data.not_before,
        not_after: state.cert_data.not_after,
        public_key: state.cert_data.public_key,
        schnorr_signature: signature,
    })
}

/// Builds the final certificate from a mined storage transaction: the
/// transaction itself, its block number, and the inclusion proof read from
/// that block's Merkle tree.
pub fn certificate_from_chain(
    chain: &Chain,
    storage_tx_hash: &crate::merkle::Hash,
) -> Result<BlockPkiCertificate, AssemblyError> {
    let (block_no, inclusion_proof) = chain.get_inclusion_proof(storage_tx_hash)?;
    let (tx, _) = chain
        .find_tx(storage_tx_hash)
        .expect("proof implies presence");
    Ok(BlockPkiCertificate {
        transaction: tx.clone(),
        block_no,
        inclusion_proof,
    })
}

/// Serialized trust store, as distributed to clients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustStoreFile {
    pub group: GroupId,
    pub t_policy: u64,
    #[serde(default = "default_true")]
    pub pop_check: bool,
    pub trusted_cas: Vec<TrustedCaEntry>,
    #[serde(default)]
    pub headers: Vec<BlockHeader>,
    #[serde(default)]
    pub blocks: Vec<Block>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustedCaEntry {
    pub id: CaId,
    pub public_key: Element,
    pub pop: ProofOfPossession,
}

impl TrustStoreFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trust store serializes")
    }

    pub fn from_json(json: &str) -> Result<TrustStoreFile, TrustStoreError> {
        serde_json::from_str(json).map_err(|e| TrustStoreError::Parse(e.to_string()))
    }

    /// Instantiates the store for a client tier, verifying proofs of
    /// possession at load time.
    pub fn load(&self, mode: ClientMode) -> Result<ClientTrustStore, TrustStoreError> {
        let params = GroupParams::from_id(self.group);
        let entries = self
            .trusted_cas
            .iter()
            .map(|e| (e.id.clone(), e.public_key, e.pop.clone()))
            .collect();
        let store = ClientTrustStore::new(&params, mode, self.t_policy, entries, self.pop_check)?;
        Ok(match mode {
            ClientMode::Unaware => store,
            ClientMode::Light => store.with_headers(self.headers.clone()),
            ClientMode::Full => {
                if self.blocks.is_empty() {
                    store.with_headers(self.headers.clone())
                } else {
                    store.with_blocks(self.blocks.clone())
                }
            }
        })
    }
}
