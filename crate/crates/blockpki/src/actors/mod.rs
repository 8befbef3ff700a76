//! Requester, CA, and monitor agents driving the issuance workflow inside
//! the deterministic event loop.
//!
//! One issuance: the requester creates a domain contract; authorized CAs
//! detect it, validate the domain, and submit public nonces; once all T
//! nonces are on chain each CA submits its partial signature and collects
//! its compensation; the requester merges the partials, publishes the
//! certificate through the storage contract, and waits out the configured
//! confirmation depth before reading the inclusion proof.
//!
//! Agents are plain callbacks invoked after every mined block, in CA-id
//! order, and interact with the ledger only through submitted transactions.

use crate::certificates::{
    self, BlockPkiCertificate, CertificatePayload, ClientMode, TrustStoreFile, TrustedCaEntry,
};
use crate::contracts::{CaKeyRegistry, CertData, ContractCall, EventKind, Runtime};
use crate::group::{
    self, CaId, GroupId, GroupParams, KeyPair, NoncePair, PartialSignature, ProofOfPossession,
};
use crate::ledger::{Address, Chain, ChainConfig, Currency, ExecStatus, LedgerError, TxDraft};
use crate::merkle::Hash;
use crate::validation::{AdversaryConfig, SimulatedDomain, ValidationNet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Gas bound per submitted transaction; scenarios fund accounts to cover it.
const GAS_BOUND: u64 = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaBehavior {
    Honest,
    /// Attests the adversary's target domain without validating.
    Compromised,
    /// Never submits anything.
    Unresponsive,
    /// Validates and participates, but submits a meaningless scalar as its
    /// partial signature (and still gets paid under default contract rules).
    GarbageSigner,
}

/// Scenario file: chain parameters, the threshold, CA behaviors, the
/// adversary, client tiers, and repetition count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub chain: ChainConfig,
    pub group: GroupId,
    pub threshold_t: u64,
    /// One entry per CA in the pool; the pool may exceed the threshold when
    /// `first_t_mode` is set.
    pub ca_behaviors: Vec<CaBehavior>,
    pub first_t_mode: bool,
    /// How many pool CAs the requester authorizes (defaults to all).
    pub authorized_count: usize,
    pub compensation: Currency,
    pub requester_balance: Currency,
    pub ca_balance: Currency,
    pub domain: String,
    pub validity_not_before: u64,
    pub validity_not_after: u64,
    /// Client-side minimum issuer count; zero means "use the threshold".
    pub t_client_policy: u64,
    pub client_tiers: Vec<ClientMode>,
    pub adversary: Option<AdversaryConfig>,
    pub repetitions: u32,
    /// Blocks without completion before the requester declares failure.
    pub issuance_timeout_blocks: u64,
}

impl Default for Scenario {
    fn default() -> Scenario {
        Scenario {
            chain: ChainConfig::default(),
            group: GroupId::Secp256k1,
            threshold_t: 4,
            ca_behaviors: Vec::new(),
            first_t_mode: false,
            authorized_count: 0,
            compensation: 10,
            requester_balance: 1_000_000_000,
            ca_balance: 1_000_000_000,
            domain: "www.example.com".into(),
            validity_not_before: 1_000,
            validity_not_after: 100_000_000,
            t_client_policy: 0,
            client_tiers: vec![ClientMode::Unaware, ClientMode::Light, ClientMode::Full],
            adversary: None,
            repetitions: 1,
            issuance_timeout_blocks: 20,
        }
    }
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Scenario, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Behaviors, padded with honest CAs up to the threshold if the list is
    /// shorter.
    fn effective_behaviors(&self) -> Vec<CaBehavior> {
        let mut behaviors = self.ca_behaviors.clone();
        let pool = (self.threshold_t as usize).max(self.authorized_count);
        while behaviors.len() < pool {
            behaviors.push(CaBehavior::Honest);
        }
        behaviors
    }

    fn effective_policy(&self) -> u64 {
        if self.t_client_policy == 0 {
            self.threshold_t
        } else {
            self.t_client_policy
        }
    }
}

#[derive(Debug, Error)]
pub enum IssuanceError {
    #[error("issuance timed out; blocking CAs: {}", blocking.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", "))]
    Timeout { blocking: Vec<CaId> },
    #[error(transparent)]
    Assembly(#[from] certificates::AssemblyError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("domain contract creation refused: {0}")]
    CreationRefused(String),
}

/// Cost and timing of one issuance run.
#[derive(Debug, Clone, Serialize)]
pub struct IssuanceMetrics {
    pub blocks_elapsed: u64,
    /// Simulated seconds until the certificate is usable (inclusion plus the
    /// configured confirmation depth).
    pub sim_seconds: f64,
    /// Simulated seconds until the storage transaction was mined.
    pub inclusion_sim_seconds: f64,
    pub tx_count: u64,
    pub total_gas: u64,
    pub total_fees: Currency,
    pub per_tx: Vec<TxCost>,
    pub misbehaving_cas: Vec<CaId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TxCost {
    pub label: String,
    pub tx_hash: Hash,
    pub gas: u64,
    pub fee: Currency,
}

impl IssuanceMetrics {
    pub const CSV_HEADER: &'static str =
        "blocks_elapsed,sim_seconds,inclusion_sim_seconds,tx_count,total_gas,total_fees";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{:.3},{},{},{}",
            self.blocks_elapsed,
            self.sim_seconds,
            self.inclusion_sim_seconds,
            self.tx_count,
            self.total_gas,
            self.total_fees
        )
    }

    pub fn gas_of(&self, label: &str) -> Option<u64> {
        self.per_tx.iter().find(|t| t.label == label).map(|t| t.gas)
    }
}

struct RoundState {
    round_height: u64,
    nonce: Option<NoncePair>,
    nonce_submitted: bool,
    sig_submitted: bool,
}

struct CaAgent {
    id: CaId,
    address: Address,
    keypair: KeyPair,
    pop: ProofOfPossession,
    behavior: CaBehavior,
    tracked: BTreeMap<Address, RoundState>,
}

/// A full simulation instance: chain, validation network, CA pool, and the
/// accounts driving issuance.
pub struct Simulation {
    pub chain: Chain,
    pub net: ValidationNet,
    pub params: GroupParams,
    pub registry: CaKeyRegistry,
    scenario: Scenario,
    cas: Vec<CaAgent>,
    owner: Address,
    domain_key: KeyPair,
    adversary_account: Option<Address>,
    adversary_key: Option<KeyPair>,
    /// Simulation-level ownership oracle the monitor checks against.
    owner_registry: BTreeMap<String, Address>,
    tx_labels: BTreeMap<Hash, String>,
}

impl Simulation {
    pub fn from_scenario(scenario: Scenario) -> Simulation {
        let params = GroupParams::from_id(scenario.group);
        let seed = scenario.chain.rng_seed;
        let behaviors = scenario.effective_behaviors();

        let mut registry = CaKeyRegistry::default();
        let mut cas = Vec::new();
        for (i, behavior) in behaviors.iter().enumerate() {
            let id = CaId::new(format!("CA{}", i + 1));
            let address = Address::from_label(id.as_str());
            let keypair = group::keygen(&params, format!("{seed}/{}", id.as_str()).as_bytes());
            let pop = group::create_pop(&params, &keypair, id.clone());
            registry.insert(address, id.clone(), *keypair.public());
            cas.push(CaAgent {
                id,
                address,
                keypair,
                pop,
                behavior: *behavior,
                tracked: BTreeMap::new(),
            });
        }

        let mut runtime = Runtime::new(
            scenario.chain.gas.clone(),
            scenario.chain.cancel_timeout_blocks,
        );
        if scenario.chain.verify_partials_on_chain {
            runtime.enable_partial_check(params.clone(), registry.clone());
        }
        let mut chain = Chain::new(scenario.chain.clone(), runtime);

        let owner = Address::from_label("requester");
        chain.create_account(owner, scenario.requester_balance);
        for ca in &cas {
            chain.create_account(ca.address, scenario.ca_balance);
        }

        let domain_key = group::keygen(
            &params,
            format!("{seed}/domain/{}", scenario.domain).as_bytes(),
        );
        let mean_ms = (scenario.chain.mean_block_interval_s * 1000.0) as u64;
        let mut net = ValidationNet::new(seed, 2 * mean_ms.max(1));
        net.register_domain(SimulatedDomain::new(
            scenario.domain.clone(),
            owner,
            *domain_key.public(),
        ));
        let mut owner_registry = BTreeMap::new();
        owner_registry.insert(scenario.domain.clone(), owner);

        let (adversary_account, adversary_key) = match &scenario.adversary {
            Some(adv) => {
                adv.validate().expect("adversary config valid");
                net.set_adversary(adv.clone())
                    .expect("adversary config valid");
                let mallory = Address::from_label("mallory");
                chain.create_account(mallory, scenario.requester_balance);
                let key = group::keygen(&params, format!("{seed}/mallory").as_bytes());
                (Some(mallory), Some(key))
            }
            None => (None, None),
        };

        Simulation {
            chain,
            net,
            params,
            registry,
            scenario,
            cas,
            owner,
            domain_key,
            adversary_account,
            adversary_key,
            owner_registry,
            tx_labels: BTreeMap::new(),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn owner(&self) -> Address {
        self.owner
    }

    pub fn ca_ids(&self) -> Vec<CaId> {
        self.cas.iter().map(|ca| ca.id.clone()).collect()
    }

    fn authorized_pool(&self) -> Vec<Address> {
        let count = if self.scenario.authorized_count == 0 {
            if self.scenario.first_t_mode {
                self.cas.len()
            } else {
                self.scenario.threshold_t as usize
            }
        } else {
            self.scenario.authorized_count
        };
        self.cas.iter().take(count).map(|ca| ca.address).collect()
    }

    fn submit_labeled(&mut self, label: String, draft: TxDraft) -> Result<Hash, LedgerError> {
        let hash = self.chain.submit(draft)?;
        self.tx_labels.insert(hash, label);
        Ok(hash)
    }

    /// Runs one honest issuance for the scenario's domain.
    pub fn run_issuance(
        &mut self,
    ) -> (Result<BlockPkiCertificate, IssuanceError>, IssuanceMetrics) {
        let cert_data = CertData {
            subject_name: self.scenario.domain.clone(),
            public_key: *self.domain_key.public(),
            not_before: self.scenario.validity_not_before,
            not_after: self.scenario.validity_not_after,
        };
        let authorized = self.authorized_pool();
        self.drive_round(self.owner, cert_data, authorized, None)
    }

    /// Renews the certificate held by an existing domain contract and runs
    /// the fresh signing round it opens.
    pub fn run_renewal(
        &mut self,
        contract: Address,
        not_before: u64,
        not_after: u64,
    ) -> (Result<BlockPkiCertificate, IssuanceError>, IssuanceMetrics) {
        let state = self
            .chain
            .runtime
            .domain_contract(&contract)
            .expect("renewal target exists");
        let funds: Currency = state.compensations.values().sum();
        let requester = state.requester;
        let call = ContractCall::Renew {
            not_before,
            not_after,
        };
        self.drive_round_with_opening(requester, contract, call, funds, "renew")
    }

    fn drive_round(
        &mut self,
        requester: Address,
        cert_data: CertData,
        authorized: Vec<Address>,
        threshold_override: Option<u64>,
    ) -> (Result<BlockPkiCertificate, IssuanceError>, IssuanceMetrics) {
        let compensations: BTreeMap<Address, Currency> = authorized
            .iter()
            .map(|a| (*a, self.scenario.compensation))
            .collect();
        let funds: Currency = compensations.values().sum();
        let first_t_mode = self.scenario.first_t_mode;
        let threshold = if first_t_mode {
            Some(threshold_override.unwrap_or(self.scenario.threshold_t))
        } else {
            threshold_override
        };
        let call = ContractCall::CreateDomainContract {
            cert_data,
            authorized_cas: authorized,
            compensations,
            threshold,
            first_t_mode,
        };
        self.drive_round_with_opening(
            requester,
            self.chain.runtime.central_address(),
            call,
            funds,
            "createDomainContract",
        )
    }

    /// Shared issuance loop: submits the opening transaction (contract
    /// creation or renewal), lets CA agents react block by block, merges and
    /// publishes once signatures complete, and waits out the confirmation
    /// depth.
    fn drive_round_with_opening(
        &mut self,
        requester: Address,
        opening_recipient: Address,
        opening_call: ContractCall,
        opening_funds: Currency,
        opening_label: &str,
    ) -> (Result<BlockPkiCertificate, IssuanceError>, IssuanceMetrics) {
        let start_tip = self.chain.tip_height();
        let start_ms = self.chain.now_ms();
        let mut metrics = IssuanceMetrics {
            blocks_elapsed: 0,
            sim_seconds: 0.0,
            inclusion_sim_seconds: 0.0,
            tx_count: 0,
            total_gas: 0,
            total_fees: 0,
            per_tx: Vec::new(),
            misbehaving_cas: Vec::new(),
        };

        let is_renewal = opening_recipient != self.chain.runtime.central_address();
        let mut contract: Option<Address> = if is_renewal {
            Some(opening_recipient)
        } else {
            None
        };
        let fee_limit = GAS_BOUND * self.chain.config().gas_price;
        let opening_hash = match self.submit_labeled(
            opening_label.to_string(),
            TxDraft {
                sender: requester,
                recipient: opening_recipient,
                payload: opening_call.encode(),
                value: opening_funds,
                fee_limit,
            },
        ) {
            Ok(hash) => hash,
            Err(e) => return (Err(e.into()), metrics),
        };

        let mut published: Option<Hash> = None;
        let mut inclusion_ms: Option<u64> = None;
        let result = loop {
            let block = self.chain.mine_next_block().clone();
            self.collect_costs(&block, &mut metrics);

            // The opening transaction must be accepted, not refused.
            if block.transactions.iter().any(|t| t.tx_hash == opening_hash) {
                let status = self
                    .chain
                    .execution_log()
                    .iter()
                    .find(|r| r.tx_hash == opening_hash)
                    .map(|r| r.status.clone())
                    .expect("executed");
                match status {
                    ExecStatus::Ok => {
                        if contract.is_none() {
                            contract = self
                                .chain
                                .scan_events(
                                    block.header.height,
                                    block.header.height,
                                    Some(EventKind::NewDomainContract),
                                )
                                .last()
                                .map(|e| e.contract_address);
                        }
                    }
                    ExecStatus::Refused(reason) | ExecStatus::Ignored(reason) => {
                        break Err(IssuanceError::CreationRefused(reason.to_string()));
                    }
                }
            }

            self.step_cas();

            if let Some(contract_addr) = contract {
                let complete = self
                    .chain
                    .runtime
                    .domain_contract(&contract_addr)
                    .is_some_and(|s| s.round_complete());
                if complete && published.is_none() {
                    let state = self.chain.runtime.domain_contract(&contract_addr).unwrap();
                    metrics.misbehaving_cas = self.flag_misbehavers(state);
                    match certificates::merge_contract_signature(
                        &self.params,
                        state,
                        &self.registry,
                    ) {
                        Ok(payload) => {
                            let call = ContractCall::StoreCertificate {
                                cert_data: payload.cert_data(),
                                ca_ids: payload.issuers.clone(),
                                signature: payload.schnorr_signature.clone(),
                            };
                            match self.submit_labeled(
                                "storeCertificate".into(),
                                TxDraft {
                                    sender: requester,
                                    recipient: self.chain.runtime.storage_address(),
                                    payload: call.encode(),
                                    value: 0,
                                    fee_limit,
                                },
                            ) {
                                Ok(hash) => published = Some(hash),
                                Err(e) => break Err(e.into()),
                            }
                        }
                        Err(e) => break Err(e.into()),
                    }
                }
            }

            let storage_mined = published.is_some_and(|hash| self.chain.find_tx(&hash).is_some());
            if storage_mined {
                let storage_hash = published.unwrap();
                if inclusion_ms.is_none() {
                    inclusion_ms = Some(self.chain.now_ms());
                }
                let confirmations = self.chain.confirmations(&storage_hash).expect("mined");
                if confirmations >= self.chain.config().confirmation_depth {
                    break certificates::certificate_from_chain(&self.chain, &storage_hash)
                        .map_err(IssuanceError::from);
                }
            } else if self.chain.tip_height() - start_tip > self.scenario.issuance_timeout_blocks {
                // The timeout bounds protocol progress up to inclusion; the
                // confirmation wait afterwards always terminates on its own.
                break Err(IssuanceError::Timeout {
                    blocking: self.blocking_cas(contract),
                });
            }
        };

        metrics.blocks_elapsed = self.chain.tip_height() - start_tip;
        metrics.sim_seconds = (self.chain.now_ms() - start_ms) as f64 / 1000.0;
        metrics.inclusion_sim_seconds =
            (inclusion_ms.unwrap_or(self.chain.now_ms()) - start_ms) as f64 / 1000.0;
        metrics.tx_count = metrics.per_tx.len() as u64;
        metrics.total_gas = metrics.per_tx.iter().map(|t| t.gas).sum();
        metrics.total_fees = metrics.per_tx.iter().map(|t| t.fee).sum();
        (result, metrics)
    }

    fn collect_costs(&self, block: &crate::ledger::Block, metrics: &mut IssuanceMetrics) {
        for tx in &block.transactions {
            if let Some(label) = self.tx_labels.get(&tx.tx_hash) {
                metrics.per_tx.push(TxCost {
                    label: label.clone(),
                    tx_hash: tx.tx_hash,
                    gas: tx.gas_used,
                    fee: tx.fee,
                });
            }
        }
    }

    /// CAs whose expected contribution is missing, for timeout reports.
    fn blocking_cas(&self, contract: Option<Address>) -> Vec<CaId> {
        let Some(state) = contract.and_then(|c| self.chain.runtime.domain_contract(&c)) else {
            return Vec::new();
        };
        let missing_nonce = !state.all_cert_nonces;
        self.cas
            .iter()
            .filter(|ca| state.authorized_cas.contains(&ca.address))
            .filter(|ca| {
                if missing_nonce {
                    !state.has_nonce_from(&ca.address)
                } else {
                    state.has_nonce_from(&ca.address) && !state.has_sig_from(&ca.address)
                }
            })
            .map(|ca| ca.id.clone())
            .collect()
    }

    fn flag_misbehavers(&self, state: &crate::contracts::DomainContractState) -> Vec<CaId> {
        self.cas
            .iter()
            .filter(|ca| ca.behavior == CaBehavior::GarbageSigner)
            .filter(|ca| state.has_sig_from(&ca.address))
            .map(|ca| ca.id.clone())
            .collect()
    }

    /// One event-loop step for every CA, in id order: detect new contracts,
    /// validate and submit nonces, and answer completed nonce rounds with
    /// partial signatures.
    fn step_cas(&mut self) {
        let height = self.chain.tip_height();
        let now_ms = self.chain.now_ms();
        let fee_limit = GAS_BOUND * self.chain.config().gas_price;

        // New contracts become tracked by every authorized CA.
        let new_contracts: Vec<Address> = self
            .chain
            .scan_events(height, height, Some(EventKind::NewDomainContract))
            .iter()
            .map(|e| e.contract_address)
            .collect();
        for contract in new_contracts {
            let state = self
                .chain
                .runtime
                .domain_contract(&contract)
                .expect("event implies state");
            let authorized = state.authorized_cas.clone();
            let round_height = state.round_started_at_height;
            for ca in &mut self.cas {
                if authorized.contains(&ca.address) {
                    ca.tracked.insert(
                        contract,
                        RoundState {
                            round_height,
                            nonce: None,
                            nonce_submitted: false,
                            sig_submitted: false,
                        },
                    );
                }
            }
        }

        for idx in 0..self.cas.len() {
            let contracts: Vec<Address> = self.cas[idx].tracked.keys().copied().collect();
            for contract in contracts {
                self.step_ca_on_contract(idx, contract, now_ms, fee_limit);
            }
        }
    }

    fn step_ca_on_contract(
        &mut self,
        idx: usize,
        contract: Address,
        now_ms: u64,
        fee_limit: Currency,
    ) {
        let Some(state) = self.chain.runtime.domain_contract(&contract) else {
            self.cas[idx].tracked.remove(&contract);
            return;
        };
        if state.cancelled {
            self.cas[idx].tracked.remove(&contract);
            return;
        }
        if self.cas[idx].behavior == CaBehavior::Unresponsive {
            return;
        }

        let state = state.clone();
        // A renewal opens a new round: reset local round tracking.
        {
            let round = self.cas[idx].tracked.get_mut(&contract).unwrap();
            if round.round_height != state.round_started_at_height {
                *round = RoundState {
                    round_height: state.round_started_at_height,
                    nonce: None,
                    nonce_submitted: false,
                    sig_submitted: false,
                };
            }
        }

        let ca_address = self.cas[idx].address;
        let needs_nonce = !state.all_cert_nonces
            && !state.has_nonce_from(&ca_address)
            && !self.cas[idx].tracked[&contract].nonce_submitted;
        if needs_nonce {
            if !self.validate_domain(idx, &state, now_ms) {
                return;
            }
            let ca = &mut self.cas[idx];
            let nonce = group::gen_nonce(
                &self.params,
                &ca.keypair,
                &state.cert_data.canonical_bytes(),
            );
            let call = ContractCall::SendCertPubNonce {
                nonce: *nonce.public(),
            };
            let round = ca.tracked.get_mut(&contract).unwrap();
            round.nonce = Some(nonce);
            round.nonce_submitted = true;
            let label = format!("sendCertPubNonce({})", self.cas[idx].id.as_str());
            let draft = TxDraft {
                sender: ca_address,
                recipient: contract,
                payload: call.encode(),
                value: 0,
                fee_limit,
            };
            let _ = self.submit_labeled(label, draft);
            return;
        }

        let can_sign = state.all_cert_nonces
            && state.has_nonce_from(&ca_address)
            && !state.has_sig_from(&ca_address)
            && !self.cas[idx].tracked[&contract].sig_submitted
            // A co-signer that committed a foreign-group nonce has broken
            // the round; an honest CA will not sign over it.
            && state
                .cert_pub_nonces
                .iter()
                .all(|(_, n)| n.group() == self.params.id());
        if can_sign {
            let issuers: Vec<CaId> = state
                .cert_pub_nonces
                .iter()
                .map(|(a, _)| {
                    self.registry
                        .get(a)
                        .expect("registry covers pool")
                        .0
                        .clone()
                })
                .collect();
            let publics: Vec<_> = state.cert_pub_nonces.iter().map(|(_, n)| *n).collect();
            let n_bar = group::combine_nonces(&self.params, &publics).expect("nonces complete");
            let message = certificates::signing_message(&state.cert_data, &issuers);
            let e = group::challenge(&self.params, &n_bar, &message);

            let ca = &mut self.cas[idx];
            let partial = match ca.behavior {
                CaBehavior::GarbageSigner => PartialSignature {
                    signer_id: ca.id.clone(),
                    s: self
                        .params
                        .hash_to_scalar(format!("garbage/{}", ca.id.as_str()).as_bytes()),
                },
                _ => {
                    let round = ca.tracked.get_mut(&contract).unwrap();
                    let nonce = round.nonce.as_mut().expect("nonce retained for round two");
                    group::partial_sign(&self.params, &ca.keypair, nonce, &e, ca.id.clone())
                        .expect("single use per round")
                }
            };
            let label = format!("sendCertSignature({})", self.cas[idx].id.as_str());
            let round = self.cas[idx].tracked.get_mut(&contract).unwrap();
            round.sig_submitted = true;
            let draft = TxDraft {
                sender: ca_address,
                recipient: contract,
                payload: ContractCall::SendCertSignature { partial }.encode(),
                value: 0,
                fee_limit,
            };
            let _ = self.submit_labeled(label, draft);
        }
    }

    /// ACME-style validation: the CA challenges the domain, the requester's
    /// script answers, the CA checks from its own vantage point. Compromised
    /// CAs skip straight to attesting the adversary's target.
    fn validate_domain(
        &mut self,
        idx: usize,
        state: &crate::contracts::DomainContractState,
        now_ms: u64,
    ) -> bool {
        let ca_id = self.cas[idx].id.clone();
        let challenge = self
            .net
            .issue_challenge(&ca_id, &state.cert_data.subject_name, now_ms);
        // The contract's requester runs the completion script; whether it can
        // actually place the token depends on who controls the domain.
        let _ = self.net.complete_challenge(state.requester, &challenge);
        self.net.check_challenge(&ca_id, &challenge, now_ms)
    }

    /// Trust store covering the whole CA pool, with the current header chain
    /// and blocks attached.
    pub fn trust_store_file(&self) -> TrustStoreFile {
        TrustStoreFile {
            group: self.params.id(),
            t_policy: self.scenario.effective_policy(),
            pop_check: true,
            trusted_cas: self
                .cas
                .iter()
                .map(|ca| TrustedCaEntry {
                    id: ca.id.clone(),
                    public_key: *ca.keypair.public(),
                    pop: ca.pop.clone(),
                })
                .collect(),
            headers: self.chain.header_chain(),
            blocks: self.chain.blocks().to_vec(),
        }
    }

    /// Runs the adversary's issuance attempt against the target domain and
    /// reports constructibility, per-tier acceptance of the logged and
    /// unlogged variants, and what the monitor sees.
    pub fn run_attack(&mut self) -> AttackRunReport {
        let adversary = self
            .net
            .adversary()
            .cloned()
            .expect("attack scenario has an adversary");
        let mallory = self.adversary_account.expect("adversary funded");
        let mallory_key = self.adversary_key.clone().expect("adversary key");
        let target = adversary.target_domain.clone();
        let i = adversary.compromised_count();
        let j = adversary.impersonated_count_for(&target);
        let t = self.scenario.threshold_t;

        // The adversary authorizes the CAs most likely to attest: the ones
        // it compromised or can impersonate first, honest fill if short.
        let willing: Vec<Address> = self
            .cas
            .iter()
            .filter(|ca| {
                adversary.compromised_cas.contains(&ca.id)
                    || adversary
                        .impersonated_edges
                        .contains(&(ca.id.clone(), target.clone()))
            })
            .map(|ca| ca.address)
            .collect();
        let mut authorized = willing.clone();
        for ca in &self.cas {
            if authorized.len() >= t as usize {
                break;
            }
            if !authorized.contains(&ca.address) {
                authorized.push(ca.address);
            }
        }
        authorized.truncate(t as usize);

        let cert_data = CertData {
            subject_name: target.clone(),
            public_key: *mallory_key.public(),
            not_before: self.scenario.validity_not_before,
            not_after: self.scenario.validity_not_after,
        };
        let (outcome, _metrics) = self.drive_round(mallory, cert_data, authorized, None);

        let mut report = AttackRunReport {
            threshold_t: t,
            compromised: i,
            impersonated: j,
            constructible: outcome.is_ok(),
            logged: None,
            unlogged: None,
            monitor_anomalies: 0,
        };
        let Ok(logged_cert) = outcome else {
            report.monitor_anomalies = monitor_scan(&self.chain, &self.owner_registry).len();
            return report;
        };

        let now = (self.scenario.validity_not_before + self.scenario.validity_not_after) / 2;
        let store_file = self.trust_store_file();
        let tiers = self.scenario.client_tiers.clone();
        let verify_tiers = |cert: &BlockPkiCertificate| -> Vec<TierOutcome> {
            tiers
                .iter()
                .map(|&mode| {
                    let trust = store_file.load(mode).expect("honest pops");
                    let verdict =
                        certificates::verify_certificate(&self.params, cert, &trust, &target, now);
                    TierOutcome {
                        mode,
                        accepted: verdict.is_ok(),
                        reason: verdict.err(),
                    }
                })
                .collect()
        };

        report.logged = Some(verify_tiers(&logged_cert));

        // Unlogged variant: the same fraudulent payload presented without a
        // real on-chain anchor.
        let payload = logged_cert.payload().expect("payload decodes");
        let fabricated = fabricate_unlogged_certificate(&payload, self.chain.tip_height() + 7);
        report.unlogged = Some(verify_tiers(&fabricated));

        report.monitor_anomalies = monitor_scan(&self.chain, &self.owner_registry).len();
        report
    }

    pub fn owner_registry(&self) -> &BTreeMap<String, Address> {
        &self.owner_registry
    }
}

/// A certificate whose storage transaction was never published: internally
/// consistent, but anchored to a block no light client knows.
pub fn fabricate_unlogged_certificate(
    payload: &CertificatePayload,
    block_no: u64,
) -> BlockPkiCertificate {
    let call = ContractCall::StoreCertificate {
        cert_data: payload.cert_data(),
        ca_ids: payload.issuers.clone(),
        signature: payload.schnorr_signature.clone(),
    };
    let mut tx = crate::ledger::Transaction {
        sender: Address::from_label("mallory"),
        recipient: Address::from_label("storage-contract"),
        nonce: 0,
        payload: call.encode(),
        value: 0,
        fee_limit: GAS_BOUND,
        gas_used: 0,
        fee: 0,
        tx_hash: Hash::ZERO,
    };
    tx.tx_hash = tx.compute_hash();
    BlockPkiCertificate {
        transaction: tx,
        block_no,
        inclusion_proof: crate::merkle::InclusionProof {
            leaf_index: 0,
            siblings: Vec::new(),
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TierOutcome {
    pub mode: ClientMode,
    pub accepted: bool,
    pub reason: Option<certificates::RejectReason>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackRunReport {
    pub threshold_t: u64,
    pub compromised: usize,
    pub impersonated: usize,
    pub constructible: bool,
    pub logged: Option<Vec<TierOutcome>>,
    pub unlogged: Option<Vec<TierOutcome>>,
    pub monitor_anomalies: usize,
}

/// Stored certificate whose issuance was not initiated by the domain's
/// registered owner.
#[derive(Debug, Clone, Serialize)]
pub struct Anomaly {
    pub record_index: usize,
    pub subject_name: String,
    pub initiator: Address,
    pub registered_owner: Address,
}

/// Scans the storage contract's log against the ownership oracle: every
/// record for a registered domain must trace back to a domain contract
/// created by that domain's owner. Certificates kept off the log are out of
/// scan scope by construction; light clients reject those instead.
pub fn monitor_scan(chain: &Chain, owner_registry: &BTreeMap<String, Address>) -> Vec<Anomaly> {
    let mut anomalies = Vec::new();
    for (index, record) in chain.runtime.stored_certificates().iter().enumerate() {
        let Some(owner) = owner_registry.get(&record.cert_data.subject_name) else {
            continue;
        };
        let initiator = chain
            .runtime
            .created_domain_contracts()
            .iter()
            .filter_map(|addr| chain.runtime.domain_contract(addr))
            .find(|state| {
                state.cert_data.subject_name == record.cert_data.subject_name
                    && state.cert_data.public_key == record.cert_data.public_key
            })
            .map(|state| state.requester)
            .or_else(|| chain.find_tx(&record.tx_hash).map(|(tx, _)| tx.sender));
        let Some(initiator) = initiator else { continue };
        if initiator != *owner {
            anomalies.push(Anomaly {
                record_index: index,
                subject_name: record.cert_data.subject_name.clone(),
                initiator,
                registered_owner: *owner,
            });
        }
    }
    anomalies
}

/// Builds the scenario for one cell of the threshold-security grid: i
/// compromised CAs plus j impersonated validation paths against a T-of-T
/// issuance.
pub fn attack_scenario(t: u64, i: usize, j: usize, seed: u64) -> Scenario {
    let pool = (t as usize).max(i + j);
    let domain = "victim.example".to_string();
    let mut compromised = std::collections::BTreeSet::new();
    let mut edges = std::collections::BTreeSet::new();
    for n in 0..i {
        compromised.insert(CaId::new(format!("CA{}", n + 1)));
    }
    for n in 0..j {
        edges.insert((CaId::new(format!("CA{}", i + n + 1)), domain.clone()));
    }
    let mut behaviors = vec![CaBehavior::Honest; pool];
    for b in behaviors.iter_mut().take(i) {
        *b = CaBehavior::Compromised;
    }
    Scenario {
        threshold_t: t,
        ca_behaviors: behaviors,
        domain: domain.clone(),
        adversary: Some(AdversaryConfig {
            target_domain: domain,
            compromised_cas: compromised,
            impersonated_edges: edges,
        }),
        chain: ChainConfig {
            rng_seed: seed,
            confirmation_depth: 0,
            ..ChainConfig::default()
        },
        ..Scenario::default()
    }
}

/// Exhaustive (i, j) sweep with i + j bounded; one fresh simulation per cell.
pub fn run_attack_grid(t: u64, max_sum: usize, seed: u64) -> Vec<AttackRunReport> {
    let mut reports = Vec::new();
    for total in 0..=max_sum {
        for i in 0..=total {
            let j = total - i;
            let scenario = attack_scenario(t, i, j, seed + (i * 100 + j) as u64);
            let mut sim = Simulation::from_scenario(scenario);
            reports.push(sim.run_attack());
        }
    }
    reports
}
