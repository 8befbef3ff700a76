//! Simulated blockchain: accounts, fee and gas accounting, a FIFO mempool
//! with stochastic broadcast delays, block production on an exponential
//! schedule, and the header chain light clients verify against.
//!
//! A single deterministic event loop owns all state; every random draw comes
//! from seeded streams, so a fixed `ChainConfig` always produces the same
//! chain tip.

mod gas;

pub use gas::{gas_meter, GasTable, PayloadKind};

use crate::contracts::{ContractEvent, EventKind, Runtime};
use crate::merkle::{self, Hash, InclusionProof, MerkleTree};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use thiserror::Error;

pub type Currency = u64;

/// 20-byte account or contract identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; 20]);

impl Address {
    /// Deterministic address from a human-readable label.
    pub fn from_label(label: &str) -> Address {
        let digest: [u8; 32] = Sha256::new()
            .chain_update(b"blockpki/address/")
            .chain_update(label.as_bytes())
            .finalize()
            .into();
        let mut out = [0u8; 20];
        out.copy_from_slice(&digest[..20]);
        Address(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Address, LedgerError> {
        let bytes = hex::decode(s).map_err(|_| LedgerError::BadEncoding("address"))?;
        let arr: [u8; 20] = bytes
            .try_into()
            .map_err(|_| LedgerError::BadEncoding("address"))?;
        Ok(Address(arr))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.to_hex())
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Address {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Address, D::Error> {
        let s = String::deserialize(deserializer)?;
        Address::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod hexbytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown sender {0}")]
    UnknownSender(Address),
    #[error("insufficient balance: need {needed}, have {available} unreserved")]
    InsufficientBalance {
        needed: Currency,
        available: Currency,
    },
    #[error("unknown transaction")]
    UnknownTx,
    #[error("transaction not mined yet")]
    Unmined,
    #[error("unknown block height {0}")]
    UnknownBlock(u64),
    #[error("malformed {0} encoding")]
    BadEncoding(&'static str),
}

/// Chain-level parameters. Every stochastic and cost constant the simulator
/// uses is declared here so scenario files can pin them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Mean of the exponential block-interval distribution, in seconds.
    pub mean_block_interval_s: f64,
    /// Currency charged per gas unit.
    pub gas_price: Currency,
    /// Blocks mined on top of a transaction's block before it is trusted.
    pub confirmation_depth: u64,
    pub rng_seed: u64,
    /// Transactions admitted per block.
    pub block_tx_limit: usize,
    /// Mean broadcast delay before a submitted transaction becomes eligible
    /// for inclusion, in seconds. Zero models the ideal schedule where every
    /// transaction makes the very next block.
    pub broadcast_delay_mean_s: f64,
    pub gas: GasTable,
    /// Check partial-signature validity inside the domain contract. Off by
    /// default: on-chain public-key cryptography is priced out, misbehaving
    /// signers are handled by reputation instead.
    pub verify_partials_on_chain: bool,
    /// Blocks after which a requester may cancel a stalled contract.
    pub cancel_timeout_blocks: u64,
}

impl ChainConfig {
    /// Hash used for transaction hashes, Merkle nodes, and block headers.
    /// One fixed algorithm keeps chain dumps portable across deployments.
    pub const HASH_ALGORITHM: &'static str = "sha256";
}

impl Default for ChainConfig {
    fn default() -> ChainConfig {
        ChainConfig {
            mean_block_interval_s: 15.0,
            gas_price: 1,
            confirmation_depth: 12,
            rng_seed: 0,
            block_tx_limit: 100,
            broadcast_delay_mean_s: 0.0,
            gas: GasTable::default(),
            verify_partials_on_chain: false,
            cancel_timeout_blocks: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Account {
    pub address: Address,
    pub balance: Currency,
    /// Number of transactions from this account already executed.
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: Address,
    pub recipient: Address,
    pub nonce: u64,
    #[serde(with = "hexbytes")]
    pub payload: Vec<u8>,
    pub value: Currency,
    /// Upper bound on the fee, reserved at submission.
    pub fee_limit: Currency,
    /// Filled on execution.
    pub gas_used: u64,
    /// Filled on execution; always gas_used * gas_price.
    pub fee: Currency,
    pub tx_hash: Hash,
}

impl Transaction {
    /// Canonical bytes covering the sender-chosen fields only; execution
    /// outputs (gas, fee) are excluded so the hash is stable from submission.
    pub fn canonical_bytes(
        sender: &Address,
        recipient: &Address,
        nonce: u64,
        payload: &[u8],
        value: Currency,
        fee_limit: Currency,
    ) -> Vec<u8> {
        let value_json = serde_json::json!({
            "fee_limit": fee_limit,
            "nonce": nonce,
            "payload": hex::encode(payload),
            "recipient": recipient.to_hex(),
            "sender": sender.to_hex(),
            "value": value,
        });
        serde_json::to_vec(&value_json).expect("json encoding cannot fail")
    }

    pub fn compute_hash(&self) -> Hash {
        merkle::leaf_hash(&Transaction::canonical_bytes(
            &self.sender,
            &self.recipient,
            self.nonce,
            &self.payload,
            self.value,
            self.fee_limit,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub parent_hash: Hash,
    pub tx_root: Hash,
    pub timestamp_ms: u64,
}

impl BlockHeader {
    pub fn hash(&self) -> Hash {
        let value_json = serde_json::json!({
            "height": self.height,
            "parent_hash": self.parent_hash.to_hex(),
            "timestamp_ms": self.timestamp_ms,
            "tx_root": self.tx_root.to_hex(),
        });
        let bytes = serde_json::to_vec(&value_json).expect("json encoding cannot fail");
        Hash(Sha256::digest(&bytes).into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

impl Block {
    pub fn tx_root_over(transactions: &[Transaction]) -> Hash {
        if transactions.is_empty() {
            return merkle::empty_root();
        }
        let leaves: Vec<Hash> = transactions.iter().map(|t| t.tx_hash).collect();
        MerkleTree::build(&leaves).expect("non-empty").root()
    }
}

/// Submission-side view of a transaction; nonce and hash are assigned by the
/// ledger.
#[derive(Debug, Clone)]
pub struct TxDraft {
    pub sender: Address,
    pub recipient: Address,
    pub payload: Vec<u8>,
    pub value: Currency,
    pub fee_limit: Currency,
}

#[derive(Debug, Clone)]
struct PendingTx {
    tx: Transaction,
    eligible_at_ms: u64,
}

/// Credit-only account access handed to the contract runtime for
/// compensation payouts and refunds. All debits stay in the ledger.
pub struct Vault<'a> {
    accounts: &'a mut BTreeMap<Address, Account>,
}

impl Vault<'_> {
    pub fn credit(&mut self, address: Address, amount: Currency) {
        let account = self.accounts.entry(address).or_insert(Account {
            address,
            balance: 0,
            nonce: 0,
        });
        account.balance = account
            .balance
            .checked_add(amount)
            .expect("balance overflow");
    }
}

/// How execution routed the transaction's value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRouting {
    /// Held by a contract as escrow.
    Escrowed,
    /// Credited to the recipient account.
    Transferred,
    /// Returned to the sender (refused or no-op calls).
    Refunded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecStatus {
    /// State change applied.
    Ok,
    /// Contract-style silent no-op: guards failed, gas still charged.
    Ignored(&'static str),
    /// Call refused by a guard; value refunded.
    Refused(&'static str),
}

#[derive(Debug, Clone)]
pub struct ExecutionOutcome {
    /// Gas charged by the runtime on top of the base transaction cost.
    pub gas_units: u64,
    pub status: ExecStatus,
    pub routing: ValueRouting,
}

/// Record of one executed transaction, for metrics and tests.
#[derive(Debug, Clone)]
pub struct ExecutionRecord {
    pub tx_hash: Hash,
    pub height: u64,
    pub status: ExecStatus,
}

pub struct Chain {
    config: ChainConfig,
    accounts: BTreeMap<Address, Account>,
    reserved: BTreeMap<Address, Currency>,
    pending_count: BTreeMap<Address, u64>,
    mempool: VecDeque<PendingTx>,
    blocks: Vec<Block>,
    tx_locations: BTreeMap<Hash, (u64, usize)>,
    execution_log: Vec<ExecutionRecord>,
    pub runtime: Runtime,
    now_ms: u64,
    next_block_at_ms: u64,
    block_rng: ChaCha20Rng,
    net_rng: ChaCha20Rng,
    miner: Address,
}

impl Chain {
    pub fn new(config: ChainConfig, runtime: Runtime) -> Chain {
        let genesis = Block {
            header: BlockHeader {
                height: 0,
                parent_hash: Hash::ZERO,
                tx_root: merkle::empty_root(),
                timestamp_ms: 0,
            },
            transactions: Vec::new(),
        };
        let mut block_rng = ChaCha20Rng::seed_from_u64(config.rng_seed ^ 0x626c6f636b); // "block"
        let net_rng = ChaCha20Rng::seed_from_u64(config.rng_seed ^ 0x6e6574); // "net"
        let first_interval = sample_exp_ms(&mut block_rng, config.mean_block_interval_s).max(1);
        let miner = Address::from_label("miner");
        let mut accounts = BTreeMap::new();
        accounts.insert(
            miner,
            Account {
                address: miner,
                balance: 0,
                nonce: 0,
            },
        );
        Chain {
            config,
            accounts,
            reserved: BTreeMap::new(),
            pending_count: BTreeMap::new(),
            mempool: VecDeque::new(),
            blocks: vec![genesis],
            tx_locations: BTreeMap::new(),
            execution_log: Vec::new(),
            runtime,
            now_ms: 0,
            next_block_at_ms: first_interval,
            block_rng,
            net_rng,
            miner,
        }
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn miner(&self) -> Address {
        self.miner
    }

    pub fn create_account(&mut self, address: Address, balance: Currency) {
        self.accounts.insert(
            address,
            Account {
                address,
                balance,
                nonce: 0,
            },
        );
    }

    pub fn account(&self, address: &Address) -> Option<&Account> {
        self.accounts.get(address)
    }

    pub fn balance(&self, address: &Address) -> Currency {
        self.accounts.get(address).map(|a| a.balance).unwrap_or(0)
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn now_s(&self) -> f64 {
        self.now_ms as f64 / 1000.0
    }

    pub fn tip_height(&self) -> u64 {
        self.blocks.last().unwrap().header.height
    }

    pub fn tip_hash(&self) -> Hash {
        self.blocks.last().unwrap().header.hash()
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn header_chain(&self) -> Vec<BlockHeader> {
        self.blocks.iter().map(|b| b.header.clone()).collect()
    }

    pub fn execution_log(&self) -> &[ExecutionRecord] {
        &self.execution_log
    }

    /// Admits a transaction to the mempool if the sender's unreserved
    /// balance covers value plus the fee bound.
    pub fn submit(&mut self, draft: TxDraft) -> Result<Hash, LedgerError> {
        let account = self
            .accounts
            .get(&draft.sender)
            .ok_or(LedgerError::UnknownSender(draft.sender))?;
        let reserved = self.reserved.get(&draft.sender).copied().unwrap_or(0);
        let needed = draft.value + draft.fee_limit;
        let available = account.balance.saturating_sub(reserved);
        if available < needed {
            return Err(LedgerError::InsufficientBalance { needed, available });
        }
        let nonce = account.nonce + self.pending_count.get(&draft.sender).copied().unwrap_or(0);
        let mut tx = Transaction {
            sender: draft.sender,
            recipient: draft.recipient,
            nonce,
            payload: draft.payload,
            value: draft.value,
            fee_limit: draft.fee_limit,
            gas_used: 0,
            fee: 0,
            tx_hash: Hash::ZERO,
        };
        tx.tx_hash = tx.compute_hash();
        let hash = tx.tx_hash;

        *self.reserved.entry(draft.sender).or_insert(0) += needed;
        *self.pending_count.entry(draft.sender).or_insert(0) += 1;
        let delay = sample_exp_ms(&mut self.net_rng, self.config.broadcast_delay_mean_s);
        self.mempool.push_back(PendingTx {
            tx,
            eligible_at_ms: self.now_ms + delay,
        });
        Ok(hash)
    }

    /// Simulated time at which the next block will be mined.
    pub fn next_block_at_ms(&self) -> u64 {
        self.next_block_at_ms
    }

    /// Advances the clock to the next block event, drains eligible
    /// transactions in FIFO order (nonce order per sender), executes them
    /// against the contract runtime, and appends the block.
    pub fn mine_next_block(&mut self) -> &Block {
        self.now_ms = self.next_block_at_ms;
        let height = self.tip_height() + 1;
        let timestamp_ms = self.now_ms;

        // Selection pass: FIFO, respecting per-sender nonce order. A sender
        // with a delayed transaction is blocked until it becomes eligible so
        // nonces never execute out of order.
        let mut selected = Vec::new();
        let mut kept = VecDeque::new();
        let mut blocked: Vec<Address> = Vec::new();
        while let Some(ptx) = self.mempool.pop_front() {
            let eligible = ptx.eligible_at_ms <= self.now_ms
                && selected.len() < self.config.block_tx_limit
                && !blocked.contains(&ptx.tx.sender);
            if eligible {
                selected.push(ptx.tx);
            } else {
                if !blocked.contains(&ptx.tx.sender) {
                    blocked.push(ptx.tx.sender);
                }
                kept.push_back(ptx);
            }
        }
        self.mempool = kept;

        let mut executed = Vec::with_capacity(selected.len());
        for tx in selected {
            executed.push(self.execute_tx(tx, height));
        }

        let tx_root = Block::tx_root_over(&executed);
        let parent_hash = self.blocks.last().unwrap().header.hash();
        let header = BlockHeader {
            height,
            parent_hash,
            tx_root,
            timestamp_ms,
        };
        for (index, tx) in executed.iter().enumerate() {
            self.tx_locations.insert(tx.tx_hash, (height, index));
        }
        self.blocks.push(Block {
            header,
            transactions: executed,
        });

        let interval = sample_exp_ms(&mut self.block_rng, self.config.mean_block_interval_s).max(1);
        self.next_block_at_ms = self.now_ms + interval;
        self.blocks.last().unwrap()
    }

    fn execute_tx(&mut self, mut tx: Transaction, height: u64) -> Transaction {
        // Release the reservation and prepay value + fee bound.
        let hold = tx.value + tx.fee_limit;
        {
            let reserved = self
                .reserved
                .get_mut(&tx.sender)
                .expect("reservation exists");
            *reserved -= hold;
            if *reserved == 0 {
                self.reserved.remove(&tx.sender);
            }
        }
        {
            let count = self
                .pending_count
                .get_mut(&tx.sender)
                .expect("pending count exists");
            *count -= 1;
            if *count == 0 {
                self.pending_count.remove(&tx.sender);
            }
        }
        {
            let sender = self.accounts.get_mut(&tx.sender).expect("sender exists");
            sender.balance = sender
                .balance
                .checked_sub(hold)
                .expect("admission reserved the funds");
            sender.nonce += 1;
        }

        let mut vault = Vault {
            accounts: &mut self.accounts,
        };
        let outcome = self.runtime.execute(&tx, height, &mut vault);

        tx.gas_used = self.config.gas.base_tx_cost + outcome.gas_units;
        tx.fee = tx.gas_used * self.config.gas_price;
        assert!(
            tx.fee <= tx.fee_limit,
            "fee {} exceeds the sender's bound {}; scenario underfunded gas",
            tx.fee,
            tx.fee_limit
        );

        // Settle: unused fee budget back to the sender, fee to the miner,
        // value to wherever execution routed it.
        let mut refund = tx.fee_limit - tx.fee;
        match outcome.routing {
            ValueRouting::Escrowed => {}
            ValueRouting::Transferred => {
                let recipient = tx.recipient;
                let value = tx.value;
                Vault {
                    accounts: &mut self.accounts,
                }
                .credit(recipient, value);
            }
            ValueRouting::Refunded => refund += tx.value,
        }
        Vault {
            accounts: &mut self.accounts,
        }
        .credit(tx.sender, refund);
        Vault {
            accounts: &mut self.accounts,
        }
        .credit(self.miner, tx.fee);

        self.execution_log.push(ExecutionRecord {
            tx_hash: tx.tx_hash,
            height,
            status: outcome.status,
        });
        tx
    }

    /// Blocks mined on top of the transaction's block; 0 while unmined or in
    /// the tip block.
    pub fn confirmations(&self, tx_hash: &Hash) -> Result<u64, LedgerError> {
        if let Some((height, _)) = self.tx_locations.get(tx_hash) {
            return Ok(self.tip_height() - height);
        }
        if self.mempool.iter().any(|p| p.tx.tx_hash == *tx_hash) {
            return Ok(0);
        }
        Err(LedgerError::UnknownTx)
    }

    pub fn find_tx(&self, tx_hash: &Hash) -> Option<(&Transaction, u64)> {
        let (height, index) = self.tx_locations.get(tx_hash)?;
        Some((&self.blocks[*height as usize].transactions[*index], *height))
    }

    /// Merkle proof that the transaction is in its containing block.
    pub fn get_inclusion_proof(
        &self,
        tx_hash: &Hash,
    ) -> Result<(u64, InclusionProof), LedgerError> {
        match self.tx_locations.get(tx_hash) {
            Some((height, index)) => {
                let block = &self.blocks[*height as usize];
                let leaves: Vec<Hash> = block.transactions.iter().map(|t| t.tx_hash).collect();
                let tree = MerkleTree::build(&leaves).expect("mined block has the tx");
                let proof = tree.prove_inclusion(*index).expect("index in range");
                Ok((*height, proof))
            }
            None => {
                if self.mempool.iter().any(|p| p.tx.tx_hash == *tx_hash) {
                    Err(LedgerError::Unmined)
                } else {
                    Err(LedgerError::UnknownTx)
                }
            }
        }
    }

    pub fn scan_events(
        &self,
        from_height: u64,
        to_height: u64,
        kind: Option<EventKind>,
    ) -> Vec<ContractEvent> {
        self.runtime.scan_events(from_height, to_height, kind)
    }

    /// Total currency in the system: account balances plus contract escrows.
    /// Constant across any block execution.
    pub fn total_currency(&self) -> u128 {
        let balances: u128 = self.accounts.values().map(|a| a.balance as u128).sum();
        balances + self.runtime.total_escrow() as u128
    }

    /// One block per line, canonical field order; byte-exact round-trip.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push_str(&serde_json::to_string(block).expect("block serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("chain dump line {line}: {reason}")]
pub struct ChainLoadError {
    pub line: usize,
    pub reason: String,
}

fn sample_exp_ms(rng: &mut ChaCha20Rng, mean_s: f64) -> u64 {
    if mean_s <= 0.0 {
        return 0;
    }
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let seconds = -mean_s * (1.0 - u).ln();
    (seconds * 1000.0).round() as u64
}

/// Parses and validates a chain dump: sequential heights, parent links,
/// transaction roots, and transaction hashes.
pub fn load_dump(dump: &str) -> Result<Vec<Block>, ChainLoadError> {
    let mut blocks: Vec<Block> = Vec::new();
    for (i, line) in dump.lines().enumerate() {
        let lineno = i + 1;
        let block: Block = serde_json::from_str(line).map_err(|e| ChainLoadError {
            line: lineno,
            reason: format!("parse error: {e}"),
        })?;
        if block.header.height != i as u64 {
            return Err(ChainLoadError {
                line: lineno,
                reason: format!("height {} out of sequence", block.header.height),
            });
        }
        let expected_parent = match blocks.last() {
            Some(prev) => prev.header.hash(),
            None => Hash::ZERO,
        };
        if block.header.parent_hash != expected_parent {
            return Err(ChainLoadError {
                line: lineno,
                reason: "broken parent hash link".into(),
            });
        }
        if block.header.tx_root != Block::tx_root_over(&block.transactions) {
            return Err(ChainLoadError {
                line: lineno,
                reason: "transaction root mismatch".into(),
            });
        }
        for tx in &block.transactions {
            if tx.tx_hash != tx.compute_hash() {
                return Err(ChainLoadError {
                    line: lineno,
                    reason: "transaction hash mismatch".into(),
                });
            }
        }
        blocks.push(block);
    }
    Ok(blocks)
}

/// Re-serializes loaded blocks in dump format.
pub fn dump_blocks(blocks: &[Block]) -> String {
    let mut out = String::new();
    for block in blocks {
        out.push_str(&serde_json::to_string(block).expect("block serializes"));
        out.push('\n');
    }
    out
}
