//! Merkle tree over transaction hashes with inclusion proofs for light clients.
//!
//! Leaves and interior nodes are domain-separated (prefix `0x00` for leaves,
//! `0x01` for interior nodes) so that an interior node can never be reinterpreted
//! as a leaf. An odd node at any level is paired with itself.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use thiserror::Error;

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

/// A 32-byte SHA-256 digest, hex-encoded on the wire.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hash(pub [u8; 32]);

impl Hash {
    pub const ZERO: Hash = Hash([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Hash, MerkleError> {
        let bytes = hex::decode(s).map_err(|_| MerkleError::BadHashEncoding)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| MerkleError::BadHashEncoding)?;
        Ok(Hash(arr))
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({})", self.to_hex())
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Hash {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Hash, D::Error> {
        let s = String::deserialize(deserializer)?;
        Hash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree over an empty transaction list")]
    EmptyBlock,
    #[error("leaf index {index} out of range for {leaf_count} leaves")]
    BadIndex { index: usize, leaf_count: usize },
    #[error("malformed hash encoding")]
    BadHashEncoding,
}

/// Hash of a leaf payload (canonical transaction encoding).
pub fn leaf_hash(data: &[u8]) -> Hash {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(data);
    Hash(h.finalize().into())
}

/// Hash of an interior node from its two children.
pub fn node_hash(left: &Hash, right: &Hash) -> Hash {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update(left.0);
    h.update(right.0);
    Hash(h.finalize().into())
}

/// Root recorded in a block header when the block carries no transactions.
pub fn empty_root() -> Hash {
    leaf_hash(&[])
}

/// Which side of the running hash a proof sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Sibling-hash path from a leaf to the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf_index: usize,
    pub siblings: Vec<ProofNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofNode {
    #[serde(rename = "hash_hex")]
    pub hash: Hash,
    pub side: Side,
}

/// Merkle tree over an ordered list of leaf hashes. Immutable once built.
#[derive(Debug, Clone)]
pub struct MerkleTree {
    levels: Vec<Vec<Hash>>,
}

impl MerkleTree {
    /// Builds the tree bottom-up, duplicating the last node of any odd level.
    pub fn build(leaves: &[Hash]) -> Result<MerkleTree, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::EmptyBlock);
        }
        let mut levels = vec![leaves.to_vec()];
        while levels.last().unwrap().len() > 1 {
            let prev = levels.last().unwrap();
            let mut next = Vec::with_capacity(prev.len().div_ceil(2));
            for pair in prev.chunks(2) {
                let left = &pair[0];
                let right = pair.get(1).unwrap_or(left);
                next.push(node_hash(left, right));
            }
            levels.push(next);
        }
        Ok(MerkleTree { levels })
    }

    pub fn root(&self) -> Hash {
        *self.levels.last().unwrap().first().unwrap()
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    /// Sibling path for the leaf at `index`.
    pub fn prove_inclusion(&self, index: usize) -> Result<InclusionProof, MerkleError> {
        let leaf_count = self.leaf_count();
        if index >= leaf_count {
            return Err(MerkleError::BadIndex { index, leaf_count });
        }
        let mut siblings = Vec::new();
        let mut pos = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let (sibling_pos, side) = if pos % 2 == 0 {
                (pos + 1, Side::Right)
            } else {
                (pos - 1, Side::Left)
            };
            // Odd node at the end of a level pairs with itself.
            let sibling = *level.get(sibling_pos).unwrap_or(&level[pos]);
            siblings.push(ProofNode {
                hash: sibling,
                side,
            });
            pos /= 2;
        }
        Ok(InclusionProof {
            leaf_index: index,
            siblings,
        })
    }
}

/// Folds `tx_hash` with the proof's siblings and compares against `root`.
pub fn verify_inclusion(root: &Hash, tx_hash: &Hash, proof: &InclusionProof) -> bool {
    let mut acc = *tx_hash;
    for node in &proof.siblings {
        acc = match node.side {
            Side::Left => node_hash(&node.hash, &acc),
            Side::Right => node_hash(&acc, &node.hash),
        };
    }
    acc == *root
}
