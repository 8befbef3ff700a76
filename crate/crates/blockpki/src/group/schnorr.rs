//! Two-round Schnorr multi-signatures.
//!
//! Round one gathers public nonces N_i = g^k_i and combines them into
//! N̄ = Π N_i. The challenge e = h(N̄ ∥ m) then fixes each partial signature
//! s_i = k_i − e·x_i, and the merged signature (e, s̄ = Σ s_i) verifies under
//! the combined key Q̄ = Π Q_i by recomputing N̄' = g^s̄ · Q̄^e and checking
//! e = h(N̄' ∥ m). Rogue-key choices of Q_i are countered by requiring a
//! proof of possession of the corresponding secret.

use super::rfc6979::derive_scalar;
use super::{CryptoError, Element, GroupParams, Scalar};
use serde::{Deserialize, Serialize};
use std::fmt;

const NONCE_LABEL: &[u8] = b"blockpki/nonce/v1";
const KEYGEN_LABEL: &[u8] = b"blockpki/keygen/v1";
const POP_LABEL: &[u8] = b"blockpki/pop/v1";

/// Identifier of a certification authority, as listed in certificates and
/// resolved through a client's trust store.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaId(pub String);

impl CaId {
    pub fn new(s: impl Into<String>) -> CaId {
        CaId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for CaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CaId({})", self.0)
    }
}

/// Long-term signing key: secret x and public Q = g^x.
#[derive(Clone)]
pub struct KeyPair {
    secret: Scalar,
    public: Element,
}

impl KeyPair {
    pub fn from_secret(params: &GroupParams, secret: Scalar) -> KeyPair {
        assert!(!secret.is_zero(), "secret key must be in [1, q-1]");
        let public = params.exp(&params.generator(), &secret);
        KeyPair { secret, public }
    }

    pub fn public(&self) -> &Element {
        &self.public
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Secret intentionally omitted.
        write!(f, "KeyPair(Q={})", self.public.to_hex())
    }
}

/// Single-use nonce pair (k, N = g^k). The secret is destroyed when the
/// partial signature is produced.
#[derive(Debug, Clone)]
pub struct NoncePair {
    secret: Option<Scalar>,
    public: Element,
}

impl NoncePair {
    pub fn from_secret(params: &GroupParams, secret: Scalar) -> NoncePair {
        assert!(!secret.is_zero(), "nonce must be in [1, q-1]");
        let public = params.exp(&params.generator(), &secret);
        NoncePair {
            secret: Some(secret),
            public,
        }
    }

    pub fn public(&self) -> &Element {
        &self.public
    }

    pub fn is_consumed(&self) -> bool {
        self.secret.is_none()
    }
}

/// One signer's contribution s_i = k_i − e·x_i.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialSignature {
    pub signer_id: CaId,
    pub s: Scalar,
}

/// Aggregated Schnorr signature (e, s̄) with the contributing signer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiSignature {
    pub e: Scalar,
    pub s_bar: Scalar,
    pub signer_ids: Vec<CaId>,
}

/// Plain single-signer Schnorr signature; a T=1 multi-signature carries the
/// same (e, s) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchnorrSignature {
    pub e: Scalar,
    pub s: Scalar,
}

/// Self-signature over the owner's public key, proving knowledge of the
/// matching secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOfPossession {
    pub owner_id: CaId,
    pub pop_sig: SchnorrSignature,
}

/// Deterministic key generation from a seed.
pub fn keygen(params: &GroupParams, seed: &[u8]) -> KeyPair {
    assert!(!seed.is_empty(), "keygen seed must be non-empty");
    let secret = derive_scalar(params, seed, &[], KEYGEN_LABEL);
    KeyPair::from_secret(params, secret)
}

/// Deterministic nonce for `(key, message)`, RFC 6979 style. Distinct
/// messages yield distinct nonces; the same inputs always yield the same pair.
pub fn gen_nonce(params: &GroupParams, key: &KeyPair, message: &[u8]) -> NoncePair {
    let secret = derive_scalar(params, &key.secret.encode(), message, NONCE_LABEL);
    NoncePair::from_secret(params, secret)
}

/// N̄ = Π N_i over all public nonces.
pub fn combine_nonces(params: &GroupParams, nonces: &[Element]) -> Result<Element, CryptoError> {
    let (first, rest) = nonces.split_first().ok_or(CryptoError::EmptyAggregation)?;
    Ok(rest.iter().fold(*first, |acc, n| params.mul(&acc, n)))
}

/// Q̄ = Π Q_i over the signer set; needs no secret knowledge.
pub fn combine_keys(params: &GroupParams, keys: &[Element]) -> Result<Element, CryptoError> {
    let (first, rest) = keys.split_first().ok_or(CryptoError::EmptyAggregation)?;
    Ok(rest.iter().fold(*first, |acc, k| params.mul(&acc, k)))
}

/// e = h(encode(N̄) ∥ m), reduced mod q.
pub fn challenge(params: &GroupParams, n_bar: &Element, message: &[u8]) -> Scalar {
    let mut data = n_bar.encode();
    data.extend_from_slice(message);
    params.hash_to_scalar(&data)
}

/// s = (k − e·x) mod q. Consumes the nonce secret; a second call on the same
/// pair fails with `NonceReuse`.
pub fn partial_sign(
    params: &GroupParams,
    key: &KeyPair,
    nonce: &mut NoncePair,
    e: &Scalar,
    signer_id: CaId,
) -> Result<PartialSignature, CryptoError> {
    let k = nonce.secret.take().ok_or(CryptoError::NonceReuse)?;
    let s = params.scalar_sub(&k, &params.scalar_mul(e, &key.secret));
    Ok(PartialSignature { signer_id, s })
}

/// s̄ = Σ s_i mod q, recording signers in submission order.
pub fn combine_partials(
    params: &GroupParams,
    partials: &[PartialSignature],
    e: &Scalar,
) -> Result<MultiSignature, CryptoError> {
    if partials.is_empty() {
        return Err(CryptoError::EmptyAggregation);
    }
    let mut signer_ids = Vec::with_capacity(partials.len());
    let mut s_bar = params.scalar_zero();
    for partial in partials {
        if signer_ids.contains(&partial.signer_id) {
            return Err(CryptoError::DuplicateSigner(partial.signer_id.clone()));
        }
        signer_ids.push(partial.signer_id.clone());
        s_bar = params.scalar_add(&s_bar, &partial.s);
    }
    Ok(MultiSignature {
        e: *e,
        s_bar,
        signer_ids,
    })
}

/// Recomputes N̄' = g^s̄ · Q̄^e and accepts iff e = h(N̄' ∥ m). Constant work
/// in the number of signers once Q̄ is known.
pub fn verify_multisig(
    params: &GroupParams,
    sig: &MultiSignature,
    q_bar: &Element,
    message: &[u8],
) -> bool {
    if sig.e.group() != params.id()
        || sig.s_bar.group() != params.id()
        || q_bar.group() != params.id()
    {
        return false;
    }
    let n_prime = params.mul(
        &params.exp(&params.generator(), &sig.s_bar),
        &params.exp(q_bar, &sig.e),
    );
    challenge(params, &n_prime, message) == sig.e
}

/// Single-signer Schnorr signature with a deterministic nonce.
pub fn sign_single(params: &GroupParams, key: &KeyPair, message: &[u8]) -> SchnorrSignature {
    let mut nonce = gen_nonce(params, key, message);
    let e = challenge(params, nonce.public(), message);
    let partial = partial_sign(params, key, &mut nonce, &e, CaId::new("single"))
        .expect("fresh nonce cannot be consumed");
    SchnorrSignature { e, s: partial.s }
}

pub fn verify_single(
    params: &GroupParams,
    sig: &SchnorrSignature,
    q: &Element,
    message: &[u8],
) -> bool {
    let multi = MultiSignature {
        e: sig.e,
        s_bar: sig.s,
        signer_ids: vec![CaId::new("single")],
    };
    verify_multisig(params, &multi, q, message)
}

fn pop_message(q: &Element) -> Vec<u8> {
    let mut m = POP_LABEL.to_vec();
    m.extend_from_slice(&q.encode());
    m
}

/// Self-signature over the signer's own public key.
pub fn create_pop(params: &GroupParams, key: &KeyPair, owner_id: CaId) -> ProofOfPossession {
    let pop_sig = sign_single(params, key, &pop_message(&key.public));
    ProofOfPossession { owner_id, pop_sig }
}

/// True iff the proof was produced with knowledge of the secret for `q`.
pub fn verify_pop(params: &GroupParams, pop: &ProofOfPossession, q: &Element) -> bool {
    if q.group() != params.id() {
        return false;
    }
    verify_single(params, &pop.pop_sig, q, &pop_message(q))
}
