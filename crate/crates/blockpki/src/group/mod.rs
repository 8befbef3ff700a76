//! Prime-order group abstraction with two backends behind one interface:
//! a production secp256k1 group and a tiny multiplicative group of order 11
//! (the subgroup generated by 2 in Z*_23) in which every property can be
//! checked exhaustively.

mod rfc6979;
mod schnorr;
pub mod vectors;

pub use schnorr::{
    challenge, combine_keys, combine_nonces, combine_partials, create_pop, gen_nonce, keygen,
    partial_sign, sign_single, verify_multisig, verify_pop, verify_single, CaId, KeyPair,
    MultiSignature, NoncePair, PartialSignature, ProofOfPossession, SchnorrSignature,
};

use k256::elliptic_curve::ops::Reduce;
use k256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use k256::elliptic_curve::{Group as _, PrimeField};
use k256::{EncodedPoint, ProjectivePoint};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Modulus of the tiny test group.
const TINY_P: u64 = 23;
/// Prime order of the tiny test group.
const TINY_Q: u64 = 11;
/// Generator of the order-11 subgroup of Z*_23.
const TINY_G: u64 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("cannot aggregate an empty list")]
    EmptyAggregation,
    #[error("duplicate signer {0}")]
    DuplicateSigner(CaId),
    #[error("nonce already consumed; reusing it may leak the long-term key")]
    NonceReuse,
    #[error("invalid {0} encoding")]
    InvalidEncoding(&'static str),
}

/// Identifies which group backend a scalar or element belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupId {
    Tiny,
    Secp256k1,
}

/// Hash used to derive the signing challenge. Tests may inject a
/// substitutable function so hand-computed vectors are usable.
pub type InjectedHashFn = Arc<dyn Fn(&[u8]) -> u64 + Send + Sync>;

#[derive(Clone)]
pub enum ChallengeHash {
    Sha256,
    Injected(InjectedHashFn),
}

impl fmt::Debug for ChallengeHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChallengeHash::Sha256 => f.write_str("Sha256"),
            ChallengeHash::Injected(_) => f.write_str("Injected"),
        }
    }
}

/// Scalar in [0, q-1]. Wire encoding is fixed-width big-endian: 2 bytes for
/// the tiny group, 32 bytes for secp256k1.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
    Tiny(u64),
    Secp(k256::Scalar),
}

impl Scalar {
    pub fn group(&self) -> GroupId {
        match self {
            Scalar::Tiny(_) => GroupId::Tiny,
            Scalar::Secp(_) => GroupId::Secp256k1,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Tiny(v) => *v == 0,
            Scalar::Secp(s) => bool::from(s.is_zero()),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Scalar::Tiny(v) => (*v as u16).to_be_bytes().to_vec(),
            Scalar::Secp(s) => s.to_bytes().to_vec(),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Scalar, CryptoError> {
        match bytes.len() {
            2 => {
                let v = u16::from_be_bytes([bytes[0], bytes[1]]) as u64;
                if v < TINY_Q {
                    Ok(Scalar::Tiny(v))
                } else {
                    Err(CryptoError::InvalidEncoding("scalar"))
                }
            }
            32 => {
                let arr: [u8; 32] = bytes.try_into().unwrap();
                Option::<k256::Scalar>::from(k256::Scalar::from_repr(arr.into()))
                    .map(Scalar::Secp)
                    .ok_or(CryptoError::InvalidEncoding("scalar"))
            }
            _ => Err(CryptoError::InvalidEncoding("scalar")),
        }
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.encode())
    }

    pub fn from_hex(s: &str) -> Result<Scalar, CryptoError> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::InvalidEncoding("scalar"))?;
        Scalar::decode(&bytes)
    }

    /// Numeric value, tiny group only (test and oracle use).
    pub fn tiny_value(&self) -> u64 {
        match self {
            Scalar::Tiny(v) => *v,
            Scalar::Secp(_) => panic!("tiny_value on a secp256k1 scalar"),
        }
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({})", self.to_hex())
    }
}

/// Group element. Wire encoding: 2-byte big-endian residue for the tiny
/// group; 33-byte compressed SEC1 for secp256k1 (all-zero for the identity).
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Element {
    Tiny(u64),
    Secp(ProjectivePoint),
}

impl Element {
    pub fn group(&self) -> GroupId {
        match self {
            Element::Tiny(_) => GroupId::Tiny,
            Element::Secp(_) => GroupId::Secp256k1,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Element::Tiny(v) => (*v as u16).to_be_bytes().to_vec(),
            Element::Secp(p) => {
                if bool::from(p.is_identity()) {
                    vec![0u8; 33]
                } else {
                    p.to_affine().to_encoded_point(true).as_bytes().to_vec()
                }
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Element, CryptoError> {
        match bytes.len() {
            2 => {
                let v = u16::from_be_bytes([bytes[0], bytes[1]]) as u64;
                if (1..TINY_P).contains(&v) && modpow(v, TINY_Q, TINY_P) == 1 {
                    Ok(Element::Tiny(v))
                } else {
                    Err(CryptoError::InvalidEncoding("element"))
                }
            }
            33 => {
                if bytes.iter().all(|&b| b == 0) {
                    return Ok(Element::Secp(ProjectivePoint::IDENTITY));
                }
                let point = EncodedPoint::from_bytes(bytes).ok().and_then(|ep| {
                    Option::<ProjectivePoint>::from(ProjectivePoint::from_encoded_point(&ep))
                });
                point
                    .map(Element::Secp)
                    .ok_or(CryptoError::InvalidEncoding("element"))
            }
            _ => Err(CryptoError::InvalidEncoding("element")),
        }
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.encode())
    }

    pub fn from_hex(s: &str) -> Result<Element, CryptoError> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::InvalidEncoding("element"))?;
        Element::decode(&bytes)
    }

    /// Residue value, tiny group only (test and oracle use).
    pub fn tiny_value(&self) -> u64 {
        match self {
            Element::Tiny(v) => *v,
            Element::Secp(_) => panic!("tiny_value on a secp256k1 element"),
        }
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Element({})", self.to_hex())
    }
}

macro_rules! hex_serde {
    ($ty:ident) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_hex())
            }
        }
        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<$ty, D::Error> {
                let s = String::deserialize(deserializer)?;
                $ty::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_serde!(Scalar);
hex_serde!(Element);

/// Public parameters of the signing group: the generator, the (prime) order,
/// and the challenge hash.
#[derive(Debug, Clone)]
pub struct GroupParams {
    id: GroupId,
    challenge_hash: ChallengeHash,
}

impl GroupParams {
    pub fn tiny() -> GroupParams {
        GroupParams {
            id: GroupId::Tiny,
            challenge_hash: ChallengeHash::Sha256,
        }
    }

    pub fn secp256k1() -> GroupParams {
        GroupParams {
            id: GroupId::Secp256k1,
            challenge_hash: ChallengeHash::Sha256,
        }
    }

    pub fn from_id(id: GroupId) -> GroupParams {
        GroupParams {
            id,
            challenge_hash: ChallengeHash::Sha256,
        }
    }

    pub fn with_challenge_hash(mut self, hash: ChallengeHash) -> GroupParams {
        self.challenge_hash = hash;
        self
    }

    pub fn id(&self) -> GroupId {
        self.id
    }

    pub fn generator(&self) -> Element {
        match self.id {
            GroupId::Tiny => Element::Tiny(TINY_G),
            GroupId::Secp256k1 => Element::Secp(ProjectivePoint::GENERATOR),
        }
    }

    pub fn identity(&self) -> Element {
        match self.id {
            GroupId::Tiny => Element::Tiny(1),
            GroupId::Secp256k1 => Element::Secp(ProjectivePoint::IDENTITY),
        }
    }

    pub fn scalar_len(&self) -> usize {
        match self.id {
            GroupId::Tiny => 2,
            GroupId::Secp256k1 => 32,
        }
    }

    /// Bit length of the group order, used by the deterministic derivation.
    pub(crate) fn order_bits(&self) -> usize {
        match self.id {
            GroupId::Tiny => 4,
            GroupId::Secp256k1 => 256,
        }
    }

    pub fn exp(&self, base: &Element, scalar: &Scalar) -> Element {
        match (base, scalar) {
            (Element::Tiny(b), Scalar::Tiny(s)) => Element::Tiny(modpow(*b, *s, TINY_P)),
            (Element::Secp(p), Scalar::Secp(s)) => Element::Secp(p * s),
            _ => panic!("group mismatch in exp"),
        }
    }

    pub fn mul(&self, a: &Element, b: &Element) -> Element {
        match (a, b) {
            (Element::Tiny(x), Element::Tiny(y)) => Element::Tiny((x * y) % TINY_P),
            (Element::Secp(p), Element::Secp(q)) => Element::Secp(p + q),
            _ => panic!("group mismatch in mul"),
        }
    }

    pub fn invert_element(&self, a: &Element) -> Element {
        match a {
            // a^(p-2) mod p is the inverse in Z*_p.
            Element::Tiny(v) => Element::Tiny(modpow(*v, TINY_P - 2, TINY_P)),
            Element::Secp(p) => Element::Secp(-p),
        }
    }

    pub fn scalar_zero(&self) -> Scalar {
        self.scalar_from_u64(0)
    }

    pub fn scalar_from_u64(&self, v: u64) -> Scalar {
        match self.id {
            GroupId::Tiny => Scalar::Tiny(v % TINY_Q),
            GroupId::Secp256k1 => Scalar::Secp(k256::Scalar::from(v)),
        }
    }

    pub fn scalar_add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        match (a, b) {
            (Scalar::Tiny(x), Scalar::Tiny(y)) => Scalar::Tiny((x + y) % TINY_Q),
            (Scalar::Secp(x), Scalar::Secp(y)) => Scalar::Secp(x + y),
            _ => panic!("group mismatch in scalar_add"),
        }
    }

    pub fn scalar_sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        match (a, b) {
            (Scalar::Tiny(x), Scalar::Tiny(y)) => Scalar::Tiny((x + TINY_Q - y) % TINY_Q),
            (Scalar::Secp(x), Scalar::Secp(y)) => Scalar::Secp(x - y),
            _ => panic!("group mismatch in scalar_sub"),
        }
    }

    pub fn scalar_mul(&self, a: &Scalar, b: &Scalar) -> Scalar {
        match (a, b) {
            (Scalar::Tiny(x), Scalar::Tiny(y)) => Scalar::Tiny((x * y) % TINY_Q),
            (Scalar::Secp(x), Scalar::Secp(y)) => Scalar::Secp(x * y),
            _ => panic!("group mismatch in scalar_mul"),
        }
    }

    pub fn scalar_neg(&self, a: &Scalar) -> Scalar {
        self.scalar_sub(&self.scalar_zero(), a)
    }

    /// Uniform non-zero scalar from an external RNG.
    pub fn random_scalar_nonzero(&self, rng: &mut impl RngCore) -> Scalar {
        loop {
            let mut bytes = vec![0u8; self.scalar_len()];
            rng.fill_bytes(&mut bytes);
            if self.id == GroupId::Tiny {
                // Keep only the top-order bits so rejection stays cheap.
                bytes[0] >>= 4;
                bytes.swap(0, 1);
            }
            if let Ok(s) = Scalar::decode(&bytes) {
                if !s.is_zero() {
                    return s;
                }
            }
        }
    }

    /// Challenge hash, reduced into [0, q-1].
    pub fn hash_to_scalar(&self, data: &[u8]) -> Scalar {
        match &self.challenge_hash {
            ChallengeHash::Sha256 => {
                let digest: [u8; 32] = Sha256::digest(data).into();
                match self.id {
                    GroupId::Tiny => {
                        let mut acc: u64 = 0;
                        for b in digest {
                            acc = (acc * 256 + b as u64) % TINY_Q;
                        }
                        Scalar::Tiny(acc)
                    }
                    GroupId::Secp256k1 => Scalar::Secp(
                        <k256::Scalar as Reduce<k256::U256>>::reduce_bytes(&digest.into()),
                    ),
                }
            }
            ChallengeHash::Injected(f) => self.scalar_from_u64(f(data)),
        }
    }

    /// Tiny-group element from its residue, test use.
    pub fn element_from_u64(&self, v: u64) -> Element {
        assert_eq!(
            self.id,
            GroupId::Tiny,
            "element_from_u64 is tiny-group only"
        );
        let v = v % TINY_P;
        assert!(
            v >= 1 && modpow(v, TINY_Q, TINY_P) == 1,
            "{v} is not in the order-11 subgroup"
        );
        Element::Tiny(v)
    }

    /// Order of the tiny group, for exhaustive oracles.
    pub fn tiny_order(&self) -> u64 {
        TINY_Q
    }
}

fn modpow(mut base: u64, mut exp: u64, modulus: u64) -> u64 {
    let mut acc = 1u64;
    base %= modulus;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % modulus;
        }
        base = base * base % modulus;
        exp >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_generator_has_order_eleven() {
        let params = GroupParams::tiny();
        let g = params.generator();
        let mut acc = g;
        let mut seen = vec![acc.tiny_value()];
        for _ in 1..TINY_Q {
            acc = params.mul(&acc, &g);
            seen.push(acc.tiny_value());
        }
        assert_eq!(acc, params.identity());
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len() as u64, TINY_Q);
    }

    #[test]
    fn tiny_element_decode_rejects_non_subgroup_values() {
        // 5 is not a power of 2 mod 23.
        assert!(Element::decode(&[0, 5]).is_err());
        assert!(Element::decode(&[0, 0]).is_err());
        assert!(Element::decode(&[0, 23]).is_err());
        assert!(Element::decode(&[0, 13]).is_ok());
    }

    #[test]
    fn scalar_decode_rejects_out_of_range() {
        assert!(Scalar::decode(&[0, 11]).is_err());
        assert!(Scalar::decode(&[0, 10]).is_ok());
        // Non-canonical secp scalar: the group order itself.
        let order = hex::decode("fffffffffffffffffffffffffffffffebaaedce6af48a03bbfd25e8cd0364141")
            .unwrap();
        assert!(Scalar::decode(&order).is_err());
    }

    #[test]
    fn secp_identity_round_trips() {
        let params = GroupParams::secp256k1();
        let id = params.identity();
        let enc = id.encode();
        assert_eq!(enc, vec![0u8; 33]);
        assert_eq!(Element::decode(&enc).unwrap(), id);
    }

    #[test]
    fn secp_exponentiation_matches_double_add() {
        let params = GroupParams::secp256k1();
        let g = params.generator();
        let five = params.scalar_from_u64(5);
        let mut acc = g;
        for _ in 1..5 {
            acc = params.mul(&acc, &g);
        }
        assert_eq!(params.exp(&g, &five), acc);
    }

    #[test]
    fn element_inversion() {
        for params in [GroupParams::tiny(), GroupParams::secp256k1()] {
            let x = params.exp(&params.generator(), &params.scalar_from_u64(7));
            let inv = params.invert_element(&x);
            assert_eq!(params.mul(&x, &inv), params.identity());
        }
    }

    #[test]
    fn hash_to_scalar_is_deterministic_and_spread() {
        let params = GroupParams::secp256k1();
        let a = params.hash_to_scalar(b"one");
        let b = params.hash_to_scalar(b"one");
        let c = params.hash_to_scalar(b"two");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn injected_hash_is_used() {
        let params =
            GroupParams::tiny().with_challenge_hash(ChallengeHash::Injected(Arc::new(|_| 5)));
        assert_eq!(params.hash_to_scalar(b"anything"), Scalar::Tiny(5));
    }

    #[test]
    fn hex_round_trip() {
        let params = GroupParams::secp256k1();
        let e = params.exp(&params.generator(), &params.scalar_from_u64(42));
        assert_eq!(Element::from_hex(&e.to_hex()).unwrap(), e);
        let s = params.hash_to_scalar(b"x");
        assert_eq!(Scalar::from_hex(&s.to_hex()).unwrap(), s);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scalar_and_element_encodings_round_trip(v in 1u64..u64::MAX, tiny in proptest::bool::ANY) {
                let params = if tiny { GroupParams::tiny() } else { GroupParams::secp256k1() };
                let s = params.scalar_from_u64(v);
                prop_assert_eq!(Scalar::decode(&s.encode()).unwrap(), s);
                let e = params.exp(&params.generator(), &s);
                prop_assert_eq!(Element::decode(&e.encode()).unwrap(), e);
            }

            #[test]
            fn junk_lengths_never_decode(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
                if ![2usize, 32].contains(&bytes.len()) {
                    prop_assert!(Scalar::decode(&bytes).is_err());
                }
                if ![2usize, 33].contains(&bytes.len()) {
                    prop_assert!(Element::decode(&bytes).is_err());
                }
            }
        }
    }
}
