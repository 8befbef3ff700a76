//! Deterministic scalar derivation in the style of RFC 6979: an HMAC-SHA256
//! DRBG keyed on the secret and the message, with rejection sampling into
//! [1, q-1]. Used for nonces and for seed-based key generation.

use super::{GroupParams, Scalar};
use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

type HmacSha256 = Hmac<Sha256>;

fn hmac(key: &[u8; 32], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    for part in parts {
        mac.update(part);
    }
    mac.finalize().into_bytes().into()
}

/// Derives a non-zero scalar from `(secret, message)`, domain-separated by
/// `label`. Deterministic: the same inputs always yield the same scalar.
pub(crate) fn derive_scalar(
    params: &GroupParams,
    secret: &[u8],
    message: &[u8],
    label: &[u8],
) -> Scalar {
    let h1: [u8; 32] = Sha256::new()
        .chain_update(label)
        .chain_update(message)
        .finalize()
        .into();

    let mut v = [0x01u8; 32];
    let mut k = [0x00u8; 32];
    k = hmac(&k, &[&v, &[0x00], secret, &h1]);
    v = hmac(&k, &[&v]);
    k = hmac(&k, &[&v, &[0x01], secret, &h1]);
    v = hmac(&k, &[&v]);

    let scalar_len = params.scalar_len();
    loop {
        let mut t = Vec::with_capacity(scalar_len);
        while t.len() < scalar_len {
            v = hmac(&k, &[&v]);
            t.extend_from_slice(&v);
        }
        t.truncate(scalar_len);
        if let Some(s) = bits2scalar(params, &t) {
            return s;
        }
        k = hmac(&k, &[&v, &[0x00]]);
        v = hmac(&k, &[&v]);
    }
}

/// Interprets the leftmost order-width bits of `bytes` as a candidate,
/// rejecting zero and values outside [1, q-1].
fn bits2scalar(params: &GroupParams, bytes: &[u8]) -> Option<Scalar> {
    let mut candidate = bytes.to_vec();
    let excess = candidate.len() * 8 - params.order_bits();
    if excess > 0 {
        debug_assert!(
            excess < 16,
            "only the tiny group truncates, within two bytes"
        );
        let shifted = u16::from_be_bytes([candidate[0], candidate[1]]) >> excess;
        candidate = shifted.to_be_bytes().to_vec();
    }
    match Scalar::decode(&candidate) {
        Ok(s) if !s.is_zero() => Some(s),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupParams;
    use std::collections::HashSet;

    #[test]
    fn deterministic_per_input() {
        for params in [GroupParams::tiny(), GroupParams::secp256k1()] {
            let a = derive_scalar(&params, b"secret", b"message", b"nonce");
            let b = derive_scalar(&params, b"secret", b"message", b"nonce");
            assert_eq!(a, b);
        }
    }

    #[test]
    fn distinct_inputs_give_distinct_outputs() {
        let params = GroupParams::secp256k1();
        let mut seen = HashSet::new();
        for i in 0..1000 {
            let s = derive_scalar(&params, b"secret", format!("msg{i}").as_bytes(), b"nonce");
            assert!(seen.insert(s.encode()), "collision at message {i}");
        }
    }

    #[test]
    fn label_separates_domains() {
        let params = GroupParams::secp256k1();
        let a = derive_scalar(&params, b"secret", b"m", b"nonce");
        let b = derive_scalar(&params, b"secret", b"m", b"keygen");
        assert_ne!(a, b);
    }

    #[test]
    fn tiny_output_always_in_range() {
        let params = GroupParams::tiny();
        for i in 0..200 {
            let s = derive_scalar(&params, b"k", format!("{i}").as_bytes(), b"n");
            let v = s.tiny_value();
            assert!((1..11).contains(&v));
        }
    }
}
