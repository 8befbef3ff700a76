//! Signing test-vector records: JSON lines of
//! `{group, x, k, e, message_hex, expected_s, expected_N}`.

use super::{CaId, CryptoError, GroupId, GroupParams, KeyPair, NoncePair, Scalar};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignVector {
    pub group: GroupId,
    pub x: Scalar,
    pub k: Scalar,
    pub e: Scalar,
    pub message_hex: String,
    pub expected_s: Scalar,
    #[serde(rename = "expected_N")]
    pub expected_n: super::Element,
}

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("vector {index}: public nonce mismatch (got {got}, want {want})")]
    NonceMismatch {
        index: usize,
        got: String,
        want: String,
    },
    #[error("vector {index}: partial signature mismatch (got {got}, want {want})")]
    SignatureMismatch {
        index: usize,
        got: String,
        want: String,
    },
    #[error("vector {0}: {1}")]
    Crypto(usize, CryptoError),
    #[error("vector parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Replays one vector through key setup, nonce setup, and partial signing.
pub fn check_vector(index: usize, v: &SignVector) -> Result<(), VectorError> {
    let params = GroupParams::from_id(v.group);
    let key = KeyPair::from_secret(&params, v.x);
    let mut nonce = NoncePair::from_secret(&params, v.k);
    if *nonce.public() != v.expected_n {
        return Err(VectorError::NonceMismatch {
            index,
            got: nonce.public().to_hex(),
            want: v.expected_n.to_hex(),
        });
    }
    let partial = super::partial_sign(&params, &key, &mut nonce, &v.e, CaId::new("vector"))
        .map_err(|e| VectorError::Crypto(index, e))?;
    if partial.s != v.expected_s {
        return Err(VectorError::SignatureMismatch {
            index,
            got: partial.s.to_hex(),
            want: v.expected_s.to_hex(),
        });
    }
    Ok(())
}

/// Checks every record in a JSON array of vectors.
pub fn check_vector_file(json: &str) -> Result<usize, VectorError> {
    let vectors: Vec<SignVector> = serde_json::from_str(json)?;
    for (i, v) in vectors.iter().enumerate() {
        check_vector(i, v)?;
    }
    Ok(vectors.len())
}
