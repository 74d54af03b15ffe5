use sha2::{Digest, Sha256};

use super::rs::{rs_decode, rs_encode, RsParams};
use crate::error::{Error, Result};
use crate::quantize::BitSequence;

pub const DIGEST_LEN: usize = 32;

/// `E = RS(R) xor S` together with a hash of `R` so the receiver can tell a
/// correct decode from a miscorrection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuzzyCommitment {
    params: RsParams,
    payload: Vec<u8>,
    digest: [u8; DIGEST_LEN],
}

pub fn key_digest(key: &[u8]) -> [u8; DIGEST_LEN] {
    Sha256::digest(key).into()
}

fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

impl FuzzyCommitment {
    pub fn params(&self) -> RsParams {
        self.params
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn digest(&self) -> &[u8; DIGEST_LEN] {
        &self.digest
    }

    /// `n ‖ k ‖ 0 ‖ payload ‖ digest`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 + self.payload.len() + DIGEST_LEN);
        out.push(self.params.n() as u8);
        out.push(self.params.k() as u8);
        out.push(0);
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 3 {
            return Err(Error::Format("commitment shorter than its header".into()));
        }
        let params = RsParams::new(bytes[0] as usize, bytes[1] as usize)?;
        let expected = 3 + params.n() + DIGEST_LEN;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "commitment for n={} must be {expected} bytes, got {}",
                params.n(),
                bytes.len()
            )));
        }
        let payload = bytes[3..3 + params.n()].to_vec();
        let digest = bytes[3 + params.n()..].try_into().expect("length checked");
        Ok(Self {
            params,
            payload,
            digest,
        })
    }
}

/// Mask the codeword of `key` with the first `n` bytes of `local`.
pub fn commit(key: &[u8], local: &BitSequence, params: RsParams) -> Result<FuzzyCommitment> {
    let mask = local.leading_bytes(params.n())?;
    let codeword = rs_encode(key, params)?;
    Ok(FuzzyCommitment {
        params,
        payload: xor(&codeword, mask),
        digest: key_digest(key),
    })
}

/// Unmask with `local`, decode, and accept the key only if its digest matches.
pub fn decommit(c: &FuzzyCommitment, local: &BitSequence) -> Result<Option<Vec<u8>>> {
    let mask = local.leading_bytes(c.params.n())?;
    let word = xor(&c.payload, mask);
    Ok(rs_decode(&word, c.params)?.filter(|key| key_digest(key) == c.digest))
}
