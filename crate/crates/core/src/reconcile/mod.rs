//! Key reconciliation by fuzzy commitment over a Reed-Solomon code.

mod commitment;
pub mod gf256;
mod rs;

pub use commitment::{commit, decommit, key_digest, FuzzyCommitment, DIGEST_LEN};
pub use rs::{rs_decode, rs_encode, RsParams};
