use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bank::ReferenceBank;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bank members sampled as contrastive negatives for one anchor.
#[derive(Clone, Debug)]
pub struct NegativePool<'a, T> {
    bank: &'a ReferenceBank<T>,
    anchor: Option<String>,
    members: Vec<usize>,
    requested: usize,
}

impl<'a, T: Scalar> NegativePool<'a, T> {
    pub fn anchor(&self) -> Option<&str> {
        self.anchor.as_deref()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn requested(&self) -> usize {
        self.requested
    }

    pub fn truncated(&self) -> bool {
        self.members.len() < self.requested
    }

    /// Row indices into the bank member matrix, in draw order.
    pub fn member_rows(&self) -> &[usize] {
        &self.members
    }

    pub fn identity_of(&self, k: usize) -> &'a str {
        &self.bank.identities()[self.bank.member_owner()[self.members[k]]].identity_id
    }

    pub fn embedding(&self, k: usize) -> &'a [T] {
        self.bank.members().row(self.members[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [T]> + '_ {
        self.members.iter().map(|&r| self.bank.members().row(r))
    }

    pub fn to_matrix(&self) -> EmbeddingMatrix<T> {
        self.bank.members().select(&self.members)
    }
}

/// Samples up to `size` members uniformly without replacement, excluding
/// every member of `anchor`. With no anchor, or one absent from the bank,
/// the whole bank is eligible. A short pool is returned (with a warning)
/// rather than padded with duplicates.
pub fn build_negative_pool<'a, T: Scalar>(
    anchor: Option<&str>,
    bank: &'a ReferenceBank<T>,
    size: usize,
    seed: u64,
) -> Result<NegativePool<'a, T>> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if size == 0 {
        return Err(Error::param("size", "must be at least 1"));
    }
    let total = bank.member_info().len();
    let skip = anchor.and_then(|a| bank.identity_index(a)).map(|i| bank.identities()[i].members.clone()).unwrap_or(0..0);
    let eligible = total - skip.len();
    let take = size.min(eligible);
    if take < size {
        log::warn!("negative pool truncated: requested {size}, {eligible} eligible members");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // sample over the eligible positions, then step over the anchor's range
    let members = rand::seq::index::sample(&mut rng, eligible, take)
        .into_iter()
        .map(|k| if k < skip.start { k } else { k + skip.len() })
        .collect();
    Ok(NegativePool { bank, anchor: anchor.map(str::to_owned), members, requested: size })
}
