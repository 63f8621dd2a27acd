//! Order-preserving encryption of subject identifiers.
//!
//! Services encrypt every identifier they release with a scheme that keeps the
//! plaintext order, so the mediator can join, compare and range-test
//! ciphertexts without ever decrypting them. The scheme is pluggable through
//! [`OrderPreservingScheme`]; [`OpesKey`] is the built-in implementation.
//!
//! The built-in scheme maps a plaintext `p` to the cumulative sum of keyed
//! pseudo-random gaps `g(0) + g(1) + ... + g(p)`, each gap in `[1, 2^32]` and a
//! pure function of `(seed, i)`. Strict monotonicity follows from the gaps
//! being positive. Domains up to [`TABLE_LIMIT`] plaintexts get a prefix-sum
//! table built at key generation; larger domains fall back to summing gaps on
//! demand, which costs `O(p)` per call.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest supported plaintext domain. Keeps every ciphertext below `2^64`.
pub const MAX_DOMAIN: u64 = (1 << 32) - 1;

/// Domains up to this size are served from a precomputed prefix-sum table.
pub const TABLE_LIMIT: u64 = 1 << 20;

/// An order-preserving ciphertext of a subject identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EncryptedId(pub u64);

impl EncryptedId {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for EncryptedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for EncryptedId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.parse().map(EncryptedId)
    }
}

// Ciphertexts travel as decimal strings so that consumers without 64-bit
// integers (JSON in browsers, spreadsheets) never round them.
impl Serialize for EncryptedId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for EncryptedId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Any scheme that gives the mediator `=`, `<`, `>` on ciphertexts.
///
/// Services hold the scheme; the mediator never receives it.
pub trait OrderPreservingScheme: Send + Sync + fmt::Debug {
    /// Number of admissible plaintexts; plaintexts are `0..domain_size()`.
    fn domain_size(&self) -> u64;

    fn encrypt(&self, plaintext: u64) -> Result<EncryptedId>;

    fn decrypt(&self, cipher: EncryptedId) -> Result<u64>;

    /// Smallest plaintext whose ciphertext is `>= cipher`, if any.
    fn plaintext_ceil(&self, cipher: EncryptedId) -> Option<u64> {
        let n = self.domain_size();
        let (mut lo, mut hi) = (0u64, n);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match self.encrypt(mid) {
                Ok(c) if c < cipher => lo = mid + 1,
                _ => hi = mid,
            }
        }
        (lo < n).then_some(lo)
    }

    /// Largest plaintext whose ciphertext is `<= cipher`, if any.
    fn plaintext_floor(&self, cipher: EncryptedId) -> Option<u64> {
        let n = self.domain_size();
        let (mut lo, mut hi) = (0u64, n);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match self.encrypt(mid) {
                Ok(c) if c <= cipher => lo = mid + 1,
                _ => hi = mid,
            }
        }
        lo.checked_sub(1)
    }
}

/// Key of the built-in gap-sum scheme.
///
/// Cheap to clone; the prefix table is shared.
#[derive(Clone)]
pub struct OpesKey {
    seed: u64,
    domain_size: u64,
    table: Option<Arc<[u64]>>,
}

impl fmt::Debug for OpesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpesKey")
            .field("seed", &self.seed)
            .field("domain_size", &self.domain_size)
            .finish_non_exhaustive()
    }
}

impl PartialEq for OpesKey {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.domain_size == other.domain_size
    }
}

impl Eq for OpesKey {}

/// Generate the key for `(seed, domain_size)`. Same inputs, same key.
pub fn keygen(seed: u64, domain_size: u64) -> Result<OpesKey> {
    if domain_size == 0 || domain_size > MAX_DOMAIN {
        return Err(Error::InvalidDomain(domain_size));
    }
    let table = (domain_size <= TABLE_LIMIT).then(|| {
        let mut acc = 0u64;
        (0..domain_size)
            .map(|i| {
                acc += gap(seed, i);
                acc
            })
            .collect::<Arc<[u64]>>()
    });
    Ok(OpesKey {
        seed,
        domain_size,
        table,
    })
}

impl OpesKey {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check(&self, plaintext: u64) -> Result<()> {
        if plaintext >= self.domain_size {
            return Err(Error::OutOfDomain {
                plaintext,
                domain_size: self.domain_size,
            });
        }
        Ok(())
    }
}

impl OrderPreservingScheme for OpesKey {
    fn domain_size(&self) -> u64 {
        self.domain_size
    }

    fn encrypt(&self, plaintext: u64) -> Result<EncryptedId> {
        self.check(plaintext)?;
        let c = match &self.table {
            Some(t) => t[plaintext as usize],
            None => (0..=plaintext).map(|i| gap(self.seed, i)).sum(),
        };
        Ok(EncryptedId(c))
    }

    fn decrypt(&self, cipher: EncryptedId) -> Result<u64> {
        match &self.table {
            Some(t) => t
                .binary_search(&cipher.0)
                .map(|p| p as u64)
                .map_err(|_| Error::UnknownCiphertext(cipher)),
            None => {
                let mut acc = 0u64;
                for p in 0..self.domain_size {
                    acc += gap(self.seed, p);
                    if acc >= cipher.0 {
                        return if acc == cipher.0 {
                            Ok(p)
                        } else {
                            Err(Error::UnknownCiphertext(cipher))
                        };
                    }
                }
                Err(Error::UnknownCiphertext(cipher))
            }
        }
    }

    fn plaintext_ceil(&self, cipher: EncryptedId) -> Option<u64> {
        match &self.table {
            Some(t) => {
                let i = t.partition_point(|&c| c < cipher.0);
                (i < t.len()).then_some(i as u64)
            }
            None => {
                let mut acc = 0u64;
                (0..self.domain_size).find(|&p| {
                    acc += gap(self.seed, p);
                    acc >= cipher.0
                })
            }
        }
    }

    fn plaintext_floor(&self, cipher: EncryptedId) -> Option<u64> {
        match &self.table {
            Some(t) => t.partition_point(|&c| c <= cipher.0).checked_sub(1).map(|i| i as u64),
            None => {
                let ceil = self.plaintext_ceil(EncryptedId(cipher.0.saturating_add(1)));
                match ceil {
                    Some(p) => p.checked_sub(1),
                    None => Some(self.domain_size - 1),
                }
            }
        }
    }
}

/// Gap between the ciphertexts of `i - 1` and `i`, in `[1, 2^32]`.
fn gap(seed: u64, i: u64) -> u64 {
    (splitmix64(seed ^ splitmix64(i)) >> 32) + 1
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(key: &OpesKey) -> Vec<u64> {
        (0..key.domain_size()).map(|p| key.encrypt(p).unwrap().0).collect()
    }

    #[test]
    fn keygen_is_deterministic() {
        let a = keygen(0, 1024).unwrap();
        let b = keygen(0, 1024).unwrap();
        assert_eq!(a, b);
        assert_eq!(table(&a), table(&b));
    }

    #[test]
    fn empty_domain_rejected() {
        assert!(matches!(keygen(0, 0), Err(Error::InvalidDomain(0))));
        assert!(matches!(keygen(0, MAX_DOMAIN + 1), Err(Error::InvalidDomain(_))));
    }

    #[test]
    fn different_seeds_give_different_tables() {
        let a = table(&keygen(7, 1024).unwrap());
        let b = table(&keygen(8, 1024).unwrap());
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn sixteen_entry_table_is_strictly_increasing() {
        let t = table(&keygen(1, 16).unwrap());
        assert_eq!(t.len(), 16);
        let mut sorted = t.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, t);
    }

    #[test]
    fn out_of_domain_plaintext() {
        let key = keygen(1, 16).unwrap();
        assert!(matches!(key.encrypt(16), Err(Error::OutOfDomain { plaintext: 16, .. })));
    }

    #[test]
    fn round_trip_small_domain() {
        let key = keygen(3, 64).unwrap();
        for p in 0..64 {
            assert_eq!(key.decrypt(key.encrypt(p).unwrap()).unwrap(), p);
        }
    }

    #[test]
    fn gap_in_image_is_unknown() {
        let key = keygen(1, 16).unwrap();
        let t = table(&key);
        let (i, _) = t
            .windows(2)
            .enumerate()
            .find(|(_, w)| w[1] > w[0] + 1)
            .expect("some gap wider than one");
        let probe = EncryptedId(t[i] + 1);
        assert!(matches!(key.decrypt(probe), Err(Error::UnknownCiphertext(_))));
    }

    #[test]
    fn decrypt_under_other_seed_fails_or_misdecrypts() {
        let a = keygen(3, 16).unwrap();
        let b = keygen(4, 16).unwrap();
        let tb = table(&b);
        for p in 0..16 {
            let c = a.encrypt(p).unwrap();
            match b.decrypt(c) {
                Err(Error::UnknownCiphertext(_)) => {}
                Ok(q) => {
                    // only possible when the two tables collide at this value
                    assert_eq!(tb[q as usize], c.0);
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!((0..16).any(|p| b.decrypt(a.encrypt(p).unwrap()).is_err()));
    }

    #[test]
    fn scheme_is_not_identity() {
        for seed in 0..16 {
            let t = table(&keygen(seed, 2).unwrap());
            if t[1] - t[0] > 1 {
                return;
            }
        }
        panic!("no ciphertext gaps in 16 seeds");
    }

    #[test]
    fn exhaustive_monotone_4096() {
        let key = keygen(99, 4096).unwrap();
        let t = table(&key);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn untabled_domain_agrees_with_tabled() {
        let small = keygen(5, TABLE_LIMIT).unwrap();
        let big = keygen(5, TABLE_LIMIT + 10).unwrap();
        assert!(big.table.is_none());
        for p in [0, 1, 2, 1000, 4095] {
            let c = small.encrypt(p).unwrap();
            assert_eq!(big.encrypt(p).unwrap(), c);
            assert_eq!(big.decrypt(c).unwrap(), p);
            assert_eq!(big.plaintext_ceil(c), Some(p));
            assert_eq!(big.plaintext_floor(c), Some(p));
        }
        let c = big.encrypt(TABLE_LIMIT + 3).unwrap();
        assert_eq!(big.decrypt(c).unwrap(), TABLE_LIMIT + 3);
    }

    #[test]
    fn floor_and_ceil_bracket_gaps() {
        let key = keygen(11, 32).unwrap();
        let c5 = key.encrypt(5).unwrap();
        let c6 = key.encrypt(6).unwrap();
        let between = EncryptedId(c5.0 + 1);
        if between < c6 {
            assert_eq!(key.plaintext_ceil(between), Some(6));
            assert_eq!(key.plaintext_floor(between), Some(5));
        }
        assert_eq!(key.plaintext_floor(EncryptedId(0)), None);
        assert_eq!(key.plaintext_ceil(EncryptedId(u64::MAX)), None);
    }

    proptest! {
        #[test]
        fn encryption_is_strictly_monotone(seed in any::<u64>(), a in 0u64..65_536, b in 0u64..65_536) {
            let key = keygen(seed, 65_536).unwrap();
            let (ca, cb) = (key.encrypt(a).unwrap(), key.encrypt(b).unwrap());
            prop_assert_eq!(a.cmp(&b), ca.cmp(&cb));
        }
    }
}
