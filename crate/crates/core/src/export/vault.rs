//! Keyed pseudonyms and per-patient date shifts.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::ExportError;

/// Hex characters kept from the keyed hash.
pub const PSEUDONYM_LEN: usize = 12;
/// Attempts before giving up on a collision-free pseudonym.
pub const MAX_REDRAWS: u32 = 16;
/// Date shifts are drawn from `-MAX_SHIFT_DAYS..=MAX_SHIFT_DAYS`.
pub const MAX_SHIFT_DAYS: i64 = 180;

/// Secret salt plus every UID-to-pseudonym assignment and date shift handed
/// out so far. Only this structure can map a pseudonym back to a patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymVault {
    #[serde(with = "hex_bytes")]
    salt: Vec<u8>,
    pub created_at: DateTime<Utc>,
    mapping: BTreeMap<String, String>,
    #[serde(default)]
    shifts: BTreeMap<String, i64>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl PseudonymVault {
    pub fn new(salt: Vec<u8>, created_at: DateTime<Utc>) -> Result<Self, ExportError> {
        if salt.is_empty() {
            return Err(ExportError::EmptySalt);
        }
        Ok(PseudonymVault {
            salt,
            created_at,
            mapping: BTreeMap::new(),
            shifts: BTreeMap::new(),
        })
    }

    /// Vault with a fresh 32-byte salt.
    pub fn generate(rng: &mut impl RngCore, created_at: DateTime<Utc>) -> Self {
        let mut salt = vec![0u8; 32];
        rng.fill_bytes(&mut salt);
        Self::new(salt, created_at).expect("salt is non-empty")
    }

    fn mac(&self, parts: &[&[u8]]) -> [u8; 32] {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.salt).expect("HMAC takes any key length");
        for p in parts {
            mac.update(p);
        }
        mac.finalize().into_bytes().into()
    }

    /// Stable pseudonym for `uid`, assigning one on first use.
    pub fn pseudonymize(&mut self, uid: &str) -> Result<String, ExportError> {
        if let Some(p) = self.mapping.get(uid) {
            return Ok(p.clone());
        }
        for redraw in 0..MAX_REDRAWS {
            let digest = self.mac(&[b"pseudonym\0", uid.as_bytes(), &redraw.to_be_bytes()]);
            let candidate = hex::encode(digest)[..PSEUDONYM_LEN].to_string();
            if !self.mapping.values().any(|p| *p == candidate) {
                self.mapping.insert(uid.to_string(), candidate.clone());
                return Ok(candidate);
            }
        }
        Err(ExportError::CollisionExhausted(uid.to_string()))
    }

    pub fn pseudonymize_all<'a>(
        &mut self,
        uids: impl IntoIterator<Item = &'a str>,
    ) -> Result<BTreeMap<String, String>, ExportError> {
        uids.into_iter()
            .map(|u| Ok((u.to_string(), self.pseudonymize(u)?)))
            .collect()
    }

    /// Pseudonym already assigned to `uid`, without assigning one.
    pub fn pseudonym_of(&self, uid: &str) -> Option<&str> {
        self.mapping.get(uid).map(String::as_str)
    }

    /// Inverse lookup.
    pub fn uid_of(&self, pseudonym: &str) -> Option<&str> {
        self.mapping
            .iter()
            .find(|(_, p)| p.as_str() == pseudonym)
            .map(|(u, _)| u.as_str())
    }

    pub fn uids(&self) -> impl Iterator<Item = &str> {
        self.mapping.keys().map(String::as_str)
    }

    /// Per-patient offset in days, fixed on first use.
    pub fn date_shift(&mut self, uid: &str) -> i64 {
        if let Some(&d) = self.shifts.get(uid) {
            return d;
        }
        let digest = self.mac(&[b"date-shift\0", uid.as_bytes()]);
        let raw = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        let span = (2 * MAX_SHIFT_DAYS + 1) as u64;
        let shift = (raw % span) as i64 - MAX_SHIFT_DAYS;
        self.shifts.insert(uid.to_string(), shift);
        shift
    }

    pub fn shift_date(&mut self, uid: &str, date: NaiveDate) -> NaiveDate {
        date + Duration::days(self.date_shift(uid))
    }

    pub fn shift_timestamp(&mut self, uid: &str, at: DateTime<Utc>) -> DateTime<Utc> {
        at + Duration::days(self.date_shift(uid))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vault() -> PseudonymVault {
        PseudonymVault::new(b"test salt".to_vec(), DateTime::<Utc>::UNIX_EPOCH).unwrap()
    }

    #[test]
    fn stable_and_distinct() {
        let mut v = vault();
        let a = v.pseudonymize("UID0001").unwrap();
        assert_eq!(a.len(), PSEUDONYM_LEN);
        assert!(a.bytes().all(|b| b.is_ascii_hexdigit()));
        assert_eq!(v.pseudonymize("UID0001").unwrap(), a);
        assert_ne!(v.pseudonymize("UID0002").unwrap(), a);
        assert_eq!(vault().pseudonymize("UID0001").unwrap(), a);
        assert_eq!(v.uid_of(&a), Some("UID0001"));
        let other = PseudonymVault::new(b"other".to_vec(), DateTime::<Utc>::UNIX_EPOCH);
        assert_ne!(other.unwrap().pseudonymize("UID0001").unwrap(), a);
    }

    #[test]
    fn shifts_are_bounded_and_fixed() {
        let mut v = vault();
        for n in 0..500 {
            let uid = format!("UID{n:04}");
            let s = v.date_shift(&uid);
            assert!((-MAX_SHIFT_DAYS..=MAX_SHIFT_DAYS).contains(&s));
            assert_eq!(v.date_shift(&uid), s);
        }
        let d1 = NaiveDate::from_ymd_opt(2020, 1, 31).unwrap();
        let d2 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
        assert_eq!(v.shift_date("UID0007", d2) - v.shift_date("UID0007", d1), d2 - d1);
    }

    #[test]
    fn serde_keeps_assignments() {
        let mut v = PseudonymVault::generate(&mut ChaCha8Rng::seed_from_u64(1), DateTime::<Utc>::UNIX_EPOCH);
        let p = v.pseudonymize("UID0003").unwrap();
        v.date_shift("UID0003");
        let back: PseudonymVault = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.pseudonym_of("UID0003"), Some(p.as_str()));
        assert!(PseudonymVault::new(vec![], DateTime::<Utc>::UNIX_EPOCH).is_err());
    }
}
