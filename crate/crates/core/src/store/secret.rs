//! Password, NID and token digests.

use rand::RngCore;
use sha2::{Digest, Sha256};

const PBKDF2_ROUNDS: u32 = 10_000;

fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::rng().fill_bytes(&mut buf);
    hex::encode(buf)
}

/// `pbkdf2-sha256$<rounds>$<salt hex>$<hash hex>`
pub fn hash_password(password: &str) -> String {
    let salt = random_hex(16);
    let hash = pbkdf2_hex(password, &salt, PBKDF2_ROUNDS);
    format!("pbkdf2-sha256${PBKDF2_ROUNDS}${salt}${hash}")
}

pub fn verify_password(password: &str, digest: &str) -> bool {
    let mut parts = digest.split('$');
    let (Some("pbkdf2-sha256"), Some(rounds), Some(salt), Some(hash), None) =
        (parts.next(), parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return false;
    };
    let Ok(rounds) = rounds.parse() else {
        return false;
    };
    constant_time_eq(pbkdf2_hex(password, salt, rounds).as_bytes(), hash.as_bytes())
}

fn pbkdf2_hex(password: &str, salt: &str, rounds: u32) -> String {
    let mut out = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt.as_bytes(), rounds, &mut out);
    hex::encode(out)
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Salted one-way digest for identity numbers: `sha256$<salt>$<hash>`.
pub fn digest_identity(value: &str) -> String {
    let salt = random_hex(16);
    let hash = Sha256::new()
        .chain_update(salt.as_bytes())
        .chain_update(value.as_bytes())
        .finalize();
    format!("sha256${salt}${}", hex::encode(hash))
}

/// Fresh bearer token (256 random bits, hex).
pub fn new_token() -> String {
    random_hex(32)
}

/// Lookup key under which a token is stored.
pub fn token_digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// National ids are 10, 13 or 17 ASCII digits.
pub fn valid_nid(nid: &str) -> bool {
    matches!(nid.len(), 10 | 13 | 17) && nid.bytes().all(|b| b.is_ascii_digit())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn password_roundtrip() {
        let d = hash_password("hunter22");
        assert!(d.starts_with("pbkdf2-sha256$10000$"));
        assert!(!d.contains("hunter22"));
        assert!(verify_password("hunter22", &d));
        assert!(!verify_password("hunter23", &d));
        assert!(!verify_password("hunter22", "plain"));
    }

    #[test]
    fn identity_digests_are_salted() {
        let a = digest_identity("1234567890");
        let b = digest_identity("1234567890");
        assert_ne!(a, b);
        assert!(!a.contains("1234567890"));
    }

    #[test]
    fn nid_lengths() {
        assert!(valid_nid("1234567890"));
        assert!(valid_nid("1234567890123"));
        assert!(valid_nid("12345678901234567"));
        assert!(!valid_nid("12345"));
        assert!(!valid_nid("12345678901"));
        assert!(!valid_nid("12345abcde"));
    }
}
