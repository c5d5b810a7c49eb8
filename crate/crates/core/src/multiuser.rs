//! Multi-user access: the blinding key `xi` is wrapped once per enrolled
//! user, requests are blinded with the keyed permutation, and revoking a user
//! rotates `xi` and re-wraps it for everyone else.
//!
//! Files:
//!
//! ```text
//! published directory  "FZUD" | epoch u64 | count u32 | (user_id len u16 | utf8, blob len u16 | bytes)*
//! owner state          "FZUO" | epoch u64 | xi len u16 | bytes | count u32 | (user_id len u16 | utf8, key len u16 | bytes)*
//! server key           "FZXI" | epoch u64 | xi len u16 | bytes
//! ```
//!
//! A wrapped blob is `nonce[12] || ChaCha20-Poly1305(key = SHA-256(user_key),
//! aad = user_id || epoch)`.

use std::collections::BTreeMap;
use std::path::Path;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::crypto::{fresh_xi, prp, write_private, Direction, NONCE_LEN};
use crate::error::{Error, Result};
use crate::index::SearchRequest;

const DIR_MAGIC: &[u8; 4] = b"FZUD";
const OWNER_MAGIC: &[u8; 4] = b"FZUO";
const XI_MAGIC: &[u8; 4] = b"FZXI";

/// Shortest accepted personal user key.
pub const MIN_USER_KEY_LEN: usize = 16;

fn wrap_cipher(user_key: &[u8]) -> ChaCha20Poly1305 {
    let key = Sha256::new().chain_update(b"fuzzkey wrap").chain_update(user_key).finalize();
    ChaCha20Poly1305::new(Key::from_slice(&key))
}

fn aad(user_id: &str, epoch: u64) -> Vec<u8> {
    let mut a = user_id.as_bytes().to_vec();
    a.extend_from_slice(&epoch.to_be_bytes());
    a
}

fn wrap(user_id: &str, user_key: &[u8], epoch: u64, xi: &[u8], rng: &mut impl RngCore) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ct = wrap_cipher(user_key)
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: xi, aad: &aad(user_id, epoch) })
        .expect("wrapping a short key cannot fail");
    let mut blob = nonce.to_vec();
    blob.extend(ct);
    blob
}

/// Recovers `xi` from a wrapped blob.
pub fn unwrap_xi(user_id: &str, user_key: &[u8], epoch: u64, blob: &[u8]) -> Result<Vec<u8>> {
    if blob.len() < NONCE_LEN {
        return Err(Error::AuthFailure);
    }
    let (nonce, ct) = blob.split_at(NONCE_LEN);
    wrap_cipher(user_key)
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: &aad(user_id, epoch) })
        .map_err(|_| Error::AuthFailure)
}

/// The part of the directory stored on the server for users to fetch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublishedDirectory {
    pub epoch: u64,
    pub wrapped: BTreeMap<String, Vec<u8>>,
}

impl PublishedDirectory {
    /// Unwraps the current `xi` for `user_id`.
    pub fn unwrap_for(&self, user_id: &str, user_key: &[u8]) -> Result<Vec<u8>> {
        let blob = self.wrapped.get(user_id).ok_or_else(|| Error::UnknownUser(user_id.into()))?;
        unwrap_xi(user_id, user_key, self.epoch, blob)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(DIR_MAGIC).u64(self.epoch).u32(self.wrapped.len() as u32);
        for (id, blob) in &self.wrapped {
            w.u16_prefixed(id.as_bytes()).u16_prefixed(blob);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        let magic = r.array::<4>()?;
        if &magic != DIR_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let epoch = r.u64()?;
        let count = r.u32()?;
        let mut wrapped = BTreeMap::new();
        for _ in 0..count {
            let id = read_user_id(&mut r)?;
            wrapped.insert(id, r.u16_prefixed()?.to_vec());
        }
        r.expect_end()?;
        Ok(PublishedDirectory { epoch, wrapped })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_user_id(r: &mut Reader<'_>) -> Result<String> {
    String::from_utf8(r.u16_prefixed()?.to_vec()).map_err(|_| Error::Malformed("user id is not UTF-8".into()))
}

/// The blinding key as held by the server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerKey {
    pub epoch: u64,
    pub xi: Vec<u8>,
}

impl ServerKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(XI_MAGIC).u64(self.epoch).u16_prefixed(&self.xi);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        let magic = r.array::<4>()?;
        if &magic != XI_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let epoch = r.u64()?;
        let xi = r.u16_prefixed()?.to_vec();
        r.expect_end()?;
        Ok(ServerKey { epoch, xi })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_private(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Owner-side directory: the current `xi`, every user's personal key and
/// their wrapped copies. Mutations take `&mut self`, so one writer at a time.
#[derive(Clone, PartialEq, Eq)]
pub struct UserDirectory {
    epoch: u64,
    current_xi: Vec<u8>,
    users: BTreeMap<String, Vec<u8>>,
    wrapped: BTreeMap<String, Vec<u8>>,
}

impl std::fmt::Debug for UserDirectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UserDirectory")
            .field("epoch", &self.epoch)
            .field("users", &self.users.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl UserDirectory {
    /// Starts at epoch 0 with `xi` and no users.
    pub fn new(xi: Vec<u8>) -> Self {
        UserDirectory {
            epoch: 0,
            current_xi: xi,
            users: BTreeMap::new(),
            wrapped: BTreeMap::new(),
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn current_xi(&self) -> &[u8] {
        &self.current_xi
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    pub fn contains(&self, user_id: &str) -> bool {
        self.users.contains_key(user_id)
    }

    pub fn enroll_user(&mut self, user_id: &str, user_key: &[u8], rng: &mut (impl RngCore + CryptoRng)) -> Result<()> {
        if self.users.contains_key(user_id) {
            return Err(Error::DuplicateUser(user_id.into()));
        }
        if user_key.len() < MIN_USER_KEY_LEN {
            return Err(Error::BadParameter(format!("user key must be at least {MIN_USER_KEY_LEN} bytes")));
        }
        if user_id.is_empty() || user_id.len() > u16::MAX as usize {
            return Err(Error::BadParameter("user id must be 1..=65535 bytes".into()));
        }
        let blob = wrap(user_id, user_key, self.epoch, &self.current_xi, rng);
        self.users.insert(user_id.into(), user_key.to_vec());
        self.wrapped.insert(user_id.into(), blob);
        Ok(())
    }

    /// Removes the user, picks a fresh `xi` and re-wraps it for everyone
    /// left. Returns the new `xi`.
    pub fn revoke_user(&mut self, user_id: &str, rng: &mut (impl RngCore + CryptoRng)) -> Result<Vec<u8>> {
        if self.users.remove(user_id).is_none() {
            return Err(Error::UnknownUser(user_id.into()));
        }
        self.wrapped.remove(user_id);
        self.epoch += 1;
        let lambda = (self.current_xi.len() * 8).max(128);
        let mut xi = fresh_xi(lambda, rng);
        while xi == self.current_xi {
            xi = fresh_xi(lambda, rng);
        }
        self.current_xi = xi;
        for (id, key) in &self.users {
            let blob = wrap(id, key, self.epoch, &self.current_xi, rng);
            self.wrapped.insert(id.clone(), blob);
        }
        Ok(self.current_xi.clone())
    }

    pub fn publish(&self) -> PublishedDirectory {
        PublishedDirectory {
            epoch: self.epoch,
            wrapped: self.wrapped.clone(),
        }
    }

    pub fn server_key(&self) -> ServerKey {
        ServerKey {
            epoch: self.epoch,
            xi: self.current_xi.clone(),
        }
    }

    /// Owner state bytes. Wrapped blobs are not stored; they are re-created
    /// with fresh nonces on load.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(OWNER_MAGIC)
            .u64(self.epoch)
            .u16_prefixed(&self.current_xi)
            .u32(self.users.len() as u32);
        for (id, key) in &self.users {
            w.u16_prefixed(id.as_bytes()).u16_prefixed(key);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8], rng: &mut (impl RngCore + CryptoRng)) -> Result<Self> {
        let mut r = Reader::new(data);
        let magic = r.array::<4>()?;
        if &magic != OWNER_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let epoch = r.u64()?;
        let current_xi = r.u16_prefixed()?.to_vec();
        let count = r.u32()?;
        let mut dir = UserDirectory {
            epoch,
            current_xi,
            users: BTreeMap::new(),
            wrapped: BTreeMap::new(),
        };
        for _ in 0..count {
            let id = read_user_id(&mut r)?;
            let key = r.u16_prefixed()?.to_vec();
            dir.enroll_user(&id, &key, rng)?;
        }
        r.expect_end()?;
        Ok(dir)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_private(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>, rng: &mut (impl RngCore + CryptoRng)) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, rng)
    }
}

/// Applies `pi(xi, .)` to every trapdoor.
pub fn blind_request(req: &SearchRequest, xi: &[u8]) -> SearchRequest {
    SearchRequest {
        trapdoors: req.trapdoors.iter().map(|t| prp(xi, t, Direction::Forward)).collect(),
        k: req.k,
    }
}

/// Applies `pi^-1(xi, .)` to every trapdoor.
pub fn unblind_request(req: &SearchRequest, xi: &[u8]) -> SearchRequest {
    SearchRequest {
        trapdoors: req.trapdoors.iter().map(|t| prp(xi, t, Direction::Inverse)).collect(),
        k: req.k,
    }
}
