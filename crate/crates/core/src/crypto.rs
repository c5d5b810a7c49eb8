//! Keys, trapdoors, record encryption and the blinding permutation.

use std::fmt;
use std::path::Path;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha1::Sha1;
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::fuzzyset::{FuzzyVariant, Keyword};

/// Default trapdoor length in bits (one SHA-1 output).
pub const DEFAULT_TRAPDOOR_BITS: usize = 160;
/// Default symbol width in bits.
pub const DEFAULT_SYMBOL_BITS: usize = 4;
/// Largest accepted trapdoor length in bits.
pub const MAX_TRAPDOOR_BITS: usize = 512;
/// Nonce length of the record cipher.
pub const NONCE_LEN: usize = 12;
/// Largest accepted file identifier.
pub const MAX_FID_LEN: usize = 64;

const KEY_MAGIC: &[u8; 4] = b"FZKY";
const KEY_VERSION: u8 = 1;

/// A keyed pseudorandom function.
pub trait Prf {
    const OUTPUT_LEN: usize;

    /// Evaluates the PRF on the concatenation of `parts`.
    fn eval(key: &[u8], parts: &[&[u8]]) -> Vec<u8>;
}

/// HMAC-SHA1, 160-bit output. Default trapdoor and chain PRF.
pub struct HmacSha1;

/// HMAC-SHA256, 256-bit output.
pub struct HmacSha256;

impl Prf for HmacSha1 {
    const OUTPUT_LEN: usize = 20;

    fn eval(key: &[u8], parts: &[&[u8]]) -> Vec<u8> {
        let mut mac = <Hmac<Sha1> as Mac>::new_from_slice(key).expect("hmac accepts any key length");
        for p in parts {
            mac.update(p);
        }
        mac.finalize().into_bytes().to_vec()
    }
}

impl Prf for HmacSha256 {
    const OUTPUT_LEN: usize = 32;

    fn eval(key: &[u8], parts: &[&[u8]]) -> Vec<u8> {
        let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("hmac accepts any key length");
        for p in parts {
            mac.update(p);
        }
        mac.finalize().into_bytes().to_vec()
    }
}

/// Stretches a PRF to `out_bits` bits (rounded up to whole bytes, surplus
/// high bits of the first byte cleared).
///
/// Block 0 is `PRF(key, input)`; block `i > 0` is `PRF(key, input || 0x00 || i)`.
/// Multi-block outputs are only requested for keyword text, which never
/// contains a zero byte.
pub fn expand<P: Prf>(key: &[u8], input: &[&[u8]], out_bits: usize) -> Vec<u8> {
    let out_len = out_bits.div_ceil(8);
    let mut out = P::eval(key, input);
    let mut block = 1u32;
    while out.len() < out_len {
        let ctr = block.to_be_bytes();
        let mut parts = input.to_vec();
        parts.push(&[0]);
        parts.push(&ctr);
        out.extend(P::eval(key, &parts));
        block += 1;
    }
    out.truncate(out_len);
    let spare = out_len * 8 - out_bits;
    if spare > 0 {
        out[0] &= 0xff >> spare;
    }
    out
}

/// Owner secrets: `sk` (trapdoors), `sk0` (records and proof chain) and the
/// current blinding key `xi`.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    lambda: usize,
    trapdoor_bits: usize,
    symbol_bits: usize,
    sk: Vec<u8>,
    sk0: Vec<u8>,
    xi: Vec<u8>,
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyMaterial")
            .field("lambda", &self.lambda)
            .field("trapdoor_bits", &self.trapdoor_bits)
            .field("symbol_bits", &self.symbol_bits)
            .finish_non_exhaustive()
    }
}

fn check_params(lambda: usize, l: usize, n: usize) -> Result<()> {
    if lambda != 128 && lambda != 256 {
        return Err(Error::BadParameter(format!("lambda must be 128 or 256, got {lambda}")));
    }
    if l == 0 || l % 8 != 0 || l > MAX_TRAPDOOR_BITS {
        return Err(Error::BadParameter(format!(
            "trapdoor length must be a positive multiple of 8 up to {MAX_TRAPDOOR_BITS}, got {l}"
        )));
    }
    if n == 0 || n > 16 || l % n != 0 {
        return Err(Error::BadParameter(format!(
            "symbol width {n} must be in 1..=16 and divide {l}"
        )));
    }
    Ok(())
}

fn random_key(rng: &mut impl RngCore, len: usize) -> Vec<u8> {
    loop {
        let mut k = vec![0u8; len];
        rng.fill_bytes(&mut k);
        if k.iter().any(|&b| b != 0) {
            return k;
        }
    }
}

/// Generates fresh keys with `l = 160`, `n = 4`. A seed makes generation
/// deterministic.
pub fn keygen(lambda: usize, seed: Option<&[u8]>) -> Result<KeyMaterial> {
    keygen_with(lambda, DEFAULT_TRAPDOOR_BITS, DEFAULT_SYMBOL_BITS, seed)
}

pub fn keygen_with(lambda: usize, l: usize, n: usize, seed: Option<&[u8]>) -> Result<KeyMaterial> {
    check_params(lambda, l, n)?;
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::from_seed(Sha256::digest(s).into()),
        None => ChaCha20Rng::from_entropy(),
    };
    let len = lambda / 8;
    Ok(KeyMaterial {
        lambda,
        trapdoor_bits: l,
        symbol_bits: n,
        sk: random_key(&mut rng, len),
        sk0: random_key(&mut rng, len),
        xi: random_key(&mut rng, len),
    })
}

/// A fresh blinding key of `lambda` bits.
pub fn fresh_xi(lambda: usize, rng: &mut (impl RngCore + CryptoRng)) -> Vec<u8> {
    random_key(rng, lambda / 8)
}

impl KeyMaterial {
    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// Trapdoor length `l` in bits.
    pub fn trapdoor_bits(&self) -> usize {
        self.trapdoor_bits
    }

    /// Symbol width `n` in bits.
    pub fn symbol_bits(&self) -> usize {
        self.symbol_bits
    }

    pub fn sk(&self) -> &[u8] {
        &self.sk
    }

    pub fn sk0(&self) -> &[u8] {
        &self.sk0
    }

    pub fn xi(&self) -> &[u8] {
        &self.xi
    }

    /// Replaces the blinding key, as after a revocation.
    pub fn with_xi(mut self, xi: Vec<u8>) -> Self {
        self.xi = xi;
        self
    }

    /// Same keys with different trapdoor geometry.
    pub fn with_geometry(mut self, l: usize, n: usize) -> Result<Self> {
        check_params(self.lambda, l, n)?;
        self.trapdoor_bits = l;
        self.symbol_bits = n;
        Ok(self)
    }

    pub fn trapdoor(&self, variant: &FuzzyVariant) -> Trapdoor {
        trapdoor(self, variant)
    }

    fn record_cipher(&self) -> ChaCha20Poly1305 {
        let key = HmacSha256::eval(&self.sk0, &[b"fuzzkey record key"]);
        ChaCha20Poly1305::new(Key::from_slice(&key))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(KEY_MAGIC)
            .u8(KEY_VERSION)
            .u16(self.lambda as u16)
            .u16(self.trapdoor_bits as u16)
            .u8(self.symbol_bits as u8)
            .u16_prefixed(&self.sk)
            .u16_prefixed(&self.sk0)
            .u16_prefixed(&self.xi);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        r.header(KEY_MAGIC, KEY_VERSION)?;
        let lambda = r.u16()? as usize;
        let l = r.u16()? as usize;
        let n = r.u8()? as usize;
        check_params(lambda, l, n)?;
        let mut key = || -> Result<Vec<u8>> {
            let k = r.u16_prefixed()?.to_vec();
            if k.len() != lambda / 8 || k.iter().all(|&b| b == 0) {
                return Err(Error::Malformed("key has wrong length or is zero".into()));
            }
            Ok(k)
        };
        let (sk, sk0, xi) = (key()?, key()?, key()?);
        r.expect_end()?;
        Ok(KeyMaterial {
            lambda,
            trapdoor_bits: l,
            symbol_bits: n,
            sk,
            sk0,
            xi,
        })
    }

    /// Writes the key file. On Unix the file is created owner-readable only.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_private(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn write_private(path: &Path, data: &[u8]) -> Result<()> {
    use std::io::Write;
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path)?;
    f.write_all(data)?;
    Ok(())
}

/// An `l`-bit search token.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Trapdoor(Vec<u8>);

impl Trapdoor {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Trapdoor(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn bits(&self) -> usize {
        self.0.len() * 8
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for Trapdoor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Trapdoor({})", self.to_hex())
    }
}

/// `T_w' = PRF(sk, w')` truncated to `l` bits.
pub fn trapdoor(km: &KeyMaterial, variant: &FuzzyVariant) -> Trapdoor {
    trapdoor_with::<HmacSha1>(km, variant.text())
}

/// Trapdoor under an explicit PRF.
pub fn trapdoor_with<P: Prf>(km: &KeyMaterial, text: &str) -> Trapdoor {
    Trapdoor(expand::<P>(&km.sk, &[text.as_bytes()], km.trapdoor_bits))
}

/// Trapdoor marking "this exact keyword", kept apart from every variant
/// trapdoor by a `=` prefix that no variant contains.
pub fn exact_trapdoor(km: &KeyMaterial, w: &Keyword) -> Trapdoor {
    Trapdoor(expand::<HmacSha1>(&km.sk, &[b"=", w.as_str().as_bytes()], km.trapdoor_bits))
}

/// Authenticated encryption of `fid || 0x00 || keyword` under a key derived
/// from `sk0`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EncryptedRecord {
    nonce: [u8; NONCE_LEN],
    ciphertext: Vec<u8>,
}

impl fmt::Debug for EncryptedRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EncryptedRecord({})", hex::encode(self.to_bytes()))
    }
}

impl EncryptedRecord {
    pub fn nonce(&self) -> &[u8; NONCE_LEN] {
        &self.nonce
    }

    pub fn ciphertext(&self) -> &[u8] {
        &self.ciphertext
    }

    /// `nonce || ciphertext`; the canonical record bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < NONCE_LEN {
            return Err(Error::Truncated);
        }
        let (nonce, ct) = bytes.split_at(NONCE_LEN);
        Ok(EncryptedRecord {
            nonce: nonce.try_into().expect("split at nonce length"),
            ciphertext: ct.to_vec(),
        })
    }
}

fn record_plaintext(fid: &[u8], keyword: &Keyword) -> Result<Vec<u8>> {
    if fid.is_empty() || fid.len() > MAX_FID_LEN {
        return Err(Error::BadParameter(format!(
            "file id must be 1..={MAX_FID_LEN} bytes, got {}",
            fid.len()
        )));
    }
    let mut pt = Vec::with_capacity(fid.len() + 1 + keyword.len());
    pt.extend_from_slice(fid);
    pt.push(0);
    pt.extend_from_slice(keyword.as_str().as_bytes());
    Ok(pt)
}

fn seal(km: &KeyMaterial, nonce: [u8; NONCE_LEN], pt: &[u8]) -> EncryptedRecord {
    let ciphertext = km
        .record_cipher()
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: pt, aad: b"" })
        .expect("chacha20poly1305 encryption is infallible for small inputs");
    EncryptedRecord { nonce, ciphertext }
}

/// Encrypts with a fresh random nonce.
pub fn encrypt_record(km: &KeyMaterial, fid: &[u8], keyword: &Keyword) -> Result<EncryptedRecord> {
    let pt = record_plaintext(fid, keyword)?;
    let mut nonce = [0u8; NONCE_LEN];
    rand::rngs::OsRng.fill_bytes(&mut nonce);
    Ok(seal(km, nonce, &pt))
}

/// Encrypts with a nonce derived from `sk0` and the plaintext, so index
/// builds are reproducible. Equal plaintexts give equal records.
pub fn encrypt_record_deterministic(
    km: &KeyMaterial,
    fid: &[u8],
    keyword: &Keyword,
) -> Result<EncryptedRecord> {
    let pt = record_plaintext(fid, keyword)?;
    let mac = HmacSha256::eval(&km.sk0, &[b"fuzzkey record nonce", &pt]);
    let nonce = mac[..NONCE_LEN].try_into().expect("mac longer than nonce");
    Ok(seal(km, nonce, &pt))
}

/// Returns `(fid, keyword)` or [`Error::AuthFailure`].
pub fn decrypt_record(km: &KeyMaterial, rec: &EncryptedRecord) -> Result<(Vec<u8>, Keyword)> {
    let pt = km
        .record_cipher()
        .decrypt(
            Nonce::from_slice(&rec.nonce),
            Payload {
                msg: &rec.ciphertext,
                aad: b"",
            },
        )
        .map_err(|_| Error::AuthFailure)?;
    let sep = pt.iter().rposition(|&b| b == 0).ok_or(Error::AuthFailure)?;
    let keyword = std::str::from_utf8(&pt[sep + 1..])
        .ok()
        .and_then(|s| Keyword::new(s).ok())
        .ok_or(Error::AuthFailure)?;
    Ok((pt[..sep].to_vec(), keyword))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

const PRP_ROUNDS: u8 = 4;

/// Reads `len` bits starting at bit `start` (MSB first) into a right-aligned
/// big-endian byte string.
fn get_bits(src: &[u8], start: usize, len: usize) -> Vec<u8> {
    let nbytes = len.div_ceil(8);
    let mut out = vec![0u8; nbytes];
    let pad = nbytes * 8 - len;
    for i in 0..len {
        let bit = (src[(start + i) / 8] >> (7 - (start + i) % 8)) & 1;
        let j = pad + i;
        out[j / 8] |= bit << (7 - j % 8);
    }
    out
}

fn put_bits(dst: &mut [u8], start: usize, len: usize, value: &[u8]) {
    let pad = value.len() * 8 - len;
    for i in 0..len {
        let j = pad + i;
        let bit = (value[j / 8] >> (7 - j % 8)) & 1;
        let k = start + i;
        dst[k / 8] = (dst[k / 8] & !(1 << (7 - k % 8))) | (bit << (7 - k % 8));
    }
}

/// Keyed permutation on `l`-bit strings: a balanced 4-round Feistel network
/// with `HMAC-SHA256(xi, round || half)` as round function.
#[derive(Clone)]
pub struct Prp<'a> {
    xi: &'a [u8],
    bits: usize,
}

impl<'a> Prp<'a> {
    pub fn new(xi: &'a [u8], bits: usize) -> Result<Self> {
        if bits == 0 || bits % 2 != 0 {
            return Err(Error::BadParameter(format!("permutation width must be even, got {bits}")));
        }
        Ok(Prp { xi, bits })
    }

    fn round(&self, round: u8, half: &[u8]) -> Vec<u8> {
        expand::<HmacSha256>(self.xi, &[b"fuzzkey prp", &[round + 1], half], self.bits / 2)
    }

    pub fn apply(&self, t: &Trapdoor, direction: Direction) -> Result<Trapdoor> {
        if t.bits() != self.bits {
            return Err(Error::BadLength {
                expected: self.bits,
                actual: t.bits(),
            });
        }
        let h = self.bits / 2;
        let mut left = get_bits(&t.0, 0, h);
        let mut right = get_bits(&t.0, h, h);
        let xor = |a: &mut Vec<u8>, b: &[u8]| a.iter_mut().zip(b).for_each(|(x, y)| *x ^= y);
        match direction {
            Direction::Forward => {
                for r in 0..PRP_ROUNDS {
                    let f = self.round(r, &right);
                    xor(&mut left, &f);
                    std::mem::swap(&mut left, &mut right);
                }
            }
            Direction::Inverse => {
                for r in (0..PRP_ROUNDS).rev() {
                    std::mem::swap(&mut left, &mut right);
                    let f = self.round(r, &right);
                    xor(&mut left, &f);
                }
            }
        }
        let mut out = vec![0u8; t.0.len()];
        put_bits(&mut out, 0, h, &left);
        put_bits(&mut out, h, h, &right);
        Ok(Trapdoor(out))
    }
}

/// `pi(xi, t)` or its inverse, over the trapdoor's own width.
pub fn prp(xi: &[u8], t: &Trapdoor, direction: Direction) -> Trapdoor {
    Prp::new(xi, t.bits())
        .and_then(|p| p.apply(t, direction))
        .expect("byte-sized trapdoors have even width")
}
