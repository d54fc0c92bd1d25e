//! Procedural synthesis of labeled cryptographic programs.
//!
//! A [`SynthSpec`] fixes everything: the primitive, its key material, the
//! obfuscation mode and the code-generation variant. [`synthesize`] turns it
//! into a validated [`Program`]; the same spec always yields the same bytes.

mod analysis;
mod codegen;
mod dataset;
mod inject;
mod obfuscate;
mod templates;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::isa::{validate, Program, ValidationError};
use crate::label::ClassLabel;
use crate::rng::{self, Rng};

pub use codegen::{codegen_variants, rename_registers, schedule_blocks, unroll_loops};
pub use dataset::{
    build_dataset, program_path, DatasetError, DatasetManifest, ManifestHeader, ManifestRecord, MANIFEST_FILE,
};
pub use inject::{inject_arithmetic, inject_with, InjectConfig};
pub use obfuscate::{aggregate_objects, apply_obfuscation, split_objects};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Obfuscation {
    Aggregation,
    Split,
    Normal,
}

impl Obfuscation {
    pub const ALL: [Obfuscation; 3] = [Obfuscation::Aggregation, Obfuscation::Split, Obfuscation::Normal];

    pub fn name(self) -> &'static str {
        match self {
            Obfuscation::Aggregation => "aggregation",
            Obfuscation::Split => "split",
            Obfuscation::Normal => "normal",
        }
    }
}

/// Compiler-like variation applied after obfuscation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Codegen {
    pub rename_seed: Option<u64>,
    pub schedule_seed: Option<u64>,
    pub unroll: u8,
}

impl Codegen {
    pub const IDENTITY: Codegen = Codegen {
        rename_seed: None,
        schedule_seed: None,
        unroll: 1,
    };
}

impl Default for Codegen {
    fn default() -> Self {
        Codegen::IDENTITY
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AesPayload {
    pub key: Vec<u8>,
    pub iv: Vec<u8>,
    pub plaintext: Vec<u8>,
}

/// Key and plaintext for the stream and Feistel ciphers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyedPayload {
    pub key: Vec<u8>,
    pub plaintext: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Md5Payload {
    pub message: Vec<u8>,
}

/// Textbook RSA: `message^exponent mod modulus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RsaPayload {
    pub modulus: u64,
    pub exponent: u64,
    pub message: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Aes(AesPayload),
    Rc4(KeyedPayload),
    Blowfish(KeyedPayload),
    Md5(Md5Payload),
    Rsa(RsaPayload),
    RsaAes(RsaPayload, AesPayload),
}

impl Payload {
    pub fn label(&self) -> ClassLabel {
        match self {
            Payload::Aes(_) => ClassLabel::Aes,
            Payload::Rc4(_) => ClassLabel::Rc4,
            Payload::Blowfish(_) => ClassLabel::Blowfish,
            Payload::Md5(_) => ClassLabel::Md5,
            Payload::Rsa(_) => ClassLabel::Rsa,
            Payload::RsaAes(..) => ClassLabel::RsaAes,
        }
    }

    /// Draw fresh key material for `label`.
    pub fn draw(label: ClassLabel, rng: &mut Rng) -> Payload {
        match label {
            ClassLabel::Aes => Payload::Aes(draw_aes(rng)),
            ClassLabel::Rc4 => {
                let key = sized_bytes(rng, 5..=16, 1);
                let plaintext = sized_bytes(rng, 16..=64, 1);
                Payload::Rc4(KeyedPayload { key, plaintext })
            }
            ClassLabel::Blowfish => {
                let key = sized_bytes(rng, 4..=56, 1);
                let plaintext = sized_bytes(rng, 1..=2, 8);
                Payload::Blowfish(KeyedPayload { key, plaintext })
            }
            ClassLabel::Md5 => Payload::Md5(Md5Payload {
                message: sized_bytes(rng, 0..=100, 1),
            }),
            ClassLabel::Rsa => {
                let (modulus, exponent) = draw_rsa_key(rng);
                let message = rng.gen_range(2..modulus);
                Payload::Rsa(RsaPayload {
                    modulus,
                    exponent,
                    message,
                })
            }
            ClassLabel::RsaAes => {
                let aes = draw_aes(rng);
                let (modulus, exponent) = draw_rsa_key(rng);
                // Wrap the first seven key bytes, which is always below the modulus.
                let mut m = [0u8; 8];
                m[..7].copy_from_slice(&aes.key[..7]);
                let rsa = RsaPayload {
                    modulus,
                    exponent,
                    message: u64::from_le_bytes(m),
                };
                Payload::RsaAes(rsa, aes)
            }
        }
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |what: &'static str, len: usize| Err(SynthError::PayloadLength { what, len });
        let aes = |p: &AesPayload| {
            if p.key.len() != 16 {
                return bad("AES key", p.key.len());
            }
            if p.iv.len() != 16 {
                return bad("AES IV", p.iv.len());
            }
            if p.plaintext.is_empty() || !p.plaintext.len().is_multiple_of(16) {
                return bad("AES plaintext", p.plaintext.len());
            }
            Ok(())
        };
        let rsa = |p: &RsaPayload| {
            if p.modulus < 3 || p.modulus >= 1 << 63 || p.message >= p.modulus {
                return Err(SynthError::RsaRange);
            }
            Ok(())
        };
        match self {
            Payload::Aes(p) => aes(p),
            Payload::Rc4(p) => {
                if !(5..=16).contains(&p.key.len()) {
                    return bad("RC4 key", p.key.len());
                }
                if p.plaintext.is_empty() {
                    return bad("RC4 plaintext", 0);
                }
                Ok(())
            }
            Payload::Blowfish(p) => {
                if !(4..=56).contains(&p.key.len()) {
                    return bad("Blowfish key", p.key.len());
                }
                if p.plaintext.is_empty() || p.plaintext.len() % 8 != 0 {
                    return bad("Blowfish plaintext", p.plaintext.len());
                }
                Ok(())
            }
            Payload::Md5(_) => Ok(()),
            Payload::Rsa(p) => rsa(p),
            Payload::RsaAes(r, a) => {
                rsa(r)?;
                aes(a)
            }
        }
    }
}

fn random_bytes(rng: &mut Rng, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    rng.fill(&mut v[..]);
    v
}

/// Random bytes whose length is `unit` times a draw from `range`.
fn sized_bytes(rng: &mut Rng, range: std::ops::RangeInclusive<usize>, unit: usize) -> Vec<u8> {
    let n = unit * rng.gen_range(range);
    random_bytes(rng, n)
}

fn draw_aes(rng: &mut Rng) -> AesPayload {
    AesPayload {
        key: random_bytes(rng, 16),
        iv: random_bytes(rng, 16),
        plaintext: sized_bytes(rng, 1..=2, 16),
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    r
}

/// Deterministic Miller-Rabin for 64-bit inputs.
fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'outer: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Product of two distinct 31-bit primes and the smallest odd exponent at or
/// above 65537 that is invertible modulo the totient.
fn draw_rsa_key(rng: &mut Rng) -> (u64, u64) {
    let mut prime = || loop {
        let c = rng.gen_range(1u64 << 30..1 << 31) | 1;
        if is_prime(c) {
            return c;
        }
    };
    let p = prime();
    let mut q = prime();
    while q == p {
        q = prime();
    }
    let phi = (p - 1) * (q - 1);
    let mut e = 65537;
    while gcd(e, phi) != 1 {
        e += 2;
    }
    (p * q, e)
}

/// Reference model of the modular exponentiation template.
pub fn rsa_reference(p: &RsaPayload) -> u64 {
    pow_mod(p.message, p.exponent, p.modulus)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("label {label} does not match a {payload} payload")]
    LabelMismatch { label: ClassLabel, payload: ClassLabel },
    #[error("{what} has invalid length {len}")]
    PayloadLength { what: &'static str, len: usize },
    #[error("RSA modulus must lie in [3, 2^63) and exceed the message")]
    RsaRange,
    #[error("unroll factor {0} not in {{1, 2, 4}}")]
    BadUnroll(u8),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Everything needed to regenerate one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SynthSpec {
    pub label: ClassLabel,
    pub obfuscation: Obfuscation,
    pub codegen: Codegen,
    pub payload: Payload,
    pub seed: u64,
}

const TAG_SPEC: u64 = 0;
const TAG_STYLE: u64 = 1;
const TAG_OBFUSCATE: u64 = 2;
const TAG_INJECT: u64 = 3;

impl SynthSpec {
    /// Plain spec for a payload: no obfuscation, identity code generation.
    pub fn plain(payload: Payload) -> SynthSpec {
        SynthSpec {
            label: payload.label(),
            obfuscation: Obfuscation::Normal,
            codegen: Codegen::IDENTITY,
            payload,
            seed: 0,
        }
    }

    /// Draw every free choice for `label` from `seed`.
    pub fn draw(label: ClassLabel, seed: u64) -> SynthSpec {
        let mut r = rng::child(seed, TAG_SPEC);
        let obfuscation = *Obfuscation::ALL.choose(&mut r).expect("non-empty");
        let rename_seed = r.gen_bool(0.75).then(|| r.gen());
        let schedule_seed = r.gen_bool(0.75).then(|| r.gen());
        let unroll = *[1u8, 1, 2, 4].choose(&mut r).expect("non-empty");
        let payload = Payload::draw(label, &mut r);
        SynthSpec {
            label,
            obfuscation,
            codegen: Codegen {
                rename_seed,
                schedule_seed,
                unroll,
            },
            payload,
            seed,
        }
    }

    pub fn check(&self) -> Result<(), SynthError> {
        if self.payload.label() != self.label {
            return Err(SynthError::LabelMismatch {
                label: self.label,
                payload: self.payload.label(),
            });
        }
        if !matches!(self.codegen.unroll, 1 | 2 | 4) {
            return Err(SynthError::BadUnroll(self.codegen.unroll));
        }
        self.payload.check()
    }
}

/// Template, obfuscation, injected arithmetic, then code-generation variants.
pub fn synthesize(spec: &SynthSpec) -> Result<Program, SynthError> {
    synthesize_with(spec, &InjectConfig::default())
}

pub fn synthesize_with(spec: &SynthSpec, inject: &InjectConfig) -> Result<Program, SynthError> {
    spec.check()?;
    let style = templates::Style::draw(&mut rng::child(spec.seed, TAG_STYLE));
    let p = templates::build(&spec.payload, &style);
    let p = apply_obfuscation(&p, spec.obfuscation, rng::derive(spec.seed, TAG_OBFUSCATE));
    let p = inject_with(&p, rng::derive(spec.seed, TAG_INJECT), inject);
    let mut p = codegen_variants(&p, &spec.codegen)?;
    p.label = Some(spec.label);
    validate(&p)?;
    Ok(p)
}

#[cfg(test)]
mod tests;
