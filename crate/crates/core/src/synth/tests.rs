use std::collections::BTreeSet;

use aes::cipher::{BlockEncrypt, KeyInit, StreamCipher};
use md5::Digest;
use proptest::prelude::*;

use super::templates::{build, Style};
use super::*;
use crate::isa::{disassemble, parse_program};
use crate::tracer::execute;

const STEPS: u64 = 20_000_000;

fn hex(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

fn output(p: &Program, name: &str) -> Vec<u8> {
    let e = execute(p, STEPS).expect("executes");
    assert!(e.trace.halted, "program did not halt");
    e.memory.get(name).expect("output object").to_vec()
}

fn all_styles() -> Vec<Style> {
    let mut v = Vec::new();
    for branchless in [false, true] {
        for use_calls in [false, true] {
            for inc_form in 0..3 {
                v.push(Style {
                    branchless,
                    use_calls,
                    inc_form,
                });
            }
        }
    }
    v
}

fn fips_aes() -> Payload {
    Payload::Aes(AesPayload {
        key: hex("000102030405060708090a0b0c0d0e0f"),
        iv: vec![0; 16],
        plaintext: hex("00112233445566778899aabbccddeeff"),
    })
}

#[test]
fn sbox_and_tables_match_published_values() {
    let s = templates::aes_sbox();
    assert_eq!((s[0x00], s[0x01], s[0x53], s[0xff]), (0x63, 0x7c, 0xed, 0x16));
    let k = templates::md5_k_table();
    assert_eq!((k[0], k[63]), (0xd76a_a478, 0xeb86_d391));
    assert_eq!(templates::MD5_SHIFTS[..4], [7, 12, 17, 22]);
}

#[test]
fn aes_fips_vector_in_every_style() {
    for st in all_styles() {
        let p = build(&fips_aes(), &st);
        assert_eq!(output(&p, "out"), hex("69c4e0d86a7b0430d8cdb78070b4c55a"), "{st:?}");
    }
}

#[test]
fn aes_synthesized_fips_vector() {
    let p = synthesize(&SynthSpec::plain(fips_aes())).unwrap();
    assert_eq!(output(&p, "out"), hex("69c4e0d86a7b0430d8cdb78070b4c55a"));
}

fn aes_cbc_reference(a: &AesPayload) -> Vec<u8> {
    let c = aes::Aes128::new_from_slice(&a.key).unwrap();
    let mut chain = a.iv.clone();
    let mut out = Vec::new();
    for block in a.plaintext.chunks(16) {
        let mut b = aes::Block::default();
        for i in 0..16 {
            b[i] = block[i] ^ chain[i];
        }
        c.encrypt_block(&mut b);
        chain = b.to_vec();
        out.extend_from_slice(&b);
    }
    out
}

fn blowfish_reference(k: &KeyedPayload) -> Vec<u8> {
    let c: blowfish::Blowfish = blowfish::Blowfish::new_from_slice(&k.key).unwrap();
    let mut out = Vec::new();
    for block in k.plaintext.chunks(8) {
        let mut b = blowfish::cipher::generic_array::GenericArray::clone_from_slice(block);
        c.encrypt_block(&mut b);
        out.extend_from_slice(&b);
    }
    out
}

fn rc4_reference(k: &KeyedPayload) -> Vec<u8> {
    use rc4::consts::*;
    let mut buf = k.plaintext.clone();
    macro_rules! run {
        ($($n:literal => $t:ty),*) => {
            match k.key.len() {
                $($n => rc4::Rc4::<$t>::new_from_slice(&k.key).unwrap().apply_keystream(&mut buf),)*
                n => panic!("unsupported key length {n}"),
            }
        };
    }
    run!(5 => U5, 6 => U6, 7 => U7, 8 => U8, 9 => U9, 10 => U10, 11 => U11, 12 => U12,
         13 => U13, 14 => U14, 15 => U15, 16 => U16);
    buf
}

#[test]
fn blowfish_zero_vector_in_every_style() {
    let payload = Payload::Blowfish(KeyedPayload {
        key: vec![0; 8],
        plaintext: vec![0; 8],
    });
    for st in all_styles() {
        let p = build(&payload, &st);
        assert_eq!(output(&p, "out"), hex("4ef997456198dd78"), "{st:?}");
    }
}

#[test]
fn blowfish_vector_survives_split() {
    let payload = Payload::Blowfish(KeyedPayload {
        key: vec![0; 8],
        plaintext: vec![0; 8],
    });
    for seed in 0..4 {
        let spec = SynthSpec {
            obfuscation: Obfuscation::Split,
            seed,
            ..SynthSpec::plain(payload.clone())
        };
        let p = synthesize(&spec).unwrap();
        assert_eq!(p.meta.get("obfuscation").map(String::as_str), Some("split"));
        assert_eq!(output(&p, "out"), hex("4ef997456198dd78"));
    }
}

#[test]
fn md5_rfc1321_suite() {
    let suite = [
        ("", "d41d8cd98f00b204e9800998ecf8427e"),
        ("a", "0cc175b9c0f1b6a831c399e269772661"),
        ("abc", "900150983cd24fb0d6963f7d28e17f72"),
        ("message digest", "f96b697d7cb7938d525a2f31aaf161d0"),
        ("abcdefghijklmnopqrstuvwxyz", "c3fcd3d76192e4007dfb496cca67e13b"),
        (
            "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789",
            "d174ab98d277d9f5a5611c2c9f419d9f",
        ),
        (
            "12345678901234567890123456789012345678901234567890123456789012345678901234567890",
            "57edf4a22be3c955ac49da2e2107b67a",
        ),
    ];
    for (i, (msg, digest)) in suite.iter().enumerate() {
        let payload = Payload::Md5(Md5Payload {
            message: msg.as_bytes().to_vec(),
        });
        let st = all_styles()[i % 12];
        assert_eq!(output(&build(&payload, &st), "out"), hex(digest), "{msg:?} {st:?}");
    }
}

#[test]
fn rc4_rfc6229_first_keystream_bytes() {
    let payload = Payload::Rc4(KeyedPayload {
        key: hex("0102030405"),
        plaintext: vec![0; 16],
    });
    for st in all_styles() {
        assert_eq!(
            output(&build(&payload, &st), "out"),
            hex("b2396305f03dc027ccc3524a0a1118a8"),
            "{st:?}"
        );
    }
}

#[test]
fn modexp_small_vector() {
    let payload = Payload::Rsa(RsaPayload {
        modulus: 497,
        exponent: 13,
        message: 4,
    });
    for st in all_styles() {
        assert_eq!(output(&build(&payload, &st), "out_rsa"), 445u64.to_le_bytes(), "{st:?}");
    }
}

#[test]
fn random_payloads_match_reference_implementations() {
    for seed in 0..6u64 {
        for label in ClassLabel::ALL {
            let spec = SynthSpec::draw(label, seed);
            let p = synthesize(&spec).unwrap();
            match &spec.payload {
                Payload::Aes(a) => assert_eq!(output(&p, "out"), aes_cbc_reference(a)),
                Payload::Rc4(k) => assert_eq!(output(&p, "out"), rc4_reference(k)),
                Payload::Blowfish(k) => assert_eq!(output(&p, "out"), blowfish_reference(k)),
                Payload::Md5(m) => assert_eq!(output(&p, "out"), md5::Md5::digest(&m.message).to_vec()),
                Payload::Rsa(r) => assert_eq!(output(&p, "out_rsa"), rsa_reference(r).to_le_bytes()),
                Payload::RsaAes(r, a) => {
                    let e = execute(&p, STEPS).unwrap();
                    assert_eq!(e.memory.get("out_rsa").unwrap(), rsa_reference(r).to_le_bytes());
                    assert_eq!(e.memory.get("out").unwrap(), aes_cbc_reference(a));
                }
            }
        }
    }
}

#[test]
fn rsa_keys_are_well_formed() {
    let mut r = crate::rng::rng(11);
    for _ in 0..20 {
        let (n, e) = draw_rsa_key(&mut r);
        assert!((1 << 60..1 << 62).contains(&n), "{n}");
        assert!(e >= 65537 && e % 2 == 1);
    }
    assert!(is_prime(2_147_483_647) && !is_prime(2_147_483_649));
}

#[test]
fn payload_checks() {
    let bad = Payload::Rc4(KeyedPayload {
        key: vec![1; 4],
        plaintext: vec![0; 4],
    });
    assert_eq!(
        bad.check(),
        Err(SynthError::PayloadLength {
            what: "RC4 key",
            len: 4
        })
    );
    let mut spec = SynthSpec::plain(fips_aes());
    spec.label = ClassLabel::Md5;
    assert!(matches!(synthesize(&spec), Err(SynthError::LabelMismatch { .. })));
    let big = Payload::Rsa(RsaPayload {
        modulus: u64::MAX,
        exponent: 3,
        message: 2,
    });
    assert_eq!(big.check(), Err(SynthError::RsaRange));
}

#[test]
fn aggregation_on_aes_tables_keeps_ciphertext() {
    let p = build(&fips_aes(), &Style::default());
    let q = aggregate_objects(&p, &["sbox", "rcon"], 3).unwrap();
    assert!(q.data_objects.len() < p.data_objects.len());
    assert_eq!(output(&q, "out"), output(&p, "out"));
}

#[test]
fn split_on_rc4_key_keeps_keystream() {
    let payload = Payload::Rc4(KeyedPayload {
        key: hex("0102030405"),
        plaintext: vec![0; 16],
    });
    for st in all_styles() {
        let p = build(&payload, &st);
        let q = split_objects(&p, &["key"], 5).unwrap();
        assert!(q.len() > p.len());
        assert_eq!(output(&q, "out"), output(&p, "out"));
    }
}

#[test]
fn unroll_doubles_prga_body() {
    let payload = Payload::Rc4(KeyedPayload {
        key: hex("0102030405"),
        plaintext: vec![0; 40],
    });
    let p = build(&payload, &Style::default());
    let q = unroll_loops(&p, 2);
    // Static span of the back edge whose range stores to `out`; dynamic
    // blocks still end at each exit check between the copies.
    let body = |p: &Program| {
        p.instructions
            .iter()
            .enumerate()
            .filter_map(|(j, ins)| ins.target().filter(|&t| t < j).map(|t| (t, j)))
            .filter(|&(t, j)| {
                p.instructions[t..j]
                    .iter()
                    .any(|x| x.mem_ref().is_some_and(|(_, m)| m.object.as_deref() == Some("out")))
            })
            .map(|(t, j)| j - t + 1)
            .max()
            .unwrap()
    };
    let (a, b) = (body(&p), body(&q));
    assert!(b >= 2 * a - 2 && b <= 2 * a + 2, "{a} -> {b}");
    assert_eq!(output(&q, "out"), output(&p, "out"));
}

#[test]
fn synthesis_is_deterministic() {
    for label in ClassLabel::ALL {
        let spec = SynthSpec::draw(label, 99);
        assert_eq!(synthesize(&spec).unwrap(), synthesize(&spec).unwrap());
    }
}

#[test]
fn hundred_seeds_give_distinct_programs() {
    for label in [ClassLabel::Aes, ClassLabel::Rc4, ClassLabel::Md5] {
        let hashes: BTreeSet<String> = (0..100)
            .map(|s| format!("{:?}", synthesize(&SynthSpec::draw(label, s)).unwrap().instructions))
            .collect();
        assert!(hashes.len() >= 95, "{label}: {}", hashes.len());
    }
}

#[test]
fn round_trip_of_synthesized_programs() {
    for s in 0..100u64 {
        let label = ClassLabel::ALL[s as usize % 6];
        let mut p = synthesize(&SynthSpec::draw(label, s)).unwrap();
        let text = disassemble(&p).unwrap();
        let q = parse_program(&text).unwrap();
        // Metadata other than the label travels in `.meta` lines.
        p.label = q.label;
        assert_eq!(q, p, "seed {s}");
    }
}

#[test]
fn programs_validate_across_many_seeds() {
    for s in 0..1000u64 {
        let label = ClassLabel::ALL[s as usize % 6];
        let spec = SynthSpec::draw(label, s.wrapping_mul(0x9e37));
        let p = synthesize(&spec).unwrap();
        assert_eq!(validate(&p), Ok(()), "seed {s}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transforms_preserve_outputs(seed in any::<u64>(), li in 0usize..6, mode in 0usize..3) {
        let label = ClassLabel::ALL[li];
        let base = SynthSpec {
            obfuscation: Obfuscation::Normal,
            codegen: Codegen::IDENTITY,
            ..SynthSpec::draw(label, seed)
        };
        let plain = synthesize_with(&base, &InjectConfig::disabled()).unwrap();
        let want = execute(&plain, STEPS).unwrap().memory.outputs();
        let spec = SynthSpec { obfuscation: Obfuscation::ALL[mode], ..SynthSpec::draw(label, seed) };
        let p = synthesize(&spec).unwrap();
        prop_assert_eq!(execute(&p, STEPS).unwrap().memory.outputs(), want);
    }
}
