use crate::isa::{Asm, DataObject, Label, Width};
use crate::synth::KeyedPayload;

use super::blowfish_consts::{P, S};
use super::{le_words, loop_until, mem, wrap_inc, Style, Template, R0, R1, R2, R3, R4, R5, R6, R7, R8};

/// Blowfish key schedule and ECB encryption of whole 8-byte blocks.
///
/// P and S live in memory as little-endian dwords; the cipher halves are
/// assembled big-endian from the plaintext bytes.
pub(crate) struct BlowfishTemplate {
    p: KeyedPayload,
    style: Style,
    encrypt: Option<Label>,
}

impl BlowfishTemplate {
    pub fn new(p: KeyedPayload, style: Style) -> Self {
        BlowfishTemplate {
            p,
            style,
            encrypt: None,
        }
    }

    /// Encrypt (r0, r1) in place. Clobbers r2..r6.
    fn encrypt_body(&self, a: &mut Asm) {
        a.mov(R2, 0u64);
        let round = a.here();
        a.load(R3, Width::Dword, mem("parr").base(R2)).xor(R0, R3);
        a.mov(R4, R0).shr(R4, 24u64);
        a.load(R5, Width::Dword, mem("sbox").index(R4, 4));
        for (shift, table) in [(16u64, 1024i64), (8, 2048), (0, 3072)] {
            a.mov(R4, R0);
            if shift > 0 {
                a.shr(R4, shift);
            }
            a.and(R4, 0xffu64);
            a.load(R6, Width::Dword, mem("sbox").index(R4, 4).disp(table));
            if table == 2048 {
                a.xor(R5, R6);
            } else {
                a.add(R5, R6);
            }
        }
        a.and(R5, 0xffff_ffffu64).xor(R1, R5);
        a.mov(R4, R0).mov(R0, R1).mov(R1, R4);
        a.add(R2, 4u64);
        loop_until(a, R2, 64, R4, round);
        a.mov(R4, R0).mov(R0, R1).mov(R1, R4);
        a.load(R3, Width::Dword, mem("parr").disp(64)).xor(R1, R3);
        a.load(R3, Width::Dword, mem("parr").disp(68)).xor(R0, R3);
    }

    fn encrypt(&mut self, a: &mut Asm) {
        if self.style.use_calls {
            let l = *self.encrypt.get_or_insert_with(|| a.new_label());
            a.call(l);
        } else {
            self.encrypt_body(a);
        }
    }

    /// Fill `obj[0..len]` with successive encryptions of the running (r0, r1).
    fn fill(&mut self, a: &mut Asm, obj: &str, len: u64) {
        a.mov(R7, 0u64);
        let top = a.here();
        self.encrypt(a);
        a.store(Width::Dword, mem(obj).base(R7), R0);
        a.store(Width::Dword, mem(obj).base(R7).disp(4), R1);
        a.add(R7, 8u64);
        loop_until(a, R7, len, R4, top);
    }
}

impl Template for BlowfishTemplate {
    fn main(&mut self, a: &mut Asm) {
        let keylen = self.p.key.len() as u64;
        let n = self.p.plaintext.len() as u64;
        a.data("key", DataObject::readonly(self.p.key.clone()));
        a.data("pt", DataObject::readonly(self.p.plaintext.clone()));
        a.data("parr", DataObject::mutable(le_words(&P)));
        a.data("sbox", DataObject::mutable(le_words(S.as_flattened())));
        a.data("out", DataObject::zeroed(n as usize));

        // Fold the cyclic key stream into the P-array.
        a.mov(R0, 0u64).mov(R4, 0u64);
        let kp = a.here();
        a.mov(R2, 0u64);
        for _ in 0..4 {
            a.shl(R2, 8u64);
            a.load(R3, Width::Byte, mem("key").base(R4)).or(R2, R3);
            wrap_inc(a, &self.style, R4, keylen, R5, R6);
        }
        a.load(R3, Width::Dword, mem("parr").base(R0)).xor(R3, R2);
        a.store(Width::Dword, mem("parr").base(R0), R3);
        a.add(R0, 4u64);
        loop_until(a, R0, 72, R3, kp);

        a.mov(R0, 0u64).mov(R1, 0u64);
        self.fill(a, "parr", 72);
        self.fill(a, "sbox", 4096);

        a.mov(R8, 0u64);
        let block = a.here();
        for (half, reg) in [(0i64, R0), (4, R1)] {
            a.mov(reg, 0u64);
            for k in 0..4 {
                a.shl(reg, 8u64);
                a.load(R3, Width::Byte, mem("pt").base(R8).disp(half + k)).or(reg, R3);
            }
        }
        self.encrypt(a);
        for (half, reg) in [(0i64, R0), (4, R1)] {
            for k in 0..4i64 {
                a.mov(R3, reg);
                let shift = 24 - 8 * k as u64;
                if shift > 0 {
                    a.shr(R3, shift);
                }
                a.store(Width::Byte, mem("out").base(R8).disp(half + k), R3);
            }
        }
        a.add(R8, 8u64);
        loop_until(a, R8, n, R3, block);
    }

    fn subroutines(&mut self, a: &mut Asm) {
        if let Some(l) = self.encrypt {
            a.bind(l);
            self.encrypt_body(a);
            a.ret();
        }
    }
}
