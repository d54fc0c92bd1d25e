use crate::isa::{Asm, Cond, DataObject, Label, Reg, WReg, Width};
use crate::synth::AesPayload;

use super::{loop_until, mem, Style, Template, R0, R1, R10, R2, R3, R4, R5, R6, R7, R8, R9};

const RCON: [u8; 10] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

fn gf_mul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        let hi = a & 0x80;
        a <<= 1;
        if hi != 0 {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    p
}

/// The AES S-box: multiplicative inverse in GF(2^8) followed by the affine map.
pub(crate) fn aes_sbox() -> [u8; 256] {
    let mut s = [0u8; 256];
    for (x, out) in s.iter_mut().enumerate() {
        // x^254 is the inverse of x (and maps 0 to 0).
        let mut inv = 1u8;
        for _ in 0..254 {
            inv = gf_mul(inv, x as u8);
        }
        if x == 0 {
            inv = 0;
        }
        *out = inv ^ inv.rotate_left(1) ^ inv.rotate_left(2) ^ inv.rotate_left(3) ^ inv.rotate_left(4) ^ 0x63;
    }
    s
}

/// AES-128 in CBC mode over whole blocks.
pub(crate) struct AesTemplate {
    p: AesPayload,
    style: Style,
    sub_shift: Option<Label>,
}

impl AesTemplate {
    pub fn new(p: AesPayload, style: Style) -> Self {
        AesTemplate {
            p,
            style,
            sub_shift: None,
        }
    }

    fn key_expansion(&self, a: &mut Asm) {
        let w0 = WReg(0);
        a.loadw(w0, mem("key")).storew(mem("rk"), w0);
        a.mov(R0, 16u64).mov(R6, 0u64);
        let top = a.here();
        let nosub = a.new_label();
        a.load(R2, Width::Dword, mem("rk").base(R0).disp(-4));
        a.test(R0, 15u64).jcc(Cond::Nz, nosub);
        // RotWord on the little-endian word.
        a.mov(R3, R2)
            .shr(R3, 8u64)
            .shl(R2, 24u64)
            .or(R2, R3)
            .and(R2, 0xffff_ffffu64);
        a.mov(R5, 0u64);
        for k in 0..4u64 {
            a.mov(R3, R2);
            if k > 0 {
                a.shr(R3, 8 * k);
            }
            a.and(R3, 0xffu64).load(R3, Width::Byte, mem("sbox").base(R3));
            if k > 0 {
                a.shl(R3, 8 * k);
            }
            a.or(R5, R3);
        }
        a.load(R3, Width::Byte, mem("rcon").base(R6)).xor(R5, R3);
        self.style.incr(a, R6);
        a.mov(R2, R5);
        a.bind(nosub);
        a.load(R3, Width::Dword, mem("rk").base(R0).disp(-16));
        a.xor(R2, R3).store(Width::Dword, mem("rk").base(R0), R2);
        a.add(R0, 4u64);
        loop_until(a, R0, 176, R3, top);
    }

    fn sub_bytes_shift_rows(&self, a: &mut Asm) {
        a.mov(R0, 0u64);
        let sb = a.here();
        a.load(R1, Width::Byte, mem("state").base(R0));
        a.load(R1, Width::Byte, mem("sbox").base(R1));
        a.store(Width::Byte, mem("state").base(R0), R1);
        self.style.incr(a, R0);
        a.test(R0, 16u64).jcc(Cond::Z, sb);
        let regs = [R0, R1, R2, R3];
        for row in 1..4i64 {
            for (c, r) in regs.iter().enumerate() {
                a.load(*r, Width::Byte, mem("state").disp(row + 4 * c as i64));
            }
            for c in 0..4i64 {
                let from = regs[((c + row) % 4) as usize];
                a.store(Width::Byte, mem("state").disp(row + 4 * c), from);
            }
        }
    }

    fn xtime(&self, a: &mut Asm, u: Reg) {
        if self.style.branchless {
            a.mov(R6, u).shr(R6, 7u64).mov(R7, 0u64).sub(R7, R6).and(R7, 0x1bu64);
            a.shl(u, 1u64).xor(u, R7).and(u, 0xffu64);
        } else {
            let skip = a.new_label();
            a.shl(u, 1u64).test(u, 0x100u64).jcc(Cond::Z, skip);
            a.xor(u, 0x11bu64);
            a.bind(skip);
        }
    }

    fn mix_columns(&self, a: &mut Asm) {
        let col = [R0, R1, R2, R3];
        a.mov(R10, 0u64);
        let top = a.here();
        for (i, r) in col.iter().enumerate() {
            a.load(*r, Width::Byte, mem("state").base(R10).disp(i as i64));
        }
        a.mov(R4, R0).xor(R4, R1).xor(R4, R2).xor(R4, R3);
        for i in 0..4 {
            let (x, y) = (col[i], col[(i + 1) % 4]);
            a.mov(R5, x).xor(R5, y);
            self.xtime(a, R5);
            a.xor(R5, R4).xor(R5, x);
            a.store(Width::Byte, mem("state").base(R10).disp(i as i64), R5);
        }
        a.add(R10, 4u64).test(R10, 16u64).jcc(Cond::Z, top);
    }

    fn add_round_key(&self, a: &mut Asm) {
        let (w0, w1) = (WReg(0), WReg(1));
        a.loadw(w0, mem("state")).loadw(w1, mem("rk").base(R8)).pxor(w0, w1);
        a.storew(mem("state"), w0);
    }

    fn sub_shift(&mut self, a: &mut Asm) {
        if self.style.use_calls {
            let l = *self.sub_shift.get_or_insert_with(|| a.new_label());
            a.call(l);
        } else {
            self.sub_bytes_shift_rows(a);
        }
    }
}

impl Template for AesTemplate {
    fn main(&mut self, a: &mut Asm) {
        a.data("key", DataObject::readonly(self.p.key.to_vec()));
        a.data("iv", DataObject::readonly(self.p.iv.to_vec()));
        a.data("pt", DataObject::readonly(self.p.plaintext.clone()));
        a.data("sbox", DataObject::readonly(aes_sbox().to_vec()));
        a.data("rcon", DataObject::readonly(RCON.to_vec()));
        a.data("rk", DataObject::zeroed(176));
        a.data("state", DataObject::zeroed(16));
        a.data("out", DataObject::zeroed(self.p.plaintext.len()));

        self.key_expansion(a);

        let (w0, w1, w2) = (WReg(0), WReg(1), WReg(2));
        a.loadw(w2, mem("iv")).mov(R9, 0u64);
        let block = a.here();
        a.loadw(w0, mem("pt").base(R9)).pxor(w0, w2);
        a.loadw(w1, mem("rk")).pxor(w0, w1).storew(mem("state"), w0);
        a.mov(R8, 16u64);
        let round = a.here();
        self.sub_shift(a);
        self.mix_columns(a);
        self.add_round_key(a);
        a.add(R8, 16u64);
        loop_until(a, R8, 160, R0, round);
        self.sub_shift(a);
        self.add_round_key(a);
        a.storew(mem("out").base(R9), w0).movw(w2, w0);
        a.add(R9, 16u64);
        loop_until(a, R9, self.p.plaintext.len() as u64, R0, block);
    }

    fn subroutines(&mut self, a: &mut Asm) {
        if let Some(l) = self.sub_shift {
            a.bind(l);
            self.sub_bytes_shift_rows(a);
            a.ret();
        }
    }
}
