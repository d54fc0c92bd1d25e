use crate::isa::{Asm, DataObject, Label, MemRef, Width};
use crate::synth::Md5Payload;

use super::{le_words, loop_until, mem, Style, Template, R0, R1, R2, R3, R4, R5, R6, R7, R8, R9};

/// Per-step left-rotation amounts.
pub(crate) const MD5_SHIFTS: [u8; 64] = {
    let rounds = [[7, 12, 17, 22], [5, 9, 14, 20], [4, 11, 16, 23], [6, 10, 15, 21]];
    let mut s = [0u8; 64];
    let mut i = 0;
    while i < 64 {
        s[i] = rounds[i / 16][i % 4];
        i += 1;
    }
    s
};

/// `K[i] = floor(|sin(i + 1)| * 2^32)`.
pub(crate) fn md5_k_table() -> [u32; 64] {
    std::array::from_fn(|i| (((i + 1) as f64).sin().abs() * 4_294_967_296.0) as u32)
}

const INIT: [u64; 4] = [0x6745_2301, 0xefcd_ab89, 0x98ba_dcfe, 0x1032_5476];

/// MD5 over a message padded in-program; the digest accumulates in `out`.
pub(crate) struct Md5Template {
    p: Md5Payload,
    style: Style,
    step: Option<Label>,
}

impl Md5Template {
    pub fn new(p: Md5Payload, style: Style) -> Self {
        Md5Template { p, style, step: None }
    }

    /// Given F in r4 and the message word index in r5, finish step r9.
    fn step_body(&self, a: &mut Asm) {
        a.add(R4, R0);
        a.load(R6, Width::Dword, mem("buf").base(R8).index(R5, 4)).add(R4, R6);
        a.load(R6, Width::Dword, mem("ktab").index(R9, 4)).add(R4, R6);
        a.and(R4, 0xffff_ffffu64);
        a.load(R6, Width::Byte, mem("shifts").base(R9));
        a.mov(R5, R4).shl(R4, R6).and(R4, 0xffff_ffffu64);
        a.mov(R7, 32u64).sub(R7, R6).shr(R5, R7).or(R4, R5);
        a.mov(R0, R3)
            .mov(R3, R2)
            .mov(R2, R1)
            .add(R1, R4)
            .and(R1, 0xffff_ffffu64);
    }

    fn round(&mut self, a: &mut Asm, r: u64) {
        let top = a.here();
        let not = 0xffff_ffffu64;
        match r {
            0 => {
                a.mov(R4, R1)
                    .and(R4, R2)
                    .mov(R6, R1)
                    .xor(R6, not)
                    .and(R6, R3)
                    .or(R4, R6);
                a.mov(R5, R9);
            }
            1 => {
                a.mov(R4, R3)
                    .and(R4, R1)
                    .mov(R6, R3)
                    .xor(R6, not)
                    .and(R6, R2)
                    .or(R4, R6);
                a.lea(R5, MemRef::address().base(R9).index(R9, 4).disp(1));
                a.and(R5, 15u64);
            }
            2 => {
                a.mov(R4, R1).xor(R4, R2).xor(R4, R3);
                a.lea(R5, MemRef::address().base(R9).index(R9, 2).disp(5));
                a.and(R5, 15u64);
            }
            _ => {
                a.mov(R6, R3).xor(R6, not).or(R6, R1).mov(R4, R2).xor(R4, R6);
                a.lea(R5, MemRef::address().index(R9, 8)).sub(R5, R9).and(R5, 15u64);
            }
        }
        if self.style.use_calls {
            let l = *self.step.get_or_insert_with(|| a.new_label());
            a.call(l);
        } else {
            self.step_body(a);
        }
        self.style.incr(a, R9);
        loop_until(a, R9, 16 * (r + 1), R7, top);
    }
}

impl Template for Md5Template {
    fn main(&mut self, a: &mut Asm) {
        let n = self.p.message.len();
        let padded = (n + 8) / 64 * 64 + 64;
        if n > 0 {
            a.data("msg", DataObject::readonly(self.p.message.clone()));
        }
        a.data("buf", DataObject::zeroed(padded));
        a.data("ktab", DataObject::readonly(le_words(&md5_k_table())));
        a.data("shifts", DataObject::readonly(MD5_SHIFTS.to_vec()));
        a.data("out", DataObject::zeroed(16));

        if n > 0 {
            a.mov(R0, 0u64);
            let copy = a.here();
            a.load(R1, Width::Byte, mem("msg").base(R0));
            a.store(Width::Byte, mem("buf").base(R0), R1);
            self.style.incr(a, R0);
            loop_until(a, R0, n as u64, R2, copy);
        }
        a.store(Width::Byte, mem("buf").disp(n as i64), 0x80u64);
        a.store(Width::Qword, mem("buf").disp(padded as i64 - 8), (n as u64) * 8);
        for (i, v) in INIT.iter().enumerate() {
            a.store(Width::Dword, mem("out").disp(4 * i as i64), *v);
        }

        a.mov(R8, 0u64);
        let chunk = a.here();
        let state = [R0, R1, R2, R3];
        for (i, r) in state.iter().enumerate() {
            a.load(*r, Width::Dword, mem("out").disp(4 * i as i64));
        }
        a.mov(R9, 0u64);
        for r in 0..4 {
            self.round(a, r);
        }
        for (i, r) in state.iter().enumerate() {
            let m = mem("out").disp(4 * i as i64);
            a.load(R6, Width::Dword, m.clone())
                .add(R6, *r)
                .store(Width::Dword, m, R6);
        }
        a.add(R8, 64u64);
        loop_until(a, R8, padded as u64, R7, chunk);
    }

    fn subroutines(&mut self, a: &mut Asm) {
        if let Some(l) = self.step {
            a.bind(l);
            self.step_body(a);
            a.ret();
        }
    }
}
