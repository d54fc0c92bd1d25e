use crate::isa::{Asm, Cond, DataObject, Width};
use crate::synth::KeyedPayload;

use super::{loop_until, mem, wrap_inc, Style, Template, R0, R1, R2, R3, R4, R5, R7};

/// RC4 key schedule followed by keystream generation; `out = pt ^ keystream`.
pub(crate) struct Rc4Template {
    p: KeyedPayload,
    style: Style,
}

impl Rc4Template {
    pub fn new(p: KeyedPayload, style: Style) -> Self {
        Rc4Template { p, style }
    }
}

impl Template for Rc4Template {
    fn main(&mut self, a: &mut Asm) {
        let keylen = self.p.key.len() as u64;
        let n = self.p.plaintext.len() as u64;
        a.data("key", DataObject::readonly(self.p.key.clone()));
        a.data("pt", DataObject::readonly(self.p.plaintext.clone()));
        a.data("sbox", DataObject::zeroed(256));
        a.data("out", DataObject::zeroed(n as usize));

        a.mov(R0, 0u64);
        let init = a.here();
        a.store(Width::Byte, mem("sbox").base(R0), R0);
        self.style.incr(a, R0);
        a.test(R0, 0x100u64).jcc(Cond::Z, init);

        a.mov(R0, 0u64).mov(R1, 0u64).mov(R4, 0u64);
        let ksa = a.here();
        a.load(R2, Width::Byte, mem("sbox").base(R0));
        a.load(R3, Width::Byte, mem("key").base(R4));
        a.add(R1, R2).add(R1, R3).and(R1, 0xffu64);
        a.load(R3, Width::Byte, mem("sbox").base(R1));
        a.store(Width::Byte, mem("sbox").base(R0), R3);
        a.store(Width::Byte, mem("sbox").base(R1), R2);
        wrap_inc(a, &self.style, R4, keylen, R3, R5);
        self.style.incr(a, R0);
        a.test(R0, 0x100u64).jcc(Cond::Z, ksa);

        a.mov(R0, 0u64).mov(R1, 0u64).mov(R7, 0u64);
        let prga = a.here();
        self.style.incr(a, R0);
        a.and(R0, 0xffu64);
        a.load(R2, Width::Byte, mem("sbox").base(R0));
        a.add(R1, R2).and(R1, 0xffu64);
        a.load(R3, Width::Byte, mem("sbox").base(R1));
        a.store(Width::Byte, mem("sbox").base(R0), R3);
        a.store(Width::Byte, mem("sbox").base(R1), R2);
        a.add(R2, R3).and(R2, 0xffu64);
        a.load(R2, Width::Byte, mem("sbox").base(R2));
        a.load(R3, Width::Byte, mem("pt").base(R7));
        a.xor(R3, R2).store(Width::Byte, mem("out").base(R7), R3);
        self.style.incr(a, R7);
        loop_until(a, R7, n, R3, prga);
    }
}
