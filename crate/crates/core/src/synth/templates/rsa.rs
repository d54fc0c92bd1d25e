use crate::isa::{Asm, Cond, DataObject, Label, Reg, Width};
use crate::synth::RsaPayload;

use super::{mem, Style, Template, R0, R1, R2, R3, R4, R5, R6, R7, R8, R9};

/// Right-to-left square-and-multiply modular exponentiation.
///
/// The modulus stays below 2^63, so `2a` and `a + b` never overflow for
/// reduced operands and every reduction is a single conditional subtraction.
pub(crate) struct RsaTemplate {
    p: RsaPayload,
    style: Style,
    mulmod: Option<Label>,
}

impl RsaTemplate {
    pub fn new(p: RsaPayload, style: Style) -> Self {
        RsaTemplate { p, style, mulmod: None }
    }

    /// `x = x mod n` for `x < 2n`, via a sign mask. Clobbers r7, r8, r9.
    fn reduce(a: &mut Asm, x: Reg) {
        a.mov(R7, x).sub(R7, R2).mov(R8, R7).shr(R8, 63u64);
        a.mov(R9, 0u64).sub(R9, R8).and(R9, R2).add(R7, R9).mov(x, R7);
    }

    /// `r6 = r4 * r5 mod n` by shift-and-add. Clobbers r4, r5, r7..r9.
    fn mulmod_body(a: &mut Asm) {
        a.mov(R6, 0u64);
        let top = a.here();
        a.mov(R7, R5).and(R7, 1u64).mov(R8, 0u64).sub(R8, R7).and(R8, R4);
        a.add(R6, R8);
        Self::reduce(a, R6);
        a.add(R4, R4);
        Self::reduce(a, R4);
        a.shr(R5, 1u64).jcc(Cond::Nz, top);
    }

    fn mulmod(&mut self, a: &mut Asm) {
        if self.style.use_calls {
            let l = *self.mulmod.get_or_insert_with(|| a.new_label());
            a.call(l);
        } else {
            Self::mulmod_body(a);
        }
    }
}

impl Template for RsaTemplate {
    fn main(&mut self, a: &mut Asm) {
        let word = |v: u64| DataObject::readonly(v.to_le_bytes().to_vec());
        a.data("rsa_msg", word(self.p.message));
        a.data("rsa_exp", word(self.p.exponent));
        a.data("rsa_mod", word(self.p.modulus));
        a.data("out_rsa", DataObject::zeroed(8));

        a.load(R0, Width::Qword, mem("rsa_msg"));
        a.load(R1, Width::Qword, mem("rsa_exp"));
        a.load(R2, Width::Qword, mem("rsa_mod"));
        a.mov(R3, 1u64);
        let top = a.here();
        let skip = a.new_label();
        a.test(R1, 1u64).jcc(Cond::Z, skip);
        a.mov(R4, R3).mov(R5, R0);
        self.mulmod(a);
        a.mov(R3, R6);
        a.bind(skip);
        a.mov(R4, R0).mov(R5, R0);
        self.mulmod(a);
        a.mov(R0, R6);
        a.shr(R1, 1u64).jcc(Cond::Nz, top);
        a.store(Width::Qword, mem("out_rsa"), R3);
    }

    fn subroutines(&mut self, a: &mut Asm) {
        if let Some(l) = self.mulmod {
            a.bind(l);
            Self::mulmod_body(a);
            a.ret();
        }
    }
}
