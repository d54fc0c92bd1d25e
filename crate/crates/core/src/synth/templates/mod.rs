//! Hand-written program builders, one per primitive.
//!
//! Every template keeps to registers r0..r10 and w0..w2, so later passes can
//! always find scratch registers. Subroutines are emitted after the main
//! `halt`, which lets several templates share one program.

mod aes;
mod blowfish;
pub(crate) mod blowfish_consts;
mod md5;
mod rc4;
mod rsa;

use rand::Rng as _;

use crate::isa::{Asm, Cond, Label, MemRef, Program, Reg};
use crate::rng::Rng;

use super::Payload;

#[cfg(test)]
pub(crate) use aes::aes_sbox;
pub(crate) use aes::AesTemplate;
#[cfg(test)]
pub(crate) use md5::{md5_k_table, MD5_SHIFTS};

pub(crate) const R0: Reg = Reg(0);
pub(crate) const R1: Reg = Reg(1);
pub(crate) const R2: Reg = Reg(2);
pub(crate) const R3: Reg = Reg(3);
pub(crate) const R4: Reg = Reg(4);
pub(crate) const R5: Reg = Reg(5);
pub(crate) const R6: Reg = Reg(6);
pub(crate) const R7: Reg = Reg(7);
pub(crate) const R8: Reg = Reg(8);
pub(crate) const R9: Reg = Reg(9);
pub(crate) const R10: Reg = Reg(10);

/// Source-level choices a template makes on top of the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Style {
    /// Use masks instead of conditional branches where both are possible.
    pub branchless: bool,
    /// Factor repeated code into subroutines instead of inlining it.
    pub use_calls: bool,
    /// 0: `inc`, 1: `add r, 1`, 2: `lea r, [r + 1]`.
    pub inc_form: u8,
}

impl Style {
    pub fn draw(rng: &mut Rng) -> Style {
        Style {
            branchless: rng.gen_bool(0.5),
            use_calls: rng.gen_bool(0.5),
            inc_form: rng.gen_range(0..3),
        }
    }

    /// Increment without relying on the flags it may or may not set.
    pub fn incr(&self, a: &mut Asm, r: Reg) {
        match self.inc_form {
            0 => a.inc(r),
            1 => a.add(r, 1u64),
            _ => a.lea(r, MemRef::address().base(r).disp(1)),
        };
    }
}

impl Default for Style {
    fn default() -> Self {
        Style {
            branchless: true,
            use_calls: false,
            inc_form: 0,
        }
    }
}

pub(crate) trait Template {
    /// Declare data objects and emit the straight-line part of the program.
    fn main(&mut self, a: &mut Asm);
    /// Emit the subroutines referenced from `main`.
    fn subroutines(&mut self, _a: &mut Asm) {}
}

pub(crate) fn mem(obj: &str) -> MemRef {
    MemRef::object(obj)
}

/// `while r != limit`: loop back to `top` after computing `r - limit` in `scratch`.
pub(crate) fn loop_until(a: &mut Asm, r: Reg, limit: u64, scratch: Reg, top: Label) {
    a.mov(scratch, r).sub(scratch, limit).jcc(Cond::Nz, top);
}

/// `k = (k + 1) mod len`, branch-free or with a conditional reset.
pub(crate) fn wrap_inc(a: &mut Asm, style: &Style, k: Reg, len: u64, t1: Reg, t2: Reg) {
    style.incr(a, k);
    if style.branchless {
        // t1 = 1 when k < len; mask = 0 - t1 keeps k, else clears it.
        a.mov(t1, k).sub(t1, len).shr(t1, 63u64);
        a.mov(t2, 0u64).sub(t2, t1).and(k, t2);
    } else {
        let keep = a.new_label();
        a.mov(t1, k).sub(t1, len).jcc(Cond::Nz, keep);
        a.mov(k, 0u64);
        a.bind(keep);
    }
}

/// Per-byte little-endian dword image of a u32 table.
pub(crate) fn le_words(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

/// Build the unobfuscated program for a payload.
pub(crate) fn build(payload: &Payload, style: &Style) -> Program {
    let mut parts: Vec<Box<dyn Template>> = match payload {
        Payload::Aes(p) => vec![Box::new(AesTemplate::new(p.clone(), *style))],
        Payload::Rc4(p) => vec![Box::new(rc4::Rc4Template::new(p.clone(), *style))],
        Payload::Blowfish(p) => vec![Box::new(blowfish::BlowfishTemplate::new(p.clone(), *style))],
        Payload::Md5(p) => vec![Box::new(md5::Md5Template::new(p.clone(), *style))],
        Payload::Rsa(p) => vec![Box::new(rsa::RsaTemplate::new(*p, *style))],
        Payload::RsaAes(r, x) => vec![
            Box::new(rsa::RsaTemplate::new(*r, *style)),
            Box::new(AesTemplate::new(x.clone(), *style)),
        ],
    };
    let mut a = Asm::new();
    for t in parts.iter_mut() {
        t.main(&mut a);
    }
    a.halt();
    for t in parts.iter_mut() {
        t.subroutines(&mut a);
    }
    a.finish()
}
