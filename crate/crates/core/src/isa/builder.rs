use std::collections::BTreeMap;

use super::{Cond, DataObject, Instruction, MemRef, Opcode, Operand, Program, Reg, WReg, Width};

/// Forward-referenceable code label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Label(usize);

/// Incremental program builder used by the synthesis templates.
///
/// Branch operands are recorded against [`Label`]s and patched in [`Asm::finish`].
#[derive(Debug, Default)]
pub struct Asm {
    ins: Vec<Instruction>,
    bound: Vec<Option<usize>>,
    fixups: Vec<(usize, Label)>,
    objects: BTreeMap<String, DataObject>,
    entry: Option<Label>,
}

impl From<Reg> for Operand {
    fn from(r: Reg) -> Self {
        Operand::Reg(r)
    }
}

impl From<WReg> for Operand {
    fn from(w: WReg) -> Self {
        Operand::Wide(w)
    }
}

impl From<u64> for Operand {
    fn from(v: u64) -> Self {
        Operand::Imm(v)
    }
}

macro_rules! binop {
    ($($name:ident => $op:ident),* $(,)?) => {
        $(
            pub fn $name(&mut self, dst: Reg, src: impl Into<Operand>) -> &mut Self {
                self.emit(Opcode::$op, Operand::Reg(dst), src.into())
            }
        )*
    };
}

impl Asm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ins.is_empty()
    }

    pub fn emit(&mut self, opcode: Opcode, dst: Operand, src: Operand) -> &mut Self {
        let mut i = Instruction::new(opcode, dst, src);
        i.addr = self.ins.len();
        self.ins.push(i);
        self
    }

    pub fn data(&mut self, name: &str, obj: DataObject) -> &mut Self {
        self.objects.insert(name.to_string(), obj);
        self
    }

    pub fn new_label(&mut self) -> Label {
        self.bound.push(None);
        Label(self.bound.len() - 1)
    }

    pub fn bind(&mut self, l: Label) -> &mut Self {
        assert!(self.bound[l.0].is_none(), "label bound twice");
        self.bound[l.0] = Some(self.ins.len());
        self
    }

    /// New label bound at the current position.
    pub fn here(&mut self) -> Label {
        let l = self.new_label();
        self.bind(l);
        l
    }

    pub fn set_entry(&mut self, l: Label) -> &mut Self {
        self.entry = Some(l);
        self
    }

    fn branch(&mut self, op: Opcode, l: Label) -> &mut Self {
        self.fixups.push((self.ins.len(), l));
        self.emit(op, Operand::Target(usize::MAX), Operand::None)
    }

    binop! {
        add => Add, sub => Sub, shr => Shr, shl => Shl, and => And,
        or => Or, xor => Xor, test => Test, mov => Mov,
    }

    pub fn inc(&mut self, r: Reg) -> &mut Self {
        self.emit(Opcode::Inc, Operand::Reg(r), Operand::None)
    }

    pub fn dec(&mut self, r: Reg) -> &mut Self {
        self.emit(Opcode::Dec, Operand::Reg(r), Operand::None)
    }

    pub fn pxor(&mut self, dst: WReg, src: WReg) -> &mut Self {
        self.emit(Opcode::Pxor, Operand::Wide(dst), Operand::Wide(src))
    }

    pub fn movw(&mut self, dst: WReg, src: WReg) -> &mut Self {
        self.emit(Opcode::Mov, Operand::Wide(dst), Operand::Wide(src))
    }

    pub fn lea(&mut self, dst: Reg, addr: MemRef) -> &mut Self {
        self.emit(Opcode::Lea, Operand::Reg(dst), Operand::Addr(addr))
    }

    pub fn load(&mut self, dst: Reg, w: Width, m: MemRef) -> &mut Self {
        self.emit(Opcode::Load, Operand::Reg(dst), Operand::Mem(w, m))
    }

    pub fn store(&mut self, w: Width, m: MemRef, src: impl Into<Operand>) -> &mut Self {
        self.emit(Opcode::Store, Operand::Mem(w, m), src.into())
    }

    pub fn loadw(&mut self, dst: WReg, m: MemRef) -> &mut Self {
        self.emit(Opcode::Load, Operand::Wide(dst), Operand::Mem(Width::Oword, m))
    }

    pub fn storew(&mut self, m: MemRef, src: WReg) -> &mut Self {
        self.emit(Opcode::Store, Operand::Mem(Width::Oword, m), Operand::Wide(src))
    }

    pub fn jmp(&mut self, l: Label) -> &mut Self {
        self.branch(Opcode::Jmp, l)
    }

    pub fn jcc(&mut self, c: Cond, l: Label) -> &mut Self {
        self.branch(Opcode::Jcc(c), l)
    }

    pub fn call(&mut self, l: Label) -> &mut Self {
        self.branch(Opcode::Call, l)
    }

    pub fn ret(&mut self) -> &mut Self {
        self.emit(Opcode::Ret, Operand::None, Operand::None)
    }

    pub fn halt(&mut self) -> &mut Self {
        self.emit(Opcode::Halt, Operand::None, Operand::None)
    }

    /// Resolve labels. Panics on an unbound label, which is a template bug.
    pub fn finish(mut self) -> Program {
        for (at, l) in &self.fixups {
            let t = self.bound[l.0].expect("unbound label");
            *self.ins[*at].target_mut().expect("branch without target") = t;
        }
        let entry = self.entry.map(|l| self.bound[l.0].expect("unbound entry")).unwrap_or(0);
        Program {
            instructions: self.ins,
            data_objects: self.objects,
            entry,
            label: None,
            meta: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{disassemble, validate};

    #[test]
    fn builds_forward_and_backward_branches() {
        let mut a = Asm::new();
        let done = a.new_label();
        a.mov(Reg(0), 3u64);
        let top = a.here();
        a.dec(Reg(0)).jcc(Cond::Z, done).jmp(top);
        a.bind(done);
        a.halt();
        let p = a.finish();
        assert_eq!(validate(&p), Ok(()));
        assert_eq!(
            disassemble(&p).unwrap(),
            "mov r0, 3\nL1:\ndec r0\njz L4\njmp L1\nL4:\nhalt\n"
        );
    }
}
