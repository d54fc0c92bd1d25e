//! The virtual instruction set.
//!
//! Sixteen 64-bit scalar registers `r0`–`r15`, four 128-bit wide registers
//! `w0`–`w3`, three condition flags (zero, carry, sign) and object-granular
//! memory: every load and store names a data object plus a byte offset.

pub(crate) mod asm;
mod builder;
pub(crate) mod validate;

use std::collections::BTreeMap;
use std::fmt;

use crate::label::ClassLabel;

pub use asm::{disassemble, parse_program, ParseError, ParseErrorKind};
pub use builder::{Asm, Label};
pub use validate::{validate, Diagnostic, DiagnosticKind, ValidationError};

pub const NUM_REGS: usize = 16;
pub const NUM_WIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(pub u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WReg(pub u8);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl fmt::Display for WReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// Condition codes for `jcc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cond {
    Z,
    Nz,
    C,
    Nc,
    S,
    Ns,
    /// Unsigned above: carry clear and zero clear.
    A,
    /// Unsigned below or equal: carry set or zero set.
    Be,
}

impl Cond {
    pub const ALL: [Cond; 8] = [
        Cond::Z,
        Cond::Nz,
        Cond::C,
        Cond::Nc,
        Cond::S,
        Cond::Ns,
        Cond::A,
        Cond::Be,
    ];

    pub fn invert(self) -> Cond {
        match self {
            Cond::Z => Cond::Nz,
            Cond::Nz => Cond::Z,
            Cond::C => Cond::Nc,
            Cond::Nc => Cond::C,
            Cond::S => Cond::Ns,
            Cond::Ns => Cond::S,
            Cond::A => Cond::Be,
            Cond::Be => Cond::A,
        }
    }

    pub fn holds(self, flags: Flags) -> bool {
        match self {
            Cond::Z => flags.zero,
            Cond::Nz => !flags.zero,
            Cond::C => flags.carry,
            Cond::Nc => !flags.carry,
            Cond::S => flags.sign,
            Cond::Ns => !flags.sign,
            Cond::A => !flags.carry && !flags.zero,
            Cond::Be => flags.carry || flags.zero,
        }
    }

    fn mnemonic(self) -> &'static str {
        match self {
            Cond::Z => "jz",
            Cond::Nz => "jnz",
            Cond::C => "jc",
            Cond::Nc => "jnc",
            Cond::S => "js",
            Cond::Ns => "jns",
            Cond::A => "ja",
            Cond::Be => "jbe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Flags {
    pub zero: bool,
    pub carry: bool,
    pub sign: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    Add,
    Sub,
    Inc,
    Dec,
    Shr,
    Shl,
    And,
    Or,
    Xor,
    Pxor,
    Test,
    Lea,
    Mov,
    Load,
    Store,
    Jmp,
    Jcc(Cond),
    Call,
    Ret,
    Halt,
}

/// The twelve mnemonics whose per-block counts form the feature rows, in row order.
pub const WEIGHTED_MNEMONICS: [Opcode; 12] = [
    Opcode::Add,
    Opcode::Sub,
    Opcode::Inc,
    Opcode::Dec,
    Opcode::Shr,
    Opcode::Shl,
    Opcode::And,
    Opcode::Or,
    Opcode::Xor,
    Opcode::Pxor,
    Opcode::Test,
    Opcode::Lea,
];

impl serde::Serialize for Opcode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.mnemonic())
    }
}

impl<'de> serde::Deserialize<'de> for Opcode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Opcode::from_mnemonic(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown mnemonic `{s}`")))
    }
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Inc => "inc",
            Opcode::Dec => "dec",
            Opcode::Shr => "shr",
            Opcode::Shl => "shl",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Xor => "xor",
            Opcode::Pxor => "pxor",
            Opcode::Test => "test",
            Opcode::Lea => "lea",
            Opcode::Mov => "mov",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Jmp => "jmp",
            Opcode::Jcc(c) => c.mnemonic(),
            Opcode::Call => "call",
            Opcode::Ret => "ret",
            Opcode::Halt => "halt",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let op = match s {
            "add" => Opcode::Add,
            "sub" => Opcode::Sub,
            "inc" => Opcode::Inc,
            "dec" => Opcode::Dec,
            "shr" => Opcode::Shr,
            "shl" => Opcode::Shl,
            "and" => Opcode::And,
            "or" => Opcode::Or,
            "xor" => Opcode::Xor,
            "pxor" => Opcode::Pxor,
            "test" => Opcode::Test,
            "lea" => Opcode::Lea,
            "mov" => Opcode::Mov,
            "load" => Opcode::Load,
            "store" => Opcode::Store,
            "jmp" => Opcode::Jmp,
            "call" => Opcode::Call,
            "ret" => Opcode::Ret,
            "halt" => Opcode::Halt,
            _ => return Cond::ALL.into_iter().find(|c| c.mnemonic() == s).map(Opcode::Jcc),
        };
        Some(op)
    }

    /// Position in the weighted mnemonic list, if this opcode is weighted.
    pub fn weighted_index(self) -> Option<usize> {
        WEIGHTED_MNEMONICS.iter().position(|&w| w == self)
    }

    /// Branch, call or return: the instruction ends a basic block.
    pub fn is_tail(self) -> bool {
        matches!(self, Opcode::Jmp | Opcode::Jcc(_) | Opcode::Call | Opcode::Ret)
    }

    pub fn sets_flags(self) -> bool {
        matches!(
            self,
            Opcode::Add
                | Opcode::Sub
                | Opcode::Inc
                | Opcode::Dec
                | Opcode::Shr
                | Opcode::Shl
                | Opcode::And
                | Opcode::Or
                | Opcode::Xor
                | Opcode::Test
        )
    }

    /// Index in declaration order; conditional jumps share one slot.
    pub fn enum_index(self) -> usize {
        match self {
            Opcode::Add => 0,
            Opcode::Sub => 1,
            Opcode::Inc => 2,
            Opcode::Dec => 3,
            Opcode::Shr => 4,
            Opcode::Shl => 5,
            Opcode::And => 6,
            Opcode::Or => 7,
            Opcode::Xor => 8,
            Opcode::Pxor => 9,
            Opcode::Test => 10,
            Opcode::Lea => 11,
            Opcode::Mov => 12,
            Opcode::Load => 13,
            Opcode::Store => 14,
            Opcode::Jmp => 15,
            Opcode::Jcc(_) => 16,
            Opcode::Call => 17,
            Opcode::Ret => 18,
            Opcode::Halt => 19,
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Access width of a load or store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Width {
    Byte,
    Word,
    Dword,
    Qword,
    Oword,
}

impl Width {
    pub fn bytes(self) -> usize {
        match self {
            Width::Byte => 1,
            Width::Word => 2,
            Width::Dword => 4,
            Width::Qword => 8,
            Width::Oword => 16,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Width::Byte => "byte",
            Width::Word => "word",
            Width::Dword => "dword",
            Width::Qword => "qword",
            Width::Oword => "oword",
        }
    }

    fn from_keyword(s: &str) -> Option<Width> {
        Some(match s {
            "byte" => Width::Byte,
            "word" => Width::Word,
            "dword" => Width::Dword,
            "qword" => Width::Qword,
            "oword" => Width::Oword,
            _ => return None,
        })
    }
}

/// `[object + base + index*scale + disp]`.
///
/// Loads and stores name an object; `lea` operands never do, so that
/// flattening several objects into one only has to adjust displacements of
/// memory accesses.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemRef {
    pub object: Option<String>,
    pub base: Option<Reg>,
    pub index: Option<(Reg, u8)>,
    pub disp: i64,
}

impl MemRef {
    pub fn object(name: impl Into<String>) -> Self {
        MemRef {
            object: Some(name.into()),
            base: None,
            index: None,
            disp: 0,
        }
    }

    pub fn address() -> Self {
        MemRef {
            object: None,
            base: None,
            index: None,
            disp: 0,
        }
    }

    pub fn base(mut self, r: Reg) -> Self {
        self.base = Some(r);
        self
    }

    pub fn index(mut self, r: Reg, scale: u8) -> Self {
        self.index = Some((r, scale));
        self
    }

    pub fn disp(mut self, d: i64) -> Self {
        self.disp = d;
        self
    }

    pub fn registers(&self) -> impl Iterator<Item = Reg> + '_ {
        self.base.into_iter().chain(self.index.map(|(r, _)| r))
    }
}

impl fmt::Display for MemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms: Vec<String> = Vec::new();
        if let Some(o) = &self.object {
            terms.push(o.clone());
        }
        if let Some(b) = self.base {
            terms.push(b.to_string());
        }
        if let Some((r, s)) = self.index {
            terms.push(format!("{r}*{s}"));
        }
        f.write_str("[")?;
        for (i, t) in terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            f.write_str(t)?;
        }
        if self.disp != 0 || terms.is_empty() {
            let mag = format_imm(self.disp.unsigned_abs());
            match (terms.is_empty(), self.disp < 0) {
                (true, true) => write!(f, "-{mag}")?,
                (true, false) => f.write_str(&mag)?,
                (false, true) => write!(f, " - {mag}")?,
                (false, false) => write!(f, " + {mag}")?,
            }
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    None,
    Reg(Reg),
    Wide(WReg),
    Imm(u64),
    /// Memory access with width (load/store).
    Mem(Width, MemRef),
    /// Address expression (lea).
    Addr(MemRef),
    /// Instruction address (jmp/jcc/call).
    Target(usize),
}

impl Operand {
    pub fn is_none(&self) -> bool {
        matches!(self, Operand::None)
    }

    pub fn registers(&self) -> Vec<Reg> {
        match self {
            Operand::Reg(r) => vec![*r],
            Operand::Mem(_, m) | Operand::Addr(m) => m.registers().collect(),
            _ => Vec::new(),
        }
    }
}

pub(crate) fn format_imm(v: u64) -> String {
    if v <= 9 {
        v.to_string()
    } else {
        format!("{v:#x}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub dst: Operand,
    pub src: Operand,
    pub addr: usize,
}

impl Instruction {
    pub fn new(opcode: Opcode, dst: Operand, src: Operand) -> Self {
        Instruction {
            opcode,
            dst,
            src,
            addr: 0,
        }
    }

    pub fn target(&self) -> Option<usize> {
        match (&self.dst, self.opcode) {
            (Operand::Target(t), Opcode::Jmp | Opcode::Jcc(_) | Opcode::Call) => Some(*t),
            _ => None,
        }
    }

    pub fn target_mut(&mut self) -> Option<&mut usize> {
        match &mut self.dst {
            Operand::Target(t) => Some(t),
            _ => None,
        }
    }

    pub fn mem_ref(&self) -> Option<(Width, &MemRef)> {
        match (&self.dst, &self.src) {
            (Operand::Mem(w, m), _) | (_, Operand::Mem(w, m)) => Some((*w, m)),
            _ => None,
        }
    }

    pub fn mem_ref_mut(&mut self) -> Option<&mut MemRef> {
        match (&mut self.dst, &mut self.src) {
            (Operand::Mem(_, m), _) | (_, Operand::Mem(_, m)) => Some(m),
            _ => None,
        }
    }

    /// Every scalar register mentioned by either operand.
    pub fn registers(&self) -> Vec<Reg> {
        let mut v = self.dst.registers();
        v.extend(self.src.registers());
        v
    }

    pub fn registers_mut(&mut self) -> Vec<&mut Reg> {
        fn collect<'a>(op: &'a mut Operand, out: &mut Vec<&'a mut Reg>) {
            match op {
                Operand::Reg(r) => out.push(r),
                Operand::Mem(_, m) | Operand::Addr(m) => {
                    if let Some(b) = &mut m.base {
                        out.push(b);
                    }
                    if let Some((i, _)) = &mut m.index {
                        out.push(i);
                    }
                }
                _ => {}
            }
        }
        let mut v = Vec::new();
        collect(&mut self.dst, &mut v);
        collect(&mut self.src, &mut v);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataObject {
    pub bytes: Vec<u8>,
    pub mutable: bool,
}

impl DataObject {
    pub fn mutable(bytes: Vec<u8>) -> Self {
        DataObject { bytes, mutable: true }
    }

    pub fn readonly(bytes: Vec<u8>) -> Self {
        DataObject { bytes, mutable: false }
    }

    pub fn zeroed(len: usize) -> Self {
        DataObject::mutable(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// A sequence of instructions plus the data objects they operate on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub data_objects: BTreeMap<String, DataObject>,
    pub entry: usize,
    pub label: Option<ClassLabel>,
    /// Free-form annotations (e.g. which obfuscation was applied).
    pub meta: BTreeMap<String, String>,
}

impl Program {
    /// Rewrite every `addr` field to its index.
    pub fn renumber(&mut self) {
        for (i, ins) in self.instructions.iter_mut().enumerate() {
            ins.addr = i;
        }
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Index of a data object in the program's (sorted) object order.
    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.data_objects.keys().position(|k| k == name)
    }

    pub fn opcode_histogram(&self) -> BTreeMap<Opcode, usize> {
        let mut h = BTreeMap::new();
        for ins in &self.instructions {
            *h.entry(ins.opcode).or_insert(0) += 1;
        }
        h
    }
}

/// True if `name` can be used as an object or label name.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && parse_register(name).is_none()
}

pub(crate) enum AnyReg {
    Scalar(Reg),
    Wide(WReg),
}

pub(crate) fn parse_register(s: &str) -> Option<AnyReg> {
    let (kind, num) = s.split_at(1.min(s.len()));
    if num.is_empty() || (num.len() > 1 && num.starts_with('0')) {
        return None;
    }
    let n: u8 = num.parse().ok()?;
    match kind {
        "r" if (n as usize) < NUM_REGS => Some(AnyReg::Scalar(Reg(n))),
        "w" if (n as usize) < NUM_WIDE => Some(AnyReg::Wide(WReg(n))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_list_is_the_twelve_mnemonics() {
        let names: Vec<&str> = WEIGHTED_MNEMONICS.iter().map(|o| o.mnemonic()).collect();
        assert_eq!(
            names,
            ["add", "sub", "inc", "dec", "shr", "shl", "and", "or", "xor", "pxor", "test", "lea"]
        );
        for (i, op) in WEIGHTED_MNEMONICS.iter().enumerate() {
            assert_eq!(op.weighted_index(), Some(i));
        }
        assert_eq!(Opcode::Mov.weighted_index(), None);
    }

    #[test]
    fn tails_are_branches_calls_and_returns() {
        assert!(Opcode::Jmp.is_tail());
        assert!(Opcode::Jcc(Cond::Z).is_tail());
        assert!(Opcode::Call.is_tail());
        assert!(Opcode::Ret.is_tail());
        assert!(!Opcode::Halt.is_tail());
        assert!(!Opcode::Xor.is_tail());
    }

    #[test]
    fn mnemonics_round_trip() {
        for op in WEIGHTED_MNEMONICS
            .into_iter()
            .chain([
                Opcode::Mov,
                Opcode::Load,
                Opcode::Store,
                Opcode::Jmp,
                Opcode::Call,
                Opcode::Ret,
                Opcode::Halt,
            ])
            .chain(Cond::ALL.map(Opcode::Jcc))
        {
            assert_eq!(Opcode::from_mnemonic(op.mnemonic()), Some(op));
        }
        assert_eq!(Opcode::from_mnemonic("aesenc"), None);
    }

    #[test]
    fn cond_inversion_is_involutive_and_complementary() {
        let all = [false, true];
        for c in Cond::ALL {
            assert_eq!(c.invert().invert(), c);
            for zero in all {
                for carry in all {
                    for sign in all {
                        let f = Flags { zero, carry, sign };
                        assert_ne!(c.holds(f), c.invert().holds(f));
                    }
                }
            }
        }
    }

    #[test]
    fn memref_display() {
        let m = MemRef::object("sbox").base(Reg(1)).index(Reg(2), 4).disp(16);
        assert_eq!(m.to_string(), "[sbox + r1 + r2*4 + 0x10]");
        assert_eq!(MemRef::address().disp(-3).to_string(), "[-3]");
        assert_eq!(MemRef::address().to_string(), "[0]");
        assert_eq!(MemRef::object("k").disp(-12).to_string(), "[k - 0xc]");
    }

    #[test]
    fn identifiers_exclude_registers() {
        assert!(is_identifier("sbox"));
        assert!(is_identifier("_x1"));
        assert!(!is_identifier("r3"));
        assert!(!is_identifier("w0"));
        assert!(is_identifier("r16"));
        assert!(is_identifier("r03"));
        assert!(!is_identifier("1abc"));
    }
}
