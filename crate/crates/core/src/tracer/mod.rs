//! Execution, basic-block carving and entropy scoring.
//!
//! [`execute`] runs a [`Program`] on a fresh machine and records one
//! [`TraceEvent`] per executed instruction. An instruction is a *tail* when it
//! is a branch, call or return; the instruction after a tail is a *head*.
//! Blocks are the head→tail runs of the event stream, and an immediate
//! re-execution of the same block is folded into one [`BlockRecord`] with a
//! loop count.
//!
//! Every store snapshots the touched bytes and the Shannon entropy of the
//! whole enclosing data object before and after the write.

mod carve;
mod entropy;

use std::io::{self, Write};

use serde::Serialize;

use crate::isa::{
    validate, Cond, Flags, Instruction, MemRef, Opcode, Operand, Program, ValidationError, Width, NUM_REGS, NUM_WIDE,
};

pub use carve::{carve_blocks, CarveError};
pub use entropy::{histogram, histogram_entropy, score_block_entropy, shannon_entropy, EmptyInput};

/// Maximum call depth before execution is aborted.
pub const MAX_CALL_DEPTH: usize = 4096;

/// Memory modification attached to a store event.
#[derive(Debug, Clone, PartialEq)]
pub struct WriteRecord {
    /// Index of the object in the program's sorted object order.
    pub object: usize,
    pub offset: usize,
    pub old: Vec<u8>,
    pub new: Vec<u8>,
    /// Entropy of the whole object before the write.
    pub entropy_before: f64,
    /// Entropy of the whole object after the write.
    pub entropy_after: f64,
}

impl WriteRecord {
    /// A write that replaces the entire contents of an object.
    pub fn whole_object(object: usize, old: &[u8], new: &[u8]) -> Self {
        assert_eq!(old.len(), new.len());
        WriteRecord {
            object,
            offset: 0,
            old: old.to_vec(),
            new: new.to_vec(),
            entropy_before: histogram_entropy(&histogram(old)),
            entropy_after: histogram_entropy(&histogram(new)),
        }
    }

    pub fn entropy_delta(&self) -> f64 {
        self.entropy_after - self.entropy_before
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub addr: usize,
    pub opcode: Opcode,
    pub is_head: bool,
    pub is_tail: bool,
    pub write: Option<Box<WriteRecord>>,
}

/// One carved basic block, possibly standing for several immediate repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub head_addr: usize,
    pub tail_addr: usize,
    /// Weighted-mnemonic counts in feature-row order, summed over repetitions.
    pub mnemonic_counts: [u64; 12],
    /// Instructions per repetition.
    pub length: usize,
    /// Summed absolute entropy change of all writes, over repetitions.
    pub entropy_score: f64,
    pub loop_iters: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub blocks: Vec<BlockRecord>,
    pub halted: bool,
    pub steps: u64,
}

#[derive(Debug, Serialize)]
struct DumpLine<'a> {
    addr: usize,
    opcode: &'a str,
    head: bool,
    tail: bool,
    write_len: usize,
    #[serde(rename = "dH")]
    dh: f64,
}

impl Trace {
    /// Line-delimited JSON dump, one record per event:
    /// `{"addr","opcode","head","tail","write_len","dH"}`.
    pub fn write_dump(&self, mut w: impl Write) -> io::Result<()> {
        for e in &self.events {
            let line = DumpLine {
                addr: e.addr,
                opcode: e.opcode.mnemonic(),
                head: e.is_head,
                tail: e.is_tail,
                write_len: e.write.as_ref().map_or(0, |w| w.new.len()),
                dh: e.write.as_ref().map_or(0.0, |w| w.entropy_delta()),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Final contents of a program's data objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memory {
    names: Vec<String>,
    objects: Vec<Vec<u8>>,
}

impl Memory {
    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.objects[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.objects.iter().map(Vec::as_slice))
    }

    /// Contents of every object whose name starts with `out`, in name order.
    pub fn outputs(&self) -> Vec<(String, Vec<u8>)> {
        self.iter()
            .filter(|(n, _)| n.starts_with("out"))
            .map(|(n, b)| (n.to_string(), b.to_vec()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub trace: Trace,
    pub memory: Memory,
    pub regs: [u64; NUM_REGS],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("step limit must be positive")]
    ZeroStepLimit,
    #[error("@{addr}: access of {width} bytes at offset {offset} is outside object `{object}` ({len} bytes)")]
    OutOfBounds {
        addr: usize,
        object: String,
        offset: i64,
        width: usize,
        len: usize,
    },
    #[error("@{addr}: write to immutable object `{object}`")]
    ImmutableWrite { addr: usize, object: String },
    #[error("@{addr}: return with empty call stack")]
    ReturnWithoutCall { addr: usize },
    #[error("@{addr}: call depth exceeds {MAX_CALL_DEPTH}")]
    CallDepth { addr: usize },
    #[error("@{addr}: execution fell off the end of the program")]
    FellOffEnd { addr: usize },
    #[error(transparent)]
    Carve(#[from] CarveError),
}

// Pre-resolved instruction forms.

#[derive(Clone, Copy)]
enum Src {
    Reg(u8),
    Imm(u64),
}

#[derive(Clone, Copy)]
struct Ea {
    base: Option<u8>,
    index: Option<(u8, u8)>,
    disp: i64,
}

#[derive(Clone, Copy)]
struct XMem {
    obj: u32,
    width: u8,
    ea: Ea,
}

#[derive(Clone, Copy)]
enum Alu {
    Add,
    Sub,
    Shr,
    Shl,
    And,
    Or,
    Xor,
    Test,
}

#[derive(Clone, Copy)]
enum Op {
    Alu(Alu, u8, Src),
    Inc(u8),
    Dec(u8),
    Mov(u8, Src),
    MovW(u8, u8),
    Pxor(u8, u8),
    Lea(u8, Ea),
    Load(u8, XMem),
    LoadW(u8, XMem),
    Store(XMem, Src),
    StoreW(XMem, u8),
    Jmp(usize),
    Jcc(Cond, usize),
    Call(usize),
    Ret,
    Halt,
}

fn ea_of(m: &MemRef) -> Ea {
    Ea {
        base: m.base.map(|r| r.0),
        index: m.index.map(|(r, s)| (r.0, s)),
        disp: m.disp,
    }
}

fn src_of(o: &Operand) -> Src {
    match o {
        Operand::Reg(r) => Src::Reg(r.0),
        Operand::Imm(v) => Src::Imm(*v),
        _ => unreachable!("validated"),
    }
}

fn lower(p: &Program, ins: &Instruction) -> Op {
    let reg = |o: &Operand| match o {
        Operand::Reg(r) => r.0,
        Operand::Wide(w) => w.0,
        _ => unreachable!("validated"),
    };
    let xmem = |w: Width, m: &MemRef| XMem {
        obj: p
            .object_index(m.object.as_deref().expect("validated"))
            .expect("validated") as u32,
        width: w.bytes() as u8,
        ea: ea_of(m),
    };
    let alu = |a: Alu| Op::Alu(a, reg(&ins.dst), src_of(&ins.src));
    match ins.opcode {
        Opcode::Add => alu(Alu::Add),
        Opcode::Sub => alu(Alu::Sub),
        Opcode::Shr => alu(Alu::Shr),
        Opcode::Shl => alu(Alu::Shl),
        Opcode::And => alu(Alu::And),
        Opcode::Or => alu(Alu::Or),
        Opcode::Xor => alu(Alu::Xor),
        Opcode::Test => alu(Alu::Test),
        Opcode::Inc => Op::Inc(reg(&ins.dst)),
        Opcode::Dec => Op::Dec(reg(&ins.dst)),
        Opcode::Mov => match &ins.dst {
            Operand::Wide(w) => Op::MovW(w.0, reg(&ins.src)),
            _ => Op::Mov(reg(&ins.dst), src_of(&ins.src)),
        },
        Opcode::Pxor => Op::Pxor(reg(&ins.dst), reg(&ins.src)),
        Opcode::Lea => match &ins.src {
            Operand::Addr(m) => Op::Lea(reg(&ins.dst), ea_of(m)),
            _ => unreachable!("validated"),
        },
        Opcode::Load => match (&ins.dst, &ins.src) {
            (Operand::Wide(w), Operand::Mem(wd, m)) => Op::LoadW(w.0, xmem(*wd, m)),
            (Operand::Reg(r), Operand::Mem(wd, m)) => Op::Load(r.0, xmem(*wd, m)),
            _ => unreachable!("validated"),
        },
        Opcode::Store => match (&ins.dst, &ins.src) {
            (Operand::Mem(wd, m), Operand::Wide(w)) => Op::StoreW(xmem(*wd, m), w.0),
            (Operand::Mem(wd, m), s) => Op::Store(xmem(*wd, m), src_of(s)),
            _ => unreachable!("validated"),
        },
        Opcode::Jmp => Op::Jmp(ins.target().expect("validated")),
        Opcode::Jcc(c) => Op::Jcc(c, ins.target().expect("validated")),
        Opcode::Call => Op::Call(ins.target().expect("validated")),
        Opcode::Ret => Op::Ret,
        Opcode::Halt => Op::Halt,
    }
}

struct Machine {
    names: Vec<String>,
    regs: [u64; NUM_REGS],
    wide: [u128; NUM_WIDE],
    flags: Flags,
    stack: Vec<usize>,
    objects: Vec<Vec<u8>>,
    mutable: Vec<bool>,
    hist: Vec<[u32; 256]>,
    entropy: Vec<f64>,
}

impl Machine {
    fn new(program: &Program) -> Self {
        let names: Vec<String> = program.data_objects.keys().cloned().collect();
        let objects: Vec<Vec<u8>> = program.data_objects.values().map(|o| o.bytes.clone()).collect();
        let hist: Vec<[u32; 256]> = objects.iter().map(|o| histogram(o)).collect();
        Machine {
            names,
            regs: [0; NUM_REGS],
            wide: [0; NUM_WIDE],
            flags: Flags::default(),
            stack: Vec::new(),
            mutable: program.data_objects.values().map(|o| o.mutable).collect(),
            entropy: hist.iter().map(histogram_entropy).collect(),
            hist,
            objects,
        }
    }

    fn ea(&self, ea: &Ea) -> i64 {
        let mut v = ea.disp;
        if let Some(b) = ea.base {
            v = v.wrapping_add(self.regs[b as usize] as i64);
        }
        if let Some((i, s)) = ea.index {
            v = v.wrapping_add((self.regs[i as usize] as i64).wrapping_mul(s as i64));
        }
        v
    }

    fn range(&self, addr: usize, m: &XMem) -> Result<std::ops::Range<usize>, ExecError> {
        let off = self.ea(&m.ea);
        let len = self.objects[m.obj as usize].len();
        let w = m.width as usize;
        if off < 0 || (off as u64).saturating_add(w as u64) > len as u64 {
            return Err(ExecError::OutOfBounds {
                addr,
                object: self.names[m.obj as usize].clone(),
                offset: off,
                width: w,
                len,
            });
        }
        let off = off as usize;
        Ok(off..off + w)
    }

    fn read(&self, addr: usize, m: &XMem) -> Result<u128, ExecError> {
        let r = self.range(addr, m)?;
        let mut buf = [0u8; 16];
        buf[..r.len()].copy_from_slice(&self.objects[m.obj as usize][r]);
        Ok(u128::from_le_bytes(buf))
    }

    fn write(&mut self, addr: usize, m: &XMem, value: u128) -> Result<WriteRecord, ExecError> {
        let obj = m.obj as usize;
        if !self.mutable[obj] {
            return Err(ExecError::ImmutableWrite {
                addr,
                object: self.names[obj].clone(),
            });
        }
        let r = self.range(addr, m)?;
        let bytes = value.to_le_bytes();
        let new = &bytes[..r.len()];
        let old = self.objects[obj][r.clone()].to_vec();
        let before = self.entropy[obj];
        let mut changed = false;
        for (o, n) in old.iter().zip(new) {
            if o != n {
                self.hist[obj][*o as usize] -= 1;
                self.hist[obj][*n as usize] += 1;
                changed = true;
            }
        }
        self.objects[obj][r.clone()].copy_from_slice(new);
        if changed {
            self.entropy[obj] = histogram_entropy(&self.hist[obj]);
        }
        Ok(WriteRecord {
            object: obj,
            offset: r.start,
            old,
            new: new.to_vec(),
            entropy_before: before,
            entropy_after: self.entropy[obj],
        })
    }

    fn src(&self, s: Src) -> u64 {
        match s {
            Src::Reg(r) => self.regs[r as usize],
            Src::Imm(v) => v,
        }
    }

    fn set_zs(&mut self, v: u64, carry: bool) {
        self.flags = Flags {
            zero: v == 0,
            carry,
            sign: v >> 63 == 1,
        };
    }
}

/// Run `program` for at most `step_limit` instructions.
///
/// Reaching the limit is not an error: the trace comes back with
/// `halted == false`. Memory faults and malformed control flow are errors.
pub fn execute(program: &Program, step_limit: u64) -> Result<Execution, ExecError> {
    if step_limit == 0 {
        return Err(ExecError::ZeroStepLimit);
    }
    validate(program)?;
    let ops: Vec<Op> = program.instructions.iter().map(|i| lower(program, i)).collect();
    let opcodes: Vec<Opcode> = program.instructions.iter().map(|i| i.opcode).collect();
    let mut m = Machine::new(program);
    let mut events: Vec<TraceEvent> = Vec::new();
    let mut pc = program.entry;
    let mut steps = 0u64;
    let mut halted = false;
    let mut last_tail = true;

    while steps < step_limit {
        if pc >= ops.len() {
            return Err(ExecError::FellOffEnd { addr: pc });
        }
        let addr = pc;
        let opcode = opcodes[pc];
        let is_tail = opcode.is_tail();
        let mut write = None;
        let mut next = pc + 1;
        match ops[pc] {
            Op::Alu(kind, d, s) => {
                let a = m.regs[d as usize];
                let b = m.src(s);
                let (v, carry, store) = match kind {
                    Alu::Add => {
                        let (v, c) = a.overflowing_add(b);
                        (v, c, true)
                    }
                    Alu::Sub => {
                        let (v, c) = a.overflowing_sub(b);
                        (v, c, true)
                    }
                    Alu::Shl => {
                        let n = (b & 63) as u32;
                        let c = n > 0 && (a >> (64 - n)) & 1 == 1;
                        (a << n, c, true)
                    }
                    Alu::Shr => {
                        let n = (b & 63) as u32;
                        let c = n > 0 && (a >> (n - 1)) & 1 == 1;
                        (a >> n, c, true)
                    }
                    Alu::And => (a & b, false, true),
                    Alu::Or => (a | b, false, true),
                    Alu::Xor => (a ^ b, false, true),
                    Alu::Test => (a & b, false, false),
                };
                if store {
                    m.regs[d as usize] = v;
                }
                m.set_zs(v, carry);
            }
            Op::Inc(d) => {
                let (v, c) = m.regs[d as usize].overflowing_add(1);
                m.regs[d as usize] = v;
                m.set_zs(v, c);
            }
            Op::Dec(d) => {
                let (v, c) = m.regs[d as usize].overflowing_sub(1);
                m.regs[d as usize] = v;
                m.set_zs(v, c);
            }
            Op::Mov(d, s) => m.regs[d as usize] = m.src(s),
            Op::MovW(d, s) => m.wide[d as usize] = m.wide[s as usize],
            Op::Pxor(d, s) => m.wide[d as usize] ^= m.wide[s as usize],
            Op::Lea(d, ea) => m.regs[d as usize] = m.ea(&ea) as u64,
            Op::Load(d, xm) => m.regs[d as usize] = m.read(addr, &xm)? as u64,
            Op::LoadW(d, xm) => m.wide[d as usize] = m.read(addr, &xm)?,
            Op::Store(xm, s) => {
                let v = m.src(s) as u128;
                write = Some(Box::new(m.write(addr, &xm, v)?));
            }
            Op::StoreW(xm, w) => {
                let v = m.wide[w as usize];
                write = Some(Box::new(m.write(addr, &xm, v)?));
            }
            Op::Jmp(t) => next = t,
            Op::Jcc(c, t) => {
                if c.holds(m.flags) {
                    next = t;
                }
            }
            Op::Call(t) => {
                if m.stack.len() >= MAX_CALL_DEPTH {
                    return Err(ExecError::CallDepth { addr });
                }
                m.stack.push(pc + 1);
                next = t;
            }
            Op::Ret => {
                next = m.stack.pop().ok_or(ExecError::ReturnWithoutCall { addr })?;
            }
            Op::Halt => halted = true,
        }
        events.push(TraceEvent {
            addr,
            opcode,
            is_head: last_tail,
            is_tail,
            write,
        });
        last_tail = is_tail;
        steps += 1;
        if halted {
            break;
        }
        pc = next;
    }

    let blocks = carve_blocks(&events)?;
    Ok(Execution {
        trace: Trace {
            events,
            blocks,
            halted,
            steps,
        },
        memory: Memory {
            names: m.names,
            objects: m.objects,
        },
        regs: m.regs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_program;

    fn run(src: &str, limit: u64) -> Execution {
        execute(&parse_program(src).unwrap(), limit).unwrap()
    }

    #[test]
    fn inc_halt() {
        let e = run("inc r0\nhalt\n", 100);
        assert_eq!(e.trace.events.len(), 2);
        assert_eq!(e.trace.blocks.len(), 1);
        assert!(e.trace.halted);
        assert_eq!(e.regs[0], 1);
    }

    #[test]
    fn step_limit_stops_infinite_loop() {
        let e = run("top:\ninc r0\ntest r0, 0\njz top\nhalt\n", 1000);
        assert_eq!(e.trace.steps, 1000);
        assert!(!e.trace.halted);
        assert_eq!(e.trace.blocks.len(), 2);
        assert_eq!(e.trace.blocks[0].loop_iters, 333);
        assert_eq!(e.trace.blocks[1].length, 1);
    }

    #[test]
    fn zero_limit_rejected() {
        let p = parse_program("halt\n").unwrap();
        assert_eq!(execute(&p, 0).unwrap_err(), ExecError::ZeroStepLimit);
    }

    #[test]
    fn arithmetic_and_flags() {
        let e = run(
            "mov r1, 5\nsub r1, 7\njc neg\nhalt\nneg:\nmov r2, 1\nshl r1, 60\nshr r1, 62\nhalt\n",
            100,
        );
        assert_eq!(e.regs[2], 1);
        assert_eq!(e.regs[1], (5u64.wrapping_sub(7) << 60) >> 62);
    }

    #[test]
    fn loads_stores_and_wide_lanes() {
        let e = run(
            ".data a 0102030405060708090a0b0c0d0e0f10\n.zero out 16\n\
             load r1, dword [a + 4]\nmov r2, 2\nload r3, word [a + r2*2 + 1]\n\
             load w0, oword [a]\nmov w1, w0\npxor w0, w1\nstore oword [out], w0\n\
             store byte [out + 15], r1\nlea r4, [r2*8 - 3]\nhalt\n",
            100,
        );
        assert_eq!(e.regs[1], 0x0807_0605);
        assert_eq!(e.regs[3], 0x0706);
        assert_eq!(e.regs[4], 13);
        let mut want = [0u8; 16];
        want[15] = 0x05;
        assert_eq!(e.memory.get("out").unwrap(), &want);
    }

    #[test]
    fn memory_faults() {
        let p = parse_program(".zero b 4\nstore dword [b + 1], 0\nhalt\n").unwrap();
        assert!(matches!(execute(&p, 10), Err(ExecError::OutOfBounds { offset: 1, .. })));
        let p = parse_program(".rodata b 00\nstore byte [b], 1\nhalt\n").unwrap();
        assert!(matches!(execute(&p, 10), Err(ExecError::ImmutableWrite { .. })));
        let p = parse_program(".zero b 4\nmov r1, -1\nload r2, byte [b + r1]\nhalt\n").unwrap();
        assert!(matches!(
            execute(&p, 10),
            Err(ExecError::OutOfBounds { offset: -1, .. })
        ));
        let p = parse_program("test r0, r0\njz r\nhalt\nr:\nret\n").unwrap();
        assert!(matches!(execute(&p, 10), Err(ExecError::ReturnWithoutCall { addr: 3 })));
    }

    #[test]
    fn writes_carry_object_entropy() {
        let e = run(".zero s 4\nstore byte [s], 1\nstore byte [s + 1], 1\nhalt\n", 10);
        let w0 = e.trace.events[0].write.as_ref().unwrap();
        assert_eq!(
            (w0.entropy_before, w0.old.as_slice(), w0.new.as_slice()),
            (0.0, &[0u8][..], &[1u8][..])
        );
        let expected = 0.25 * 4f64.log2() + 0.75 * (4.0f64 / 3.0).log2();
        assert!((w0.entropy_after - expected).abs() < 1e-15);
        let w1 = e.trace.events[1].write.as_ref().unwrap();
        assert_eq!(w1.entropy_after, 1.0);
        assert!((e.trace.blocks[0].entropy_score - 1.0).abs() < 1e-15);
    }

    #[test]
    fn call_and_return_split_blocks() {
        let e = run("call f\nhalt\nf:\ninc r0\nret\n", 100);
        assert!(e.trace.halted);
        let heads: Vec<usize> = e.trace.blocks.iter().map(|b| b.head_addr).collect();
        assert_eq!(heads, [0, 2, 1]);
    }

    #[test]
    fn dump_has_one_line_per_event() {
        let e = run(".zero s 2\nstore byte [s], 7\nhalt\n", 10);
        let mut buf = Vec::new();
        e.trace.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(v["opcode"], "store");
        assert_eq!(v["write_len"], 1);
        assert_eq!(v["dH"], 1.0);
    }
}
