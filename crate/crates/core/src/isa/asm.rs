//! Line-oriented assembly text.
//!
//! ```text
//! .label rc4                 ; optional ground-truth tag
//! .meta obfuscation split    ; free-form key/value annotation
//! .entry start               ; defaults to address 0
//! .data key 0102030405       ; mutable object, hex contents
//! .rodata sbox 637c777b      ; read-only object
//! .zero state 256            ; mutable, zero-filled
//! start:
//! mov r1, 0
//! load r2, byte [key + r1]
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use super::validate::{arity, operand_shape_error};
use super::{
    format_imm, is_identifier, parse_register, validate, AnyReg, DataObject, Instruction, MemRef, Opcode, Operand,
    Program, ValidationError, Width,
};
use crate::label::ClassLabel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("`{mnemonic}` takes {expected} operand(s), found {found}")]
    Arity {
        mnemonic: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid operand: {0}")]
    BadOperand(String),
    #[error("duplicate definition of `{0}`")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

enum Pending {
    Resolved(Operand),
    Label(String),
}

struct PendingIns {
    line: usize,
    opcode: Opcode,
    dst: Pending,
    src: Operand,
}

/// Parse assembly text into a [`Program`]. Structural validation is separate
/// (see [`validate`]).
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut prog = Program::default();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut pending: Vec<PendingIns> = Vec::new();
    let mut entry: Option<(usize, String)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |kind| ParseError { line, kind };
        let mut rest = raw.split(';').next().unwrap_or("").trim();
        if rest.is_empty() {
            continue;
        }
        if rest.starts_with('.') {
            parse_directive(rest, line, &mut prog, &mut entry)?;
            continue;
        }
        // Leading `name:` label definitions (possibly several on one line).
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if name.contains(char::is_whitespace) || name.contains('[') {
                break;
            }
            if !is_identifier(name) {
                return Err(err(ParseErrorKind::Syntax(format!("bad label name `{name}`"))));
            }
            if labels.insert(name.to_string(), pending.len()).is_some() {
                return Err(err(ParseErrorKind::Duplicate(name.to_string())));
            }
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (mnemonic, ops) = match rest.find(char::is_whitespace) {
            Some(i) => (&rest[..i], rest[i..].trim()),
            None => (rest, ""),
        };
        let mnemonic = mnemonic.to_ascii_lowercase();
        let opcode =
            Opcode::from_mnemonic(&mnemonic).ok_or_else(|| err(ParseErrorKind::UnknownMnemonic(mnemonic.clone())))?;
        let operands: Vec<&str> = if ops.is_empty() {
            Vec::new()
        } else {
            ops.split(',').map(str::trim).collect()
        };
        let expected = arity(opcode);
        if operands.len() != expected {
            return Err(err(ParseErrorKind::Arity {
                mnemonic,
                expected,
                found: operands.len(),
            }));
        }
        let ins = match opcode {
            Opcode::Jmp | Opcode::Jcc(_) | Opcode::Call => {
                let name = operands[0];
                if !is_identifier(name) {
                    return Err(err(ParseErrorKind::BadOperand(format!(
                        "branch target must be a label, found `{name}`"
                    ))));
                }
                PendingIns {
                    line,
                    opcode,
                    dst: Pending::Label(name.to_string()),
                    src: Operand::None,
                }
            }
            _ => {
                let mut it = operands.iter().map(|s| parse_operand(s).map_err(err));
                let dst = it.next().transpose()?.unwrap_or(Operand::None);
                let src = it.next().transpose()?.unwrap_or(Operand::None);
                if let Some(m) = operand_shape_error(opcode, &dst, &src) {
                    return Err(err(ParseErrorKind::BadOperand(m)));
                }
                PendingIns {
                    line,
                    opcode,
                    dst: Pending::Resolved(dst),
                    src,
                }
            }
        };
        pending.push(ins);
    }

    for (i, p) in pending.into_iter().enumerate() {
        let dst = match p.dst {
            Pending::Resolved(o) => o,
            Pending::Label(name) => match labels.get(&name) {
                Some(&t) => Operand::Target(t),
                None => {
                    return Err(ParseError {
                        line: p.line,
                        kind: ParseErrorKind::UnresolvedLabel(name),
                    })
                }
            },
        };
        prog.instructions.push(Instruction {
            opcode: p.opcode,
            dst,
            src: p.src,
            addr: i,
        });
    }
    if let Some((line, name)) = entry {
        prog.entry = *labels.get(&name).ok_or(ParseError {
            line,
            kind: ParseErrorKind::UnresolvedLabel(name),
        })?;
    }
    Ok(prog)
}

fn parse_directive(
    rest: &str,
    line: usize,
    prog: &mut Program,
    entry: &mut Option<(usize, String)>,
) -> Result<(), ParseError> {
    let err = |kind| ParseError { line, kind };
    let mut words = rest.split_whitespace();
    let dir = words.next().unwrap_or_default();
    let mut object = |obj: DataObject, name: Option<&str>| -> Result<(), ParseError> {
        let name = name.ok_or_else(|| err(ParseErrorKind::Syntax(format!("{dir} needs a name"))))?;
        if !is_identifier(name) {
            return Err(err(ParseErrorKind::Syntax(format!("bad object name `{name}`"))));
        }
        if prog.data_objects.insert(name.to_string(), obj).is_some() {
            return Err(err(ParseErrorKind::Duplicate(name.to_string())));
        }
        Ok(())
    };
    match dir {
        ".data" | ".rodata" => {
            let name = words.next();
            let hex: String = words.collect();
            let bytes =
                decode_hex(&hex).ok_or_else(|| err(ParseErrorKind::Syntax(format!("bad hex bytes `{hex}`"))))?;
            let obj = if dir == ".data" {
                DataObject::mutable(bytes)
            } else {
                DataObject::readonly(bytes)
            };
            object(obj, name)
        }
        ".zero" => {
            let name = words.next();
            let len: usize = words
                .next()
                .and_then(parse_number)
                .and_then(|v| usize::try_from(v).ok())
                .ok_or_else(|| err(ParseErrorKind::Syntax(".zero needs a length".into())))?;
            object(DataObject::zeroed(len), name)
        }
        ".entry" => {
            let name = words
                .next()
                .ok_or_else(|| err(ParseErrorKind::Syntax(".entry needs a label".into())))?;
            *entry = Some((line, name.to_string()));
            Ok(())
        }
        ".label" => {
            let tag = words.collect::<Vec<_>>().join(" ");
            let label: ClassLabel = tag
                .parse()
                .map_err(|e: crate::label::UnknownLabel| err(ParseErrorKind::Syntax(e.to_string())))?;
            prog.label = Some(label);
            Ok(())
        }
        ".meta" => {
            let key = words
                .next()
                .ok_or_else(|| err(ParseErrorKind::Syntax(".meta needs a key".into())))?;
            let value = words.collect::<Vec<_>>().join(" ");
            prog.meta.insert(key.to_string(), value);
            Ok(())
        }
        other => Err(err(ParseErrorKind::Syntax(format!("unknown directive `{other}`")))),
    }
}

fn parse_operand(s: &str) -> Result<Operand, ParseErrorKind> {
    if s.is_empty() {
        return Err(ParseErrorKind::Syntax("empty operand".into()));
    }
    if let Some(r) = parse_register(s) {
        return Ok(match r {
            AnyReg::Scalar(r) => Operand::Reg(r),
            AnyReg::Wide(w) => Operand::Wide(w),
        });
    }
    if s.starts_with('[') {
        return parse_memref(s).map(Operand::Addr);
    }
    if let Some(i) = s.find(char::is_whitespace) {
        let (kw, rest) = (&s[..i], s[i..].trim());
        if let Some(w) = Width::from_keyword(kw) {
            let m = parse_memref(rest)?;
            return Ok(Operand::Mem(w, m));
        }
    }
    parse_number(s)
        .map(Operand::Imm)
        .ok_or_else(|| ParseErrorKind::BadOperand(format!("cannot parse operand `{s}`")))
}

fn parse_memref(s: &str) -> Result<MemRef, ParseErrorKind> {
    let bad = || ParseErrorKind::BadOperand(format!("bad memory operand `{s}`"));
    let inner = s.strip_prefix('[').and_then(|t| t.strip_suffix(']')).ok_or_else(bad)?;
    let mut m = MemRef::address();
    // Split into signed terms.
    let mut terms: Vec<(bool, String)> = Vec::new();
    let mut cur = String::new();
    let mut neg = false;
    for ch in inner.chars() {
        match ch {
            '+' | '-' if cur.trim().is_empty() => {
                if ch == '-' {
                    neg = !neg;
                }
            }
            '+' | '-' => {
                terms.push((neg, cur.trim().to_string()));
                cur.clear();
                neg = ch == '-';
            }
            _ => cur.push(ch),
        }
    }
    let t = cur.trim().to_string();
    if t.is_empty() {
        return Err(bad());
    }
    terms.push((neg, t));

    for (neg, term) in terms {
        if let Some((r, scale)) = term.split_once('*') {
            let Some(AnyReg::Scalar(r)) = parse_register(r.trim()) else {
                return Err(bad());
            };
            let scale: u8 = scale.trim().parse().map_err(|_| bad())?;
            if neg || m.index.is_some() {
                return Err(bad());
            }
            m.index = Some((r, scale));
        } else if let Some(r) = parse_register(&term) {
            let AnyReg::Scalar(r) = r else {
                return Err(bad());
            };
            if neg {
                return Err(bad());
            }
            if m.base.is_none() {
                m.base = Some(r);
            } else if m.index.is_none() {
                m.index = Some((r, 1));
            } else {
                return Err(bad());
            }
        } else if let Some(v) = parse_number(&term) {
            let v = i64::try_from(v).map_err(|_| bad())?;
            m.disp = m.disp.wrapping_add(if neg { -v } else { v });
        } else if is_identifier(&term) {
            if neg || m.object.is_some() {
                return Err(bad());
            }
            m.object = Some(term);
        } else {
            return Err(bad());
        }
    }
    Ok(m)
}

fn parse_number(s: &str) -> Option<u64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()?
    } else {
        body.parse::<u64>().ok()?
    };
    Some(if neg { v.wrapping_neg() } else { v })
}

fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || s.is_empty() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

fn encode_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn format_operand(op: &Operand) -> String {
    match op {
        Operand::None => String::new(),
        Operand::Reg(r) => r.to_string(),
        Operand::Wide(w) => w.to_string(),
        Operand::Imm(v) => format_imm(*v),
        Operand::Mem(w, m) => format!("{} {}", w.keyword(), m),
        Operand::Addr(m) => m.to_string(),
        Operand::Target(t) => format!("L{t}"),
    }
}

/// Canonical text for a program. Equal programs give byte-identical text, and
/// `parse_program(&disassemble(p)?)` is structurally equal to `p`.
pub fn disassemble(p: &Program) -> Result<String, ValidationError> {
    validate(p)?;
    let mut out = String::new();
    if let Some(l) = p.label {
        let _ = writeln!(out, ".label {l}");
    }
    for (k, v) in &p.meta {
        let _ = writeln!(out, ".meta {k} {v}");
    }
    let mut labelled: BTreeSet<usize> = p.instructions.iter().filter_map(|i| i.target()).collect();
    if p.entry != 0 {
        labelled.insert(p.entry);
        let _ = writeln!(out, ".entry L{}", p.entry);
    }
    for (name, obj) in &p.data_objects {
        if obj.mutable && obj.bytes.iter().all(|&b| b == 0) {
            let _ = writeln!(out, ".zero {name} {}", obj.len());
        } else {
            let dir = if obj.mutable { ".data" } else { ".rodata" };
            let _ = writeln!(out, "{dir} {name} {}", encode_hex(&obj.bytes));
        }
    }
    for (i, ins) in p.instructions.iter().enumerate() {
        if labelled.contains(&i) {
            let _ = writeln!(out, "L{i}:");
        }
        out.push_str(ins.opcode.mnemonic());
        match (&ins.dst, &ins.src) {
            (Operand::None, _) => {}
            (d, Operand::None) => {
                let _ = write!(out, " {}", format_operand(d));
            }
            (d, s) => {
                let _ = write!(out, " {}, {}", format_operand(d), format_operand(s));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Reg;

    #[test]
    fn minimal_program() {
        let p = parse_program("xor r1, r1\nhalt").unwrap();
        assert_eq!(p.instructions.len(), 2);
        assert_eq!(p.entry, 0);
        assert_eq!(p.instructions[0].opcode, Opcode::Xor);
        assert_eq!(p.instructions[0].dst, Operand::Reg(Reg(1)));
    }

    #[test]
    fn unresolved_label() {
        let e = parse_program("jmp missing_label\nhalt\n").unwrap_err();
        assert_eq!(e.line, 1);
        assert_eq!(e.kind, ParseErrorKind::UnresolvedLabel("missing_label".into()));
    }

    #[test]
    fn unknown_mnemonic_and_arity() {
        let e = parse_program("inc r0\naesenc w1, w2\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(matches!(e.kind, ParseErrorKind::UnknownMnemonic(_)));
        let e = parse_program("inc r0, r1\n").unwrap_err();
        assert!(matches!(
            e.kind,
            ParseErrorKind::Arity {
                expected: 1,
                found: 2,
                ..
            }
        ));
        let e = parse_program("halt r0\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Arity { expected: 0, .. }));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let e = parse_program("inc r0\n\n.data k 0g\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_program("load r1, [k]\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::BadOperand(_)));
        let e = parse_program("mov r1, r2 r3\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::BadOperand(_)));
    }

    #[test]
    fn canonical_form() {
        let p = parse_program("  INC r0   ; bump\n halt\n").unwrap();
        assert_eq!(disassemble(&p).unwrap(), "inc r0\nhalt\n");
    }

    #[test]
    fn empty_program_fails_before_disassembly() {
        assert!(disassemble(&Program::default()).is_err());
    }

    #[test]
    fn full_syntax_round_trip() {
        let src = "\
.label rc4
.meta note hello world
.entry go
.data k 00ff10
.rodata t 0102
.zero s 8
helper:
ret
go:
mov r1, 0x1234
load r2, byte [k + r1 + r3*2 - 1]
store qword [s], r2
store dword [s + 4], 0xffffffffffffffff
lea r4, [r1 + 8]
load w0, oword [s - 0x8 + r9]
pxor w0, w1
call helper
top: dec r1
jnz top
halt
";
        let p = parse_program(src).unwrap();
        assert_eq!(p.entry, 1);
        assert_eq!(p.label, Some(ClassLabel::Rc4));
        assert_eq!(p.meta["note"], "hello world");
        assert!(!p.data_objects["t"].mutable);
        let text = disassemble(&p).unwrap();
        let q = parse_program(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(text, disassemble(&q).unwrap());
        if let Operand::Mem(Width::Byte, m) = &p.instructions[2].src {
            assert_eq!(m.disp, -1);
            assert_eq!(m.index, Some((Reg(3), 2)));
        } else {
            panic!("expected memory operand");
        }
    }
}
