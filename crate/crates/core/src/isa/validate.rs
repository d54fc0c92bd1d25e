use std::collections::VecDeque;
use std::fmt;

use super::{is_identifier, Instruction, Opcode, Operand, Program, Width};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    EmptyProgram,
    EntryOutOfRange,
    TargetOutOfRange(usize),
    AddressMismatch(usize),
    BadOperands(String),
    UnknownObject(String),
    ObjectOnLea,
    MissingObject,
    BadScale(u8),
    EmptyObject,
    BadObjectName,
    NoReachableHalt,
    FallsOffEnd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Instruction address, when the problem is tied to one.
    pub addr: Option<usize>,
    /// Data object name, when the problem is tied to one.
    pub object: Option<String>,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(a) = self.addr {
            write!(f, "@{a}: ")?;
        }
        if let Some(o) = &self.object {
            write!(f, "object `{o}`: ")?;
        }
        match &self.kind {
            DiagnosticKind::EmptyProgram => f.write_str("program has no instructions"),
            DiagnosticKind::EntryOutOfRange => f.write_str("entry out of range"),
            DiagnosticKind::TargetOutOfRange(t) => write!(f, "target out of range ({t})"),
            DiagnosticKind::AddressMismatch(a) => write!(f, "address field {a} does not match position"),
            DiagnosticKind::BadOperands(m) => write!(f, "bad operands: {m}"),
            DiagnosticKind::UnknownObject(n) => write!(f, "unknown data object `{n}`"),
            DiagnosticKind::ObjectOnLea => f.write_str("lea operand must not name an object"),
            DiagnosticKind::MissingObject => f.write_str("memory operand must name an object"),
            DiagnosticKind::BadScale(s) => write!(f, "index scale {s} not in {{1,2,4,8}}"),
            DiagnosticKind::EmptyObject => f.write_str("data object has zero length"),
            DiagnosticKind::BadObjectName => f.write_str("invalid object name"),
            DiagnosticKind::NoReachableHalt => f.write_str("no reachable halt"),
            DiagnosticKind::FallsOffEnd => f.write_str("execution can fall off the end of the program"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid program: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationError(pub Vec<Diagnostic>);

/// Check every program invariant. Returns all violations, not just the first.
pub fn validate(p: &Program) -> Result<(), ValidationError> {
    let mut out = Vec::new();
    let diag = |addr: Option<usize>, kind: DiagnosticKind| Diagnostic {
        addr,
        object: None,
        kind,
    };

    for (name, obj) in &p.data_objects {
        if !is_identifier(name) {
            out.push(Diagnostic {
                addr: None,
                object: Some(name.clone()),
                kind: DiagnosticKind::BadObjectName,
            });
        }
        if obj.is_empty() {
            out.push(Diagnostic {
                addr: None,
                object: Some(name.clone()),
                kind: DiagnosticKind::EmptyObject,
            });
        }
    }

    if p.instructions.is_empty() {
        out.push(diag(None, DiagnosticKind::EmptyProgram));
        return Err(ValidationError(out));
    }
    let n = p.instructions.len();
    if p.entry >= n {
        out.push(diag(None, DiagnosticKind::EntryOutOfRange));
    }

    for (i, ins) in p.instructions.iter().enumerate() {
        if ins.addr != i {
            out.push(diag(Some(i), DiagnosticKind::AddressMismatch(ins.addr)));
        }
        if let Some(msg) = operand_shape_error(ins.opcode, &ins.dst, &ins.src) {
            out.push(diag(Some(i), DiagnosticKind::BadOperands(msg)));
        }
        if let Some(t) = ins.target() {
            if t >= n {
                out.push(diag(Some(i), DiagnosticKind::TargetOutOfRange(t)));
            }
        }
        for op in [&ins.dst, &ins.src] {
            match op {
                Operand::Mem(_, m) => match &m.object {
                    None => out.push(diag(Some(i), DiagnosticKind::MissingObject)),
                    Some(o) if !p.data_objects.contains_key(o) => {
                        out.push(diag(Some(i), DiagnosticKind::UnknownObject(o.clone())))
                    }
                    _ => {}
                },
                Operand::Addr(m) if m.object.is_some() => out.push(diag(Some(i), DiagnosticKind::ObjectOnLea)),
                _ => {}
            }
            if let Operand::Mem(_, m) | Operand::Addr(m) = op {
                if let Some((_, s)) = m.index {
                    if !matches!(s, 1 | 2 | 4 | 8) {
                        out.push(diag(Some(i), DiagnosticKind::BadScale(s)));
                    }
                }
            }
        }
    }

    if p.entry < n
        && out
            .iter()
            .all(|d| !matches!(d.kind, DiagnosticKind::TargetOutOfRange(_)))
    {
        let (halt, falls_off) = reachability(&p.instructions, p.entry);
        if !halt {
            out.push(diag(None, DiagnosticKind::NoReachableHalt));
        }
        if falls_off {
            out.push(diag(Some(n - 1), DiagnosticKind::FallsOffEnd));
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(ValidationError(out))
    }
}

/// Static successors of instruction `i` (a `ret` has none; calls fall through).
pub(crate) fn successors(ins: &[Instruction], i: usize) -> Vec<usize> {
    let op = ins[i].opcode;
    let mut v = Vec::with_capacity(2);
    match op {
        Opcode::Halt | Opcode::Ret => {}
        Opcode::Jmp => v.extend(ins[i].target()),
        Opcode::Jcc(_) | Opcode::Call => {
            v.extend(ins[i].target());
            v.push(i + 1);
        }
        _ => v.push(i + 1),
    }
    v
}

fn reachability(ins: &[Instruction], entry: usize) -> (bool, bool) {
    let n = ins.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([entry]);
    seen[entry] = true;
    let mut halt = false;
    let mut falls_off = false;
    while let Some(i) = queue.pop_front() {
        if ins[i].opcode == Opcode::Halt {
            halt = true;
        }
        for s in successors(ins, i) {
            if s >= n {
                falls_off = true;
            } else if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
    }
    (halt, falls_off)
}

/// Operand kinds each opcode accepts; `None` when the pair is well formed.
pub(crate) fn operand_shape_error(op: Opcode, dst: &Operand, src: &Operand) -> Option<String> {
    use Operand as O;
    let ok = match op {
        Opcode::Add
        | Opcode::Sub
        | Opcode::Shr
        | Opcode::Shl
        | Opcode::And
        | Opcode::Or
        | Opcode::Xor
        | Opcode::Test => matches!((dst, src), (O::Reg(_), O::Reg(_) | O::Imm(_))),
        Opcode::Mov => matches!(
            (dst, src),
            (O::Reg(_), O::Reg(_) | O::Imm(_)) | (O::Wide(_), O::Wide(_))
        ),
        Opcode::Pxor => matches!((dst, src), (O::Wide(_), O::Wide(_))),
        Opcode::Inc | Opcode::Dec => matches!((dst, src), (O::Reg(_), O::None)),
        Opcode::Lea => matches!((dst, src), (O::Reg(_), O::Addr(_))),
        Opcode::Load => match (dst, src) {
            (O::Reg(_), O::Mem(w, _)) => *w != Width::Oword,
            (O::Wide(_), O::Mem(w, _)) => *w == Width::Oword,
            _ => false,
        },
        Opcode::Store => match (dst, src) {
            (O::Mem(w, _), O::Reg(_) | O::Imm(_)) => *w != Width::Oword,
            (O::Mem(w, _), O::Wide(_)) => *w == Width::Oword,
            _ => false,
        },
        Opcode::Jmp | Opcode::Jcc(_) | Opcode::Call => matches!((dst, src), (O::Target(_), O::None)),
        Opcode::Ret | Opcode::Halt => matches!((dst, src), (O::None, O::None)),
    };
    (!ok).then(|| format!("`{}` does not accept ({}, {})", op, kind(dst), kind(src)))
}

fn kind(o: &Operand) -> &'static str {
    match o {
        Operand::None => "none",
        Operand::Reg(_) => "register",
        Operand::Wide(_) => "wide register",
        Operand::Imm(_) => "immediate",
        Operand::Mem(Width::Oword, _) => "oword memory",
        Operand::Mem(..) => "memory",
        Operand::Addr(_) => "address",
        Operand::Target(_) => "target",
    }
}

/// Number of operands the opcode takes.
pub(crate) fn arity(op: Opcode) -> usize {
    match op {
        Opcode::Ret | Opcode::Halt => 0,
        Opcode::Inc | Opcode::Dec | Opcode::Jmp | Opcode::Jcc(_) | Opcode::Call => 1,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, DataObject, Reg};

    fn prog(src: &str) -> Program {
        parse_program(src).unwrap()
    }

    #[test]
    fn call_past_end_is_diagnosed() {
        let mut p = prog("call f\nhalt\nf:\nret\n");
        *p.instructions[0].target_mut().unwrap() = 9;
        let err = validate(&p).unwrap_err();
        assert!(err.0.iter().any(|d| d.kind == DiagnosticKind::TargetOutOfRange(9)));
        assert!(err.to_string().contains("target out of range"));
    }

    #[test]
    fn two_reachable_halts_are_fine() {
        let p = prog("test r0, r0\njz a\nhalt\na:\nhalt\n");
        assert_eq!(validate(&p), Ok(()));
    }

    #[test]
    fn reports_every_violation() {
        let mut p = prog("inc r0\nhalt\n");
        p.instructions[0].src = Operand::Imm(1);
        p.instructions[1].addr = 7;
        p.data_objects.insert("e".into(), DataObject::zeroed(0));
        let err = validate(&p).unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }

    #[test]
    fn unreachable_halt_and_fall_through() {
        let p = prog("inc r0\njmp e\nhalt\ne:\ninc r1\n");
        let kinds: Vec<_> = validate(&p).unwrap_err().0.into_iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagnosticKind::NoReachableHalt));
        assert!(kinds.contains(&DiagnosticKind::FallsOffEnd));
    }

    #[test]
    fn empty_program_rejected() {
        let p = Program::default();
        assert_eq!(validate(&p).unwrap_err().0[0].kind, DiagnosticKind::EmptyProgram);
    }

    #[test]
    fn memory_operand_checks() {
        let mut p = prog(".zero buf 4\nload r1, byte [buf + r2]\nlea r3, [r1*4 + 2]\nhalt\n");
        assert_eq!(validate(&p), Ok(()));
        if let Operand::Addr(m) = &mut p.instructions[1].src {
            m.object = Some("buf".into());
            m.index = Some((Reg(1), 3));
        }
        if let Operand::Mem(_, m) = &mut p.instructions[0].src {
            m.object = Some("nope".into());
        }
        let kinds: Vec<_> = validate(&p).unwrap_err().0.into_iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagnosticKind::ObjectOnLea));
        assert!(kinds.contains(&DiagnosticKind::BadScale(3)));
        assert!(kinds.contains(&DiagnosticKind::UnknownObject("nope".into())));
    }

    #[test]
    fn validate_is_pure() {
        let mut p = prog("inc r0\nhalt\n");
        p.entry = 5;
        assert_eq!(validate(&p), validate(&p));
    }
}
