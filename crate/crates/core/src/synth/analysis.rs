//! Static facts the rewriting passes rely on.

use std::collections::BTreeMap;

use crate::isa::validate::successors;
use crate::isa::{Instruction, Opcode, Operand, Program, NUM_REGS, NUM_WIDE};

/// Static successors, with every `ret` returning to every call site.
fn flow_successors(ins: &[Instruction]) -> Vec<Vec<usize>> {
    let n = ins.len();
    let returns: Vec<usize> = (0..n)
        .filter(|&i| ins[i].opcode == Opcode::Call && i + 1 < n)
        .map(|i| i + 1)
        .collect();
    (0..n)
        .map(|i| {
            if ins[i].opcode == Opcode::Ret {
                returns.clone()
            } else {
                successors(ins, i).into_iter().filter(|&s| s < n).collect()
            }
        })
        .collect()
}

/// Whether the flags may be read before being redefined, on entry to each
/// instruction. Conservative: any path counts.
pub(crate) fn flags_live_in(p: &Program) -> Vec<bool> {
    let ins = &p.instructions;
    let succ = flow_successors(ins);
    let mut live = vec![false; ins.len()];
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..ins.len()).rev() {
            let op = ins[i].opcode;
            let out = succ[i].iter().any(|&s| live[s]);
            let v = matches!(op, Opcode::Jcc(_)) || (!op.sets_flags() && out);
            if v != live[i] {
                live[i] = v;
                changed = true;
            }
        }
    }
    live
}

/// Scalar and wide registers mentioned anywhere in the program.
pub(crate) fn used_registers(p: &Program) -> ([bool; NUM_REGS], [bool; NUM_WIDE]) {
    let mut r = [false; NUM_REGS];
    let mut w = [false; NUM_WIDE];
    for ins in &p.instructions {
        for reg in ins.registers() {
            r[reg.0 as usize] = true;
        }
        for op in [&ins.dst, &ins.src] {
            if let Operand::Wide(x) = op {
                w[x.0 as usize] = true;
            }
        }
    }
    (r, w)
}

/// Static basic-block leaders: the entry, branch targets, and whatever
/// follows a tail or `halt`.
pub(crate) fn leaders(p: &Program) -> Vec<bool> {
    let n = p.instructions.len();
    let mut l = vec![false; n];
    if n == 0 {
        return l;
    }
    l[0] = true;
    if p.entry < n {
        l[p.entry] = true;
    }
    for (i, ins) in p.instructions.iter().enumerate() {
        if let Some(t) = ins.target() {
            if t < n {
                l[t] = true;
            }
        }
        if (ins.opcode.is_tail() || ins.opcode == Opcode::Halt) && i + 1 < n {
            l[i + 1] = true;
        }
    }
    l
}

/// Instructions inside some backward branch's range `[target, branch]`.
pub(crate) fn in_loop(p: &Program) -> Vec<bool> {
    let mut v = vec![false; p.instructions.len()];
    for (j, ins) in p.instructions.iter().enumerate() {
        if let Some(t) = ins.target() {
            if t <= j && ins.opcode != Opcode::Call {
                for x in &mut v[t..=j] {
                    *x = true;
                }
            }
        }
    }
    v
}

/// One element of a replacement sequence produced by [`splice`].
pub(crate) enum Piece {
    /// Branch targets refer to positions in the original program.
    Orig(Instruction),
    /// Branch targets are offsets from the start of this replacement.
    Local(Instruction),
}

/// Replace every instruction by a non-empty sequence, remapping branch
/// targets and the entry so that jumps to an old instruction land on the
/// start of its replacement.
pub(crate) fn splice(p: &Program, mut f: impl FnMut(usize, &Instruction) -> Vec<Piece>) -> Program {
    let reps: Vec<Vec<Piece>> = p
        .instructions
        .iter()
        .enumerate()
        .map(|(i, ins)| {
            let r = f(i, ins);
            assert!(!r.is_empty(), "splice replacement must be non-empty");
            r
        })
        .collect();
    let mut start = Vec::with_capacity(reps.len());
    let mut pos = 0;
    for r in &reps {
        start.push(pos);
        pos += r.len();
    }
    let mut out = Vec::with_capacity(pos);
    for (i, r) in reps.into_iter().enumerate() {
        for piece in r {
            let mut ins = match piece {
                Piece::Orig(mut ins) => {
                    if let Some(t) = ins.target_mut() {
                        *t = start[*t];
                    }
                    ins
                }
                Piece::Local(mut ins) => {
                    if let Some(t) = ins.target_mut() {
                        *t += start[i];
                    }
                    ins
                }
            };
            ins.addr = out.len();
            out.push(ins);
        }
    }
    let mut q = p.clone();
    q.entry = start.get(p.entry).copied().unwrap_or(0);
    q.instructions = out;
    q
}

/// `(loads, stores)` per data object.
pub(crate) fn object_access_counts(p: &Program) -> BTreeMap<String, (usize, usize)> {
    let mut m: BTreeMap<String, (usize, usize)> = p.data_objects.keys().map(|k| (k.clone(), (0, 0))).collect();
    for ins in &p.instructions {
        if let Some(o) = ins.mem_ref().and_then(|(_, mr)| mr.object.as_ref()) {
            let e = m.entry(o.clone()).or_default();
            if ins.opcode == Opcode::Store {
                e.1 += 1;
            } else {
                e.0 += 1;
            }
        }
    }
    m
}

/// A fresh object name `{prefix}{k}` not already taken.
pub(crate) fn fresh_name(p: &Program, prefix: &str) -> String {
    (0..)
        .map(|k| format!("{prefix}{k}"))
        .find(|n| !p.data_objects.contains_key(n))
        .expect("unbounded search")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_program;

    #[test]
    fn flags_liveness_follows_branches_and_returns() {
        let p = parse_program("test r0, 1\ncall f\njz done\ninc r1\ndone:\nhalt\nf:\nmov r2, 3\nret\n").unwrap();
        let live = flags_live_in(&p);
        // `jz` after the call reads flags produced by `test`, through the subroutine.
        assert_eq!(live, vec![false, true, true, false, false, true, true]);
    }

    #[test]
    fn leaders_and_loops() {
        let p = parse_program("mov r0, 3\ntop:\ndec r0\njnz top\nhalt\n").unwrap();
        assert_eq!(leaders(&p), vec![true, true, false, true]);
        assert_eq!(in_loop(&p), vec![false, true, true, false]);
    }

    #[test]
    fn splice_retargets_old_and_local_branches() {
        let p = parse_program("mov r0, 2\ntop:\ndec r0\njnz top\nhalt\n").unwrap();
        let q = splice(&p, |i, ins| {
            if i == 1 {
                vec![
                    Piece::Local(Instruction::new(Opcode::Jmp, Operand::Target(1), Operand::None)),
                    Piece::Orig(ins.clone()),
                ]
            } else {
                vec![Piece::Orig(ins.clone())]
            }
        });
        assert_eq!(q.instructions[1].target(), Some(2));
        assert_eq!(q.instructions[3].target(), Some(1));
        assert_eq!(crate::isa::validate(&q), Ok(()));
    }
}
