//! Compiler-like variation: register renaming, block scheduling, unrolling.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::isa::{Cond, Instruction, Opcode, Operand, Program, Reg, NUM_REGS};
use crate::rng;

use super::analysis::{flags_live_in, leaders, splice, Piece};
use super::{Codegen, SynthError};

/// Unroll, then schedule, then rename.
pub fn codegen_variants(p: &Program, cg: &Codegen) -> Result<Program, SynthError> {
    if !matches!(cg.unroll, 1 | 2 | 4) {
        return Err(SynthError::BadUnroll(cg.unroll));
    }
    let mut q = unroll_loops(p, cg.unroll);
    if let Some(s) = cg.schedule_seed {
        q = schedule_blocks(&q, s);
    }
    if let Some(s) = cg.rename_seed {
        let mut perm: Vec<u8> = (0..NUM_REGS as u8).collect();
        perm.shuffle(&mut rng::rng(s));
        q = rename_registers(&q, &perm);
    }
    Ok(q)
}

/// Apply the register bijection `r_i -> r_perm[i]`.
pub fn rename_registers(p: &Program, perm: &[u8]) -> Program {
    assert_eq!(perm.len(), NUM_REGS, "permutation must cover every register");
    let mut q = p.clone();
    for ins in &mut q.instructions {
        for r in ins.registers_mut() {
            *r = Reg(perm[r.0 as usize]);
        }
    }
    q
}

/// Replicate the body of every single-block loop `factor` times. Copies are
/// separated by the inverted branch, which exits to the original fall-through.
pub fn unroll_loops(p: &Program, factor: u8) -> Program {
    if factor <= 1 {
        return p.clone();
    }
    let lead = leaders(p);
    let n = p.len();
    let ins = &p.instructions;
    let body_of = |j: usize| -> Option<(usize, Cond)> {
        let Opcode::Jcc(c) = ins[j].opcode else { return None };
        let t = ins[j].target()?;
        if t >= j || j + 1 >= n {
            return None;
        }
        let inner_ok = ins[t..j]
            .iter()
            .all(|x| !x.opcode.is_tail() && x.opcode != Opcode::Halt)
            && !lead[t + 1..=j].iter().any(|&l| l);
        inner_ok.then_some((t, c))
    };
    splice(p, |j, orig| {
        let Some((t, c)) = body_of(j) else {
            return vec![Piece::Orig(orig.clone())];
        };
        let mut v = Vec::new();
        for _ in 1..factor {
            v.push(Piece::Orig(Instruction::new(
                Opcode::Jcc(c.invert()),
                Operand::Target(j + 1),
                Operand::None,
            )));
            v.extend(ins[t..j].iter().cloned().map(Piece::Orig));
        }
        v.push(Piece::Orig(orig.clone()));
        v
    })
}

/// Resources an instruction reads and writes: scalar registers, then wide
/// registers, then data objects by index.
fn effects(p: &Program, ins: &Instruction) -> (Vec<usize>, Vec<usize>) {
    let reg = |o: &Operand| match o {
        Operand::Reg(r) => Some(r.0 as usize),
        Operand::Wide(w) => Some(NUM_REGS + w.0 as usize),
        _ => None,
    };
    let obj = |o: &Operand| match o {
        Operand::Mem(_, m) => m
            .object
            .as_deref()
            .and_then(|n| p.object_index(n))
            .map(|k| NUM_REGS + 4 + k),
        _ => None,
    };
    let addr_regs = |o: &Operand| -> Vec<usize> {
        match o {
            Operand::Mem(_, m) | Operand::Addr(m) => m.registers().map(|r| r.0 as usize).collect(),
            _ => Vec::new(),
        }
    };
    let mut reads = Vec::new();
    let mut writes = Vec::new();
    match ins.opcode {
        Opcode::Mov | Opcode::Lea => {
            reads.extend(reg(&ins.src));
            reads.extend(addr_regs(&ins.src));
            writes.extend(reg(&ins.dst));
        }
        Opcode::Load => {
            reads.extend(addr_regs(&ins.src));
            reads.extend(obj(&ins.src));
            writes.extend(reg(&ins.dst));
        }
        Opcode::Store => {
            reads.extend(addr_regs(&ins.dst));
            reads.extend(reg(&ins.src));
            writes.extend(obj(&ins.dst));
        }
        Opcode::Test => {
            reads.extend(reg(&ins.dst));
            reads.extend(reg(&ins.src));
        }
        _ => {
            reads.extend(reg(&ins.dst));
            reads.extend(reg(&ins.src));
            writes.extend(reg(&ins.dst));
        }
    }
    (reads, writes)
}

/// Randomly reorder each static block, keeping every register, memory and
/// flag dependency. Tails and `halt` stay last.
pub fn schedule_blocks(p: &Program, seed: u64) -> Program {
    let mut r = rng::rng(seed);
    let n = p.len();
    let lead = leaders(p);
    let live = flags_live_in(p);
    let mut q = p.clone();
    let mut s = 0;
    while s < n {
        let mut e = s + 1;
        while e < n && !lead[e] {
            e += 1;
        }
        let last = &p.instructions[e - 1];
        let fixed_end = last.opcode.is_tail() || last.opcode == Opcode::Halt;
        let m = if fixed_end { e - 1 } else { e };
        // Flags leaving the movable part must come from the same instruction.
        let flags_out = if fixed_end { live[e - 1] } else { e < n && live[e] };
        if m - s > 1 {
            let order = random_topo_order(p, s, m, flags_out, &mut r);
            for (k, &src) in order.iter().enumerate() {
                q.instructions[s + k] = p.instructions[src].clone();
            }
        }
        s = e;
    }
    q.renumber();
    q
}

fn random_topo_order(p: &Program, s: usize, m: usize, flags_out: bool, r: &mut rng::Rng) -> Vec<usize> {
    let len = m - s;
    let eff: Vec<_> = (s..m).map(|i| effects(p, &p.instructions[i])).collect();
    let last_setter = (s..m).rev().find(|&i| p.instructions[i].opcode.sets_flags());
    let mut preds = vec![0usize; len];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); len];
    for j in 0..len {
        for i in 0..j {
            let (ri, wi) = &eff[i];
            let (rj, wj) = &eff[j];
            let clash = wi.iter().any(|x| rj.contains(x) || wj.contains(x)) || ri.iter().any(|x| wj.contains(x));
            let flag_order = flags_out && Some(s + j) == last_setter && p.instructions[s + i].opcode.sets_flags();
            if clash || flag_order {
                succs[i].push(j);
                preds[j] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..len).filter(|&j| preds[j] == 0).collect();
    let mut order = Vec::with_capacity(len);
    while !ready.is_empty() {
        let k = ready.swap_remove(r.gen_range(0..ready.len()));
        order.push(s + k);
        for &j in &succs[k] {
            preds[j] -= 1;
            if preds[j] == 0 {
                ready.push(j);
            }
        }
    }
    debug_assert_eq!(order.len(), len);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, validate};
    use crate::tracer::execute;

    const SRC: &str = ".rodata k 0102030405060708\n.zero out 8\nmov r1, 0\nmov r5, 9\ntop:\n\
        load r2, byte [k + r1]\nadd r2, r5\nxor r2, 3\nstore byte [out + r1], r2\nmov r6, r2\n\
        inc r1\ntest r1, 8\njz top\nhalt\n";

    fn out(p: &Program) -> Vec<(String, Vec<u8>)> {
        execute(p, 100_000).unwrap().memory.outputs()
    }

    #[test]
    fn identity_codegen_is_identity() {
        let p = parse_program(SRC).unwrap();
        assert_eq!(codegen_variants(&p, &Codegen::IDENTITY).unwrap(), p);
        assert_eq!(
            codegen_variants(
                &p,
                &Codegen {
                    unroll: 3,
                    ..Codegen::IDENTITY
                }
            ),
            Err(SynthError::BadUnroll(3))
        );
    }

    #[test]
    fn rename_preserves_opcodes_and_output() {
        let p = parse_program(SRC).unwrap();
        let mut perm: Vec<u8> = (0..16).collect();
        perm.reverse();
        let q = rename_registers(&p, &perm);
        assert_eq!(q.opcode_histogram(), p.opcode_histogram());
        assert_eq!(out(&q), out(&p));
    }

    #[test]
    fn unroll_duplicates_single_block_loop() {
        let p = parse_program(SRC).unwrap();
        for f in [2u8, 4] {
            let q = unroll_loops(&p, f);
            assert_eq!(validate(&q), Ok(()));
            // Body of 7 instructions plus one exit branch per extra copy.
            assert_eq!(q.len(), p.len() + (f as usize - 1) * 8);
            assert_eq!(out(&q), out(&p));
        }
    }

    #[test]
    fn schedules_differ_but_agree() {
        let p = parse_program(SRC).unwrap();
        let mut distinct = std::collections::BTreeSet::new();
        for seed in 0..30 {
            let q = schedule_blocks(&p, seed);
            assert_eq!(validate(&q), Ok(()));
            assert_eq!(out(&q), out(&p));
            assert_eq!(q.instructions.last(), p.instructions.last());
            distinct.insert(format!("{:?}", q.instructions));
        }
        assert!(distinct.len() > 1);
    }
}
