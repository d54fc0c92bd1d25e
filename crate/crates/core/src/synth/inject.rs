//! Insertion of dead or self-cancelling arithmetic and bounded junk loops.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::isa::{Cond, DataObject, Instruction, MemRef, Opcode, Operand, Program, Reg, Width};
use crate::rng::{self, Rng};

use super::analysis::{flags_live_in, fresh_name, in_loop, leaders, splice, used_registers, Piece};

/// How much junk to insert.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectConfig {
    /// Mean number of snippets (geometric, at least one). Zero disables injection.
    pub mean: f64,
    /// Hard cap on snippets per program.
    pub max: usize,
    /// Probability that a snippet at an eligible site is a junk loop.
    pub loop_prob: f64,
    /// Upper bound on junk-loop trip counts (at most 64).
    pub max_loop_iters: u64,
}

impl Default for InjectConfig {
    fn default() -> Self {
        InjectConfig {
            mean: 3.0,
            max: 8,
            loop_prob: 0.35,
            max_loop_iters: 64,
        }
    }
}

impl InjectConfig {
    pub fn disabled() -> Self {
        InjectConfig {
            mean: 0.0,
            max: 0,
            ..Default::default()
        }
    }
}

/// [`inject_with`] under the default budget.
pub fn inject_arithmetic(p: &Program, seed: u64) -> Program {
    inject_with(p, seed, &InjectConfig::default())
}

fn ins(op: Opcode, dst: Operand, src: Operand) -> Instruction {
    Instruction::new(op, dst, src)
}

fn alu(op: Opcode, r: Reg, src: impl Into<Operand>) -> Instruction {
    ins(op, Operand::Reg(r), src.into())
}

/// Insert snippets at randomly chosen static block heads where the flags
/// are dead. Junk loops only go to sites outside every loop and before the
/// first `halt`, so each runs at most once per execution.
pub fn inject_with(p: &Program, seed: u64, cfg: &InjectConfig) -> Program {
    if cfg.max == 0 || cfg.mean <= 0.0 || p.instructions.is_empty() {
        return p.clone();
    }
    let mut r = rng::rng(seed);
    let mut count = 1;
    let cont = 1.0 - 1.0 / cfg.mean.max(1.0);
    while count < cfg.max && r.gen_bool(cont) {
        count += 1;
    }

    let live = flags_live_in(p);
    let lead = leaders(p);
    let looped = in_loop(p);
    let first_halt = p
        .instructions
        .iter()
        .position(|i| i.opcode == Opcode::Halt)
        .unwrap_or(0);
    let sites: Vec<usize> = (0..p.len()).filter(|&i| lead[i] && !live[i]).collect();
    if sites.is_empty() {
        return p.clone();
    }
    let mut chosen: Vec<usize> = index::sample(&mut r, sites.len(), count.min(sites.len()))
        .into_iter()
        .map(|k| sites[k])
        .collect();
    chosen.sort_unstable();

    let (used, _) = used_registers(p);
    let free: Vec<Reg> = (0..16u8).filter(|&i| !used[i as usize]).map(Reg).collect();
    let busy: Vec<Reg> = (0..16u8).filter(|&i| used[i as usize]).map(Reg).collect();

    let mut q = p.clone();
    let mut snippets: Vec<Vec<Piece>> = (0..p.len()).map(|_| Vec::new()).collect();
    for &site in &chosen {
        let cold = !looped[site] && site <= first_halt;
        let s = if cold && !free.is_empty() && r.gen_bool(cfg.loop_prob) {
            junk_loop(&mut q, &mut r, &free, cfg.max_loop_iters.clamp(1, 64))
        } else if !free.is_empty() && r.gen_bool(0.5) {
            dead_arithmetic(&mut r, &free, &busy)
        } else {
            neutral_pair(&mut r, if busy.is_empty() { &free } else { &busy })
        };
        snippets[site] = s;
    }

    splice(&q, |i, orig| {
        let mut v = std::mem::take(&mut snippets[i]);
        v.push(Piece::Orig(orig.clone()));
        v
    })
}

fn small_imm(r: &mut Rng) -> u64 {
    *[r.gen_range(1..16u64), r.gen_range(16..0x1_0000), r.gen::<u32>() as u64]
        .choose(r)
        .expect("non-empty")
}

/// Compute into a register nobody reads.
fn dead_arithmetic(r: &mut Rng, free: &[Reg], busy: &[Reg]) -> Vec<Piece> {
    let s = *free.choose(r).expect("free register");
    let src = busy.choose(r).copied();
    let mut v = vec![match src {
        Some(b) if r.gen_bool(0.5) => alu(Opcode::Mov, s, b),
        _ => alu(Opcode::Mov, s, small_imm(r)),
    }];
    for _ in 0..r.gen_range(2..=4) {
        let other = busy.choose(r).copied().unwrap_or(s);
        v.push(match r.gen_range(0..9) {
            0 => alu(Opcode::Add, s, small_imm(r)),
            1 => alu(Opcode::Sub, s, other),
            2 => alu(Opcode::Xor, s, other),
            3 => alu(Opcode::Shl, s, r.gen_range(1..8u64)),
            4 => alu(Opcode::Shr, s, r.gen_range(1..8u64)),
            5 => alu(Opcode::And, s, small_imm(r)),
            6 => alu(Opcode::Or, s, other),
            7 => ins(
                Opcode::Lea,
                Operand::Reg(s),
                Operand::Addr(MemRef::address().base(s).index(other, 2).disp(r.gen_range(1..64))),
            ),
            _ => ins(Opcode::Inc, Operand::Reg(s), Operand::None),
        });
    }
    v.into_iter().map(Piece::Orig).collect()
}

/// Apply an operation and its inverse to a live register.
fn neutral_pair(r: &mut Rng, regs: &[Reg]) -> Vec<Piece> {
    let x = *regs.choose(r).expect("some register");
    let k = small_imm(r);
    let pair = match r.gen_range(0..4) {
        0 => [alu(Opcode::Xor, x, k), alu(Opcode::Xor, x, k)],
        1 => [alu(Opcode::Add, x, k), alu(Opcode::Sub, x, k)],
        2 => {
            let lea = |d: i64| {
                ins(
                    Opcode::Lea,
                    Operand::Reg(x),
                    Operand::Addr(MemRef::address().base(x).disp(d)),
                )
            };
            [lea(k as i64), lea(-(k as i64))]
        }
        _ => [
            ins(Opcode::Inc, Operand::Reg(x), Operand::None),
            ins(Opcode::Dec, Operand::Reg(x), Operand::None),
        ],
    };
    pair.into_iter().map(Piece::Orig).collect()
}

/// A counted loop of at most `max_iters` trips over free registers, optionally
/// storing into a fresh scratch object.
fn junk_loop(p: &mut Program, r: &mut Rng, free: &[Reg], max_iters: u64) -> Vec<Piece> {
    let mut regs = free.to_vec();
    regs.shuffle(r);
    let c = regs[0];
    let n = r.gen_range(1..=max_iters);
    let mut v = vec![alu(Opcode::Mov, c, n)];
    let body_start = if let Some(&x) = regs.get(1) {
        v.push(alu(Opcode::Mov, x, small_imm(r)));
        let top = v.len();
        v.push(alu(Opcode::Xor, x, c));
        v.push(alu(Opcode::Shl, x, r.gen_range(1..4u64)));
        v.push(alu(Opcode::Add, x, small_imm(r)));
        if r.gen_bool(0.7) {
            let name = fresh_name(p, "junk");
            p.data_objects
                .insert(name.clone(), DataObject::zeroed(max_iters as usize + 1));
            v.push(ins(
                Opcode::Store,
                Operand::Mem(Width::Byte, MemRef::object(name).base(c)),
                Operand::Reg(x),
            ));
        }
        top
    } else {
        v.len()
    };
    v.push(ins(Opcode::Dec, Operand::Reg(c), Operand::None));
    v.push(ins(Opcode::Jcc(Cond::Nz), Operand::Target(body_start), Operand::None));
    v.into_iter()
        .map(|i| {
            if i.target().is_some() {
                Piece::Local(i)
            } else {
                Piece::Orig(i)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, validate};
    use crate::tracer::execute;

    const SRC: &str = ".rodata k 0102030405060708\n.zero out 8\nmov r1, 0\ntop:\n\
        load r2, byte [k + r1]\nadd r2, r1\nstore byte [out + r1], r2\ninc r1\ntest r1, 8\njz top\nhalt\n";

    #[test]
    fn zero_budget_is_identity() {
        let p = parse_program(SRC).unwrap();
        assert_eq!(inject_with(&p, 7, &InjectConfig::disabled()), p);
    }

    #[test]
    fn seeds_vary_size_not_output() {
        let p = parse_program(SRC).unwrap();
        let want = execute(&p, 10_000).unwrap().memory.outputs();
        let mut sizes = std::collections::BTreeSet::new();
        for seed in 0..20 {
            let q = inject_arithmetic(&p, seed);
            assert_eq!(validate(&q), Ok(()));
            assert!(q.len() > p.len());
            sizes.insert(q.len());
            assert_eq!(execute(&q, 100_000).unwrap().memory.outputs(), want);
        }
        assert!(sizes.len() > 1);
    }

    #[test]
    fn junk_loops_stay_bounded() {
        let p = parse_program(SRC).unwrap();
        let base = execute(&p, 10_000).unwrap().trace.steps;
        let cfg = InjectConfig {
            mean: 6.0,
            max: 8,
            loop_prob: 1.0,
            max_loop_iters: 64,
        };
        for seed in 0..1000 {
            let q = inject_with(&p, seed, &cfg);
            // Each snippet adds at most 2 setup steps plus 64 trips of 6 steps,
            // and straight-line snippets inside the 8-trip loop add at most 5 per trip.
            let bound = base + 8 * (2 + 64 * 6) + 8 * 8 * 5;
            let e = execute(&q, bound).unwrap();
            assert!(e.trace.halted, "seed {seed}");
        }
    }
}
