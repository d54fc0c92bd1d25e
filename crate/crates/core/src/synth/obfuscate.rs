//! Data-layout obfuscations: merging objects and splitting them into shares.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::isa::{DataObject, Instruction, Opcode, Operand, Program, Reg, WReg, Width};
use crate::rng;

use super::analysis::{flags_live_in, fresh_name, object_access_counts, splice, used_registers, Piece};
use super::Obfuscation;

fn is_output(name: &str) -> bool {
    name.starts_with("out")
}

/// Apply `mode`. When no site qualifies the program is returned unchanged
/// apart from a `obfuscation_fallback` note in its metadata.
pub fn apply_obfuscation(p: &Program, mode: Obfuscation, seed: u64) -> Program {
    let result = match mode {
        Obfuscation::Normal => return p.clone(),
        Obfuscation::Aggregation => random_aggregation(p, seed),
        Obfuscation::Split => random_split(p, seed),
    };
    match result {
        Some(mut q) => {
            q.meta.insert("obfuscation".into(), mode.name().into());
            q
        }
        None => {
            let mut q = p.clone();
            q.meta.insert("obfuscation".into(), Obfuscation::Normal.name().into());
            q.meta.insert("obfuscation_fallback".into(), mode.name().into());
            q
        }
    }
}

fn random_aggregation(p: &Program, seed: u64) -> Option<Program> {
    let mut r = rng::rng(seed);
    let mut groups: Vec<Vec<&str>> = [false, true]
        .iter()
        .map(|&m| {
            p.data_objects
                .iter()
                .filter(|(n, o)| o.mutable == m && !is_output(n))
                .map(|(n, _)| n.as_str())
                .collect::<Vec<_>>()
        })
        .filter(|g| g.len() >= 2)
        .collect();
    if groups.is_empty() {
        return None;
    }
    let g = groups.swap_remove(r.gen_range(0..groups.len()));
    let k = r.gen_range(2..=g.len());
    let chosen: Vec<&str> = g.choose_multiple(&mut r, k).copied().collect();
    aggregate_objects(p, &chosen, r.gen())
}

/// Lay the named objects out in one fresh object (in a seeded order, each
/// 16-byte aligned) and rebase every access. `None` if fewer than two names
/// are given, any is unknown or an output, or their mutability differs.
pub fn aggregate_objects(p: &Program, names: &[&str], seed: u64) -> Option<Program> {
    if names.len() < 2 || names.iter().any(|n| is_output(n)) {
        return None;
    }
    let objs: Vec<&DataObject> = names.iter().map(|n| p.data_objects.get(*n)).collect::<Option<_>>()?;
    let mutable = objs[0].mutable;
    if objs.iter().any(|o| o.mutable != mutable) {
        return None;
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.shuffle(&mut rng::rng(seed));

    let mut bytes = Vec::new();
    let mut offsets = BTreeMap::new();
    for i in order {
        bytes.resize(bytes.len().next_multiple_of(16), 0);
        offsets.insert(names[i].to_string(), bytes.len() as i64);
        bytes.extend_from_slice(&objs[i].bytes);
    }

    let blob = fresh_name(p, "blob");
    let mut q = p.clone();
    for n in names {
        q.data_objects.remove(*n);
    }
    q.data_objects.insert(blob.clone(), DataObject { bytes, mutable });
    for ins in &mut q.instructions {
        if let Some(m) = ins.mem_ref_mut() {
            if let Some(off) = m.object.as_ref().and_then(|o| offsets.get(o)) {
                m.disp += off;
                m.object = Some(blob.clone());
            }
        }
    }
    Some(q)
}

/// Objects that can be split: never stored to, not outputs, and every
/// scalar load site has dead flags (the recombining `xor` clobbers them).
fn split_candidates(p: &Program) -> Vec<String> {
    let live = flags_live_in(p);
    let counts = object_access_counts(p);
    counts
        .iter()
        .filter(|(n, &(loads, stores))| !is_output(n) && stores == 0 && loads > 0)
        .filter(|(n, _)| {
            p.instructions.iter().enumerate().all(|(i, ins)| {
                let hit = ins
                    .mem_ref()
                    .is_some_and(|(_, m)| m.object.as_deref() == Some(n.as_str()));
                !hit || matches!(ins.dst, Operand::Wide(_)) || !live[i]
            })
        })
        .map(|(n, _)| n.clone())
        .collect()
}

fn random_split(p: &Program, seed: u64) -> Option<Program> {
    let mut r = rng::rng(seed);
    let mut c = split_candidates(p);
    if c.is_empty() {
        return None;
    }
    c.shuffle(&mut r);
    let k = r.gen_range(1..=c.len().min(3));
    let chosen: Vec<&str> = c[..k].iter().map(String::as_str).collect();
    split_objects(p, &chosen, r.gen())
}

/// Replace each named object `x` by shares `x_s0` (random mask) and `x_s1`
/// (`x ^ mask`), recombined with `xor`/`pxor` at every load through a free
/// scratch register. `None` if some name is not a split candidate or no
/// scratch register is free.
pub fn split_objects(p: &Program, names: &[&str], seed: u64) -> Option<Program> {
    if names.is_empty() {
        return None;
    }
    let cands = split_candidates(p);
    if names.iter().any(|n| !cands.iter().any(|c| c == n)) {
        return None;
    }
    let mut r = rng::rng(seed);
    let (used, used_w) = used_registers(p);
    let free: Vec<u8> = (0..used.len() as u8).filter(|&i| !used[i as usize]).collect();
    let free_w: Vec<u8> = (0..used_w.len() as u8).filter(|&i| !used_w[i as usize]).collect();
    let touches = |ins: &Instruction| {
        ins.mem_ref()
            .and_then(|(_, m)| m.object.as_deref())
            .is_some_and(|o| names.contains(&o))
    };
    let need_scalar = p
        .instructions
        .iter()
        .any(|i| touches(i) && matches!(i.dst, Operand::Reg(_)));
    let need_wide = p
        .instructions
        .iter()
        .any(|i| touches(i) && matches!(i.dst, Operand::Wide(_)));
    if (need_scalar && free.is_empty()) || (need_wide && free_w.is_empty()) {
        return None;
    }
    let tmp = free.choose(&mut r).map(|&i| Reg(i));
    let tmp_w = free_w.choose(&mut r).map(|&i| WReg(i));

    let mut q = p.clone();
    let mut renames = BTreeMap::new();
    for n in names {
        let obj = q.data_objects.remove(*n).expect("candidate exists");
        let mut mask = vec![0u8; obj.len()];
        r.fill(&mut mask[..]);
        let masked: Vec<u8> = obj.bytes.iter().zip(&mask).map(|(b, m)| b ^ m).collect();
        let s0 = fresh_name(&q, &format!("{n}_s"));
        q.data_objects.insert(
            s0.clone(),
            DataObject {
                bytes: mask,
                mutable: obj.mutable,
            },
        );
        let s1 = fresh_name(&q, &format!("{n}_s"));
        q.data_objects.insert(
            s1.clone(),
            DataObject {
                bytes: masked,
                mutable: obj.mutable,
            },
        );
        renames.insert(n.to_string(), (s0, s1));
    }

    Some(splice(&q, |_, ins| {
        let Some((w, m)) = ins.mem_ref() else {
            return vec![Piece::Orig(ins.clone())];
        };
        let Some((s0, s1)) = m.object.as_ref().and_then(|o| renames.get(o)) else {
            return vec![Piece::Orig(ins.clone())];
        };
        let mut m0 = m.clone();
        m0.object = Some(s0.clone());
        let mut m1 = m.clone();
        m1.object = Some(s1.clone());
        // The share behind `tmp` is loaded first: the destination may also
        // be an address register of the operand.
        let (t, combine) = match ins.dst {
            Operand::Wide(_) => (Operand::Wide(tmp_w.expect("checked")), Opcode::Pxor),
            _ => (Operand::Reg(tmp.expect("checked")), Opcode::Xor),
        };
        let width = if matches!(t, Operand::Wide(_)) { Width::Oword } else { w };
        vec![
            Piece::Orig(Instruction::new(Opcode::Load, t.clone(), Operand::Mem(width, m1))),
            Piece::Orig(Instruction::new(Opcode::Load, ins.dst.clone(), Operand::Mem(w, m0))),
            Piece::Orig(Instruction::new(combine, ins.dst.clone(), t)),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, validate};
    use crate::tracer::execute;

    const SRC: &str = ".rodata tab 0102030405060708\n.rodata k 11223344\n.zero out 8\n\
        mov r1, 0\ntop:\nload r2, byte [tab + r1]\nload r3, byte [k + 2]\nxor r2, r3\n\
        store byte [out + r1], r2\ninc r1\ntest r1, 8\njz top\nhalt\n";

    fn outputs(p: &Program) -> Vec<(String, Vec<u8>)> {
        execute(p, 10_000).unwrap().memory.outputs()
    }

    #[test]
    fn normal_is_identity() {
        let p = parse_program(SRC).unwrap();
        assert_eq!(apply_obfuscation(&p, Obfuscation::Normal, 3), p);
    }

    #[test]
    fn aggregation_merges_and_preserves_output() {
        let p = parse_program(SRC).unwrap();
        let q = aggregate_objects(&p, &["tab", "k"], 5).unwrap();
        assert_eq!(validate(&q), Ok(()));
        assert_eq!(q.data_objects.len(), p.data_objects.len() - 1);
        assert_eq!(outputs(&q), outputs(&p));
        assert!(aggregate_objects(&p, &["tab", "out"], 5).is_none());
    }

    #[test]
    fn split_adds_instructions_and_preserves_output() {
        let p = parse_program(SRC).unwrap();
        let q = split_objects(&p, &["tab", "k"], 9).unwrap();
        assert_eq!(validate(&q), Ok(()));
        assert_eq!(q.len(), p.len() + 4);
        assert!(!q.data_objects.contains_key("tab"));
        assert_eq!(outputs(&q), outputs(&p));
    }

    #[test]
    fn split_refuses_live_flags_and_stored_objects() {
        let p = parse_program(
            ".zero buf 4\n.rodata c 07\n.zero out 1\ntest r0, r0\nload r1, byte [c]\njz e\n\
             store byte [buf], r1\ne:\nstore byte [out], r1\nhalt\n",
        )
        .unwrap();
        assert!(split_objects(&p, &["c"], 1).is_none());
        assert!(split_objects(&p, &["buf"], 1).is_none());
        let q = apply_obfuscation(&p, Obfuscation::Split, 1);
        assert_eq!(q.meta.get("obfuscation_fallback").map(String::as_str), Some("split"));
        assert_eq!(q.instructions, p.instructions);
    }

    #[test]
    fn split_handles_destination_used_as_index() {
        let p = parse_program(
            ".rodata t 0a0b0c0d\n.zero out 1\nmov r1, 2\nload r1, byte [t + r1]\n\
             store byte [out], r1\nhalt\n",
        )
        .unwrap();
        let q = split_objects(&p, &["t"], 4).unwrap();
        assert_eq!(outputs(&q), vec![("out".to_string(), vec![0x0c])]);
    }
}
